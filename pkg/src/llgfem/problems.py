"""Benchmark problems: radial applied field, manufactured solution, blow-up."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "BenchmarkProblem",
    "radial_field_problem",
    "manufactured_problem",
    "blowup_problem",
    "get_problem",
    "PROBLEMS",
]


@dataclass(frozen=True)
class BenchmarkProblem:
    """Initial datum, applied field and default parameters of one benchmark.

    ``m0(points)`` and ``f(points, t)`` take an ``(n, 2)`` array of points
    and return ``(n, 3)`` arrays. ``exact(points, t)`` is set only when the
    solution is known in closed form.
    """

    name: str
    domain: tuple
    m0: Callable
    f: Callable
    alpha: float
    lambda_sq: float
    T: float
    exact: Callable | None = None
    time_dependent_field: bool = False
    extras: dict = field(default_factory=dict)


def _zero_field(points, t=0.0):
    return np.zeros((len(points), 3))


def radial_field_problem(lambda_sq: float = 0.01, origin_value=(0.0, 0.0, 0.0)) -> BenchmarkProblem:
    """Constant ``m0 = (0, 1, 0)`` driven by ``f = (x, y, 0) / |(x, y, 0)|`` on the unit square.

    ``f`` is undefined at the origin, which is a mesh vertex; it takes
    ``origin_value`` there.
    """
    if lambda_sq <= 0:
        raise ValueError("lambda_sq must be positive")
    origin_value = np.asarray(origin_value, dtype=float)

    def m0(points):
        out = np.zeros((len(points), 3))
        out[:, 1] = 1.0
        return out

    def f(points, t=0.0):
        points = np.asarray(points, dtype=float)
        r = np.hypot(points[:, 0], points[:, 1])
        out = np.zeros((len(points), 3))
        nz = r > 0.0
        out[nz, 0] = points[nz, 0] / r[nz]
        out[nz, 1] = points[nz, 1] / r[nz]
        out[~nz] = origin_value
        return out

    return BenchmarkProblem(
        name="radial",
        domain=((0.0, 0.0), (1.0, 1.0)),
        m0=m0,
        f=f,
        alpha=0.25,
        lambda_sq=lambda_sq,
        T=1.0,
    )


def manufactured_problem(alpha: float = 0.2, lambda_sq: float = 1.0, T: float = 0.2) -> BenchmarkProblem:
    """Exact solution depending on ``x1`` and ``t`` only.

    With ``p = x1^3 - 3 x1^2 / 2 + 1/4`` and ``w = 3 pi / T``,
    ``m = (-p sin(wt), sqrt(1 - p^2), -p cos(wt))``; the applied field is
    ``alpha m_t + m x m_t - lambda_sq * Laplace(m)``.
    """
    omega = 3.0 * np.pi / T

    def _p(x1):
        return x1**3 - 1.5 * x1**2 + 0.25, 3.0 * x1**2 - 3.0 * x1, 6.0 * x1 - 3.0

    def exact(points, t=0.0):
        x1 = np.asarray(points, dtype=float)[:, 0]
        p, _, _ = _p(x1)
        s, c = np.sin(omega * t), np.cos(omega * t)
        return np.column_stack([-p * s, np.sqrt(1.0 - p * p), -p * c])

    def f(points, t=0.0):
        x1 = np.asarray(points, dtype=float)[:, 0]
        p, dp, ddp = _p(x1)
        q = np.sqrt(1.0 - p * p)
        ddq = -(dp * dp + p * ddp) / q - (p * dp) ** 2 / q**3
        s, c = np.sin(omega * t), np.cos(omega * t)
        m = np.column_stack([-p * s, q, -p * c])
        mt = np.column_stack([-p * omega * c, np.zeros_like(p), p * omega * s])
        lap = np.column_stack([-ddp * s, ddq, -ddp * c])
        return alpha * mt + np.cross(m, mt) - lambda_sq * lap

    def m0(points):
        return exact(points, 0.0)

    return BenchmarkProblem(
        name="manufactured",
        domain=((0.0, 0.0), (1.0, 1.0)),
        m0=m0,
        f=f,
        alpha=alpha,
        lambda_sq=lambda_sq,
        T=T,
        exact=exact,
        time_dependent_field=True,
    )


def blowup_problem() -> BenchmarkProblem:
    """Field-free relaxation of a datum that concentrates its gradient at the center.

    Inside the disk of radius 1/2, with ``A = (1 - 2|x|)^4``,
    ``m0 = (2 x1 A, 2 x2 A, A^2 - |x|^2) / (A^2 + |x|^2)``; outside it
    ``m0 = (0, 0, -1)``.
    """

    def m0(points):
        points = np.asarray(points, dtype=float)
        r2 = np.sum(points**2, axis=1)
        r = np.sqrt(r2)
        A = np.clip(1.0 - 2.0 * r, 0.0, None) ** 4
        # A**2 + |x|**2 is the modulus of the numerator
        den = A * A + r2
        inside = r < 0.5
        out = np.tile([0.0, 0.0, -1.0], (len(points), 1))
        d = den[inside]
        out[inside, 0] = 2.0 * points[inside, 0] * A[inside] / d
        out[inside, 1] = 2.0 * points[inside, 1] * A[inside] / d
        out[inside, 2] = (A[inside] ** 2 - r2[inside]) / d
        return out

    return BenchmarkProblem(
        name="blowup",
        domain=((-0.5, -0.5), (0.5, 0.5)),
        m0=m0,
        f=_zero_field,
        alpha=0.25,
        lambda_sq=1.0,
        T=0.3,
    )


PROBLEMS = {
    "radial": radial_field_problem,
    "manufactured": manufactured_problem,
    "blowup": blowup_problem,
}


def get_problem(name: str, **params) -> BenchmarkProblem:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory(**params)
