"""Natural cubic splines on unit-spaced integer knots, vectorized over fibers.

On interval ``[j, j+1]``::

    S_j(x) = a_j + b_j (x - j) + c_j (x - j)**2 + d_j (x - j)**3

Second derivatives ``M`` at the knots solve the tridiagonal system
``M[j-1] + 4 M[j] + M[j+1] = 6 (y[j+1] - 2 y[j] + y[j-1])`` with
``M[0] = M[n-1] = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SplineCoefficients:
    a: np.ndarray  # [..., n-1]
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    @property
    def knots(self) -> np.ndarray:
        return np.arange(self.a.shape[-1] + 1, dtype=np.float64)

    def __call__(self, x) -> np.ndarray:
        return evaluate(self, x)

    def second_derivative(self, x) -> np.ndarray:
        j, t = _locate(np.asarray(x, dtype=np.float64), self.a.shape[-1])
        return 2 * self.c[..., j] + 6 * self.d[..., j] * t


def _thomas_natural(rhs: np.ndarray) -> np.ndarray:
    """Solve the interior system (diag 4, off-diagonals 1) along the last axis."""
    m = rhs.shape[-1]
    cp = np.empty(m)
    dp = np.empty_like(rhs)
    cp[0] = 1 / 4
    dp[..., 0] = rhs[..., 0] / 4
    for i in range(1, m):
        denom = 4 - cp[i - 1]
        cp[i] = 1 / denom
        dp[..., i] = (rhs[..., i] - dp[..., i - 1]) / denom
    out = np.empty_like(rhs)
    out[..., -1] = dp[..., -1]
    for i in range(m - 2, -1, -1):
        out[..., i] = dp[..., i] - cp[i] * out[..., i + 1]
    return out


def fit_natural_spline(values) -> SplineCoefficients:
    """Fit along the last axis of ``values`` (knots 0..n-1)."""
    y = np.asarray(values, dtype=np.float64)
    n = y.shape[-1]
    if n < 2:
        raise ValueError("a spline needs at least two knots")
    if not np.all(np.isfinite(y)):
        raise ValueError("spline knot values must be finite")
    M = np.zeros_like(y)
    if n > 2:
        rhs = 6 * (y[..., 2:] - 2 * y[..., 1:-1] + y[..., :-2])
        M[..., 1:-1] = _thomas_natural(rhs)
    dy = np.diff(y, axis=-1)
    return SplineCoefficients(
        a=y[..., :-1],
        b=dy - (2 * M[..., :-1] + M[..., 1:]) / 6,
        c=M[..., :-1] / 2,
        d=np.diff(M, axis=-1) / 6,
    )


def _locate(x: np.ndarray, n_intervals: int):
    j = np.clip(np.floor(x).astype(np.int64), 0, n_intervals - 1)
    return j, x - j


def evaluate(coef: SplineCoefficients, x) -> np.ndarray:
    """Evaluate at query points ``x`` (shared by every fiber) using Horner's scheme."""
    j, t = _locate(np.asarray(x, dtype=np.float64), coef.a.shape[-1])
    return coef.a[..., j] + t * (coef.b[..., j] + t * (coef.c[..., j] + t * coef.d[..., j]))
