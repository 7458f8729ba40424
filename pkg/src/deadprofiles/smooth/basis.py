"""Cubic regression spline bases.

The basis is parameterised by the function values at the knots; second
derivatives at the interior knots follow from the natural-spline continuity
conditions, so the curvature penalty is a quadratic form in those values.
Outside the knot range the spline continues linearly.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

MAX_DIMENSION = 10


class BasisWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SplineBasis:
    """A cubic regression spline basis with ``len(knots)`` functions."""

    knots: np.ndarray
    _second_deriv: np.ndarray = field(repr=False, compare=False)
    _penalty: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def from_knots(cls, knots) -> "SplineBasis":
        knots = np.asarray(knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("a spline basis needs at least two knots")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        k = knots.size
        h = np.diff(knots)
        F = np.zeros((k, k))
        S = np.zeros((k, k))
        if k > 2:
            D = np.zeros((k - 2, k))
            B = np.zeros((k - 2, k - 2))
            for i in range(k - 2):
                D[i, i] = 1.0 / h[i]
                D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
                D[i, i + 2] = 1.0 / h[i + 1]
                B[i, i] = (h[i] + h[i + 1]) / 3.0
                if i < k - 3:
                    B[i, i + 1] = B[i + 1, i] = h[i + 1] / 6.0
            BinvD = linalg.solve(B, D, assume_a="pos")
            F[1:-1] = BinvD
            S = D.T @ BinvD
            S = 0.5 * (S + S.T)
        return cls(knots, F, S)

    @property
    def dimension(self) -> int:
        return self.knots.size

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def penalty(self) -> np.ndarray:
        """Integrated squared second derivative as a quadratic form."""
        return self._penalty

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        kn = self.knots
        k = kn.size
        n = x.size
        h = np.diff(kn)
        F = self._second_deriv
        X = np.zeros((n, k))

        inside = (x >= kn[0]) & (x <= kn[-1])
        if np.any(inside):
            xi = x[inside]
            j = np.clip(np.searchsorted(kn, xi, side="right") - 1, 0, k - 2)
            hj = h[j]
            am = (kn[j + 1] - xi) / hj
            ap = (xi - kn[j]) / hj
            cm = ((kn[j + 1] - xi) ** 3 / hj - hj * (kn[j + 1] - xi)) / 6.0
            cp = ((xi - kn[j]) ** 3 / hj - hj * (xi - kn[j])) / 6.0
            rows = cm[:, None] * F[j] + cp[:, None] * F[j + 1]
            idx = np.arange(xi.size)
            rows[idx, j] += am
            rows[idx, j + 1] += ap
            X[inside] = rows

        below = x < kn[0]
        if np.any(below):
            # f(x0) + f'(x0) (x - x0), f'(x0) = (b1 - b0)/h0 - h0 d1 / 6
            slope = -h[0] * F[1] / 6.0
            slope[0] -= 1.0 / h[0]
            slope[1] += 1.0 / h[0]
            row0 = np.zeros(k)
            row0[0] = 1.0
            X[below] = row0 + (x[below] - kn[0])[:, None] * slope

        above = x > kn[-1]
        if np.any(above):
            slope = h[-1] * F[-2] / 6.0
            slope[-2] -= 1.0 / h[-1]
            slope[-1] += 1.0 / h[-1]
            rowk = np.zeros(k)
            rowk[-1] = 1.0
            X[above] = rowk + (x[above] - kn[-1])[:, None] * slope
        return X


DISTINCT_TOL = 1e-6  # relative to the coordinate range


def distinct_values(x) -> np.ndarray:
    """Sorted unique values, merging any closer than ``DISTINCT_TOL`` of the range."""
    ux = np.unique(np.asarray(x, dtype=float))
    if ux.size < 2:
        return ux
    tol = DISTINCT_TOL * (ux[-1] - ux[0])
    keep = [0]
    for i in range(1, ux.size):
        if ux[i] - ux[keep[-1]] > tol:
            keep.append(i)
    if ux[-1] - ux[keep[-1]] > 0:
        keep[-1] = ux.size - 1  # keep the maximum so the knots span the data
    return ux[keep]


def quantile_knots(x, dimension: int) -> np.ndarray:
    """Knots evenly spread through the distinct values of ``x``."""
    return np.quantile(distinct_values(x), np.linspace(0.0, 1.0, dimension))


def build_cubic_spline_basis(x, dimension: int = MAX_DIMENSION):
    """Place knots at quantiles of ``x`` and evaluate the basis there.

    Returns ``(basis, matrix)``. When ``x`` has fewer distinct values than
    requested the dimension is reduced (with a ``BasisWarning``); a single
    distinct value cannot support a basis and raises ``ValueError``.
    """
    x = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("coordinates must be finite")
    if dimension > MAX_DIMENSION:
        raise ValueError(f"basis dimension is capped at {MAX_DIMENSION}")
    if dimension < 2:
        raise ValueError("basis dimension must be at least 2")
    n_unique = distinct_values(x).size
    if n_unique < 2:
        raise ValueError("cannot build a spline basis on a single distinct value")
    if n_unique < dimension:
        warnings.warn(
            f"only {n_unique} distinct values; basis dimension reduced from "
            f"{dimension} to {n_unique}",
            BasisWarning,
            stacklevel=2,
        )
        dimension = n_unique
    basis = SplineBasis.from_knots(quantile_knots(x, dimension))
    return basis, basis.evaluate(x)
