"""Univariate and tensor-product B-spline spaces on [0, 1].

Provides p-open knot vectors, the dyadically refined families used for
discretization, numerically stable basis evaluation (values and first
derivatives), and the truncated knot vectors housing directional
derivatives of tensor-product splines.
"""

from __future__ import annotations

import numpy as np


class KnotVector:
    """A p-open knot vector on [0, 1] with its B-spline basis.

    The first p+1 knots equal 0 and the last p+1 knots equal 1, so the
    endpoint basis functions are interpolatory.  The basis is evaluated
    with the triangular de-Boor-type recurrence; interior knots are
    treated right-continuously and the last interval is closed so the
    basis is a partition of unity on all of [0, 1].
    """

    def __init__(self, knots, degree: int):
        knots = np.asarray(knots, dtype=np.float64)
        if knots.ndim != 1:
            raise ValueError("knots must be a 1D array")
        if degree < 0:
            raise ValueError("degree must be non-negative")
        p = degree
        if knots.size < 2 * p + 2:
            raise ValueError("knots must contain at least 2*degree+2 entries")
        if np.any(np.diff(knots) < 0.0):
            raise ValueError("knots must be non-decreasing")
        if np.any(knots[: p + 1] != knots[0]) or np.any(knots[-p - 1:] != knots[-1]):
            raise ValueError("knot vector is not p-open")
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise ValueError("knot vector must span [0, 1]")
        self.knots = knots
        self.degree = p
        self.num_basis = knots.size - p - 1
        if self.num_basis < p + 1:
            raise ValueError("too few basis functions for the given degree")
        # Breakpoints (distinct spans) drive element bookkeeping.
        self.breakpoints = np.unique(knots)

    def __repr__(self) -> str:
        return f"KnotVector(p={self.degree}, k={self.num_basis})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, KnotVector)
            and self.degree == other.degree
            and self.knots.shape == other.knots.shape
            and bool(np.all(self.knots == other.knots))
        )

    @property
    def mesh_size(self) -> float:
        """Maximal distance between neighbouring knots."""
        return float(np.max(np.diff(self.knots)))

    def quasi_uniformity_ratio(self) -> float:
        """Largest ratio of consecutive nonzero knot gaps (>= 1)."""
        gaps = np.diff(self.knots)
        gaps = gaps[gaps > 0.0]
        if gaps.size < 2:
            return 1.0
        r = gaps[1:] / gaps[:-1]
        return float(max(r.max(), (1.0 / r).max()))

    def find_span(self, x: np.ndarray) -> np.ndarray:
        """Index mu with knots[mu] <= x < knots[mu+1], right-continuous.

        At x = 1 the last nonempty span is returned so that the final
        basis function evaluates to 1 there.
        """
        x = np.asarray(x, dtype=np.float64)
        if np.any(x < 0.0) or np.any(x > 1.0):
            raise ValueError("evaluation point outside [0, 1]")
        p = self.degree
        mu = np.searchsorted(self.knots, x, side="right") - 1
        return np.clip(mu, p, self.knots.size - p - 2)

    def eval_basis_and_deriv(self, x):
        """Values and first derivatives in one triangular pass.

        Returns (first_index, values, derivatives) with trailing
        dimension p+1 each.
        """
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        p = self.degree
        mu = self.find_span(x)
        first = mu - p
        if p == 0:
            return first, np.ones((x.size, 1)), np.zeros((x.size, 1))
        vals, low = self._triangular(x, mu, p, keep_lower=True)
        return first, vals, self._derivative_from_lower(low, mu, p)

    def eval_basis(self, x, deriv: int = 0):
        """Evaluate the p+1 basis functions that can be nonzero at x.

        Args:
            x: scalar or array of points in [0, 1].
            deriv: 0 for values, 1 for first derivatives.

        Returns:
            (first_index, values): ``first_index`` has the shape of x and
            gives the global index of the first returned function;
            ``values`` has trailing dimension p+1.  All other basis
            functions vanish at x.
        """
        if deriv not in (0, 1):
            raise ValueError("deriv must be 0 or 1")
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        p = self.degree
        mu = self.find_span(x)
        first = mu - p
        if deriv == 0:
            vals = self._triangular(x, mu, p)
        else:
            if p == 0:
                vals = np.zeros((x.size, 1))
            else:
                low = self._triangular(x, mu, p - 1)
                vals = self._derivative_from_lower(low, mu, p)
        return first, vals

    def _triangular(self, x: np.ndarray, mu: np.ndarray, p: int, keep_lower: bool = False):
        """Stable triangular scheme for degree-p values at span mu.

        Returns values of b_{mu-p}..b_{mu}; with ``keep_lower`` also the
        degree-(p-1) values from the penultimate sweep (for derivatives).
        """
        t = self.knots
        n = x.size
        vals = np.zeros((n, p + 1))
        vals[:, 0] = 1.0
        left = np.empty((n, p))
        right = np.empty((n, p))
        lower = None
        for j in range(1, p + 1):
            if keep_lower and j == p:
                lower = vals[:, :p].copy()
            left[:, j - 1] = x - t[mu + 1 - j]
            right[:, j - 1] = t[mu + j] - x
            saved = np.zeros(n)
            for r in range(j):
                denom = right[:, r] + left[:, j - 1 - r]
                temp = np.where(denom > 0.0, vals[:, r] / np.where(denom > 0.0, denom, 1.0), 0.0)
                vals[:, r] = saved + right[:, r] * temp
                saved = left[:, j - 1 - r] * temp
            vals[:, j] = saved
        if keep_lower:
            if p == 1:
                lower = np.ones((n, 1))
            return vals, lower
        return vals

    def _derivative_from_lower(self, low: np.ndarray, mu: np.ndarray, p: int) -> np.ndarray:
        """First derivatives from degree-(p-1) values on the same span."""
        t = self.knots
        n = low.shape[0]
        out = np.zeros((n, p + 1))
        # low[:, r] is b_{mu-p+1+r}^{p-1}; derivative formula
        # (b_j^p)' = p * (b_j^{p-1}/(t[j+p]-t[j]) - b_{j+1}^{p-1}/(t[j+p+1]-t[j+1]))
        for r in range(p + 1):
            j = mu - p + r
            d1 = t[j + p] - t[j]
            d2 = t[j + p + 1] - t[j + 1]
            term = np.zeros(n)
            if r > 0:
                term = term + np.where(d1 > 0.0, low[:, r - 1] / np.where(d1 > 0.0, d1, 1.0), 0.0)
            if r < p:
                term = term - np.where(d2 > 0.0, low[:, r] / np.where(d2 > 0.0, d2, 1.0), 0.0)
            out[:, r] = p * term
        return out

    def eval_all(self, x, deriv: int = 0) -> np.ndarray:
        """Dense (n_points, num_basis) table of basis values at x."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        first, vals = self.eval_basis(x, deriv)
        table = np.zeros((x.size, self.num_basis))
        cols = first[:, None] + np.arange(self.degree + 1)[None, :]
        np.put_along_axis(table, cols, vals, axis=1)
        return table

    def greville(self) -> np.ndarray:
        """Greville abscissae (support anchors) of all basis functions."""
        p = self.degree
        if p == 0:
            return 0.5 * (self.knots[:-1] + self.knots[1:])
        k = self.num_basis
        return np.array([self.knots[j + 1: j + p + 1].mean() for j in range(k)])

    def basis_support(self, j: int) -> tuple[float, float]:
        """Parametric support [xi_j, xi_{j+p+1}] of basis function j."""
        return float(self.knots[j]), float(self.knots[j + self.degree + 1])


def open_knot_vector(p: int, m: int) -> KnotVector:
    """Dyadically refined p-open knot vector with 2^m uniform spans.

    Yields 2^m + p basis functions: p+1 zeros, interior knots i/2^m,
    and p+1 ones.
    """
    if p < 0 or m < 0:
        raise ValueError("p and m must be non-negative")
    interior = np.arange(1, 2 ** m) / 2.0 ** m
    knots = np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])
    return KnotVector(knots, p)


def truncated_knot_vector(kv: KnotVector) -> KnotVector:
    """The knot vector without its first and last knot (degree drops by 1)."""
    if kv.degree < 1:
        raise ValueError("cannot truncate a degree-0 knot vector")
    return KnotVector(kv.knots[1:-1], kv.degree - 1)


class TensorSplineSpace:
    """Tensor product of two univariate spline spaces on [0, 1]^2."""

    def __init__(self, kv1: KnotVector, kv2: KnotVector):
        self.kv1 = kv1
        self.kv2 = kv2
        self.degrees = (kv1.degree, kv2.degree)
        self.dimension = kv1.num_basis * kv2.num_basis

    def __repr__(self) -> str:
        return f"TensorSplineSpace(p={self.degrees}, dim={self.dimension})"

    def eval(self, coeffs: np.ndarray, u, v, deriv: tuple[int, int] = (0, 0)) -> np.ndarray:
        """Evaluate sum_{j1,j2} coeffs[j1,j2] b_{j1}(u) b_{j2}(v)."""
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        v = np.atleast_1d(np.asarray(v, dtype=np.float64))
        f1, b1 = self.kv1.eval_basis(u, deriv[0])
        f2, b2 = self.kv2.eval_basis(v, deriv[1])
        p1, p2 = self.degrees
        i1 = f1[:, None] + np.arange(p1 + 1)[None, :]
        i2 = f2[:, None] + np.arange(p2 + 1)[None, :]
        local = coeffs[i1[:, :, None], i2[:, None, :]]
        return np.einsum("na,nb,nab->n", b1, b2, local)


def derivative_spaces(space: TensorSplineSpace) -> tuple[TensorSplineSpace, TensorSplineSpace]:
    """Spaces housing the two partial derivatives of a tensor space.

    For S_{p1,p2}(Xi1, Xi2) these are S_{p1-1,p2}(Xi1', Xi2) and
    S_{p1,p2-1}(Xi1, Xi2') with Xi' the truncated knot vector.
    """
    if min(space.degrees) < 1:
        raise ValueError("derivative spaces need degree >= 1 in both directions")
    d1 = TensorSplineSpace(truncated_knot_vector(space.kv1), space.kv2)
    d2 = TensorSplineSpace(space.kv1, truncated_knot_vector(space.kv2))
    return d1, d2


def derivative_coefficients_1(coeffs: np.ndarray, kv1: KnotVector) -> np.ndarray:
    """Coefficients of d/du of a tensor spline in the truncated space."""
    p = kv1.degree
    t = kv1.knots
    k = kv1.num_basis
    denom = t[1 + p: k + p] - t[1: k]
    scale = p / denom
    return scale[:, None] * (coeffs[1:, :] - coeffs[:-1, :])


def bspline_recursion_reference(knots: np.ndarray, p: int, j: int, x: float) -> float:
    """Literal two-term recursion for b_j^p(x); test oracle only.

    Implements the textbook definition with half-open intervals, with the
    last interval closed at x = 1 to match the production convention.
    """
    knots = np.asarray(knots, dtype=np.float64)
    if p == 0:
        if knots[j] <= x < knots[j + 1]:
            return 1.0
        if x == knots[-1] and knots[j] < knots[j + 1] and knots[j + 1] == knots[-1]:
            return 1.0
        return 0.0
    val = 0.0
    d1 = knots[j + p] - knots[j]
    if d1 > 0.0:
        val += (x - knots[j]) / d1 * bspline_recursion_reference(knots, p - 1, j, x)
    d2 = knots[j + p + 1] - knots[j + 1]
    if d2 > 0.0:
        val += (knots[j + p + 1] - x) / d2 * bspline_recursion_reference(knots, p - 1, j + 1, x)
    return val
