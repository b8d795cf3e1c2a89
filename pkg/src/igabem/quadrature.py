"""Quadrature rules for Galerkin boundary element integrals.

Tensor Gauss-Legendre rules on [0,1] and [0,1]^2, and regularizing
coordinate transformations on [0,1]^4 for the four element-pair regimes
(far, common vertex, common edge, identical).  The singular rules use
relative-coordinate Duffy splittings that remove the 1/r kernel
singularity, so tensor Gauss quadrature converges exponentially on each
regime.
"""

from __future__ import annotations

import enum
from functools import lru_cache

import numpy as np


class PairRegime(enum.Enum):
    """Contact classification of an ordered element pair."""

    FAR = "far"
    COMMON_VERTEX = "common_vertex"
    COMMON_EDGE = "common_edge"
    IDENTICAL = "identical"


class QuadratureRule:
    """Nodes and positive weights on [0,1]^d."""

    def __init__(self, nodes: np.ndarray, weights: np.ndarray):
        self.nodes = np.ascontiguousarray(nodes, dtype=np.float64)
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1] if self.nodes.ndim > 1 else 1

    def __len__(self) -> int:
        return self.weights.size


@lru_cache(maxsize=None)
def gauss_rule(n: int) -> QuadratureRule:
    """Gauss-Legendre rule with n points mapped to [0,1].

    Exact for polynomials of degree <= 2n-1.
    """
    if not 1 <= n <= 64:
        raise ValueError("point count must be in [1, 64]")
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w)


@lru_cache(maxsize=None)
def tensor_rule_2d(n: int) -> QuadratureRule:
    """Tensor Gauss rule on the unit square, n points per direction."""
    g = gauss_rule(n)
    u, v = np.meshgrid(g.nodes, g.nodes, indexing="ij")
    w = np.outer(g.weights, g.weights)
    return QuadratureRule(np.column_stack([u.ravel(), v.ravel()]), w.ravel())


def _tensor4(g: QuadratureRule):
    """All 4-tuples of a 1D rule: nodes (n^4, 4), weights (n^4,)."""
    x = g.nodes
    w = g.weights
    a, b, c, d = np.meshgrid(x, x, x, x, indexing="ij")
    nodes = np.column_stack([a.ravel(), b.ravel(), c.ravel(), d.ravel()])
    wa, wb, wc, wd = np.meshgrid(w, w, w, w, indexing="ij")
    weights = (wa * wb * wc * wd).ravel()
    return nodes, weights


@lru_cache(maxsize=None)
def singular_pair_rule(regime: PairRegime, q: int) -> QuadratureRule:
    """Regularized rule on [0,1]^4 for the canonical pair configuration.

    Node columns are (xu, xv, yu, yv) in element-local coordinates of the
    two elements.  Canonical configurations: IDENTICAL has the singular
    set at (xu,xv) = (yu,yv); COMMON_EDGE has both elements sharing the
    edge xv = yv = 0 with matching u-parametrization; COMMON_VERTEX has
    the shared point at (0,0) in both elements.  FAR is the plain tensor
    rule.
    """
    if q < 1:
        raise ValueError("order must be >= 1")
    if regime is PairRegime.FAR:
        nodes, weights = _tensor4(gauss_rule(q))
        return QuadratureRule(nodes, weights)
    t4, w4 = _tensor4(gauss_rule(q))
    t, w, u1, u2 = t4.T
    nodes_list = []
    weights_list = []
    if regime is PairRegime.IDENTICAL:
        # z = y - x, sign quadrants split, Duffy on |z| sorted by max coord.
        for s1_expr, s2_expr, jac in (((t, t * w), None, t), ((t * w, t), None, t)):
            s1, s2 = s1_expr
            for sg1 in (1.0, -1.0):
                for sg2 in (1.0, -1.0):
                    z1 = sg1 * s1
                    z2 = sg2 * s2
                    x1 = np.maximum(0.0, -z1) + (1.0 - s1) * u1
                    x2 = np.maximum(0.0, -z2) + (1.0 - s2) * u2
                    nodes = np.column_stack([x1, x2, x1 + z1, x2 + z2])
                    nodes_list.append(nodes)
                    weights_list.append(w4 * jac * (1.0 - s1) * (1.0 - s2))
    elif regime is PairRegime.COMMON_EDGE:
        # d = xu - yu; Duffy on the 3D corner (|d|, xv, yv).
        for trio in ((t, t * w, t * u1), (t * w, t, t * u1), (t * w, t * u1, t)):
            delta, xv, yv = trio
            jac = t * t
            for sg in (1.0, -1.0):
                d = sg * delta
                yu = np.maximum(0.0, -d) + (1.0 - delta) * u2
                nodes = np.column_stack([yu + d, xv, yu, yv])
                nodes_list.append(nodes)
                weights_list.append(w4 * jac * (1.0 - delta))
    elif regime is PairRegime.COMMON_VERTEX:
        # Duffy on the 4D corner (xu, xv, yu, yv).
        others = (w, u1, u2)
        for lead in range(4):
            cols = []
            oi = 0
            for pos in range(4):
                if pos == lead:
                    cols.append(t)
                else:
                    cols.append(t * others[oi])
                    oi += 1
            nodes_list.append(np.column_stack(cols))
            weights_list.append(w4 * t ** 3)
    else:  # pragma: no cover - regime enum is exhaustive
        raise ValueError(f"unknown regime {regime}")
    nodes = np.vstack(nodes_list)
    weights = np.concatenate(weights_list)
    return QuadratureRule(nodes, weights)


# The eight isometries of the unit square, as (matrix, offset) pairs so
# that mapped = offset + matrix @ local.  Index 0 is the identity.
_D4 = []
for _flip in (False, True):
    for _rot in range(4):
        _m = np.eye(2)
        if _flip:
            _m = np.array([[0.0, 1.0], [1.0, 0.0]])
        _rotm = {
            0: np.eye(2),
            1: np.array([[0.0, -1.0], [1.0, 0.0]]),
            2: np.array([[-1.0, 0.0], [0.0, -1.0]]),
            3: np.array([[0.0, 1.0], [-1.0, 0.0]]),
        }[_rot]
        _mat = _rotm @ _m
        # Offset chosen so the unit square maps onto itself.
        _corners = _mat @ np.array([[0.0, 1.0, 0.0, 1.0], [0.0, 0.0, 1.0, 1.0]])
        _off = -_corners.min(axis=1)
        _D4.append((_mat, _off))


def d4_apply(index: int, pts: np.ndarray) -> np.ndarray:
    """Apply square isometry ``index`` to points with shape (..., 2)."""
    mat, off = _D4[index]
    return pts @ mat.T + off


def d4_map_corner(index: int, corner: tuple[float, float]) -> tuple[float, float]:
    mat, off = _D4[index]
    out = mat @ np.asarray(corner, dtype=float) + off
    return (round(float(out[0]), 12), round(float(out[1]), 12))


def find_d4_for_edge(corner0: tuple[float, float], corner1: tuple[float, float]) -> int:
    """Isometry sending (0,0)->corner0 and (1,0)->corner1 on the unit square."""
    for idx in range(8):
        if d4_map_corner(idx, (0.0, 0.0)) == corner0 and d4_map_corner(idx, (1.0, 0.0)) == corner1:
            return idx
    raise ValueError("no square isometry maps the requested edge")


def find_d4_for_corner(corner: tuple[float, float]) -> int:
    """Rotation sending (0,0) to the requested corner of the unit square."""
    for idx in range(4):
        if d4_map_corner(idx, (0.0, 0.0)) == corner:
            return idx
    raise ValueError("no rotation maps the requested corner")
