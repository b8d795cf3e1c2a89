"""Galerkin assembly of the boundary integral operators.

Assembly is element-pair driven: smooth pairs go through a vectorized
kernel-matrix sweep with plain tensor rules, touching pairs through the
regularized rules of the quadrature module.  The compressed near field
reuses the same chunk computations in the same order, which keeps dense
and compressed near-field entries bit-identical.

The hypersingular form is assembled in its Maue-regularized shape: the
single-layer pairing of surface curls plus the -kappa^2 <n_x, n_y> G
mass-like term.  Expanding the curl pairing cancels the surface-measure
factors and leaves, component by component, three separable scalar
factors built from the unnormalized curls (the cofactor sandwich of the
cross-pair first fundamental tensor); that separated form is what the
code evaluates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dofmap import DofMap
from .geometry import GeometryData, SurfaceGeometry
from .kernels import plane_wave_traces
from .operators import ComposedOperator, DenseOperator, SparseOperator, coalesce_coo
from .quadrature import (
    PairRegime,
    d4_apply,
    find_d4_for_corner,
    find_d4_for_edge,
    singular_pair_rule,
    tensor_rule_2d,
)

OPERATOR_KINDS = ("V", "K", "Kstar", "W")


def far_order(p: int, m: int) -> int:
    """Far-regime Gauss points per direction; doubled on coarse levels."""
    n = p + 3
    return 2 * n if m <= 1 else n


def singular_order(p: int) -> int:
    return p + 4


# -- per-patch quadrature data -------------------------------------------------


@dataclass
class PatchData:
    """Element-wise quadrature and basis tables for one patch."""

    points: np.ndarray      # (E, g, 3)
    normals: np.ndarray     # (E, g, 3)
    tan1: np.ndarray        # (E, g, 3)
    tan2: np.ndarray        # (E, g, 3)
    w_meas: np.ndarray      # (E, g)  quad weight * h^2 * surface measure
    w_plain: np.ndarray     # (E, g)  quad weight * h^2
    basis: np.ndarray       # (E, g, pp)
    dbasis1: np.ndarray     # (E, g, pp)
    dbasis2: np.ndarray     # (E, g, pp)
    cellfuncs: np.ndarray   # (E, pp)


def _cell_origins(m: int):
    ncell = 2 ** m
    cu, cv = np.meshgrid(np.arange(ncell), np.arange(ncell), indexing="ij")
    return cu.ravel(), cv.ravel()


def build_patch_data(geometry: SurfaceGeometry, dofmap: DofMap, patch: int,
                     order: int, derivatives: bool = False) -> PatchData:
    """Tabulate geometry and basis values on every cell of a patch."""
    m, p, kv = dofmap.m, dofmap.p, dofmap.kv
    h = 0.5 ** m
    rule = tensor_rule_2d(order)
    g = len(rule)
    cu, cv = _cell_origins(m)
    E = cu.size
    uv = (np.stack([cu, cv], axis=1)[:, None, :] + rule.nodes[None, :, :]) * h
    flat = uv.reshape(E * g, 2)
    data = geometry.patches[patch].eval(flat)
    _, b1 = kv.eval_basis(flat[:, 0], 0)
    _, b2 = kv.eval_basis(flat[:, 1], 0)
    pp = (p + 1) ** 2
    basis = np.einsum("na,nb->nab", b1, b2).reshape(E, g, pp)
    if derivatives:
        _, d1 = kv.eval_basis(flat[:, 0], 1)
        _, d2 = kv.eval_basis(flat[:, 1], 1)
        db1 = np.einsum("na,nb->nab", d1, b2).reshape(E, g, pp)
        db2 = np.einsum("na,nb->nab", b1, d2).reshape(E, g, pp)
    else:
        db1 = db2 = np.zeros((0, 0, 0))
    w = rule.weights[None, :] * h * h
    cellfuncs = np.stack([dofmap.cell_functions(a, b) for a, b in zip(cu, cv)])
    return PatchData(
        points=data.point.reshape(E, g, 3),
        normals=data.normal.reshape(E, g, 3),
        tan1=data.tan1.reshape(E, g, 3),
        tan2=data.tan2.reshape(E, g, 3),
        w_meas=w * data.measure.reshape(E, g),
        w_plain=np.broadcast_to(w, (E, g)).copy(),
        basis=basis,
        dbasis1=db1,
        dbasis2=db2,
        cellfuncs=cellfuncs,
    )


def side_factors(pd: PatchData, kind: str) -> np.ndarray:
    """Weighted basis factors per component, shape (E, g, pp, c).

    V/K/Kstar use one component (basis * weight * measure).  W uses
    four: the three unnormalized-curl components against plain weights
    (their 1/a factors cancel the pulled-back measures) plus the basis
    against weight * measure for the -kappa^2 <n_x,n_y> G term.
    """
    if kind in ("V", "K", "Kstar"):
        return (pd.basis * pd.w_meas[:, :, None])[..., None]
    if kind == "W":
        curl = (
            pd.dbasis1[:, :, :, None] * pd.tan2[:, :, None, :]
            - pd.dbasis2[:, :, :, None] * pd.tan1[:, :, None, :]
        ) * pd.w_plain[:, :, None, None]
        mass = (pd.basis * pd.w_meas[:, :, None])[..., None]
        return np.concatenate([curl, mass], axis=3)
    raise ValueError(f"unknown operator kind {kind}")


# -- pair classification ---------------------------------------------------------


@dataclass
class SingularPair:
    patch_a: int
    cell_a: int
    patch_b: int
    cell_b: int
    regime: PairRegime
    t_a: int
    t_b: int


class PairClassification:
    """Element-contact structure of a discretized geometry at level m.

    Grid nodes are identified across interfaces by union-find; two cells
    are CommonEdge if their closures share two node classes, CommonVertex
    if they share one, Identical if equal, Far otherwise.
    """

    def __init__(self, geometry: SurfaceGeometry, m: int):
        self.geometry = geometry
        self.m = m
        self.ncell = 2 ** m
        self._build_nodes()
        self._build_pairs()

    def _build_nodes(self):
        G = self.ncell + 1
        n = len(self.geometry)
        parent = np.arange(n * G * G, dtype=np.int64)

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        def union(a, b):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

        def edge_nodes(edge, i):
            last = G - 1
            if edge == 0:
                return i, 0
            if edge == 1:
                return last, i
            if edge == 2:
                return i, last
            return 0, i

        def key(patch, gx, gy):
            return (patch * G + gx) * G + gy

        for iface in self.geometry.interfaces:
            for i in range(G):
                j = G - 1 - i if iface.reversed else i
                ax, ay = edge_nodes(iface.edge_a, i)
                bx, by = edge_nodes(iface.edge_b, j)
                union(key(iface.patch_a, ax, ay), key(iface.patch_b, bx, by))
        roots = np.array([find(i) for i in range(n * G * G)], dtype=np.int64)
        E = self.ncell ** 2
        cu, cv = _cell_origins(self.m)
        self.cell_corners = np.empty((n, E, 4), dtype=np.int64)
        for patch in range(n):
            for corner, (dx, dy) in enumerate(((0, 0), (1, 0), (0, 1), (1, 1))):
                self.cell_corners[patch, :, corner] = roots[(patch * G + cu + dx) * G + cv + dy]

    def _build_pairs(self):
        n = len(self.geometry)
        E = self.ncell ** 2
        incident: dict[int, list[tuple[int, int]]] = {}
        for patch in range(n):
            for cell in range(E):
                for cls in self.cell_corners[patch, cell]:
                    incident.setdefault(int(cls), []).append((patch, cell))
        corner_local = ((0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0))
        pairs: dict[tuple[int, int, int, int], SingularPair] = {}
        for patch in range(n):
            for cell in range(E):
                pairs[(patch, cell, patch, cell)] = SingularPair(
                    patch, cell, patch, cell, PairRegime.IDENTICAL, 0, 0
                )
        for cells in incident.values():
            if len(cells) < 2:
                continue
            for pa, ca in cells:
                ka = self.cell_corners[pa, ca]
                for pb, cb in cells:
                    if (pa, ca) == (pb, cb) or (pa, ca, pb, cb) in pairs:
                        continue
                    kb = self.cell_corners[pb, cb]
                    shared = sorted(set(int(x) for x in ka) & set(int(x) for x in kb))
                    if len(shared) == 2:
                        a0 = corner_local[int(np.where(ka == shared[0])[0][0])]
                        a1 = corner_local[int(np.where(ka == shared[1])[0][0])]
                        b0 = corner_local[int(np.where(kb == shared[0])[0][0])]
                        b1 = corner_local[int(np.where(kb == shared[1])[0][0])]
                        pairs[(pa, ca, pb, cb)] = SingularPair(
                            pa, ca, pb, cb, PairRegime.COMMON_EDGE,
                            find_d4_for_edge(a0, a1), find_d4_for_edge(b0, b1),
                        )
                    elif len(shared) == 1:
                        a0 = corner_local[int(np.where(ka == shared[0])[0][0])]
                        b0 = corner_local[int(np.where(kb == shared[0])[0][0])]
                        pairs[(pa, ca, pb, cb)] = SingularPair(
                            pa, ca, pb, cb, PairRegime.COMMON_VERTEX,
                            find_d4_for_corner(a0), find_d4_for_corner(b0),
                        )
        self.singular_pairs = [pairs[k] for k in sorted(pairs)]
        self.touching: dict[int, np.ndarray] = {}
        buckets: dict[int, list[int]] = {}
        for spair in self.singular_pairs:
            gx = spair.patch_a * E + spair.cell_a
            buckets.setdefault(gx, []).append(spair.patch_b * E + spair.cell_b)
        for gx, lst in buckets.items():
            self.touching[gx] = np.array(sorted(lst), dtype=np.int64)

    def classify(self, pa: int, ca: int, pb: int, cb: int) -> PairRegime:
        if (pa, ca) == (pb, cb):
            return PairRegime.IDENTICAL
        shared = len(set(int(x) for x in self.cell_corners[pa, ca])
                     & set(int(x) for x in self.cell_corners[pb, cb]))
        if shared >= 2:
            return PairRegime.COMMON_EDGE
        if shared == 1:
            return PairRegime.COMMON_VERTEX
        return PairRegime.FAR


# -- smooth-pair sweep -----------------------------------------------------------


class FarSweeper:
    """Vectorized smooth-pair chunks of one x element against y batches.

    The same code path serves dense assembly (full y batch with touching
    pairs masked to zero afterwards) and the compressed near field
    (explicit y subsets), keeping their floating-point results aligned.
    """

    def __init__(self, kinds, kappa, xdata: list[PatchData], ydata: list[PatchData]):
        self.kinds = list(kinds)
        self.kappa = kappa
        self.xdata = xdata
        self.xfact = {k: [side_factors(pd, k) for pd in xdata] for k in self.kinds}
        self.ypts = np.concatenate([pd.points for pd in ydata])
        self.ynrm = np.concatenate([pd.normals for pd in ydata])
        self.yfact = {k: np.concatenate([side_factors(pd, k) for pd in ydata])
                      for k in self.kinds}

    def chunks(self, pa: int, ca: int, ey_batch: np.ndarray) -> dict[str, np.ndarray]:
        """Chunks (n_batch, pp_row, pp_col) per kind."""
        kappa = self.kappa
        xp = self.xdata[pa].points[ca]
        xn = self.xdata[pa].normals[ca]
        yp = self.ypts[ey_batch]
        yn = self.ynrm[ey_batch]
        nb, h, _ = yp.shape
        g = xp.shape[0]
        d = xp[:, None, None, :] - yp[None, :, :, :]
        r = np.sqrt(np.einsum("gnhi,gnhi->gnh", d, d))
        # Coincident points only occur on touching pairs, which the caller
        # masks away or excludes; keep the arithmetic finite regardless.
        r = np.where(r == 0.0, 1.0, r)
        green = np.exp(1j * kappa * r) / (4.0 * np.pi * r)
        need_radial = any(k in ("K", "Kstar") for k in self.kinds)
        radial = (1j * kappa - 1.0 / r) * green / r if need_radial else None
        out = {}
        for kind in self.kinds:
            xf = self.xfact[kind][pa][ca]      # (g, pp, c)
            yf = self.yfact[kind][ey_batch]    # (nb, h, pp, c)
            if kind == "V":
                kers = (green,)
            elif kind == "K":
                kers = (radial * np.einsum("gnhi,nhi->gnh", -d, yn),)
            elif kind == "Kstar":
                kers = (radial * np.einsum("gnhi,gi->gnh", d, xn),)
            else:  # W: three curl components on plain G, then the mass term
                mass = -kappa ** 2 * np.einsum("gi,nhi->gnh", xn, yn) * green
                kers = (green, green, green, mass)
            acc = None
            for c, ker in enumerate(kers):
                t1 = xf[:, :, c].T @ ker.reshape(g, nb * h)
                t1 = t1.reshape(-1, nb, h).transpose(1, 0, 2)
                term = t1 @ yf[:, :, :, c]
                acc = term if acc is None else acc + term
            out[kind] = acc
        return out


class SingularEvaluator:
    """Regularized chunks for touching element pairs, batched over pairs."""

    def __init__(self, geometry, dofmap_row, dofmap_col, kinds, kappa, q,
                 max_points: int = 300_000):
        self.geometry = geometry
        self.dr = dofmap_row
        self.dc = dofmap_col
        self.kinds = list(kinds)
        self.kappa = kappa
        self.h = 0.5 ** dofmap_row.m
        self.max_points = max_points
        self.rules = {reg: singular_pair_rule(reg, q) for reg in
                      (PairRegime.IDENTICAL, PairRegime.COMMON_EDGE, PairRegime.COMMON_VERTEX)}
        from .quadrature import _D4

        self._d4_mats = np.stack([m for m, _ in _D4])
        self._d4_offs = np.stack([o for _, o in _D4])
        self._basis_cache: dict[tuple, np.ndarray] = {}

    def chunk(self, spair: SingularPair) -> dict[str, np.ndarray]:
        batch = self.chunk_batch([spair])
        return {k: v[0] for k, v in batch.items()}

    def _eval_geometry(self, patches: np.ndarray, pts: np.ndarray):
        """Evaluate (P, n, 2) points on per-pair patches, grouped by patch."""
        P, n, _ = pts.shape
        out_pt = np.empty((P, n, 3))
        out_t1 = np.empty((P, n, 3))
        out_t2 = np.empty((P, n, 3))
        out_nm = np.empty((P, n, 3))
        out_ms = np.empty((P, n))
        for patch in np.unique(patches):
            sel = np.where(patches == patch)[0]
            data = self.geometry.patches[patch].eval(pts[sel].reshape(-1, 2))
            out_pt[sel] = data.point.reshape(sel.size, n, 3)
            out_t1[sel] = data.tan1.reshape(sel.size, n, 3)
            out_t2[sel] = data.tan2.reshape(sel.size, n, 3)
            out_nm[sel] = data.normal.reshape(sel.size, n, 3)
            out_ms[sel] = data.measure.reshape(sel.size, n)
        return out_pt, out_t1, out_t2, out_nm, out_ms

    def _cell_class(self, c: int, p: int, ncell: int) -> tuple[int, int]:
        """(cache key, representative cell) for translation-invariant bases."""
        if c < p:
            return c, c
        if c >= ncell - p:
            return p + 1 + (ncell - 1 - c), c
        return p, p

    def _basis(self, kv, which: str, regime, trans: np.ndarray,
               cu: np.ndarray, cv: np.ndarray, cols, deriv_pair) -> np.ndarray:
        """Tensor basis tables per pair, cached by (transform, cell class).

        Basis values are translation invariant across interior cells of a
        dyadic knot vector, so each distinct (transform, class_u,
        class_v) is evaluated once on a representative cell.
        """
        rule = self.rules[regime]
        nodes = rule.nodes[:, cols]
        P = trans.size
        n = nodes.shape[0]
        ncell = 2 ** self.dr.m
        p = kv.degree
        out = None
        groups: dict[tuple, list[int]] = {}
        reps = {}
        side = cols.start
        for i in range(P):
            ku, rep_u = self._cell_class(int(cu[i]), p, ncell)
            kvv, rep_v = self._cell_class(int(cv[i]), p, ncell)
            key = (id(kv), which, regime, side, int(trans[i]), ku, kvv)
            groups.setdefault(key, []).append(i)
            reps[key] = (int(trans[i]), rep_u, rep_v)
        for key, idxs in groups.items():
            table = self._basis_cache.get(key)
            if table is None:
                t, rep_u, rep_v = reps[key]
                loc = nodes @ self._d4_mats[t].T + self._d4_offs[t]
                pts = (np.array([rep_u, rep_v]) + loc) * self.h
                _, b1 = kv.eval_basis(pts[:, 0], deriv_pair[0])
                _, b2 = kv.eval_basis(pts[:, 1], deriv_pair[1])
                table = np.einsum("na,nb->nab", b1, b2).reshape(n, -1)
                self._basis_cache[key] = table
            if out is None:
                out = np.empty((P, n, table.shape[1]))
            out[np.array(idxs)] = table[None]
        return out

    def chunk_batch(self, spairs: list[SingularPair]) -> dict[str, np.ndarray]:
        """Chunks (P, pp_row, pp_col) per kind for same-regime pairs."""
        regime = spairs[0].regime
        rule = self.rules[regime]
        n = len(rule)
        limit = max(1, self.max_points // n)
        if len(spairs) > limit:
            parts = [self.chunk_batch(spairs[i: i + limit])
                     for i in range(0, len(spairs), limit)]
            return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
        P = len(spairs)
        ncell = 2 ** self.dr.m
        pa = np.array([s.patch_a for s in spairs])
        pb = np.array([s.patch_b for s in spairs])
        ta = np.array([s.t_a for s in spairs])
        tb = np.array([s.t_b for s in spairs])
        oa = np.stack([divmod(s.cell_a, ncell) for s in spairs]).astype(np.float64)
        ob = np.stack([divmod(s.cell_b, ncell) for s in spairs]).astype(np.float64)
        xloc = np.einsum("pij,nj->pni", self._d4_mats[ta], rule.nodes[:, :2]) \
            + self._d4_offs[ta][:, None, :]
        yloc = np.einsum("pij,nj->pni", self._d4_mats[tb], rule.nodes[:, 2:]) \
            + self._d4_offs[tb][:, None, :]
        xhat = (oa[:, None, :] + xloc) * self.h
        yhat = (ob[:, None, :] + yloc) * self.h
        xp, xt1, xt2, xn, xm = self._eval_geometry(pa, xhat)
        yp, yt1, yt2, yn, ym = self._eval_geometry(pb, yhat)
        d = xp - yp
        r = np.sqrt(np.einsum("pni,pni->pn", d, d))
        green = np.exp(1j * self.kappa * r) / (4.0 * np.pi * r)
        w4 = rule.weights * self.h ** 4
        bx = self._basis(self.dr.kv, "v", regime, ta, oa[:, 0], oa[:, 1], slice(0, 2), (0, 0))
        by = self._basis(self.dc.kv, "v", regime, tb, ob[:, 0], ob[:, 1], slice(2, 4), (0, 0))
        need_radial = any(k in ("K", "Kstar") for k in self.kinds)
        radial = (1j * self.kappa - 1.0 / r) * green / r if need_radial else None

        def contract(ker, fx, fy):
            tmp = (w4[None, :] * ker)[:, :, None] * fx
            return np.matmul(tmp.transpose(0, 2, 1), fy)

        out = {}
        for kind in self.kinds:
            if kind == "V":
                out[kind] = contract(green * xm * ym, bx, by)
            elif kind == "K":
                out[kind] = contract(
                    radial * np.einsum("pni,pni->pn", -d, yn) * xm * ym, bx, by)
            elif kind == "Kstar":
                out[kind] = contract(
                    radial * np.einsum("pni,pni->pn", d, xn) * xm * ym, bx, by)
            elif kind == "W":
                dbx1 = self._basis(self.dr.kv, "du", regime, ta, oa[:, 0], oa[:, 1],
                                   slice(0, 2), (1, 0))
                dbx2 = self._basis(self.dr.kv, "dv", regime, ta, oa[:, 0], oa[:, 1],
                                   slice(0, 2), (0, 1))
                dby1 = self._basis(self.dc.kv, "du", regime, tb, ob[:, 0], ob[:, 1],
                                   slice(2, 4), (1, 0))
                dby2 = self._basis(self.dc.kv, "dv", regime, tb, ob[:, 0], ob[:, 1],
                                   slice(2, 4), (0, 1))
                acc = contract(-self.kappa ** 2 * np.einsum("pni,pni->pn", xn, yn)
                               * green * xm * ym, bx, by)
                for comp in range(3):
                    cx = dbx1 * xt2[:, :, None, comp] - dbx2 * xt1[:, :, None, comp]
                    cy = dby1 * yt2[:, :, None, comp] - dby2 * yt1[:, :, None, comp]
                    acc = acc + contract(green, cx, cy)
                out[kind] = acc
            else:
                raise ValueError(f"unknown operator kind {kind}")
        return out


# -- assembly entry points ---------------------------------------------------------


def _needs_derivatives(kinds) -> bool:
    return "W" in kinds


def assemble_operators(kinds, kappa: float, geometry: SurfaceGeometry,
                       row_dofmap: DofMap, col_dofmap: DofMap,
                       order_far: int | None = None, order_sing: int | None = None,
                       classification: PairClassification | None = None):
    """Dense Galerkin matrices for several kinds in one shared sweep.

    Returns a dict kind -> DenseOperator.  W requires continuous spaces
    on both sides.
    """
    kinds = list(kinds)
    for kind in kinds:
        if kind not in OPERATOR_KINDS:
            raise ValueError(f"unknown operator kind {kind}")
        if kind == "W" and (row_dofmap.continuity != "continuous"
                            or col_dofmap.continuity != "continuous"):
            raise ValueError("the hypersingular form needs continuous spaces")
    if row_dofmap.m != col_dofmap.m:
        raise ValueError("row and column spaces must share the refinement level")
    p = max(row_dofmap.p, col_dofmap.p)
    nf = order_far if order_far is not None else far_order(p, row_dofmap.m)
    qs = order_sing if order_sing is not None else singular_order(p)
    cls = classification or PairClassification(geometry, row_dofmap.m)
    n = len(geometry)
    E = 4 ** row_dofmap.m
    deriv = _needs_derivatives(kinds)
    xdata = [build_patch_data(geometry, row_dofmap, i, nf, deriv) for i in range(n)]
    ydata = xdata if col_dofmap is row_dofmap else [
        build_patch_data(geometry, col_dofmap, i, nf, deriv) for i in range(n)
    ]
    sweeper = FarSweeper(kinds, kappa, xdata, ydata)
    colglob = np.concatenate(
        [col_dofmap.local_to_global[i][ydata[i].cellfuncs] for i in range(n)]
    )
    flatcols = colglob.reshape(-1)
    mats = {k: np.zeros((row_dofmap.dimension, col_dofmap.dimension), dtype=np.complex128)
            for k in kinds}
    all_ey = np.arange(n * E)
    for pa in range(n):
        rowglob = row_dofmap.local_to_global[pa][xdata[pa].cellfuncs]
        for ca in range(E):
            mask = np.ones(n * E)
            touching = cls.touching.get(pa * E + ca)
            if touching is not None:
                mask[touching] = 0.0
            chunks = sweeper.chunks(pa, ca, all_ey)
            rows = rowglob[ca]
            for kind in kinds:
                blocks = chunks[kind] * mask[:, None, None]
                mat = mats[kind]
                for a in range(rows.size):
                    np.add.at(mat[rows[a]], flatcols, blocks[:, a, :].reshape(-1))
    sing = SingularEvaluator(geometry, row_dofmap, col_dofmap, kinds, kappa, qs)
    for regime in (PairRegime.IDENTICAL, PairRegime.COMMON_EDGE, PairRegime.COMMON_VERTEX):
        group = [s for s in cls.singular_pairs if s.regime is regime]
        if not group:
            continue
        chunks = sing.chunk_batch(group)
        for i, spair in enumerate(group):
            rows = row_dofmap.local_to_global[spair.patch_a][
                row_dofmap.cell_functions(*divmod(spair.cell_a, 2 ** row_dofmap.m))
            ]
            cols = col_dofmap.local_to_global[spair.patch_b][
                col_dofmap.cell_functions(*divmod(spair.cell_b, 2 ** col_dofmap.m))
            ]
            for kind in kinds:
                np.add.at(mats[kind], (rows[:, None], cols[None, :]), chunks[kind][i])
    return {k: DenseOperator(mats[k], row_dofmap, col_dofmap, k, kappa) for k in kinds}


def assemble_operator(kind: str, kappa: float, geometry: SurfaceGeometry,
                      row_dofmap: DofMap, col_dofmap: DofMap, **kw) -> DenseOperator:
    return assemble_operators([kind], kappa, geometry, row_dofmap, col_dofmap, **kw)[kind]


def assemble_mass(dofmap: DofMap, order: int | None = None) -> SparseOperator:
    """Sparse Galerkin mass matrix of the space against itself."""
    nf = order if order is not None else far_order(dofmap.p, dofmap.m) + 1
    rows_l, cols_l, vals_l = [], [], []
    for patch in range(len(dofmap.geometry)):
        pd = build_patch_data(dofmap.geometry, dofmap, patch, nf)
        chunk = np.einsum("ega,eg,egb->eab", pd.basis, pd.w_meas, pd.basis)
        glob = dofmap.local_to_global[patch][pd.cellfuncs]
        pp = glob.shape[1]
        rows_l.append(np.repeat(glob, pp, axis=1).ravel())
        cols_l.append(np.tile(glob, (1, pp)).ravel())
        vals_l.append(chunk.reshape(-1).astype(np.complex128))
    csr = coalesce_coo(np.concatenate(rows_l), np.concatenate(cols_l),
                       np.concatenate(vals_l), (dofmap.dimension, dofmap.dimension))
    return SparseOperator(csr, dofmap, dofmap, "M", 0.0)


def assemble_rhs(problem: str, kappa: float, direction, eta: float,
                 dofmap: DofMap, order: int | None = None) -> np.ndarray:
    """Galerkin data vector of the combined-field right-hand side.

    SoundSoft pairs du_inc/dn - i eta u_inc against the test space,
    SoundHard pairs u_inc - i eta du_inc/dn.
    """
    if problem not in ("soft", "hard"):
        raise ValueError("problem must be 'soft' or 'hard'")
    if eta == 0.0:
        raise ValueError("the combined-field coupling eta must be nonzero")
    nf = order if order is not None else far_order(dofmap.p, dofmap.m) + 1
    out = np.zeros(dofmap.dimension, dtype=np.complex128)
    for patch in range(len(dofmap.geometry)):
        pd = build_patch_data(dofmap.geometry, dofmap, patch, nf)
        E, g, _ = pd.points.shape
        gd = GeometryData(pd.points.reshape(-1, 3), None, None,
                          pd.normals.reshape(-1, 3), None)
        diri, neum = plane_wave_traces(kappa, direction, gd)
        diri = diri.reshape(E, g)
        neum = neum.reshape(E, g)
        data = neum - 1j * eta * diri if problem == "soft" else diri - 1j * eta * neum
        vals = np.einsum("eg,eg,ega->ea", data, pd.w_meas, pd.basis)
        np.add.at(out, dofmap.local_to_global[patch][pd.cellfuncs], vals)
    return out


def project_function(dofmap: DofMap, fn, order: int | None = None) -> np.ndarray:
    """L2 projection coefficients of a scalar surface function fn(points)."""
    import scipy.sparse.linalg as spla

    nf = order if order is not None else far_order(dofmap.p, dofmap.m) + 2
    rhs = np.zeros(dofmap.dimension, dtype=np.complex128)
    for patch in range(len(dofmap.geometry)):
        pd = build_patch_data(dofmap.geometry, dofmap, patch, nf)
        E, g, _ = pd.points.shape
        vals = np.asarray(fn(pd.points.reshape(-1, 3)), dtype=np.complex128).reshape(E, g)
        np.add.at(rhs, dofmap.local_to_global[patch][pd.cellfuncs],
                  np.einsum("eg,eg,ega->ea", vals, pd.w_meas, pd.basis))
    mass = assemble_mass(dofmap, nf)
    return spla.spsolve(mass.csr.tocsc(), rhs)


def cfie_system(problem: str, mass, boundary_op, second_op, eta: float,
                hard_w_sign: float = -1.0, include_coupling: bool = True) -> ComposedOperator:
    """Lazy combined-field system operator.

    SoundSoft: (1/2) M + Kstar - i eta V on the discontinuous space.
    SoundHard: (1/2) M - K + s i eta W on the continuous space, with the
    validated default s = -1.  ``include_coupling=False`` drops the
    coupling term (test-only path for resonance experiments).
    """
    if problem == "soft":
        terms = [(0.5 + 0.0j, mass), (1.0 + 0.0j, boundary_op)]
        if include_coupling:
            terms.append((-1j * eta, second_op))
    elif problem == "hard":
        terms = [(0.5 + 0.0j, mass), (-1.0 + 0.0j, boundary_op)]
        if include_coupling:
            terms.append((hard_w_sign * 1j * eta, second_op))
    else:
        raise ValueError("problem must be 'soft' or 'hard'")
    return ComposedOperator(terms)
