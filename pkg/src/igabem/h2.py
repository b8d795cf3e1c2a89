"""Reference-domain black-box multipole compression (H2 format).

Per patch, a dyadic quadtree over the parameter square assigns basis
functions to clusters through their Greville anchors; cluster ranges are
contiguous in a Morton ordering.  Admissibility compares inflated
physical bounding boxes of the cluster supports.  Admissible blocks
whose size pays for a rank-q^2 coupling store the pulled-back kernel
sampled at tensor-Chebyshev points with nested (re-interpolated) cluster
bases; small admissible blocks are materialized densely either through
the same degenerate kernel (when cheaper than quadrature) or through the
exact element-pair quadrature.  Inadmissible leaf pairs always use the
exact quadrature path shared with dense assembly, which keeps those
entries bit-identical to a dense run.

The hypersingular operator compresses the plain Green pull-back once and
applies the three unnormalized-curl component moments outside the
compression; its -kappa^2 <n_x,n_y> G part compresses like the single
layer with scalar moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    FarSweeper,
    PairClassification,
    SingularEvaluator,
    build_patch_data,
    far_order,
    singular_order,
)
from .dofmap import DofMap
from .geometry import SurfaceGeometry
from .operators import LinearOperator, coalesce_coo
from .quadrature import PairRegime, gauss_rule


@dataclass
class AdmissibilityParams:
    """Compression controls mirroring the published defaults."""

    eta_adm: float = 1.6
    q: int = 9
    min_funcs: int | None = None       # default p + 1
    size_threshold: int | None = None  # default q^4 coupling break-even
    inflation: float = 1.25

    def __post_init__(self):
        if self.eta_adm <= 0.0:
            raise ValueError("eta_adm must be positive")
        if self.q < 2:
            raise ValueError("need at least two interpolation points per direction")


def _cheb_nodes01(q: int) -> np.ndarray:
    return 0.5 * (1.0 - np.cos((2 * np.arange(q) + 1) * np.pi / (2 * q)))[::-1].copy()


_BARY_CACHE: dict[int, np.ndarray] = {}


def _bary_weights(nodes: np.ndarray) -> np.ndarray:
    return 1.0 / np.array([np.prod(nodes[j] - np.delete(nodes, j))
                           for j in range(nodes.size)])


def _lagrange01(q: int, x: np.ndarray) -> np.ndarray:
    """Lagrange basis on the [0,1] Chebyshev nodes at x (barycentric)."""
    nodes = _cheb_nodes01(q)
    if q not in _BARY_CACHE:
        _BARY_CACHE[q] = _bary_weights(nodes)
    w = _BARY_CACHE[q]
    diff = x[:, None] - nodes[None, :]
    hit = np.abs(diff) < 1e-13
    diff = np.where(hit, 1.0, diff)
    terms = w[None, :] / diff
    out = terms / terms.sum(axis=1)[:, None]
    rows = hit.any(axis=1)
    out[rows] = hit[rows].astype(float)
    return out


@dataclass
class Cluster:
    level: int
    cell_lo: tuple[int, int]
    cell_hi: tuple[int, int]          # exclusive cell ranges
    func_start: int
    func_end: int                     # contiguous range in Morton order
    children: list[int] = field(default_factory=list)
    support: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    box_lo: np.ndarray | None = None
    box_hi: np.ndarray | None = None

    @property
    def n_funcs(self) -> int:
        return self.func_end - self.func_start

    @property
    def n_cells(self) -> int:
        return (self.cell_hi[0] - self.cell_lo[0]) * (self.cell_hi[1] - self.cell_lo[1])


class ClusterTree:
    """Quadtree over one patch; owns patch-local basis functions."""

    def __init__(self, geometry: SurfaceGeometry, dofmap: DofMap, patch: int,
                 inflation: float = 1.25):
        self.patch = patch
        self.dofmap = dofmap
        m = dofmap.m
        ncell = 2 ** m
        anchors = dofmap.anchors()
        cells = np.minimum((anchors * ncell).astype(np.int64), ncell - 1)
        # Morton order of anchor cells, ties by local id.
        def interleave(u, v):
            out = np.zeros_like(u)
            for bit in range(m):
                out |= ((u >> bit) & 1) << (2 * bit + 1)
                out |= ((v >> bit) & 1) << (2 * bit)
            return out

        codes = interleave(cells[:, 0], cells[:, 1])
        self.perm = np.lexsort((np.arange(len(codes)), codes))
        sorted_codes = codes[self.perm]
        knots = dofmap.kv.knots
        p = dofmap.p
        k = dofmap.k
        self.clusters: list[Cluster] = []

        def build(level, clo, chi):
            code_lo = interleave(np.array([clo[0]]), np.array([clo[1]]))[0]
            code_hi = interleave(np.array([chi[0] - 1]), np.array([chi[1] - 1]))[0]
            fs = int(np.searchsorted(sorted_codes, code_lo, side="left"))
            fe = int(np.searchsorted(sorted_codes, code_hi, side="right"))
            idx = len(self.clusters)
            self.clusters.append(Cluster(level, clo, chi, fs, fe))
            if chi[0] - clo[0] > 1:
                half = (chi[0] - clo[0]) // 2
                kids = []
                for du in (0, 1):
                    for dv in (0, 1):
                        sub_lo = (clo[0] + du * half, clo[1] + dv * half)
                        sub_hi = (sub_lo[0] + half, sub_lo[1] + half)
                        kids.append(build(level + 1, sub_lo, sub_hi))
                self.clusters[idx].children = kids
            return idx

        build(0, (0, 0), (ncell, ncell))
        # Support boxes and inflated physical AABBs.
        g = geometry.patches[patch]
        locs = self.perm  # permuted local ids
        j1 = locs // k
        j2 = locs % k
        su0 = knots[j1]
        su1 = knots[j1 + p + 1]
        sv0 = knots[j2]
        sv1 = knots[j2 + p + 1]
        samp = np.linspace(0.0, 1.0, 4)
        for cl in self.clusters:
            if cl.n_funcs == 0:
                continue
            sl = slice(cl.func_start, cl.func_end)
            box = (float(su0[sl].min()), float(su1[sl].max()),
                   float(sv0[sl].min()), float(sv1[sl].max()))
            cl.support = box
            uu, vv = np.meshgrid(box[0] + (box[1] - box[0]) * samp,
                                 box[2] + (box[3] - box[2]) * samp, indexing="ij")
            pts = g.eval_point(np.column_stack([uu.ravel(), vv.ravel()]))
            lo, hi = pts.min(axis=0), pts.max(axis=0)
            c = 0.5 * (lo + hi)
            cl.box_lo = c + inflation * (lo - c)
            cl.box_hi = c + inflation * (hi - c)

    @property
    def n_leaves(self) -> int:
        return sum(1 for c in self.clusters if not c.children)

    def funcs(self, cl: Cluster) -> np.ndarray:
        """Patch-local ids owned by a cluster."""
        return self.perm[cl.func_start: cl.func_end]


def is_admissible(cl_a: Cluster, cl_b: Cluster, eta_adm: float) -> bool:
    """max(diam_a, diam_b) <= eta * dist on the inflated physical boxes."""
    if cl_a.box_lo is None or cl_b.box_lo is None:
        return False
    gap = np.maximum(np.maximum(cl_a.box_lo - cl_b.box_hi, cl_b.box_lo - cl_a.box_hi), 0.0)
    dist = float(np.linalg.norm(gap))
    diam = max(float(np.linalg.norm(cl_a.box_hi - cl_a.box_lo)),
               float(np.linalg.norm(cl_b.box_hi - cl_b.box_lo)))
    return dist > 0.0 and diam <= eta_adm * dist


def build_cluster_tree(geometry: SurfaceGeometry, dofmap: DofMap,
                       inflation: float = 1.25) -> list[ClusterTree]:
    """One quadtree per patch (deterministic)."""
    return [ClusterTree(geometry, dofmap, i, inflation) for i in range(len(geometry))]


# -- the compressed operator -------------------------------------------------------


@dataclass
class FarBlock:
    patch_a: int
    cl_a: int
    patch_b: int
    cl_b: int
    couplings: list  # per family component group


class H2Operator(LinearOperator):
    """Near CSR plus interpolation far field with nested bases."""

    def __init__(self, kind, kappa, dofmap, trees, params, near_csr, far_blocks,
                 bases, block_stats):
        self.kind = kind
        self.kappa = kappa
        self.row_dofmap = dofmap
        self.col_dofmap = dofmap
        self.trees = trees
        self.params = params
        self.near = near_csr
        self.far_blocks = far_blocks
        self.bases = bases  # per patch: dict family -> {"leaf": {...}, "transfer": {...}}
        self.block_stats = block_stats
        self.shape = (dofmap.dimension, dofmap.dimension)
        self._families = ("curl", "scalar") if kind == "W" else ("scalar",)

    def stored_entries(self) -> int:
        """Stored complex entries: near nnz, couplings, and cluster bases."""
        total = int(self.near.nnz)
        for blk in self.far_blocks:
            for coup, _ in blk.couplings:
                total += coup.size
        for per_patch in self.bases:
            for fam in per_patch.values():
                for mat in fam["leaf"].values():
                    total += mat.size
                for tu, tv in fam["transfer"].values():
                    total += tu.size + tv.size
        return total

    def _forward(self, x: np.ndarray):
        """Leaf moments and upward transfers: coefficients per cluster."""
        coeffs = []
        for patch, tree in enumerate(self.trees):
            xloc = x[self.col_dofmap.local_to_global[patch]]
            per = {}
            for fam in self._families:
                basis = self.bases[patch][fam]
                vals: dict[int, np.ndarray] = {}

                def up(ci):
                    cl = tree.clusters[ci]
                    if cl.n_funcs == 0:
                        return None
                    if not cl.children:
                        u = basis["leaf"].get(ci)
                        if u is None:
                            return None
                        vals[ci] = np.tensordot(u, xloc[tree.funcs(cl)], axes=([0], [0]))
                        return vals[ci]
                    acc = None
                    for kid in cl.children:
                        cv = up(kid)
                        if cv is None:
                            continue
                        tu, tv = basis["transfer"][kid]
                        shifted = np.einsum("ax,by,ab...->xy...", tu, tv, cv)
                        acc = shifted if acc is None else acc + shifted
                    if acc is not None:
                        vals[ci] = acc
                    return acc

                up(0)
                per[fam] = vals
            coeffs.append(per)
        return coeffs

    def apply(self, x: np.ndarray) -> np.ndarray:
        y = self.near @ x
        if not self.far_blocks:
            return y
        coeffs = self._forward(x)
        locals_: list[dict[str, dict[int, np.ndarray]]] = [
            {fam: {} for fam in self._families} for _ in self.trees
        ]
        for blk in self.far_blocks:
            src = coeffs[blk.patch_b]
            dst = locals_[blk.patch_a]
            for coup, fam in blk.couplings:
                xc = src[fam].get(blk.cl_b)
                if xc is None:
                    continue
                q2 = coup.shape[1]
                contrib = coup @ xc.reshape(q2, -1)
                tgt = dst[fam].get(blk.cl_a)
                shape = (coup.shape[0],) + xc.shape[2:] if xc.ndim > 2 else (coup.shape[0],)
                add = contrib.reshape((int(np.sqrt(coup.shape[0])),
                                       int(np.sqrt(coup.shape[0]))) + xc.shape[2:])
                if tgt is None:
                    dst[fam][blk.cl_a] = add.copy()
                else:
                    tgt += add
        for patch, tree in enumerate(self.trees):
            yloc = np.zeros(self.row_dofmap.local_to_global[patch].size,
                            dtype=np.complex128)
            for fam in self._families:
                basis = self.bases[patch][fam]
                pend = locals_[patch][fam]

                def down(ci, incoming):
                    cl = tree.clusters[ci]
                    if cl.n_funcs == 0:
                        return
                    local = pend.get(ci)
                    if incoming is not None:
                        local = incoming if local is None else local + incoming
                    if not cl.children:
                        if local is not None:
                            u = basis["leaf"].get(ci)
                            if u is not None:
                                yloc[tree.funcs(cl)] += np.tensordot(
                                    u, local, axes=([1, 2], [0, 1])
                                ) if local.ndim == 2 else np.einsum(
                                    "axyd,xyd->a", u, local)
                        return
                    for kid in cl.children:
                        if local is not None:
                            tu, tv = basis["transfer"][kid]
                            shifted = np.einsum("ax,by,xy...->ab...", tu, tv, local)
                        else:
                            shifted = None
                        down(kid, shifted)

                down(0, None)
            np.add.at(y, self.row_dofmap.local_to_global[patch], yloc)
        return y

    def to_dense(self) -> np.ndarray:
        n = self.shape[1]
        out = np.empty(self.shape, dtype=np.complex128)
        eye = np.eye(n, dtype=np.complex128)
        for j in range(n):
            out[:, j] = self.apply(eye[:, j])
        return out


# -- assembly -----------------------------------------------------------------------


def _cluster_cheb_geometry(geometry, tree: ClusterTree, ci: int, q: int, cache: dict):
    """GeometryData at the tensor-Chebyshev grid of a cluster support box."""
    key = (tree.patch, ci)
    got = cache.get(key)
    if got is None:
        cl = tree.clusters[ci]
        u0, u1, v0, v1 = cl.support
        t = _cheb_nodes01(q)
        uu, vv = np.meshgrid(u0 + (u1 - u0) * t, v0 + (v1 - v0) * t, indexing="ij")
        got = geometry.patches[tree.patch].eval(np.column_stack([uu.ravel(), vv.ravel()]))
        cache[key] = got
    return got


def _coupling(kind, kappa, gx, gy):
    """Sampled pulled-back kernel(s) between two Chebyshev grids.

    Returns a list of (matrix, family) pairs; the W curl family carries
    the plain Green samples shared by its three components.
    """
    d = gx.point[:, None, :] - gy.point[None, :, :]
    r = np.sqrt(np.einsum("xyi,xyi->xy", d, d))
    green = np.exp(1j * kappa * r) / (4.0 * np.pi * r)
    meas = gx.measure[:, None] * gy.measure[None, :]
    if kind == "V":
        return [(green * meas, "scalar")]
    if kind == "K":
        radial = (1j * kappa - 1.0 / r) * green / r
        return [(radial * np.einsum("xyi,yi->xy", -d, gy.normal) * meas, "scalar")]
    if kind == "Kstar":
        radial = (1j * kappa - 1.0 / r) * green / r
        return [(radial * np.einsum("xyi,xi->xy", d, gx.normal) * meas, "scalar")]
    if kind == "W":
        mass = -kappa ** 2 * np.einsum("xi,yi->xy", gx.normal, gy.normal) * green * meas
        return [(green, "curl"), (mass, "scalar")]
    raise ValueError(f"unknown kind {kind}")


def _leaf_moments(geometry, dofmap: DofMap, tree: ClusterTree, families, q: int):
    """Exact integrals of (weighted) basis factors against Lagrange tensors.

    Returns {"scalar": {leaf: (n, q, q)}, "curl": {leaf: (n, q, q, 3)}}
    plus per-child transfer factor pairs.
    """
    m = dofmap.m
    ncell = 2 ** m
    h = 0.5 ** m
    p = dofmap.p
    k = dofmap.k
    nmom = (p + q) // 2 + 1
    grule = gauss_rule(nmom)
    gn, gw = grule.nodes, grule.weights
    kv = dofmap.kv
    patch = geometry.patches[tree.patch]
    out = {fam: {} for fam in families}
    tcache = _cheb_nodes01(q)
    for ci, cl in enumerate(tree.clusters):
        if cl.children or cl.n_funcs == 0:
            continue
        u0, u1, v0, v1 = cl.support
        locs = tree.funcs(cl)
        j1 = locs // k
        j2 = locs % k
        cu0 = max(int(j1.min()) - p, 0)
        cu1 = min(int(j1.max()), ncell - 1)
        cv0 = max(int(j2.min()) - p, 0)
        cv1 = min(int(j2.max()), ncell - 1)
        uc = (np.arange(cu0, cu1 + 1)[:, None] + gn[None, :]).ravel() * h
        vc = (np.arange(cv0, cv1 + 1)[:, None] + gn[None, :]).ravel() * h
        bu = kv.eval_all(uc)[:, j1.min(): j1.max() + 1]
        bv = kv.eval_all(vc)[:, j2.min(): j2.max() + 1]
        lu = _lagrange01(q, (uc - u0) / (u1 - u0))
        lv = _lagrange01(q, (vc - v0) / (v1 - v0))
        wu = np.tile(gw * h, cu1 - cu0 + 1)
        wv = np.tile(gw * h, cv1 - cv0 + 1)
        if "scalar" in families:
            mu = np.einsum("u,ua,ux->ax", wu, bu, lu)
            mv = np.einsum("v,vb,vy->by", wv, bv, lv)
            full = np.einsum("ax,by->abxy", mu, mv)
            sel = full[j1 - j1.min(), j2 - j2.min()]
            out["scalar"][ci] = sel
        if "curl" in families:
            du = kv.eval_all(uc, 1)[:, j1.min(): j1.max() + 1]
            dv = kv.eval_all(vc, 1)[:, j2.min(): j2.max() + 1]
            uu, vv = np.meshgrid(uc, vc, indexing="ij")
            gdat = patch.eval(np.column_stack([uu.ravel(), vv.ravel()]))
            nu, nv = uc.size, vc.size
            t1 = gdat.tan1.reshape(nu, nv, 3)
            t2 = gdat.tan2.reshape(nu, nv, 3)
            x1 = du * wu[:, None]
            y1 = np.einsum("vb,vy,uvd->ubyd", bv * wv[:, None], lv, t2, optimize=True)
            term1 = np.einsum("ua,ux,ubyd->abxyd", x1, lu, y1, optimize=True)
            x2 = bu * wu[:, None]
            y2 = np.einsum("vb,vy,uvd->ubyd", dv * wv[:, None], lv, t1, optimize=True)
            term2 = np.einsum("ua,ux,ubyd->abxyd", x2, lu, y2, optimize=True)
            full = term1 - term2
            out["curl"][ci] = full[j1 - j1.min(), j2 - j2.min()]
    transfers = {}
    for ci, cl in enumerate(tree.clusters):
        for kid in cl.children:
            ckl = tree.clusters[kid]
            pu0, pu1, pv0, pv1 = cl.support
            ku0, ku1, kv0, kv1 = ckl.support
            # rows: child Chebyshev node, cols: parent Lagrange basis
            tu = _lagrange01(q, (ku0 + (ku1 - ku0) * tcache - pu0) / (pu1 - pu0))
            tv = _lagrange01(q, (kv0 + (kv1 - kv0) * tcache - pv0) / (pv1 - pv0))
            transfers[kid] = (tu, tv)
    return out, transfers


def assemble_h2(kind: str, kappa: float, geometry: SurfaceGeometry, dofmap: DofMap,
                params: AdmissibilityParams | None = None,
                classification: PairClassification | None = None,
                order_far: int | None = None, order_sing: int | None = None) -> H2Operator:
    """Compressed Galerkin operator with exact near field."""
    return assemble_h2_operators([kind], kappa, geometry, dofmap, params,
                                 classification, order_far, order_sing)[kind]


def assemble_h2_operators(kinds, kappa: float, geometry: SurfaceGeometry, dofmap: DofMap,
                          params: AdmissibilityParams | None = None,
                          classification: PairClassification | None = None,
                          order_far: int | None = None,
                          order_sing: int | None = None) -> dict[str, H2Operator]:
    """Compressed operators for several kinds sharing one sweep."""
    kinds = list(kinds)
    params = params or AdmissibilityParams()
    if "W" in kinds and dofmap.continuity != "continuous":
        raise ValueError("the hypersingular form needs continuous spaces")
    p = dofmap.p
    m = dofmap.m
    q = params.q
    nf = order_far if order_far is not None else far_order(p, m)
    qs = order_sing if order_sing is not None else singular_order(p)
    min_funcs = params.min_funcs if params.min_funcs is not None else p + 1
    size_thr = params.size_threshold if params.size_threshold is not None else q ** 4
    cls = classification or PairClassification(geometry, m)
    trees = build_cluster_tree(geometry, dofmap, params.inflation)
    n = len(geometry)
    E = 4 ** m
    families = ("curl", "scalar") if "W" in kinds else ("scalar",)

    far_pairs: list[tuple[int, int, int, int]] = []
    mat_pairs: list[tuple[int, int, int, int]] = []
    quad_pairs: list[tuple[int, int, int, int, bool]] = []  # last: inadmissible-leaf

    def descend(pa, ia, pb, ib):
        ca = trees[pa].clusters[ia]
        cb = trees[pb].clusters[ib]
        if ca.n_funcs == 0 or cb.n_funcs == 0:
            return
        if is_admissible(ca, cb, params.eta_adm):
            if (ca.n_funcs >= min_funcs and cb.n_funcs >= min_funcs
                    and ca.n_funcs * cb.n_funcs > size_thr):
                far_pairs.append((pa, ia, pb, ib))
            elif ca.n_cells * cb.n_cells * nf ** 4 > q ** 4:
                mat_pairs.append((pa, ia, pb, ib))
            else:
                quad_pairs.append((pa, ia, pb, ib, False))
            return
        if not ca.children and not cb.children:
            quad_pairs.append((pa, ia, pb, ib, True))
            return
        if ca.children and (not cb.children or ca.n_cells >= cb.n_cells):
            for kid in ca.children:
                descend(pa, kid, pb, ib)
        else:
            for kid in cb.children:
                descend(pa, ia, pb, kid)

    for pa in range(n):
        for pb in range(n):
            descend(pa, 0, pb, 0)

    # cluster bases (leaf moments + transfers) for patches that need them
    bases = []
    for patch in range(n):
        fams, transfers = _leaf_moments(geometry, dofmap, trees[patch], families, q)
        per = {fam: {"leaf": fams[fam], "transfer": transfers} for fam in families}
        bases.append(per)

    # far couplings
    geom_cache: dict = {}
    far_blocks = {k: [] for k in kinds}
    for pa, ia, pb, ib in far_pairs:
        gx = _cluster_cheb_geometry(geometry, trees[pa], ia, q, geom_cache)
        gy = _cluster_cheb_geometry(geometry, trees[pb], ib, q, geom_cache)
        for k in kinds:
            far_blocks[k].append(FarBlock(pa, ia, pb, ib, _coupling(k, kappa, gx, gy)))

    # materialized small admissible blocks -> dense entries via interpolation
    rows_l = {k: [] for k in kinds}
    cols_l = {k: [] for k in kinds}
    vals_l = {k: [] for k in kinds}
    _moment_cache: dict[tuple, np.ndarray | None] = {}

    def full_moment(tree, ci, fam, patch_bases):
        """Aggregated moment of a cluster (cached; shared across blocks)."""
        key = (tree.patch, ci, fam)
        if key in _moment_cache:
            return _moment_cache[key]
        cl = tree.clusters[ci]
        if not cl.children:
            out = patch_bases[fam]["leaf"].get(ci)
        else:
            parts = []
            for kid in cl.children:
                sub = full_moment(tree, kid, fam, patch_bases)
                if sub is None:
                    continue
                tu, tv = patch_bases[fam]["transfer"][kid]
                parts.append(np.einsum("ax,by,nab...->nxy...", tu, tv, sub))
            out = np.concatenate(parts) if parts else None
        _moment_cache[key] = out
        return out

    for pa, ia, pb, ib in mat_pairs:
        gx = _cluster_cheb_geometry(geometry, trees[pa], ia, q, geom_cache)
        gy = _cluster_cheb_geometry(geometry, trees[pb], ib, q, geom_cache)
        ca, cb = trees[pa].clusters[ia], trees[pb].clusters[ib]
        ga = dofmap.local_to_global[pa][trees[pa].funcs(ca)]
        gb = dofmap.local_to_global[pb][trees[pb].funcs(cb)]
        for k in kinds:
            block = None
            for coup, fam in _coupling(k, kappa, gx, gy):
                ua = full_moment(trees[pa], ia, fam, bases[pa])
                ub = full_moment(trees[pb], ib, fam, bases[pb])
                if ua.ndim == 3:
                    term = np.einsum("axy,xyuv,buv->ab", ua, coup.reshape(q, q, q, q),
                                     ub, optimize=True)
                else:
                    term = np.einsum("axyd,xyuv,buvd->ab", ua, coup.reshape(q, q, q, q),
                                     ub, optimize=True)
                block = term if block is None else block + term
            rows_l[k].append(np.repeat(ga, gb.size))
            cols_l[k].append(np.tile(gb, ga.size))
            vals_l[k].append(block.reshape(-1))

    # exact-quadrature blocks (inadmissible leaves and tiny admissible pairs)
    ncell = 2 ** m

    def support_cell_rect(tree, cl):
        """Cell-index rectangle covered by a cluster's support box."""
        u0, u1, v0, v1 = cl.support
        cu0 = max(int(np.floor(u0 * ncell)), 0)
        cu1 = min(int(np.ceil(u1 * ncell)), ncell)
        cv0 = max(int(np.floor(v0 * ncell)), 0)
        cv1 = min(int(np.ceil(v1 * ncell)), ncell)
        return cu0, cu1, cv0, cv1

    mark = {}
    for pa, ia, pb, ib, is_near in quad_pairs:
        mark.setdefault((pa, pb), []).append((ia, ib, is_near))
    near_index = []
    deriv = "W" in kinds
    xdata = [build_patch_data(geometry, dofmap, i, nf, deriv) for i in range(n)]
    sweeper = FarSweeper(kinds, kappa, xdata, xdata)
    sing = SingularEvaluator(geometry, dofmap, dofmap, kinds, kappa, qs)
    sing_by_pair: dict[tuple[int, int], list] = {}
    for spair in cls.singular_pairs:
        sing_by_pair.setdefault((spair.patch_a, spair.patch_b), []).append(spair)
    k2 = dofmap.k ** 2
    cell_ids = np.arange(ncell * ncell).reshape(ncell, ncell)
    for (pa, pb), blocks in sorted(mark.items()):
        marked = np.zeros((k2, k2), dtype=bool)
        pairmat = np.zeros((ncell * ncell, ncell * ncell), dtype=bool)
        for ia, ib, is_near in blocks:
            ca, cb = trees[pa].clusters[ia], trees[pb].clusters[ib]
            ra = trees[pa].funcs(ca)
            rb = trees[pb].funcs(cb)
            marked[np.ix_(ra, rb)] = True
            if is_near:
                near_index.append((pa, pb, ra, rb))
            au0, au1, av0, av1 = support_cell_rect(trees[pa], ca)
            bu0, bu1, bv0, bv1 = support_cell_rect(trees[pb], cb)
            acells = cell_ids[au0:au1, av0:av1].reshape(-1)
            bcells = cell_ids[bu0:bu1, bv0:bv1].reshape(-1)
            pairmat[np.ix_(acells, bcells)] = True
        needed = {int(ex): np.nonzero(pairmat[ex])[0]
                  for ex in np.nonzero(pairmat.any(axis=1))[0]}
        cellfuncs_a = xdata[pa].cellfuncs
        cellfuncs_b = xdata[pb].cellfuncs
        # Sequential accumulation into a patch-pair scratch replicates the
        # dense path's addition order entry for entry (np.add.at is
        # unbuffered and in-order, unlike segmented reductions).
        local = {k: np.zeros((k2, k2), dtype=np.complex128) for k in kinds}
        for ex in sorted(needed):
            eys = np.asarray(needed[ex], dtype=np.int64)
            gx_id = pa * E + ex
            touching = cls.touching.get(gx_id)
            if touching is not None:
                tset = set(int(t) for t in touching)
                keep = np.array([pb * E + ey not in tset for ey in eys])
                eys_far = eys[keep]
            else:
                eys_far = eys
            if eys_far.size:
                chunks = sweeper.chunks(pa, ex, pb * E + eys_far)
                rows = cellfuncs_a[ex]
                cols = cellfuncs_b[eys_far]            # (nb, ppc)
                for k in kinds:
                    for a in range(rows.size):
                        np.add.at(local[k][rows[a]], cols.reshape(-1),
                                  chunks[k][:, a, :].reshape(-1))
        # singular contributions in the same regime-major order as dense
        pair_sing = sing_by_pair.get((pa, pb), ())
        for regime in (PairRegime.IDENTICAL, PairRegime.COMMON_EDGE,
                       PairRegime.COMMON_VERTEX):
            group = [s for s in pair_sing
                     if s.regime is regime
                     and marked[np.ix_(dofmap.cell_functions(*divmod(s.cell_a, ncell)),
                                       dofmap.cell_functions(*divmod(s.cell_b, ncell)))].any()]
            if not group:
                continue
            chunks = sing.chunk_batch(group)
            for i, spr in enumerate(group):
                rows = dofmap.cell_functions(*divmod(spr.cell_a, ncell))
                cols = dofmap.cell_functions(*divmod(spr.cell_b, ncell))
                for k in kinds:
                    np.add.at(local[k], (rows[:, None], cols[None, :]), chunks[k][i])
        nz_r, nz_c = np.nonzero(marked)
        if nz_r.size:
            ga = dofmap.local_to_global[pa]
            gb = dofmap.local_to_global[pb]
            for k in kinds:
                rows_l[k].append(ga[nz_r])
                cols_l[k].append(gb[nz_c])
                vals_l[k].append(local[k][nz_r, nz_c])

    import scipy.sparse as sp

    ops = {}
    for k in kinds:
        if rows_l[k]:
            near_csr = coalesce_coo(np.concatenate(rows_l[k]), np.concatenate(cols_l[k]),
                                    np.concatenate(vals_l[k]),
                                    (dofmap.dimension, dofmap.dimension))
        else:
            near_csr = sp.csr_matrix((dofmap.dimension, dofmap.dimension),
                                     dtype=np.complex128)
        stats = {
            "far_blocks": len(far_pairs),
            "materialized_blocks": len(mat_pairs),
            "quad_blocks": len(quad_pairs),
            "near_nnz": int(near_csr.nnz),
        }
        op = H2Operator(k, kappa, dofmap, trees, params, near_csr, far_blocks[k],
                        bases, stats)
        op.near_index = near_index
        ops[k] = op
    return ops
