"""Multi-patch NURBS boundary representations.

A closed surface is a union of tensor-product rational patches mapping
[0,1]^2 into R^3.  Construction validates that every patch edge is
matched by exactly one other patch edge, that matched edges trace
identical curves, that patches are nondegenerate, and that all normals
point out of the enclosed volume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .splines import KnotVector
from .quadrature import gauss_rule


class GeometryError(Exception):
    """Base class for geometry validation failures."""

    code = "geometry error"


class MalformedGeometryFile(GeometryError):
    code = "malformed header"


class ControlNetMismatch(GeometryError):
    code = "control net dimensions"


class NonpositiveWeight(GeometryError):
    code = "nonpositive weight"


class SurfaceNotClosed(GeometryError):
    code = "surface not closed"


class InterfaceMismatch(GeometryError):
    code = "interface mismatch"


class InwardOrientation(GeometryError):
    code = "inward orientation"


class DegeneratePatch(GeometryError):
    code = "degenerate patch"


@dataclass
class GeometryData:
    """Pointwise surface evaluation record (all arrays, leading dim n)."""

    point: np.ndarray
    tan1: np.ndarray
    tan2: np.ndarray
    normal: np.ndarray
    measure: np.ndarray


class NurbsPatch:
    """Tensor-product NURBS mapping of the unit square into R^3."""

    def __init__(self, kv1: KnotVector, kv2: KnotVector, control: np.ndarray, weights: np.ndarray):
        control = np.asarray(control, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        k1, k2 = kv1.num_basis, kv2.num_basis
        if control.shape != (k1, k2, 3):
            raise ControlNetMismatch(
                f"control net {control.shape} does not match basis counts ({k1}, {k2})"
            )
        if weights.shape != (k1, k2):
            raise ControlNetMismatch("weight table does not match basis counts")
        if np.any(weights <= 0.0):
            raise NonpositiveWeight("patch has a nonpositive weight")
        self.kv1 = kv1
        self.kv2 = kv2
        self.control = control
        self.weights = weights
        # Homogeneous control net (w*x, w*y, w*z, w).
        self.homog = np.concatenate([control * weights[:, :, None], weights[:, :, None]], axis=2)

    @property
    def degrees(self) -> tuple[int, int]:
        return (self.kv1.degree, self.kv2.degree)

    @property
    def _single_span(self) -> bool:
        return (self.kv1.num_basis == self.kv1.degree + 1
                and self.kv2.num_basis == self.kv2.degree + 1)

    def _homog_all(self, u, v):
        """Homogeneous value and both partials in one basis pass."""
        f1, b1, d1 = self.kv1.eval_basis_and_deriv(u)
        f2, b2, d2 = self.kv2.eval_basis_and_deriv(v)
        if self._single_span:
            hloc = self.homog
            h = np.einsum("na,nb,abc->nc", b1, b2, hloc)
            hu = np.einsum("na,nb,abc->nc", d1, b2, hloc)
            hv = np.einsum("na,nb,abc->nc", b1, d2, hloc)
        else:
            p1, p2 = self.degrees
            i1 = f1[:, None] + np.arange(p1 + 1)[None, :]
            i2 = f2[:, None] + np.arange(p2 + 1)[None, :]
            local = self.homog[i1[:, :, None], i2[:, None, :]]
            h = np.einsum("na,nb,nabc->nc", b1, b2, local)
            hu = np.einsum("na,nb,nabc->nc", d1, b2, local)
            hv = np.einsum("na,nb,nabc->nc", b1, d2, local)
        return h, hu, hv

    def eval(self, uv: np.ndarray) -> GeometryData:
        """Point, tangents, unit normal and surface measure at uv (n, 2).

        Rational derivatives use the quotient rule on the homogeneous
        form; the normal is (d1 F x d2 F) / measure.
        """
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        h, hu, hv = self._homog_all(uv[:, 0], uv[:, 1])
        w = h[:, 3:4]
        pt = h[:, :3] / w
        tan1 = (hu[:, :3] - pt * hu[:, 3:4]) / w
        tan2 = (hv[:, :3] - pt * hv[:, 3:4]) / w
        cross = np.empty_like(tan1)
        cross[:, 0] = tan1[:, 1] * tan2[:, 2] - tan1[:, 2] * tan2[:, 1]
        cross[:, 1] = tan1[:, 2] * tan2[:, 0] - tan1[:, 0] * tan2[:, 2]
        cross[:, 2] = tan1[:, 0] * tan2[:, 1] - tan1[:, 1] * tan2[:, 0]
        measure = np.sqrt(np.einsum("ni,ni->n", cross, cross))
        normal = cross / measure[:, None]
        return GeometryData(pt, tan1, tan2, normal, measure)

    def eval_point(self, uv: np.ndarray) -> np.ndarray:
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        f1, b1 = self.kv1.eval_basis(uv[:, 0], 0)
        f2, b2 = self.kv2.eval_basis(uv[:, 1], 0)
        if self._single_span:
            h = np.einsum("na,nb,abc->nc", b1, b2, self.homog)
        else:
            p1, p2 = self.degrees
            i1 = f1[:, None] + np.arange(p1 + 1)[None, :]
            i2 = f2[:, None] + np.arange(p2 + 1)[None, :]
            local = self.homog[i1[:, :, None], i2[:, None, :]]
            h = np.einsum("na,nb,nabc->nc", b1, b2, local)
        return h[:, :3] / h[:, 3:4]


def first_fundamental_cross(patch_j: NurbsPatch, xhat, patch_i: NurbsPatch, yhat) -> np.ndarray:
    """Cross-pair first fundamental tensor K[k, l] = <d_k F_j(x), d_l F_i(y)>.

    For patch_j == patch_i and xhat == yhat this is the classical
    symmetric positive definite first fundamental form.
    """
    gx = patch_j.eval(np.atleast_2d(xhat))
    gy = patch_i.eval(np.atleast_2d(yhat))
    out = np.empty((gx.point.shape[0], 2, 2))
    for a, tx in enumerate((gx.tan1, gx.tan2)):
        for b, ty in enumerate((gy.tan1, gy.tan2)):
            out[:, a, b] = np.einsum("ni,ni->n", tx, ty)
    return out if out.shape[0] > 1 else out[0]


# Edge parametrizations: edge -> curve t in [0,1] on the unit square.
EDGE_PARAMS = (
    lambda t: np.column_stack([t, np.zeros_like(t)]),          # edge 0: v = 0
    lambda t: np.column_stack([np.ones_like(t), t]),           # edge 1: u = 1
    lambda t: np.column_stack([t, np.ones_like(t)]),           # edge 2: v = 1
    lambda t: np.column_stack([np.zeros_like(t), t]),          # edge 3: u = 0
)

# Corners of each edge as (start, end) in unit-square coordinates.
EDGE_CORNERS = (
    ((0.0, 0.0), (1.0, 0.0)),
    ((1.0, 0.0), (1.0, 1.0)),
    ((0.0, 1.0), (1.0, 1.0)),
    ((0.0, 0.0), (0.0, 1.0)),
)

_CHEB_T = 0.5 * (1.0 - np.cos(np.pi * np.arange(9) / 8.0))  # symmetric, includes endpoints


@dataclass
class Interface:
    """A matched pair of patch edges.

    ``reversed`` indicates that edge parameter t on side a corresponds to
    1 - t on side b.
    """

    patch_a: int
    edge_a: int
    patch_b: int
    edge_b: int
    reversed: bool
    mismatch: float


class SurfaceGeometry:
    """A closed conforming multi-patch surface."""

    def __init__(self, patches: list[NurbsPatch], tol: float = 1e-10, check_orientation: bool = True):
        if not patches:
            raise SurfaceNotClosed("geometry has no patches")
        self.patches = patches
        self.interfaces = self._match_edges(tol)
        self._check_degeneracy()
        if check_orientation:
            self._check_orientation()

    # -- construction checks -------------------------------------------------

    def _edge_samples(self, pidx: int, eidx: int) -> np.ndarray:
        curve = EDGE_PARAMS[eidx](_CHEB_T)
        return self.patches[pidx].eval_point(curve)

    def _match_edges(self, tol: float) -> list[Interface]:
        n = len(self.patches)
        samples = [[self._edge_samples(p, e) for e in range(4)] for p in range(n)]
        unmatched = {(p, e) for p in range(n) for e in range(4)}
        interfaces: list[Interface] = []
        keys = sorted(unmatched)
        for key in keys:
            if key not in unmatched:
                continue
            p, e = key
            best = None
            for q, f in sorted(unmatched):
                if (q, f) == (p, e):
                    continue
                diff_f = np.max(np.linalg.norm(samples[p][e] - samples[q][f], axis=1))
                diff_r = np.max(np.linalg.norm(samples[p][e] - samples[q][f][::-1], axis=1))
                cand = (diff_f, False) if diff_f <= diff_r else (diff_r, True)
                if cand[0] <= tol and (best is None or cand[0] < best[0]):
                    best = (cand[0], q, f, cand[1])
            if best is None:
                raise SurfaceNotClosed(f"patch {p} edge {e} has no matching edge")
            _, q, f, rev = best
            unmatched.discard((p, e))
            unmatched.discard((q, f))
            interfaces.append(Interface(p, e, q, f, rev, best[0]))
        if unmatched:
            raise SurfaceNotClosed(f"unmatched edges remain: {sorted(unmatched)}")
        return interfaces

    def _check_degeneracy(self) -> None:
        g = gauss_rule(6)
        uu, vv = np.meshgrid(g.nodes, g.nodes, indexing="ij")
        uv = np.column_stack([uu.ravel(), vv.ravel()])
        for i, patch in enumerate(self.patches):
            data = patch.eval(uv)
            if data.measure.min() < 1e-10 * data.measure.max():
                raise DegeneratePatch(f"patch {i} has collapsing surface measure")

    def _check_orientation(self) -> None:
        # Signed volume by the divergence theorem must be positive, and
        # normals must agree across every interface.
        g = gauss_rule(8)
        uu, vv = np.meshgrid(g.nodes, g.nodes, indexing="ij")
        uv = np.column_stack([uu.ravel(), vv.ravel()])
        w = np.outer(g.weights, g.weights).ravel()
        vol = 0.0
        for patch in self.patches:
            data = patch.eval(uv)
            vol += np.sum(w * np.einsum("ni,ni->n", data.point, data.normal) * data.measure) / 3.0
        for iface in self.interfaces:
            ta = np.array([0.5])
            tb = np.array([0.5])
            ga = self.patches[iface.patch_a].eval(EDGE_PARAMS[iface.edge_a](ta))
            gb = self.patches[iface.patch_b].eval(EDGE_PARAMS[iface.edge_b](tb))
            if float(np.dot(ga.normal[0], gb.normal[0])) < 0.5:
                raise InwardOrientation(
                    f"normals disagree across interface {iface.patch_a}/{iface.patch_b}"
                )
        if vol <= 0.0:
            raise InwardOrientation("surface encloses negative volume; patches are inward oriented")

    # -- queries --------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.patches)

    def eval(self, patch_idx: int, uv) -> GeometryData:
        return self.patches[patch_idx].eval(uv)

    def diameter(self) -> float:
        pts = []
        for patch in self.patches:
            pts.append(patch.control.reshape(-1, 3))
        pts = np.vstack(pts)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def area(self, order: int = 12) -> float:
        """Total surface area by tensor Gauss quadrature per patch."""
        g = gauss_rule(order)
        uu, vv = np.meshgrid(g.nodes, g.nodes, indexing="ij")
        uv = np.column_stack([uu.ravel(), vv.ravel()])
        w = np.outer(g.weights, g.weights).ravel()
        return float(sum(np.sum(w * p.eval(uv).measure) for p in self.patches))


@dataclass
class ConformityReport:
    interfaces: list[Interface]
    unpaired: list[tuple[int, int]]
    max_mismatch: float
    passed: bool


def validate_conformity(geometry: SurfaceGeometry, tol: float = 1e-10) -> ConformityReport:
    """Re-check every interface with a fresh sampled comparison."""
    worst = 0.0
    entries: list[Interface] = []
    for iface in geometry.interfaces:
        t = _CHEB_T
        pa = geometry.patches[iface.patch_a].eval_point(EDGE_PARAMS[iface.edge_a](t))
        tb = 1.0 - t if iface.reversed else t
        pb = geometry.patches[iface.patch_b].eval_point(EDGE_PARAMS[iface.edge_b](tb))
        mism = float(np.max(np.linalg.norm(pa - pb, axis=1)))
        worst = max(worst, mism)
        entries.append(Interface(iface.patch_a, iface.edge_a, iface.patch_b, iface.edge_b,
                                 iface.reversed, mism))
    paired = {(i.patch_a, i.edge_a) for i in entries} | {(i.patch_b, i.edge_b) for i in entries}
    unpaired = [(p, e) for p in range(len(geometry)) for e in range(4) if (p, e) not in paired]
    passed = worst < tol and not unpaired
    return ConformityReport(entries, unpaired, worst, passed)


# -- text file format ---------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_geometry(geometry: SurfaceGeometry, path: str) -> None:
    """Write the line-oriented text format (17 significant digits)."""
    lines = ["IGABEM-GEOMETRY 1", f"patches {len(geometry)}"]
    for idx, patch in enumerate(geometry.patches):
        k1 = patch.kv1.knots
        k2 = patch.kv2.knots
        head = (
            f"patch {idx} deg {patch.kv1.degree} {patch.kv2.degree} "
            f"knots1 {k1.size} " + " ".join(_fmt(v) for v in k1)
            + f" knots2 {k2.size} " + " ".join(_fmt(v) for v in k2)
        )
        lines.append(head)
        for j1 in range(patch.kv1.num_basis):
            for j2 in range(patch.kv2.num_basis):
                x, y, z = patch.control[j1, j2]
                w = patch.weights[j1, j2]
                lines.append(f"cp {j1} {j2} {_fmt(x)} {_fmt(y)} {_fmt(z)} {_fmt(w)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_geometry(path: str, tol: float = 1e-10) -> SurfaceGeometry:
    """Parse the text format; validation runs on construction.

    Raises MalformedGeometryFile, ControlNetMismatch, NonpositiveWeight,
    SurfaceNotClosed or InwardOrientation with distinct error codes.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "IGABEM-GEOMETRY 1":
        raise MalformedGeometryFile("missing or malformed header line")
    if len(lines) < 2 or not lines[1].startswith("patches "):
        raise MalformedGeometryFile("missing patch count line")
    try:
        n_patches = int(lines[1].split()[1])
    except (IndexError, ValueError) as exc:
        raise MalformedGeometryFile("unreadable patch count") from exc
    pos = 2
    patches = []
    for _ in range(n_patches):
        if pos >= len(lines):
            raise MalformedGeometryFile("truncated file: missing patch header")
        tok = lines[pos].split()
        pos += 1
        try:
            if tok[0] != "patch" or tok[2] != "deg" or tok[5] != "knots1":
                raise ValueError
            p1, p2 = int(tok[3]), int(tok[4])
            n1 = int(tok[6])
            vals1 = [float(v) for v in tok[7: 7 + n1]]
            if tok[7 + n1] != "knots2":
                raise ValueError
            n2 = int(tok[8 + n1])
            vals2 = [float(v) for v in tok[9 + n1: 9 + n1 + n2]]
        except (IndexError, ValueError) as exc:
            raise MalformedGeometryFile("unreadable patch header") from exc
        kv1 = KnotVector(np.array(vals1), p1)
        kv2 = KnotVector(np.array(vals2), p2)
        k1, k2 = kv1.num_basis, kv2.num_basis
        control = np.zeros((k1, k2, 3))
        weights = np.zeros((k1, k2))
        for j1 in range(k1):
            for j2 in range(k2):
                if pos >= len(lines):
                    raise ControlNetMismatch("truncated file: missing control points")
                ct = lines[pos].split()
                pos += 1
                if len(ct) != 7 or ct[0] != "cp":
                    raise ControlNetMismatch("malformed control point line")
                i1, i2 = int(ct[1]), int(ct[2])
                if (i1, i2) != (j1, j2):
                    raise ControlNetMismatch("control points out of order")
                control[j1, j2] = [float(ct[3]), float(ct[4]), float(ct[5])]
                w = float(ct[6])
                if w <= 0.0:
                    raise NonpositiveWeight(f"nonpositive weight at patch cp {j1} {j2}")
                weights[j1, j2] = w
        patches.append(NurbsPatch(kv1, kv2, control, weights))
    if pos != len(lines):
        raise MalformedGeometryFile("trailing content after last patch")
    return SurfaceGeometry(patches, tol=tol)
