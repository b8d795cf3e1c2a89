"""Built-in exact rational geometries: torus grids and the unit sphere.

The torus is assembled from tensor products of rational quadratic
circle arcs (exact for any sector angle below pi).  The sphere uses a
six-patch cube-face construction of bidegree (4,4): each face is the
image of a biquadratic quaternion field acting on the north pole, which
keeps every evaluated point exactly on the unit sphere, with the field
solved once so that all four patch edges traverse their great-circle
arcs with one shared symmetric parametrization (this makes the six
rotated copies conform).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .splines import KnotVector
from .geometry import NurbsPatch, SurfaceGeometry

_BEZIER2 = KnotVector(np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0]), 2)
_BEZIER4 = KnotVector(np.array([0.0] * 5 + [1.0] * 5), 4)


def _arc_controls(alpha0: float, alpha1: float):
    """Rational quadratic arc of the unit circle from alpha0 to alpha1.

    Returns 2D control points (3, 2) and weights (3,); requires a sector
    angle below pi.
    """
    span = alpha1 - alpha0
    if not 0.0 < span < np.pi:
        raise ValueError("arc sector must be in (0, pi)")
    half = 0.5 * span
    mid = 0.5 * (alpha0 + alpha1)
    pts = np.array(
        [
            [np.cos(alpha0), np.sin(alpha0)],
            [np.cos(mid) / np.cos(half), np.sin(mid) / np.cos(half)],
            [np.cos(alpha1), np.sin(alpha1)],
        ]
    )
    wts = np.array([1.0, np.cos(half), 1.0])
    return pts, wts


def builtin_torus(
    n_major: int = 4,
    n_minor: int = 4,
    major_radius: float = 2.0,
    minor_radius: float = 0.5,
) -> SurfaceGeometry:
    """Torus of revolution about the z axis as an n_major x n_minor patch grid.

    The default 4 x 4 grid of quarter-arc patches gives the classical
    16-patch representation with major radius 2 and minor radius 0.5.
    Patch parameter u runs along the major (angular) direction and v
    along the minor (profile) direction; the ordering makes normals
    point outward.
    """
    if n_major < 3 or n_minor < 3:
        raise ValueError("need at least 3 sectors per direction for arcs below pi")
    patches = []
    for iu in range(n_major):
        beta0 = 2.0 * np.pi * iu / n_major
        beta1 = 2.0 * np.pi * (iu + 1) / n_major
        arc_u, w_u = _arc_controls(beta0, beta1)
        for iv in range(n_minor):
            alpha0 = 2.0 * np.pi * iv / n_minor
            alpha1 = 2.0 * np.pi * (iv + 1) / n_minor
            arc_v, w_v = _arc_controls(alpha0, alpha1)
            # Profile control points in the half plane: radius and height.
            rho = major_radius + minor_radius * arc_v[:, 0]
            height = minor_radius * arc_v[:, 1]
            control = np.zeros((3, 3, 3))
            for i in range(3):
                cu, su = arc_u[i]
                for j in range(3):
                    control[i, j] = [rho[j] * cu, rho[j] * su, height[j]]
            weights = np.outer(w_u, w_v)
            patches.append(NurbsPatch(_BEZIER2, _BEZIER2, control, weights))
    return SurfaceGeometry(patches, tol=1e-10)


# -- quaternion sphere construction -------------------------------------------


def _qmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def _rotate_pole(q: np.ndarray) -> np.ndarray:
    """Unit direction q k conj(q) / |q|^2 for quaternion array q."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    nrm2 = w * w + x * x + y * y + z * z
    return np.stack(
        [2.0 * (x * z + w * y), 2.0 * (y * z - w * x), w * w - x * x - y * y + z * z],
        axis=-1,
    ) / nrm2[..., None]


def _shortest_arc_from_pole(d: np.ndarray) -> np.ndarray:
    """Unit quaternion of the shortest rotation taking (0,0,1) to d."""
    q = np.array([1.0 + d[2], -d[1], d[0], 0.0])
    return q / np.linalg.norm(q)


def _edge_targets(a: np.ndarray, b: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Canonical symmetric great-arc traversal from a to b sampled at ts.

    The angular law is phi(t) = 2*arctan(tau*(2t-1)) around the geodesic
    midpoint with tau = tan(theta/4); it is realized exactly by linear
    quaternion pencils, which makes the law shared across patch edges.
    """
    theta = np.arccos(np.clip(np.dot(a, b), -1.0, 1.0))
    nu = np.cross(a, b)
    nu /= np.linalg.norm(nu)
    mid = a + b
    mid /= np.linalg.norm(mid)
    tau = np.tan(0.25 * theta)
    phi = 2.0 * np.arctan(tau * (2.0 * ts - 1.0))
    perp = np.cross(nu, mid)
    return np.cos(phi)[:, None] * mid[None, :] + np.sin(phi)[:, None] * perp[None, :]


_GN_TS = np.array([0.25, 0.5, 0.75])


def _bernstein2(t: np.ndarray) -> np.ndarray:
    return np.stack([(1 - t) ** 2, 2 * t * (1 - t), t ** 2], axis=-1)


@lru_cache(maxsize=1)
def _solve_face_field() -> np.ndarray:
    """Biquadratic quaternion coefficients (3, 3, 4) for the +z cube face.

    Corner gauges and edge middle quaternions are solved by Gauss-Newton
    so that every patch edge matches the canonical great-arc traversal;
    the residual must vanish to machine precision.
    """
    s = 1.0 / np.sqrt(3.0)
    corners = {
        (0, 0): np.array([-s, -s, s]),
        (1, 0): np.array([s, -s, s]),
        (0, 1): np.array([-s, s, s]),
        (1, 1): np.array([s, s, s]),
    }
    base = {key: _shortest_arc_from_pole(d) for key, d in corners.items()}
    edges = [  # (corner key start, corner key end)
        ((0, 0), (1, 0)),
        ((0, 0), (0, 1)),
        ((1, 0), (1, 1)),
        ((0, 1), (1, 1)),
    ]
    targets = [_edge_targets(corners[a], corners[b], _GN_TS) for a, b in edges]
    corner_order = [(0, 0), (1, 0), (0, 1), (1, 1)]

    def unpack(x):
        gauged = {}
        for i, key in enumerate(corner_order):
            chi = x[i]
            g = np.array([np.cos(chi), 0.0, 0.0, np.sin(chi)])
            gauged[key] = _qmul(base[key], g)
        middles = [x[4 + 4 * e: 8 + 4 * e] for e in range(4)]
        return gauged, middles

    def residual(x):
        gauged, middles = unpack(x)
        res = []
        bern = _bernstein2(_GN_TS)
        for e, (ka, kb) in enumerate(edges):
            coef = np.stack([gauged[ka], middles[e], gauged[kb]])
            q = bern @ coef
            res.append((_rotate_pole(q) - targets[e]).ravel())
        return np.concatenate(res)

    x = np.zeros(20)
    for e, (ka, kb) in enumerate(edges):
        x[4 + 4 * e: 8 + 4 * e] = 0.5 * (base[ka] + base[kb])
    lam = 1e-3
    for _ in range(200):
        r = residual(x)
        if np.linalg.norm(r) < 1e-14:
            break
        jac = np.empty((r.size, x.size))
        h = 1e-7
        for i in range(x.size):
            xp = x.copy()
            xp[i] += h
            jac[:, i] = (residual(xp) - r) / h
        # Levenberg-Marquardt damping; the system is consistent but plain
        # Gauss-Newton steps overshoot from the flat initial gauge.
        step = np.linalg.solve(jac.T @ jac + lam * np.eye(x.size), -jac.T @ r)
        if np.linalg.norm(residual(x + step)) < np.linalg.norm(r):
            x = x + step
            lam = max(lam * 0.3, 1e-12)
        else:
            lam *= 10.0
    r = residual(x)
    if np.linalg.norm(r) > 1e-12:
        raise RuntimeError(f"sphere face solve did not converge (|r|={np.linalg.norm(r):.2e})")
    gauged, middles = unpack(x)
    coeffs = np.zeros((3, 3, 4))
    coeffs[0, 0] = gauged[(0, 0)]
    coeffs[2, 0] = gauged[(1, 0)]
    coeffs[0, 2] = gauged[(0, 1)]
    coeffs[2, 2] = gauged[(1, 1)]
    coeffs[1, 0] = middles[0]
    coeffs[0, 1] = middles[1]
    coeffs[2, 1] = middles[2]
    coeffs[1, 2] = middles[3]
    boundary = [coeffs[i, j] for i, j in
                ((0, 0), (1, 0), (2, 0), (0, 1), (2, 1), (0, 2), (1, 2), (2, 2))]
    bmean = np.mean(boundary, axis=0)
    coeffs[1, 1] = np.array([bmean[0], 0.0, 0.0, bmean[3]])
    return coeffs


def _bern2_to_monomial(c: np.ndarray) -> np.ndarray:
    """Tensor Bernstein (3,3) coefficients to monomial (3,3)."""
    m = np.array([[1.0, 0.0, 0.0], [-2.0, 2.0, 0.0], [1.0, -2.0, 1.0]])
    return m @ c @ m.T


def _mono_to_bern4(c: np.ndarray) -> np.ndarray:
    """Tensor monomial (5,5) coefficients to degree-4 Bernstein (5,5)."""
    from math import comb

    t = np.zeros((5, 5))
    for j in range(5):
        for i in range(j, 5):
            t[i, j] = comb(i, j) / comb(4, j)
    return t @ c @ t.T


def _poly_mul2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + b.shape[0] - 1, a.shape[1] + b.shape[1] - 1))
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[i: i + b.shape[0], j: j + b.shape[1]] += a[i, j] * b
    return out


@lru_cache(maxsize=1)
def _sphere_face_patch_data():
    """Homogeneous (5,5,4) Bernstein data of the +z face patch."""
    coeffs = _solve_face_field()
    mono = [_bern2_to_monomial(coeffs[:, :, c]) for c in range(4)]
    w_, x_, y_, z_ = mono
    hx = 2.0 * (_poly_mul2(x_, z_) + _poly_mul2(w_, y_))
    hy = 2.0 * (_poly_mul2(y_, z_) - _poly_mul2(w_, x_))
    hz = _poly_mul2(w_, w_) - _poly_mul2(x_, x_) - _poly_mul2(y_, y_) + _poly_mul2(z_, z_)
    hw = _poly_mul2(w_, w_) + _poly_mul2(x_, x_) + _poly_mul2(y_, y_) + _poly_mul2(z_, z_)
    hom = np.stack([_mono_to_bern4(h) for h in (hx, hy, hz, hw)], axis=-1)
    return hom


_FACE_ROTATIONS = (
    np.eye(3),                                              # +z
    np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]]),    # -z (pi about x)
    np.array([[0, 0, 1.0], [0, 1.0, 0], [-1.0, 0, 0]]),     # +x
    np.array([[0, 0, -1.0], [0, 1.0, 0], [1.0, 0, 0]]),     # -x
    np.array([[1.0, 0, 0], [0, 0, -1.0], [0, 1.0, 0]]),     # +y
    np.array([[1.0, 0, 0], [0, 0, 1.0], [0, -1.0, 0]]),     # -y
)


def builtin_sphere() -> SurfaceGeometry:
    """Exact unit sphere as six conforming bidegree (4,4) cube-face patches.

    Every evaluated point satisfies ||F|| = 1 to machine precision; the
    construction is verified on a 50 x 50 sample per patch before the
    geometry is returned.
    """
    hom = _sphere_face_patch_data()
    weights = hom[:, :, 3]
    if np.any(weights <= 0.0):
        raise RuntimeError("sphere face construction produced nonpositive weights")
    control = hom[:, :, :3] / weights[:, :, None]
    patches = []
    for rot in _FACE_ROTATIONS:
        patches.append(NurbsPatch(_BEZIER4, _BEZIER4, control @ rot.T, weights.copy()))
    geom = SurfaceGeometry(patches, tol=1e-10)
    grid = np.linspace(0.0, 1.0, 50)
    uu, vv = np.meshgrid(grid, grid, indexing="ij")
    uv = np.column_stack([uu.ravel(), vv.ravel()])
    for i, patch in enumerate(geom.patches):
        radii = np.linalg.norm(patch.eval_point(uv), axis=1)
        if np.max(np.abs(radii - 1.0)) > 1e-12:
            raise RuntimeError(f"sphere patch {i} leaves the unit sphere")
    return geom


def builtin_geometry(name: str) -> SurfaceGeometry:
    """Look up a built-in geometry by CLI name."""
    if name == "torus":
        return builtin_torus()
    if name == "sphere":
        return builtin_sphere()
    if name.startswith("torus:"):
        parts = name.split(":")
        if len(parts) != 3:
            raise KeyError(name)
        return builtin_torus(int(parts[1]), int(parts[2]))
    raise KeyError(name)
