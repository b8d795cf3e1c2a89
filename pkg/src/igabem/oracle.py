"""Independent reference solutions and identities for validation.

Spherical Bessel/Hankel functions and Legendre polynomials by stable
recurrences, Mie partial-wave series for the sound-soft and sound-hard
unit sphere, boundary-operator symbols on the unit sphere obtained by
brute-force quadrature (not transcribed formulas), and the optical
theorem defect.  The Mie normalization is not trusted until the series
passes two independent checks: the optical theorem holds on the series
itself and the large-radius limit of the near field reproduces the far
field.  Golden reference tables live under ``golden/``.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .quadrature import gauss_rule


# -- special functions --------------------------------------------------------


def legendre_table(lmax: int, t: np.ndarray) -> np.ndarray:
    """P_0..P_lmax at t in [-1, 1]; shape (len(t), lmax+1)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if np.any(np.abs(t) > 1.0 + 1e-12):
        raise ValueError("Legendre argument outside [-1, 1]")
    out = np.empty((t.size, lmax + 1))
    out[:, 0] = 1.0
    if lmax >= 1:
        out[:, 1] = t
    for l in range(1, lmax):
        out[:, l + 1] = ((2 * l + 1) * t * out[:, l] - l * out[:, l - 1]) / (l + 1)
    return out


def legendre_p(l: int, t) -> np.ndarray | float:
    vals = legendre_table(l, np.atleast_1d(t))[:, l]
    return vals if np.ndim(t) else float(vals[0])


def spherical_jn_table(lmax: int, x: np.ndarray) -> np.ndarray:
    """j_0..j_lmax by downward recurrence with j_0 normalization."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if np.any(x <= 0.0):
        raise ValueError("argument must be positive")
    start = lmax + int(np.ceil(np.max(x))) + 30
    jp = np.zeros_like(x)
    jc = np.full_like(x, 1e-30)
    table = np.empty((x.size, lmax + 1))
    for n in range(start, 0, -1):
        jm = (2 * n + 1) / x * jc - jp
        jp, jc = jc, jm
        if n - 1 <= lmax:
            table[:, n - 1] = jc
        big = np.abs(jc) > 1e250
        if np.any(big):
            jc = np.where(big, jc * 1e-250, jc)
            jp = np.where(big, jp * 1e-250, jp)
            table[:, n - 1:] = np.where(big[:, None], table[:, n - 1:] * 1e-250, table[:, n - 1:])
    # Normalize against whichever closed form is larger; j_0 alone is
    # catastrophically small near its zeros (e.g. x = pi).
    j0 = np.sin(x) / x
    j1 = np.sin(x) / x ** 2 - np.cos(x) / x
    use0 = np.abs(j0) >= np.abs(j1)
    ref = np.where(use0, j0, j1)
    raw = np.where(use0, table[:, 0], table[:, min(1, lmax)] if lmax >= 1 else table[:, 0])
    scale = ref / raw
    return table * scale[:, None]


def spherical_yn_table(lmax: int, x: np.ndarray) -> np.ndarray:
    """y_0..y_lmax by upward recurrence (stable for y)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if np.any(x <= 0.0):
        raise ValueError("argument must be positive")
    table = np.empty((x.size, max(lmax + 1, 2)))
    table[:, 0] = -np.cos(x) / x
    table[:, 1] = -np.cos(x) / x ** 2 - np.sin(x) / x
    for l in range(1, lmax):
        table[:, l + 1] = (2 * l + 1) / x * table[:, l] - table[:, l - 1]
    return table[:, : lmax + 1]


def spherical_hankel1_table(lmax: int, x: np.ndarray) -> np.ndarray:
    """h1_0..h1_lmax by upward recurrence from the closed forms.

    h1_0 = -i e^{ix}/x and h1_1 = -e^{ix} (1/x + i/x^2); the recurrence
    is dominated by the y part and therefore stable upward.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if np.any(x <= 0.0):
        raise ValueError("argument must be positive")
    table = np.empty((x.size, max(lmax + 1, 2)), dtype=np.complex128)
    e = np.exp(1j * x)
    table[:, 0] = -1j * e / x
    table[:, 1] = -e * (1.0 / x + 1j / x ** 2)
    for l in range(1, lmax):
        table[:, l + 1] = (2 * l + 1) / x * table[:, l] - table[:, l - 1]
    return table[:, : lmax + 1]


def spherical_bessel_j(l: int, x) -> np.ndarray | float:
    vals = spherical_jn_table(l, np.atleast_1d(x))[:, l]
    return vals if np.ndim(x) else float(vals[0])


def spherical_hankel1(l: int, x) -> np.ndarray | complex:
    vals = spherical_hankel1_table(l, np.atleast_1d(x))[:, l]
    return vals if np.ndim(x) else complex(vals[0])


def _derivative_from_table(table: np.ndarray, x: np.ndarray) -> np.ndarray:
    """f_l' = f_{l-1} - (l+1)/x f_l (column l >= 1); f_0' = -f_1."""
    lmax = table.shape[1] - 1
    if lmax < 1:
        raise ValueError("derivative needs a table with at least two orders")
    out = np.empty_like(table)
    out[:, 0] = -table[:, 1]
    for l in range(1, lmax + 1):
        out[:, l] = table[:, l - 1] - (l + 1) / x * table[:, l]
    return out


# -- Mie series ---------------------------------------------------------------


@dataclass
class MieSeries:
    """Partial-wave reference solution for plane-wave sphere scattering.

    The series is validated on construction: the optical theorem must
    hold on the series itself to 1e-12 and the large-radius limit of the
    near field must reproduce the far field.  Construction fails if the
    truncation tail is not negligible.
    """

    kind: str
    kappa: float
    radius: float = 1.0
    order: int | None = None

    def __post_init__(self):
        if self.kind not in ("soft", "hard"):
            raise ValueError("kind must be 'soft' or 'hard'")
        if self.order is None:
            self.order = int(np.ceil(self.kappa * self.radius + 20)) + 10
        if self.order < self.kappa * self.radius + 20:
            raise ValueError("truncation order below kappa*R + 20")
        x = np.array([self.kappa * self.radius])
        j = spherical_jn_table(self.order, x)[0]
        h = spherical_hankel1_table(self.order, x)[0]
        if self.kind == "soft":
            self.coeffs = -j / h
        else:
            jd = _derivative_from_table(spherical_jn_table(self.order, x), x)[0]
            hd = _derivative_from_table(spherical_hankel1_table(self.order, x), x)[0]
            self.coeffs = -jd / hd
        tail = np.abs(self.coeffs[-1]) * (2 * self.order + 1)
        if not tail < 1e-12:
            raise ValueError(f"series tail {tail:.2e} above 1e-12; raise the order")
        self._validate()

    # far field with the convention u_s ~ e^{i kappa r}/r * u_inf(xhat)
    def far_field(self, cos_theta) -> np.ndarray:
        """u_inf as a function of the angle against the incidence direction."""
        ct = np.atleast_1d(np.asarray(cos_theta, dtype=np.float64))
        pl = legendre_table(self.order, ct)
        ell = np.arange(self.order + 1)
        return pl @ ((2 * ell + 1) * self.coeffs) / (1j * self.kappa)

    def far_field_dirs(self, directions: np.ndarray, d: np.ndarray) -> np.ndarray:
        directions = np.atleast_2d(directions)
        return self.far_field(directions @ np.asarray(d, float))

    def scattered_field(self, points: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Scattered wave of the series at exterior points."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        r = np.linalg.norm(points, axis=1)
        if np.any(r <= self.radius):
            raise ValueError("evaluation point inside the sphere")
        ct = (points @ np.asarray(d, float)) / r
        pl = legendre_table(self.order, ct)
        h = spherical_hankel1_table(self.order, self.kappa * r)
        ell = np.arange(self.order + 1)
        terms = (2 * ell + 1) * (1j ** ell) * self.coeffs
        return np.einsum("nl,l,nl->n", pl, terms, h)

    def optical_theorem_defect_self(self, n_theta: int = 96) -> float:
        dirs, w = sphere_quadrature_grid(n_theta, 2 * n_theta)
        d = np.array([0.0, 0.0, 1.0])
        u = self.far_field_dirs(dirs, d)
        fwd = self.far_field(np.array([1.0]))[0]
        return optical_theorem_defect(u, w, fwd, self.kappa)

    def near_far_defect(self) -> float:
        """Richardson-extrapolated large-r limit against the far field."""
        d = np.array([0.0, 0.0, 1.0])
        dirs = np.array([[0.0, 0.0, 1.0], [np.sin(1.0), 0.0, np.cos(1.0)],
                         [0.0, np.sin(2.5), np.cos(2.5)]])
        r1, r2 = 1e6, 2e6
        out = 0.0
        for xh in dirs:
            u1 = self.scattered_field((r1 * xh)[None, :], d)[0] * r1 * np.exp(-1j * self.kappa * r1)
            u2 = self.scattered_field((r2 * xh)[None, :], d)[0] * r2 * np.exp(-1j * self.kappa * r2)
            limit = 2.0 * u2 - u1
            ff = self.far_field(np.array([float(xh @ d)]))[0]
            out = max(out, abs(limit - ff) / max(1.0, abs(ff)))
        return out

    def _validate(self):
        defect = self.optical_theorem_defect_self()
        if not defect < 1e-12:
            raise ValueError(f"Mie series fails the optical theorem (defect {defect:.2e})")
        nf = self.near_far_defect()
        if not nf < 1e-8:
            raise ValueError(f"Mie near/far limit mismatch {nf:.2e}")


# -- spherical quadrature and optical theorem ---------------------------------


def sphere_quadrature_grid(n_theta: int = 40, n_phi: int = 80):
    """Gauss x uniform product grid on the unit sphere: (dirs, weights)."""
    x, w = np.polynomial.legendre.leggauss(n_theta)
    ct = x
    wt = w
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    wp = 2.0 * np.pi / n_phi
    st = np.sqrt(1.0 - ct ** 2)
    dirs = np.stack(
        [
            np.outer(st, np.cos(phi)).ravel(),
            np.outer(st, np.sin(phi)).ravel(),
            np.outer(ct, np.ones(n_phi)).ravel(),
        ],
        axis=1,
    )
    weights = np.outer(wt, np.full(n_phi, wp)).ravel()
    return dirs, weights


def optical_theorem_defect(far_values: np.ndarray, weights: np.ndarray,
                           forward_value: complex, kappa: float) -> float:
    """|Im u_inf(d) - (kappa/4pi) int |u_inf|^2| / max(1, |u_inf(d)|)."""
    total = float(np.sum(weights * np.abs(far_values) ** 2))
    return abs(float(np.imag(forward_value)) - kappa / (4.0 * np.pi) * total) / max(
        1.0, abs(forward_value)
    )


# -- boundary operator symbols on the unit sphere ------------------------------


def _dl_potential_coefficient(l: int, kappa: float, radius: float) -> complex:
    """c_l with DL[P_l](R zhat) = c_l h1_l(kappa R): smooth 1D quadrature."""
    x, gw = np.polynomial.legendre.leggauss(120)
    theta = 0.5 * np.pi * (x + 1.0)
    w = 0.5 * np.pi * gw
    ct, st = np.cos(theta), np.sin(theta)
    rho = np.sqrt(1.0 + radius ** 2 - 2.0 * radius * ct)
    gval = np.exp(1j * kappa * rho) / (4.0 * np.pi * rho)
    dgdn = (1j * kappa - 1.0 / rho) * gval * (1.0 - radius * ct) / rho
    pl = legendre_table(l, ct)[:, l]
    val = 2.0 * np.pi * np.sum(w * dgdn * pl * st)
    h = spherical_hankel1_table(l, np.array([kappa * radius]))[0, l]
    return complex(val / h)


def sphere_operator_symbol(kind: str, l: int, kappa: float) -> complex:
    """Eigenvalue of V, K or W on Y_l for the unit sphere, by quadrature.

    V uses a singularity-cancelling polar reduction evaluated directly on
    the sphere; K and W are recovered from the off-surface double layer
    potential of Y_l, whose radial profile is fitted to the outgoing
    radial solution (the fit is cross-checked at two radii).
    """
    if kind == "V":
        x, gw = np.polynomial.legendre.leggauss(150)
        t = 0.25 * np.pi * (x + 1.0)
        w = 0.25 * np.pi * gw
        pl = legendre_table(l, np.cos(2.0 * t))[:, l]
        return complex(np.sum(w * np.exp(2j * kappa * np.sin(t)) * np.cos(t) * pl))
    if kind in ("K", "W"):
        c2 = _dl_potential_coefficient(l, kappa, 2.0)
        c3 = _dl_potential_coefficient(l, kappa, 3.0)
        if abs(c2 - c3) > 1e-8 * max(1.0, abs(c2)):
            raise ValueError("double layer radial fit inconsistent between radii")
        x = np.array([kappa])
        h = spherical_hankel1_table(max(l, 1), x)
        if kind == "K":
            return complex(c2 * h[0, l] - 0.5)
        hd = _derivative_from_table(h, x)[0, l]
        return complex(-kappa * c2 * hd)
    raise ValueError("kind must be 'V', 'K' or 'W'")


def sphere_symbol_closed_form(kind: str, l: int, kappa: float) -> complex:
    """Bessel-product expressions; cross-check only, not the oracle."""
    x = np.array([kappa])
    j = spherical_jn_table(max(l, 1), x)
    h = spherical_hankel1_table(max(l, 1), x)
    jd = _derivative_from_table(j, x)
    hd = _derivative_from_table(h, x)
    if kind == "V":
        return complex(1j * kappa * j[0, l] * h[0, l])
    if kind == "K":
        return complex(1j * kappa ** 2 * jd[0, l] * h[0, l] - 0.5)
    if kind == "W":
        return complex(-1j * kappa ** 3 * jd[0, l] * hd[0, l])
    raise ValueError("kind must be 'V', 'K' or 'W'")


# -- golden tables -------------------------------------------------------------


def load_golden(name: str) -> list[list[str]]:
    """Tokenized non-comment lines of a golden data file."""
    text = resources.files("igabem").joinpath(f"golden/{name}").read_text(encoding="utf-8")
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            rows.append(line.split())
    return rows
