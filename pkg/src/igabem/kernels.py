"""Helmholtz fundamental solution and boundary-operator kernels.

All kernels are vectorized over point batches.  The analytic gradient
grad_y G = (i*kappa - 1/r) * G * (y - x)/r is implemented once; both
normal-derivative kernels derive from it.  Near-coincident evaluations
raise instead of returning inf; singular integration is the quadrature
module's job.
"""

from __future__ import annotations

import enum

import numpy as np

from .geometry import GeometryData


class KernelKind(enum.Enum):
    SINGLE_LAYER = "V"
    DOUBLE_LAYER = "K"
    ADJOINT_DOUBLE_LAYER = "Kstar"
    HYPERSINGULAR_CURL = "Wcurl"
    HYPERSINGULAR_MASS = "Wmass"


class SingularEvaluation(ValueError):
    """Raised when kernel evaluation points (nearly) coincide."""


def _distance(x: np.ndarray, y: np.ndarray, scale: float = 1.0):
    d = x - y
    r = np.linalg.norm(d, axis=-1)
    if np.any(r < 1e-14 * scale):
        raise SingularEvaluation("kernel evaluated at coincident points")
    return d, r


def green(kappa: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Fundamental solution e^{i kappa r} / (4 pi r)."""
    _, r = _distance(np.asarray(x, float), np.asarray(y, float))
    return np.exp(1j * kappa * r) / (4.0 * np.pi * r)


def grad_green_y(kappa: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of G with respect to y, shape (..., 3)."""
    d, r = _distance(np.asarray(x, float), np.asarray(y, float))
    g = np.exp(1j * kappa * r) / (4.0 * np.pi * r)
    radial = (1j * kappa - 1.0 / r) * g / r
    return radial[..., None] * (-d)


def kernel_eval(kind: KernelKind, kappa: float, gx: GeometryData, gy: GeometryData) -> np.ndarray:
    """Kernel k(x, y) between two batches of surface evaluation records.

    DOUBLE_LAYER is dG/dn_y, ADJOINT_DOUBLE_LAYER is dG/dn_x,
    HYPERSINGULAR_MASS is -kappa^2 <n_x, n_y> G; SINGLE_LAYER and
    HYPERSINGULAR_CURL both return plain G (the curl kernel differs only
    in its pull-back convention).
    """
    d, r = _distance(gx.point, gy.point)
    g = np.exp(1j * kappa * r) / (4.0 * np.pi * r)
    if kind in (KernelKind.SINGLE_LAYER, KernelKind.HYPERSINGULAR_CURL):
        return g
    if kind == KernelKind.DOUBLE_LAYER:
        radial = (1j * kappa - 1.0 / r) * g / r
        return radial * np.einsum("...i,...i->...", -d, gy.normal)
    if kind == KernelKind.ADJOINT_DOUBLE_LAYER:
        radial = (1j * kappa - 1.0 / r) * g / r
        return radial * np.einsum("...i,...i->...", d, gx.normal)
    if kind == KernelKind.HYPERSINGULAR_MASS:
        return -kappa ** 2 * np.einsum("...i,...i->...", gx.normal, gy.normal) * g
    raise ValueError(f"unknown kernel kind {kind}")


def pullback_kernel(kind: KernelKind, kappa: float, patch_j, xhat, patch_i, yhat) -> np.ndarray:
    """Kernel transported to the parametric square pair.

    The surface-measure factors a_j(x) a_i(y) are included for all kinds
    except HYPERSINGULAR_CURL, whose measures cancel against the 1/a
    factors of the two surface curls.
    """
    gx = patch_j.eval(np.atleast_2d(xhat))
    gy = patch_i.eval(np.atleast_2d(yhat))
    vals = kernel_eval(kind, kappa, gx, gy)
    if kind is not KernelKind.HYPERSINGULAR_CURL:
        vals = vals * gx.measure * gy.measure
    return vals


def plane_wave_traces(kappa: float, direction: np.ndarray, g: GeometryData):
    """Dirichlet and Neumann traces of the incident plane wave.

    Returns (e^{i kappa <d, x>}, i kappa <d, n> e^{i kappa <d, x>}).
    """
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-12:
        raise ValueError("plane wave direction must be a unit vector")
    phase = np.exp(1j * kappa * (g.point @ direction))
    neumann = 1j * kappa * (g.normal @ direction) * phase
    return phase, neumann
