"""Restarted GMRES and the scattering solve driver."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    PairClassification,
    assemble_mass,
    assemble_operators,
    assemble_rhs,
    cfie_system,
)
from .dofmap import build_dof_map
from .geometry import SurfaceGeometry


@dataclass
class SolveConfig:
    """Iterative solver and formulation parameters.

    ``eta`` defaults to the wavenumber when left as None.  The sign
    conventions were fixed once against the Mie reference and are part
    of the validated defaults.
    """

    restart: int = 30
    tol: float = 1e-12
    maxiter: int = 2000
    eta: float | None = None
    hard_w_sign: float = -1.0
    soft_potential_sign: float = -1.0
    hard_potential_sign: float = 1.0

    def __post_init__(self):
        if self.restart < 1:
            raise ValueError("restart must be >= 1")
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tol must lie in (0, 1)")


@dataclass
class GmresInfo:
    converged: bool
    iterations: int
    residuals: list[float]
    breakdown: bool = False


def gmres(op, rhs: np.ndarray, cfg: SolveConfig | None = None,
          x0: np.ndarray | None = None):
    """Restarted GMRES with modified Gram-Schmidt and one reorthogonalization.

    Returns (x, GmresInfo).  The residual history holds the relative
    residual estimate after every inner iteration and is monotone within
    each restart cycle.  Reaching maxiter or an Arnoldi breakdown is
    reported, never silent.
    """
    cfg = cfg or SolveConfig()
    n = rhs.shape[0]
    if op.shape != (n, n):
        raise ValueError("operator and right-hand side dimensions differ")
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros_like(rhs), GmresInfo(True, 0, [0.0])
    x = np.zeros_like(rhs) if x0 is None else x0.copy()
    history: list[float] = []
    total = 0
    breakdown = False
    while total < cfg.maxiter:
        r = rhs - op.apply(x)
        beta = np.linalg.norm(r)
        if beta / bnorm <= cfg.tol:
            return x, GmresInfo(True, total, history or [beta / bnorm])
        k = min(cfg.restart, cfg.maxiter - total)
        V = np.zeros((k + 1, n), dtype=np.complex128)
        H = np.zeros((k + 1, k), dtype=np.complex128)
        cs = np.zeros(k, dtype=np.complex128)
        sn = np.zeros(k, dtype=np.complex128)
        g = np.zeros(k + 1, dtype=np.complex128)
        V[0] = r / beta
        g[0] = beta
        j_used = 0
        for j in range(k):
            w = op.apply(V[j])
            for i in range(j + 1):
                H[i, j] = np.vdot(V[i], w)
                w -= H[i, j] * V[i]
            # one reorthogonalization pass
            for i in range(j + 1):
                corr = np.vdot(V[i], w)
                H[i, j] += corr
                w -= corr * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            total += 1
            j_used = j + 1
            if H[j + 1, j].real <= 1e-300:
                breakdown = True
            else:
                V[j + 1] = w / H[j + 1, j]
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -np.conj(sn[i]) * H[i, j] + np.conj(cs[i]) * H[i + 1, j]
                H[i, j] = t
            denom = np.sqrt(abs(H[j, j]) ** 2 + abs(H[j + 1, j]) ** 2)
            if denom == 0.0:
                breakdown = True
                history.append(abs(g[j]) / bnorm)
                break
            cs[j] = np.conj(H[j, j]) / denom if abs(H[j, j]) > 0 else 1.0
            sn[j] = np.conj(H[j + 1, j]) / denom
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -np.conj(sn[j]) * g[j]
            g[j] = cs[j] * g[j]
            history.append(abs(g[j + 1]) / bnorm)
            if history[-1] <= cfg.tol or breakdown:
                break
        jj = j_used
        y = np.linalg.solve(H[:jj, :jj], g[:jj]) if jj else np.zeros(0)
        x = x + V[:jj].T @ y
        if history and history[-1] <= cfg.tol:
            r = rhs - op.apply(x)
            true_res = np.linalg.norm(r) / bnorm
            if true_res <= 10 * cfg.tol:
                return x, GmresInfo(True, total, history)
        if breakdown:
            return x, GmresInfo(history[-1] <= cfg.tol if history else False,
                                total, history, breakdown=True)
    return x, GmresInfo(False, total, history)


@dataclass
class Solution:
    """Scattering solve result: density coefficients plus bookkeeping."""

    problem: str
    kappa: float
    direction: np.ndarray
    eta: float
    dofmap: object
    coefficients: np.ndarray
    residuals: list[float]
    iterations: int
    converged: bool
    config: SolveConfig
    timings: dict = field(default_factory=dict)

    @property
    def potential_kind(self) -> str:
        return "single" if self.problem == "soft" else "double"

    @property
    def potential_sign(self) -> float:
        return (self.config.soft_potential_sign if self.problem == "soft"
                else self.config.hard_potential_sign)


def solve_scattering(geometry: SurfaceGeometry, problem: str, kappa: float,
                     direction, p: int, m: int, cfg: SolveConfig | None = None,
                     mode: str = "dense", h2_params=None,
                     include_coupling: bool = True) -> Solution:
    """Assemble and solve the combined-field system.

    The sound-soft path discretizes (1/2 + K* - i eta V) on the
    discontinuous space; the sound-hard path (1/2 - K - i eta W) on the
    continuous space.  ``mode`` selects dense or compressed operators.
    """
    cfg = cfg or SolveConfig()
    eta = cfg.eta if cfg.eta is not None else kappa
    direction = np.asarray(direction, dtype=np.float64)
    t0 = time.perf_counter()
    if problem == "soft":
        dofmap = build_dof_map(geometry, p, m, "discontinuous")
        kinds = ["Kstar", "V"]
    elif problem == "hard":
        dofmap = build_dof_map(geometry, p, m, "continuous")
        kinds = ["K", "W"]
    else:
        raise ValueError("problem must be 'soft' or 'hard'")
    mass = assemble_mass(dofmap)
    cls = PairClassification(geometry, m)
    if mode == "dense":
        ops = assemble_operators(kinds, kappa, geometry, dofmap, dofmap,
                                 classification=cls)
    elif mode == "h2":
        from .h2 import AdmissibilityParams, assemble_h2_operators

        params = h2_params or AdmissibilityParams()
        ops = assemble_h2_operators(kinds, kappa, geometry, dofmap, params,
                                    classification=cls)
    else:
        raise ValueError("mode must be 'dense' or 'h2'")
    t_asm = time.perf_counter() - t0
    rhs = assemble_rhs(problem, kappa, direction, eta, dofmap)
    system = cfie_system(problem, mass, ops[kinds[0]], ops[kinds[1]], eta,
                         hard_w_sign=cfg.hard_w_sign,
                         include_coupling=include_coupling)
    t0 = time.perf_counter()
    x, info = gmres(system, rhs, cfg)
    t_solve = time.perf_counter() - t0
    return Solution(problem, kappa, direction, eta, dofmap, x,
                    info.residuals, info.iterations, info.converged, cfg,
                    {"assembly": t_asm, "solve": t_solve})
