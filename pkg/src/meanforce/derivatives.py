"""
Derivatives of operator families with respect to one Lagrange coefficient.

d/d lambda_p is always a directional derivative: lambda_p moves with unit
speed and every lambda_i listed in the DependencyMap moves with its slope
d lambda_i / d lambda_p. Nothing else co-varies.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
from pydantic import BaseModel, Field, ValidationError as PydValidationError

from src.common.errors import ConfigError, ToolkitError
from src.common.settings import DEFAULT_TOLERANCES, Tolerances
from src.gge.gibbs import IndexOutOfRange
from src.opalgebra.families import OperatorFamily
from src.opalgebra.operators import (
    DomainError,
    HermitianOperator,
    _trusted,
    eig,
    max_norm_distance,
)
from src.opalgebra.states import exp_normalized, expectation

logger = logging.getLogger(__name__)


class QuadratureNonConvergence(ToolkitError):
    pass


# ---------- dependency maps ----------


class Dependency(BaseModel):
    i: int = Field(ge=0)
    slope: float


class DependencyMap(BaseModel):
    model_config = {"frozen": True}

    p: int = Field(ge=0)
    deps: List[Dependency] = Field(default_factory=list)

    def slopes(self) -> Dict[int, float]:
        return {d.i: d.slope for d in self.deps}


def dependency_map(p: int, slopes: Dict[int, float] | None = None) -> DependencyMap:
    return DependencyMap(p=p, deps=[Dependency(i=i, slope=s) for i, s in (slopes or {}).items()])


def dependency_map_from_payload(raw: Dict) -> DependencyMap:
    try:
        return DependencyMap.model_validate(raw)
    except PydValidationError as e:
        raise ConfigError(f"Invalid dependency map: {e}") from e


def direction(param_count: int, deps: DependencyMap) -> np.ndarray:
    if not 0 <= deps.p < param_count:
        raise IndexOutOfRange(f"p={deps.p} outside 0..{param_count - 1}")
    d = np.zeros(param_count)
    d[deps.p] = 1.0
    for i, slope in deps.slopes().items():
        if i == deps.p:
            raise ConfigError(f"Dependency map lists p={i} as its own dependent")
        if not 0 <= i < param_count:
            raise IndexOutOfRange(f"Dependent index {i} outside 0..{param_count - 1}")
        d[i] = slope
    return d


def _resolve(fam: OperatorFamily, p: int, deps: DependencyMap | None) -> DependencyMap:
    if deps is None:
        return DependencyMap(p=p)
    if deps.p != p:
        raise ConfigError(f"Dependency map is for p={deps.p}, derivative requested for p={p}")
    return deps


def default_step(lambdas: Sequence[float], p: int, tol: Tolerances) -> float:
    return tol.fd_step * max(1.0, abs(float(lambdas[p])))


# ---------- finite differences ----------


def family_derivative(
    fam: OperatorFamily,
    p: int,
    lambdas: Sequence[float],
    h: float | None = None,
    deps: DependencyMap | None = None,
    tol: Tolerances | None = None,
) -> HermitianOperator:
    """(F(lambda + h d) - F(lambda - h d)) / 2h, symmetrized."""
    tol = tol or DEFAULT_TOLERANCES
    deps = _resolve(fam, p, deps)
    d = direction(fam.param_count, deps)
    lam = np.asarray(lambdas, dtype=float)
    step = default_step(lam, p, tol) if h is None else float(h)
    if step <= 0:
        raise DomainError(f"Finite-difference step must be positive, got {step}")
    hi = fam(lam + step * d).matrix
    lo = fam(lam - step * d).matrix
    return _trusted((hi - lo) / (2 * step))


def richardson(coarse: HermitianOperator, fine: HermitianOperator) -> HermitianOperator:
    """One Richardson level for central differences at steps h and h/2."""
    return _trusted((4 * fine.matrix - coarse.matrix) / 3)


def stable_derivative(
    fam: OperatorFamily,
    p: int,
    lambdas: Sequence[float],
    deps: DependencyMap | None = None,
    tol: Tolerances | None = None,
) -> HermitianOperator:
    """Central difference at h and h/2; extrapolate when they disagree."""
    tol = tol or DEFAULT_TOLERANCES
    h = default_step(lambdas, p, tol)
    coarse = family_derivative(fam, p, lambdas, h, deps, tol)
    fine = family_derivative(fam, p, lambdas, h / 2, deps, tol)
    gap = max_norm_distance(coarse, fine)
    if gap <= tol.derivative_rtol * max(1.0, fine.max_abs()):
        return fine
    logger.debug("%s: step halving moved d/dlambda_%d by %.3e, extrapolating", fam.name, p, gap)
    return richardson(coarse, fine)


# ---------- modified energy operator ----------


def _log_trace_exp(op: HermitianOperator) -> float:
    return exp_normalized(op)[1]


def energy_dual_path_residual(
    fam: OperatorFamily,
    p: int,
    lambdas: Sequence[float],
    e_star: HermitianOperator,
    deps: DependencyMap | None = None,
    tol: Tolerances | None = None,
) -> float:
    """
    |<E*> + d ln tr e^{-F} / d lambda_p| relative to max(1, |d ln Z*|).

    rho is e^{-F(lambda)}/tr e^{-F(lambda)} for the potential family F.
    """
    tol = tol or DEFAULT_TOLERANCES
    deps = _resolve(fam, p, deps)
    d = direction(fam.param_count, deps)
    lam = np.asarray(lambdas, dtype=float)
    h = default_step(lam, p, tol)
    dlnz = (_log_trace_exp(fam(lam + h * d)) - _log_trace_exp(fam(lam - h * d))) / (2 * h)
    rho, _ = exp_normalized(fam(lam))
    mean = expectation(rho, e_star)
    return abs(mean + dlnz) / max(1.0, abs(dlnz))


def modified_energy_operator(
    fam: OperatorFamily,
    p: int,
    lambdas: Sequence[float],
    deps: DependencyMap | None = None,
    tol: Tolerances | None = None,
) -> HermitianOperator:
    """
    E*^p = d/d lambda_p [sum_i lambda_i A*_i] for the potential family F.

    The plain central difference is accepted when <E*> matches -d ln Z*/d lambda_p;
    otherwise one Richardson level is applied and the residual re-checked.
    """
    tol = tol or DEFAULT_TOLERANCES
    e_star = family_derivative(fam, p, lambdas, None, deps, tol)
    res = energy_dual_path_residual(fam, p, lambdas, e_star, deps, tol)
    if res <= tol.dual_path_rtol:
        return e_star
    h = default_step(lambdas, p, tol)
    fine = family_derivative(fam, p, lambdas, h / 2, deps, tol)
    e_star = richardson(e_star, fine)
    res = energy_dual_path_residual(fam, p, lambdas, e_star, deps, tol)
    if res > tol.dual_path_rtol:
        logger.warning(
            "%s: <E*> vs -d ln Z* residual %.3e exceeds %.1e after extrapolation",
            fam.name,
            res,
            tol.dual_path_rtol,
        )
    return e_star


# ---------- derivative of an exponential ----------


def _gauss_legendre_01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def wilcox_kernel(g: np.ndarray, nodes: int) -> np.ndarray:
    """K_nm = int_0^1 exp(a g_n + (1 - a) g_m) da by Gauss-Legendre."""
    a, w = _gauss_legendre_01(nodes)
    ea = np.exp(np.outer(a, g))  # (k, n)
    eb = np.exp(np.outer(1.0 - a, g))  # (k, m)
    return np.einsum("k,kn,km->nm", w, ea, eb)


def wilcox_derivative(
    g_family: OperatorFamily,
    p: int,
    lambdas: Sequence[float],
    deps: DependencyMap | None = None,
    tol: Tolerances | None = None,
) -> HermitianOperator:
    """
    d/d lambda_p e^{G} = int_0^1 e^{aG} (dG/d lambda_p) e^{(1-a)G} da.

    Evaluated in the eigenbasis of G; node count doubles from wilcox_nodes
    until the result moves by at most wilcox_tol * max(1, |result|).
    """
    tol = tol or DEFAULT_TOLERANCES
    lam = np.asarray(lambdas, dtype=float)
    G = g_family(lam)
    dG = stable_derivative(g_family, p, lam, deps, tol)
    sd = eig(G)
    v = sd.eigenvectors
    dG_eb = v.conj().T @ dG.matrix @ v

    nodes = tol.wilcox_nodes
    prev = dG_eb * wilcox_kernel(sd.eigenvalues, nodes)
    while True:
        nodes *= 2
        if nodes > tol.wilcox_max_nodes:
            raise QuadratureNonConvergence(
                f"Exponential-derivative quadrature not stable at {nodes // 2} nodes"
            )
        cur = dG_eb * wilcox_kernel(sd.eigenvalues, nodes)
        change = float(np.max(np.abs(cur - prev)))
        if change <= tol.wilcox_tol * max(1.0, float(np.max(np.abs(cur)))):
            break
        logger.debug("wilcox quadrature: %d nodes changed result by %.3e", nodes, change)
        prev = cur
    return _trusted(v @ cur @ v.conj().T)


# ---------- continuity ----------


@dataclass(frozen=True)
class ContinuityReport:
    steps: List[float]
    distances: List[float]
    continuous: bool


def check_continuity(
    fam: OperatorFamily,
    lambdas: Sequence[float],
    steps: Sequence[float] = (1e-2, 1e-3, 1e-4, 1e-5),
    seed: int = 0,
) -> ContinuityReport:
    """Spot check ||F(lambda + t u) - F(lambda)|| -> 0 along a seeded unit direction."""
    lam = np.asarray(lambdas, dtype=float)
    rng = np.random.Generator(np.random.Philox(seed))
    u = rng.standard_normal(fam.param_count)
    u /= np.linalg.norm(u)
    base = fam(lam)
    dist = [max_norm_distance(fam(lam + t * u), base) for t in steps]
    scale = max(1.0, base.max_abs())
    shrinking = all(b <= a + 1e-12 * scale for a, b in zip(dist, dist[1:]))
    ok = shrinking and dist[-1] <= 1e-2 * scale
    if not ok:
        logger.warning("%s looks discontinuous at %s: %s", fam.name, lam.tolist(), dist)
    return ContinuityReport(steps=list(steps), distances=dist, continuous=ok)
