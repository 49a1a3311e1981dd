"""
Quantum Fisher information, Wigner-Yanase-Dyson skew information and its
classical complement.

Closed forms are evaluated in the eigenbasis of rho. Eigenvalues at or below
psd_clip count as exact zeros; every kernel below has a finite limit there.
The alpha-quadratures are independent oracles for the closed forms.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from src.common.errors import ToolkitError
from src.common.settings import DEFAULT_TOLERANCES, Tolerances
from src.gge.gibbs import GGEState, variance_of_charge
from src.meanforce.derivatives import (
    DependencyMap,
    QuadratureNonConvergence,
    direction,
    stable_derivative,
)
from src.opalgebra.families import OperatorFamily
from src.opalgebra.operators import DomainError, HermitianOperator
from src.opalgebra.states import (
    DensityMatrix,
    clipped_spectrum,
    density_matrix,
    root_fidelity,
)

logger = logging.getLogger(__name__)


class DegenerateState(ToolkitError):
    pass


# -----------------------------
# Kernels
# -----------------------------


def log_mean(pn: np.ndarray, pm: np.ndarray, tol: Tolerances | None = None) -> np.ndarray:
    """
    L(p, q) = (q - p) / ln(q / p) = int_0^1 p^a q^(1-a) da.

    L(p, 0) = 0 and L(p, p) = p.
    """
    tol = tol or DEFAULT_TOLERANCES
    pn, pm = np.broadcast_arrays(np.asarray(pn, dtype=float), np.asarray(pm, dtype=float))
    out = np.zeros(pn.shape)
    scale = np.maximum(pn, pm)
    positive = (pn > 0) & (pm > 0)
    close = positive & (np.abs(pm - pn) <= tol.degenerate_tol * scale)
    out[close] = 0.5 * (pn[close] + pm[close])
    far = positive & ~close
    d = pm[far] - pn[far]
    out[far] = d / np.log1p(d / pn[far])
    return out


def _pair_grids(p: np.ndarray):
    return np.meshgrid(p, p, indexing="ij")


def _centered_in_basis(probs: np.ndarray, obs_eb: np.ndarray) -> np.ndarray:
    mean = float(np.real(np.sum(probs * np.diag(obs_eb))))
    return obs_eb - mean * np.eye(len(probs))


# -----------------------------
# Skew information
# -----------------------------


def wyd_skew_alpha(
    rho: DensityMatrix, obs: HermitianOperator, alpha: float, tol: Tolerances | None = None
) -> float:
    """Q_a = -(1/2) tr([O, rho^a][O, rho^(1-a)])."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    cs = clipped_spectrum(rho, tol)
    v = cs.vectors
    ra = (v * cs.probs**alpha) @ v.conj().T
    rb = (v * cs.probs ** (1.0 - alpha)) @ v.conj().T
    o = obs.matrix
    c1 = o @ ra - ra @ o
    c2 = o @ rb - rb @ o
    return max(float(-0.5 * np.real(np.trace(c1 @ c2))), 0.0)


def wyd_skew_avg(rho: DensityMatrix, obs: HermitianOperator, tol: Tolerances | None = None) -> float:
    """Q = sum_{n != m} (p_n - L(p_n, p_m)) |O_nm|^2."""
    cs = clipped_spectrum(rho, tol)
    o2 = np.abs(cs.in_basis(obs)) ** 2
    pn, pm = _pair_grids(cs.probs)
    w = pn - log_mean(pn, pm, tol)
    np.fill_diagonal(w, 0.0)
    return max(float(np.sum(w * o2)), 0.0)


def classical_k_alpha(
    rho: DensityMatrix, obs: HermitianOperator, alpha: float, tol: Tolerances | None = None
) -> float:
    """K_a = tr(rho^a dO rho^(1-a) dO)."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    cs = clipped_spectrum(rho, tol)
    d = _centered_in_basis(cs.probs, cs.in_basis(obs))
    pn, pm = _pair_grids(cs.probs)
    return float(np.sum(pn**alpha * pm ** (1.0 - alpha) * np.abs(d) ** 2))


def classical_k_spectral(
    rho: DensityMatrix, obs: HermitianOperator, tol: Tolerances | None = None
) -> float:
    """K = sum_{n,m} L(p_n, p_m) |dO_nm|^2."""
    cs = clipped_spectrum(rho, tol)
    d = _centered_in_basis(cs.probs, cs.in_basis(obs))
    pn, pm = _pair_grids(cs.probs)
    return float(np.sum(log_mean(pn, pm, tol) * np.abs(d) ** 2))


def classical_k_avg(rho: DensityMatrix, obs: HermitianOperator, tol: Tolerances | None = None) -> float:
    """K = Var - Q; classical_k_spectral and classical_k_quadrature are its oracles."""
    cs = clipped_spectrum(rho, tol)
    obs_eb = cs.in_basis(obs)
    d = _centered_in_basis(cs.probs, obs_eb)
    var = float(np.real(np.sum(cs.probs[:, None] * np.abs(d) ** 2)))
    return max(var - wyd_skew_avg(rho, obs, tol), 0.0)


def xi_term(rho: DensityMatrix, obs: HermitianOperator, tol: Tolerances | None = None) -> float:
    """Xi = sum_{n != m} [2 L^2 / (p_n + p_m) - p_n] |O_nm|^2, always <= 0."""
    cs = clipped_spectrum(rho, tol)
    o2 = np.abs(cs.in_basis(obs)) ** 2
    pn, pm = _pair_grids(cs.probs)
    lm = log_mean(pn, pm, tol)
    s = pn + pm
    with np.errstate(divide="ignore", invalid="ignore"):
        first = np.where(s > 0, 2.0 * lm**2 / np.where(s > 0, s, 1.0), 0.0)
    bracket = first - pn
    np.fill_diagonal(bracket, 0.0)
    return float(np.sum(bracket * o2))


# -----------------------------
# Alpha quadrature oracles
# -----------------------------


def alpha_quadrature(
    integrand: Callable[[float], float],
    nodes: int,
    rtol: float,
    max_nodes: int,
) -> float:
    """Gauss-Legendre on (0, 1), doubling nodes until the value is stable."""

    def _rule(n: int) -> float:
        x, w = np.polynomial.legendre.leggauss(n)
        a = 0.5 * (x + 1.0)
        return float(0.5 * np.sum(w * np.array([integrand(float(t)) for t in a])))

    prev = _rule(nodes)
    while True:
        nodes *= 2
        if nodes > max_nodes:
            raise QuadratureNonConvergence(f"alpha quadrature not stable at {nodes // 2} nodes")
        cur = _rule(nodes)
        if abs(cur - prev) <= rtol * max(1.0, abs(cur)):
            return cur
        logger.debug("alpha quadrature: %d nodes moved value by %.3e", nodes, abs(cur - prev))
        prev = cur


def wyd_skew_quadrature(
    rho: DensityMatrix, obs: HermitianOperator, tol: Tolerances | None = None
) -> float:
    tol = tol or DEFAULT_TOLERANCES
    return alpha_quadrature(
        lambda a: wyd_skew_alpha(rho, obs, a, tol), tol.quad_nodes, tol.quad_tol, tol.quad_max_nodes
    )


def classical_k_quadrature(
    rho: DensityMatrix, obs: HermitianOperator, tol: Tolerances | None = None
) -> float:
    tol = tol or DEFAULT_TOLERANCES
    return alpha_quadrature(
        lambda a: classical_k_alpha(rho, obs, a, tol),
        tol.quad_nodes,
        tol.quad_tol,
        tol.quad_max_nodes,
    )


# -----------------------------
# Fisher information
# -----------------------------


@dataclass(frozen=True)
class FisherEstimate:
    value: float
    skipped_weight: float
    total_weight: float

    @property
    def skipped_fraction(self) -> float:
        return self.skipped_weight / self.total_weight if self.total_weight > 0 else 0.0


def qfi_spectral(
    rho_family: OperatorFamily,
    p: int,
    lambdas: Sequence[float],
    deps: DependencyMap | None = None,
    tol: Tolerances | None = None,
) -> FisherEstimate:
    """F = 2 sum_{n,m} |<e_n| d rho |e_m>|^2 / (p_n + p_m) over pairs with p_n + p_m above the floor."""
    tol = tol or DEFAULT_TOLERANCES
    lam = np.asarray(lambdas, dtype=float)
    rho = density_matrix(rho_family(lam), tol)
    cs = clipped_spectrum(rho, tol)
    drho = stable_derivative(rho_family, p, lam, deps, tol)
    w = np.abs(cs.in_basis(drho)) ** 2
    pn, pm = _pair_grids(cs.probs)
    s = pn + pm
    keep = s > tol.qfi_pair_floor
    total = float(np.sum(w))
    skipped = float(np.sum(w[~keep]))
    if total > 0 and skipped / total > tol.qfi_skipped_fraction:
        raise DegenerateState(
            f"{skipped / total:.1%} of the derivative weight sits on pairs with p_n + p_m "
            f"<= {tol.qfi_pair_floor}"
        )
    if skipped > 0:
        logger.debug("qfi_spectral skipped derivative weight %.3e of %.3e", skipped, total)
    value = 2.0 * float(np.sum(w[keep] / s[keep]))
    return FisherEstimate(value=value, skipped_weight=skipped, total_weight=total)


def qfi_commuting_closed_form(state: GGEState, p: int) -> float:
    """F(lambda_p) = sum_n p_n (a_pn - <A_p>)^2 = Var(rho, A_p)."""
    return variance_of_charge(state, p)


def qfi_fidelity_oracle(
    rho_family: OperatorFamily,
    p: int,
    lambdas: Sequence[float],
    h: float = 1e-3,
    deps: DependencyMap | None = None,
) -> float:
    """F ~ 8 (1 - sqrt fidelity(rho(lambda - h/2), rho(lambda + h/2))) / h^2, error O(h^2)."""
    if h <= 0:
        raise DomainError(f"Oracle step must be positive, got {h}")
    lam = np.asarray(lambdas, dtype=float)
    d = direction(rho_family.param_count, deps or DependencyMap(p=p))
    lo = density_matrix(rho_family(lam - 0.5 * h * d))
    hi = density_matrix(rho_family(lam + 0.5 * h * d))
    return max(8.0 * (1.0 - root_fidelity(lo, hi)) / h**2, 0.0)


# -----------------------------
# Scalar inequality behind Xi <= 0 <= K - F
# -----------------------------


def log_ratio_margin(x: float) -> float:
    """
    (x - 1)/(x + 1) - (1/2) ln x for x in (0, 1).

    With t = (1 - x)/(1 + x) this is artanh(t) - t > 0; small t uses the series.
    """
    if not 0.0 < x < 1.0 or not math.isfinite(x):
        raise DomainError(f"x must lie in (0, 1), got {x}")
    t = (1.0 - x) / (1.0 + x)
    if t < 1e-3:
        t2 = t * t
        return t * t2 * (1.0 / 3.0 + t2 * (1.0 / 5.0 + t2 / 7.0))
    return math.atanh(t) - t


def log_ratio_inequality(x: float) -> bool:
    return log_ratio_margin(x) > 0.0

