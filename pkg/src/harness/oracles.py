"""
Dual-path residuals for one canonical model point.

Every entry compares a closed form or primary path against an independent
route to the same quantity.
"""

from __future__ import annotations

import logging
from typing import Dict

import numpy as np

from src.common.settings import DEFAULT_TOLERANCES, Tolerances
from src.meanforce.composite import (
    CompositeModel,
    canonical_charges,
    composite_gibbs,
    hmf,
    potential_family,
    reduced_state_family,
)
from src.meanforce.derivatives import (
    default_step,
    energy_dual_path_residual,
    family_derivative,
    modified_energy_operator,
    wilcox_derivative,
)
from src.metrology.measures import (
    classical_k_avg,
    classical_k_quadrature,
    qfi_fidelity_oracle,
    qfi_spectral,
    wyd_skew_avg,
    wyd_skew_quadrature,
    xi_term,
)
from src.opalgebra.families import OperatorFamily
from src.opalgebra.operators import expm_h, max_norm_distance
from src.opalgebra.states import exp_normalized, partial_trace, variance

logger = logging.getLogger(__name__)


def hmf_round_trip_residual(model: CompositeModel, beta: float) -> float:
    """max |exp(-beta H*_S)/Z*_S - tr_E rho_SE|."""
    h_star = hmf(model, beta)
    rho_hmf, _ = exp_normalized(beta * h_star)
    rho_se = composite_gibbs(model, beta).rho
    return max_norm_distance(rho_hmf.op, partial_trace(rho_se, model.layout, 0).op)


def oracle_residuals(
    model: CompositeModel, beta: float, tol: Tolerances | None = None
) -> Dict[str, float]:
    tol = tol or DEFAULT_TOLERANCES
    cc = canonical_charges(model)
    lam = [beta]
    pot = potential_family(cc)
    rho_fam = reduced_state_family(cc)
    rho_s, _ = exp_normalized(pot(lam))
    e_star = modified_energy_operator(pot, 0, lam, tol=tol)

    fisher = qfi_spectral(rho_fam, 0, lam, tol=tol).value
    fid = qfi_fidelity_oracle(rho_fam, 0, lam)

    g_fam = OperatorFamily(lambda x: -1.0 * pot(x), pot.dim, 1, "G")
    wil = wilcox_derivative(g_fam, 0, lam, tol=tol)
    fd_exp = family_derivative(
        OperatorFamily(lambda x: expm_h(g_fam(x)), pot.dim, 1, "exp G"),
        0,
        lam,
        default_step(lam, 0, tol),
    )

    var = variance(rho_s, e_star)
    out = {
        "hmf_round_trip": hmf_round_trip_residual(model, beta),
        "energy_dual_path": energy_dual_path_residual(pot, 0, lam, e_star, tol=tol),
        # at the 1e-3 limit this is |diff| <= max(1e-4, 1e-3 F)
        "qfi_fidelity": abs(fisher - fid) / max(0.1, fisher),
        "qfi_decomposition": abs(fisher - (var + xi_term(rho_s, e_star, tol))) / max(1.0, fisher),
        "wilcox": max_norm_distance(wil, fd_exp),
        "skew_quadrature": abs(wyd_skew_avg(rho_s, e_star, tol) - wyd_skew_quadrature(rho_s, e_star, tol)),
        "k_quadrature": abs(classical_k_avg(rho_s, e_star, tol) - classical_k_quadrature(rho_s, e_star, tol)),
    }
    logger.debug("oracle residuals for %s at beta=%s: %s", model.name, beta, out)
    return out


# acceptance threshold per residual
ORACLE_LIMITS: Dict[str, float] = {
    "hmf_round_trip": 1e-9,
    "energy_dual_path": 1e-5,
    "qfi_fidelity": 1e-3,
    "qfi_decomposition": 1e-6,
    "wilcox": 1e-6,
    "skew_quadrature": 1e-8,
    "k_quadrature": 1e-8,
}


def failed_oracles(residuals: Dict[str, float], scale: float = 1.0) -> Dict[str, float]:
    return {
        k: v
        for k, v in residuals.items()
        if k in ORACLE_LIMITS and not (np.isfinite(v) and v <= ORACLE_LIMITS[k] * scale)
    }
