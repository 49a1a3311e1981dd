"""
Bound evaluators for canonical, grand-canonical and multi-Lagrange ensembles.

Each evaluator builds E*^p = d/d lambda_p [sum_i lambda_i A*_i] two ways:

  direct    directional derivative of the effective potential sum along the
            ensemble's dependency map
  composed  from the split operators D* (energy part) and I*_i (charge parts)

and reports both, together with the covariance composition of K.

The split takes the user-supplied effective charges X*_i (constant system
charges by default) and assigns the rest of the potential sum to the energy:
lambda_0 H*_S := sum_i lambda_i A*_i - sum_{i>=1} lambda_i X*_i.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from src.common.settings import DEFAULT_TOLERANCES, Tolerances
from src.meanforce.composite import (
    effective_gibbs,
    log_partition_star,
    potential_family,
    reduced_state_family,
)
from src.meanforce.derivatives import (
    DependencyMap,
    dependency_map,
    family_derivative,
    modified_energy_operator,
)
from src.metrology.measures import classical_k_avg, wyd_skew_avg
from src.metrology.report import (
    ConditionViolated,
    KExpansionParts,
    UncertaintyReport,
    k_general_expansion,
    master_inequality_report,
    operator_hash,
)
from src.opalgebra.families import OperatorFamily
from src.opalgebra.operators import HermitianOperator, _trusted, max_norm_distance
from src.opalgebra.states import covariance, variance

from .specs import EnsembleSpec, EnsembleSpecError, MuZero, charged, effective_families

logger = logging.getLogger(__name__)

COMPOSITION_LIMIT = 1e-7
CHECK_LIMITS: Dict[str, float] = {"k_composition": COMPOSITION_LIMIT, "chain_rule": 1e-6}


# -----------------------------
# Dependency maps
# -----------------------------


def dependency_for(spec: EnsembleSpec, p: int) -> DependencyMap:
    """
    p = 0: lambda_i = -mu_i lambda_0.
    p >= 1: lambda_0 = -lambda_p / mu_p and lambda_j = (mu_j / mu_p) lambda_p.
    """
    mus = spec.chemical
    if not 0 <= p < spec.param_count:
        raise EnsembleSpecError(f"p={p} outside 0..{spec.param_count - 1} for {spec.kind}")
    if p == 0:
        return dependency_map(0, {i + 1: -m for i, m in enumerate(mus)})
    mu_p = mus[p - 1]
    if mu_p == 0.0:
        raise MuZero(f"mu_{p} = 0: lambda_0 cannot be expressed through lambda_{p}")
    slopes = {0: -1.0 / mu_p}
    for j, m in enumerate(mus, start=1):
        if j != p:
            slopes[j] = m / mu_p
    return dependency_map(p, slopes)


# -----------------------------
# Split operators
# -----------------------------


@dataclass(frozen=True)
class SplitOperators:
    energy: HermitianOperator  # D* = A* = d/d lambda_0 [lambda_0 H*_S]
    charges: Tuple[HermitianOperator, ...]  # I*_i = d/d lambda_i [lambda_i X*_i]


def _scaled_energy_family(spec: EnsembleSpec) -> OperatorFamily:
    pot = potential_family(charged(spec))
    xs = effective_families(spec)

    def _eval(lam: np.ndarray) -> HermitianOperator:
        out = pot(lam)
        for i, x in enumerate(xs, start=1):
            out = out - float(lam[i]) * x(lam)
        return out

    return OperatorFamily(_eval, pot.dim, pot.param_count, f"{spec.label}:lambda0*H*")


def _charge_term_family(spec: EnsembleSpec, i: int, x: OperatorFamily) -> OperatorFamily:
    return OperatorFamily(
        lambda lam: float(lam[i]) * x(lam), x.dim, x.param_count, f"{spec.label}:lambda{i}*X{i}*"
    )


def split_operators(spec: EnsembleSpec, tol: Tolerances | None = None) -> SplitOperators:
    lam = spec.lambdas()
    energy = family_derivative(_scaled_energy_family(spec), 0, lam, tol=tol)
    charges = tuple(
        family_derivative(_charge_term_family(spec, i, x), i, lam, tol=tol)
        for i, x in enumerate(effective_families(spec), start=1)
    )
    return SplitOperators(energy, charges)


def composition(spec: EnsembleSpec, p: int, split: SplitOperators) -> Tuple[HermitianOperator, Dict[int, float]]:
    """
    E*^p = first + sum_j c_j I*_j with `first` the only part that need not
    commute with rho_S.
    """
    slopes = dependency_for(spec, p).slopes()
    if p == 0:
        return split.energy, {j: slopes[j] for j in range(1, spec.param_count)}
    coeffs = {j: slopes[j] for j in range(1, spec.param_count) if j != p}
    coeffs[p] = 1.0
    return slopes[0] * split.energy, coeffs


def composed_energy(spec: EnsembleSpec, p: int, split: SplitOperators) -> HermitianOperator:
    first, coeffs = composition(spec, p, split)
    out = first
    for j, c in coeffs.items():
        out = out + c * split.charges[j - 1]
    return out


# -----------------------------
# Evaluation
# -----------------------------


def _evaluate(
    spec: EnsembleSpec, p: int, strict: bool, tol: Tolerances
) -> Tuple[UncertaintyReport, SplitOperators]:
    cc = charged(spec)
    lam = spec.lambdas()
    deps = dependency_for(spec, p)
    eg = effective_gibbs(cc, lam, tol)
    e_direct = modified_energy_operator(potential_family(cc), p, lam, deps, tol)

    report = master_inequality_report(
        eg.rho_S,
        e_direct,
        reduced_state_family(cc),
        p,
        lam,
        deps,
        strict=strict,
        model_hash=operator_hash(*cc.total_charges, *cc.env_charges),
        label=f"{spec.label}:{spec.kind}:p={p}",
        tol=tol,
    )

    split = split_operators(spec, tol)
    first, coeffs = composition(spec, p, split)
    expansion = k_general_expansion(
        eg.rho_S,
        KExpansionParts(first, {j: split.charges[j - 1] for j in coeffs}),
        dependency_map(p, coeffs),
        strict=strict,
        tol=tol,
    )
    principal = split.energy if p == 0 else split.charges[p - 1]
    phi_gap = report.var - wyd_skew_avg(eg.rho_S, principal, tol)

    report.checks.update(
        {
            "chain_rule": max_norm_distance(e_direct, composed_energy(spec, p, split)),
            "k_composed": expansion.expanded,
            "k_composition": abs(expansion.expanded - report.k) / max(abs(report.k), tol.var_floor),
            "expansion_commutator": expansion.max_commutator,
            "bound_phi_form": 1.0 / math.sqrt(max(phi_gap, tol.var_floor)),
        }
    )
    logger.debug("%s checks %s", report.metadata.label, report.checks)
    if strict and report.checks["k_composition"] > COMPOSITION_LIMIT:
        raise ConditionViolated(
            f"{report.metadata.label}: composed K differs from direct K by "
            f"{report.checks['k_composition']:.3e} (relative)",
            expansion,
        )
    return report, split


def check_violations(report: UncertaintyReport) -> List[str]:
    """Failed composition checks recorded by the evaluators, as messages."""
    out = []
    for name, limit in CHECK_LIMITS.items():
        value = report.checks.get(name)
        if value is not None and not (math.isfinite(value) and value <= limit):
            out.append(f"{report.metadata.label}: {name} {value:.3e} > {limit:.0e}")
    return out


def canonical_bound(spec: EnsembleSpec, strict: bool = False, tol: Tolerances | None = None) -> UncertaintyReport:
    """Delta beta >= 1/sqrt(Delta U_S^2 - Q(rho_S, E*_S)) >= 1/Delta U_S, E*_S = d(beta H*_S)/d beta."""
    tol = tol or DEFAULT_TOLERANCES
    if spec.kind != "canonical":
        raise EnsembleSpecError(f"canonical_bound needs a canonical spec, got {spec.kind}")
    report, _ = _evaluate(spec, 0, strict, tol)

    # d^2 ln Z*_S / d beta^2; equals Delta U_S^2 when the coupling vanishes
    cc = charged(spec)
    b = spec.beta
    h = tol.fd_step_second * max(1.0, b)
    f = lambda x: log_partition_star(cc, [x])  # noqa: E731
    curvature = (f(b + h) - 2 * f(b) + f(b - h)) / h**2
    report.checks["lnz_curvature"] = curvature
    return report


def grand_canonical_operators(
    spec: EnsembleSpec, tol: Tolerances | None = None
) -> Tuple[HermitianOperator, HermitianOperator]:
    """(A*, B*) with A* = d/d lambda_1 [lambda_1 H*_S] and B* = N*_S + lambda_2 dN*_S/d lambda_2."""
    if spec.kind != "grand_canonical":
        raise EnsembleSpecError(f"grand_canonical_operators needs a grand_canonical spec, got {spec.kind}")
    split = split_operators(spec, tol)
    return split.energy, split.charges[0]


def grand_canonical_bounds(
    spec: EnsembleSpec, strict: bool = False, tol: Tolerances | None = None
) -> Tuple[UncertaintyReport, UncertaintyReport]:
    """
    Reports for lambda_1 = beta (E* = A* - mu B*) and lambda_2 = -beta mu
    (E* = B* - A*/mu). Raises MuZero for the second when mu = 0.
    """
    tol = tol or DEFAULT_TOLERANCES
    if spec.kind != "grand_canonical":
        raise EnsembleSpecError(f"grand_canonical_bounds needs a grand_canonical spec, got {spec.kind}")
    report_beta, split = _evaluate(spec, 0, strict, tol)
    report_mu, _ = _evaluate(spec, 1, strict, tol)

    # K(A* - mu B*) = K(A*) + mu^2 Var(B*) - 2 mu Cov(A*, B*) written out for p = 1
    a, b = split.energy, split.charges[0]
    mu = spec.mu
    eg = effective_gibbs(charged(spec), spec.lambdas(), tol)
    k_36 = (
        classical_k_avg(eg.rho_S, a, tol)
        + mu**2 * variance(eg.rho_S, b)
        - 2 * mu * covariance(eg.rho_S, a, b)
    )
    report_beta.checks["k_grand_form"] = abs(k_36 - report_beta.k) / max(abs(report_beta.k), tol.var_floor)
    return report_beta, report_mu


def multi_lagrange_bound(
    spec: EnsembleSpec, p: int = 0, strict: bool = False, tol: Tolerances | None = None
) -> UncertaintyReport:
    """
    p = 0: K(E*) = K(D*) - 2 sum_i mu_i Cov(D*, I*_i) + Var(sum_i mu_i I*_i) and
    Delta lambda_0 >= 1/sqrt(Delta Phi_S^2 - Q(rho_S, D*)).
    """
    tol = tol or DEFAULT_TOLERANCES
    if spec.kind != "multi_lagrange":
        raise EnsembleSpecError(f"multi_lagrange_bound needs a multi_lagrange spec, got {spec.kind}")
    report, _ = _evaluate(spec, p, strict, tol)
    return report


def evaluate_spec(
    spec: EnsembleSpec, strict: bool = False, tol: Tolerances | None = None
) -> List[UncertaintyReport]:
    """Every report this ensemble kind supports (p = 0 first)."""
    if spec.kind == "canonical":
        return [canonical_bound(spec, strict, tol)]
    if spec.kind == "grand_canonical":
        if spec.mu == 0.0:
            return [_evaluate(spec, 0, strict, tol or DEFAULT_TOLERANCES)[0]]
        return list(grand_canonical_bounds(spec, strict, tol))
    out = [multi_lagrange_bound(spec, 0, strict, tol)]
    for p, mu in enumerate(spec.mus, start=1):
        if mu != 0.0:
            out.append(multi_lagrange_bound(spec, p, strict, tol))
    return out


def chain_rule_residual(spec: EnsembleSpec, tol: Tolerances | None = None) -> float:
    """Grand canonical: max |E*^(2) - (B* - A*/mu)| with E*^(2) taken directly."""
    tol = tol or DEFAULT_TOLERANCES
    if spec.kind != "grand_canonical":
        raise EnsembleSpecError("chain_rule_residual applies to grand_canonical specs")
    if spec.mu == 0.0:
        raise MuZero("mu = 0: the lambda_2 derivative is undefined")
    cc = charged(spec)
    lam = spec.lambdas()
    e2 = modified_energy_operator(potential_family(cc), 1, lam, dependency_for(spec, 1), tol)
    a, b = grand_canonical_operators(spec, tol)
    return max_norm_distance(e2, _trusted(b.matrix - a.matrix / spec.mu))
