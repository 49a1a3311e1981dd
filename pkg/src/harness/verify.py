"""
Seeded verification suite.

Every check draws its inputs from its own Philox stream keyed by
(seed, check index, trial), so the summary is reproducible and checks can be
added without disturbing the others. A check returns one residual; it passes
when the residual is finite and at most its limit times the tolerance scale.
Exceptions count as failures and are recorded.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, Iterable, List

import numpy as np
from pydantic import BaseModel, Field

from src.common.errors import ConfigError, ToolkitError
from src.common.settings import DEFAULT_TOLERANCES, Tolerances
from src.ensembles.bounds import grand_canonical_bounds, multi_lagrange_bound
from src.ensembles.specs import grand_canonical_spec, multi_lagrange_spec
from src.gge.gibbs import (
    build_gge,
    charge_set,
    equilibrium_entropy,
    legendre_check,
    mean_charge,
    mean_charge_from_partition,
    state_family,
)
from src.meanforce.composite import (
    CompositeModel,
    canonical_charges,
    effective_gibbs,
    potential_family,
    reduced_state_family,
)
from src.meanforce.derivatives import modified_energy_operator
from src.metrology.measures import (
    classical_k_avg,
    classical_k_quadrature,
    log_ratio_margin,
    qfi_commuting_closed_form,
    qfi_fidelity_oracle,
    qfi_spectral,
    wyd_skew_avg,
)
from src.metrology.report import UncertaintyReport, master_inequality_report
from src.opalgebra.operators import identity, kron
from src.opalgebra.states import density_matrix, state_list_mix, von_neumann_entropy

from .models import (
    dimer_charges,
    model_hopping_dimer,
    model_spin_chain,
    model_two_qubit,
    number_charge,
)
from .oracles import ORACLE_LIMITS, hmf_round_trip_residual, oracle_residuals
from .rng import make_rng, random_commuting_charges, random_density_matrix, random_hermitian

logger = logging.getLogger(__name__)

MUTATIONS: FrozenSet[str] = frozenset({"xi_sign"})

# Hilbert-space dimensions drawn by the random-state checks, inclusive
MIN_DIM, MAX_DIM = 2, 8

CheckFn = Callable[[np.random.Generator, Tolerances, FrozenSet[str]], float]


@dataclass(frozen=True)
class Check:
    name: str
    fn: CheckFn
    limit: float
    # batch checks draw their whole sample in one run
    batch: bool = False


# -----------------------------
# Shared draws
# -----------------------------


def random_dim(rng: np.random.Generator) -> int:
    return int(rng.integers(MIN_DIM, MAX_DIM + 1))


def _random_model(rng: np.random.Generator, g: float) -> CompositeModel:
    choice = int(rng.integers(5))
    if choice == 0:
        return model_two_qubit(g=g, int_kind="xx")
    if choice == 1:
        return model_two_qubit(g=g, int_kind="xy")
    if choice == 2:
        return model_spin_chain(n=int(rng.integers(2, 4)), g_boundary=g)
    if choice == 3:
        return model_two_qubit(g=g, int_kind="zz")
    return model_hopping_dimer(g=g)


def canonical_report(
    model: CompositeModel, beta: float, tol: Tolerances, oracles: bool = False
) -> UncertaintyReport:
    cc = canonical_charges(model)
    lam = [beta]
    eg = effective_gibbs(cc, lam, tol)
    e_star = modified_energy_operator(potential_family(cc), 0, lam, tol=tol)
    return master_inequality_report(
        eg.rho_S,
        e_star,
        reduced_state_family(cc),
        0,
        lam,
        oracles=oracles,
        label=f"{model.name}:beta={beta:.4g}:g={model.g:.4g}",
        tol=tol,
    )


# -----------------------------
# Checks
# -----------------------------


def check_master_inequality(rng, tol, mutations) -> float:
    beta = float(rng.uniform(0.1, 5.0))
    model = _random_model(rng, float(rng.uniform(0.0, 2.0)))
    rep = canonical_report(model, beta, tol)
    return max(rep.fisher - (rep.var - rep.q), 0.0)


def check_k_identity(rng, tol, mutations) -> float:
    dim = random_dim(rng)
    rho = random_density_matrix(rng, dim)
    obs = random_hermitian(rng, dim)
    k = classical_k_avg(rho, obs, tol)
    return abs(k - classical_k_quadrature(rho, obs, tol)) / max(abs(k), 1e-3)


def check_qfi_commuting(rng, tol, mutations) -> float:
    """Closed form vs spectral vs fidelity, in units of max(1e-4, 1e-3 F)."""
    dim = random_dim(rng)
    ops = random_commuting_charges(rng, dim, 2)
    lam = rng.uniform(-1.0, 1.0, size=2)
    cs = charge_set(list(zip(lam, ops)), tol)
    state = build_gge(cs)
    p = int(rng.integers(2))
    closed = qfi_commuting_closed_form(state, p)
    fam = state_family(cs)
    spectral = qfi_spectral(fam, p, lam, tol=tol).value
    fid = qfi_fidelity_oracle(fam, p, lam)
    scale = max(1e-4, 1e-3 * closed)
    return max(abs(closed - spectral), abs(closed - fid)) / scale


def check_qfi_decomposition(rng, tol, mutations) -> float:
    beta = float(rng.uniform(0.1, 5.0))
    kind = "xx" if rng.integers(2) == 0 else "xy"
    model = model_two_qubit(g=float(rng.uniform(0.5, 2.0)), int_kind=kind)
    rep = canonical_report(model, beta, tol)
    xi = -rep.xi if "xi_sign" in mutations else rep.xi
    return abs(rep.fisher - (rep.var + xi)) / max(1.0, rep.fisher)


def check_hmf_round_trip(rng, tol, mutations) -> float:
    beta = float(rng.uniform(0.1, 5.0))
    g = float(rng.uniform(0.0, 2.0))
    model = model_two_qubit(g=g) if rng.integers(2) == 0 else model_spin_chain(n=3, g_boundary=g)
    return hmf_round_trip_residual(model, beta)


def check_zero_coupling(rng, tol, mutations) -> float:
    """Q <= 1e-10 and bound_tight = bound_loose to 1e-9, as a ratio to those limits."""
    beta = float(rng.uniform(0.1, 5.0))
    if rng.integers(2) == 0:
        model = _random_model(rng, 0.0)
    else:
        model = model_two_qubit(g=float(rng.uniform(0.0, 2.0)), int_kind="zz")
    rep = canonical_report(model, beta, tol)
    gap = abs(rep.bound_tight - rep.bound_loose) / rep.bound_loose
    return max(abs(rep.q) / 1e-10, gap / 1e-9)


def check_covariance_expansion(rng, tol, mutations) -> float:
    """K composed from covariances vs K of the assembled operator, grand and multi-Lagrange."""
    beta = float(rng.uniform(0.2, 2.0))
    model = model_hopping_dimer(g=float(rng.uniform(0.0, 1.0)))
    mu = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 1.0))
    rep_beta, rep_mu = grand_canonical_bounds(
        grand_canonical_spec(model, beta, mu, number_charge()), tol=tol
    )
    mus = rng.uniform(-0.5, 0.5, size=3)
    rep_multi = multi_lagrange_bound(multi_lagrange_spec(model, beta, mus, dimer_charges()), 0, tol=tol)
    return max(
        rep_beta.checks["k_grand_form"],
        rep_beta.checks["k_composition"],
        rep_mu.checks["k_composition"],
        rep_multi.checks["k_composition"],
    )


def check_log_ratio(rng, tol, mutations) -> float:
    """Number of x in (0, 1) where (x - 1)/(x + 1) > (1/2) ln x fails."""
    lo, hi = 1e-12, 1.0 - 1e-12
    uniform = rng.uniform(lo, hi, size=10_000)
    log_uniform = 10.0 ** rng.uniform(math.log10(lo), math.log10(hi), size=1_000)
    xs = np.concatenate([uniform, log_uniform])
    return float(sum(log_ratio_margin(float(x)) <= 0.0 for x in xs))


def check_skew_properties(rng, tol, mutations) -> float:
    """Convexity of Q under mixing and additivity over tensor products."""
    d1, d2 = int(rng.integers(2, 4)), int(rng.integers(2, 4))
    r1, r2 = random_density_matrix(rng, d1), random_density_matrix(rng, d1)
    obs = random_hermitian(rng, d1)
    w = float(rng.uniform(0.0, 1.0))
    mixed = state_list_mix([r1, r2], [w, 1.0 - w])
    convexity = wyd_skew_avg(mixed, obs, tol) - (
        w * wyd_skew_avg(r1, obs, tol) + (1.0 - w) * wyd_skew_avg(r2, obs, tol)
    )

    s2 = random_density_matrix(rng, d2)
    o2 = random_hermitian(rng, d2)
    joint = density_matrix(np.kron(r1.matrix, s2.matrix), tol)
    total = kron(obs, identity(d2)) + kron(identity(d1), o2)
    additivity = abs(
        wyd_skew_avg(joint, total, tol) - wyd_skew_avg(r1, obs, tol) - wyd_skew_avg(s2, o2, tol)
    )
    return max(convexity, additivity, 0.0)


def check_thermo_consistency(rng, tol, mutations) -> float:
    """Mean paths (1e-6), Legendre inversion (1e-4) and entropy paths (1e-8), as ratios."""
    ops = random_commuting_charges(rng, 8, 2)
    lam = rng.uniform(-1.0, 1.0, size=2)
    cs = charge_set(list(zip(lam, ops)), tol)
    state = build_gge(cs)
    means = max(abs(mean_charge(state, i) - mean_charge_from_partition(cs, i, tol)) for i in range(2))
    legendre = legendre_check(state, seed=int(rng.integers(2**31)), tol=tol).max_residual
    entropy = abs(equilibrium_entropy(state, tol=tol) - von_neumann_entropy(state.rho, tol))
    return max(means / 1e-6, legendre / 1e-4, entropy / 1e-8)


def check_dual_path_oracles(rng, tol, mutations) -> float:
    """Worst oracle residual (Wilcox, HMF, QFI, quadratures) as a ratio to its limit."""
    beta = float(rng.uniform(0.2, 3.0))
    model = model_two_qubit(g=float(rng.uniform(0.0, 1.5)))
    res = oracle_residuals(model, beta, tol)
    return max(v / ORACLE_LIMITS[k] for k, v in res.items())


CHECKS: Dict[str, Check] = {
    c.name: c
    for c in (
        Check("master_inequality", check_master_inequality, 1e-8),
        Check("k_identity", check_k_identity, 1e-8),
        Check("qfi_commuting", check_qfi_commuting, 1.0),
        Check("qfi_decomposition", check_qfi_decomposition, 1e-6),
        Check("hmf_round_trip", check_hmf_round_trip, 1e-9),
        Check("zero_coupling", check_zero_coupling, 1.0),
        Check("covariance_expansion", check_covariance_expansion, 1e-7),
        Check("log_ratio", check_log_ratio, 0.0, batch=True),
        Check("skew_properties", check_skew_properties, 1e-9),
        Check("thermo_consistency", check_thermo_consistency, 1.0),
        Check("dual_path_oracles", check_dual_path_oracles, 1.0),
    )
}


# -----------------------------
# Suite
# -----------------------------


class CheckSummary(BaseModel):
    name: str
    runs: int = 0
    passed: int = 0
    failed: int = 0
    worst: float = 0.0
    limit: float
    errors: List[str] = Field(default_factory=list)


class SuiteSummary(BaseModel):
    seed: int
    trials: int
    mutations: List[str]
    checks: Dict[str, CheckSummary]

    @property
    def ok(self) -> bool:
        return all(c.failed == 0 for c in self.checks.values())


def _validate_mutations(mutations: Iterable[str]) -> FrozenSet[str]:
    muts = frozenset(mutations)
    unknown = muts - MUTATIONS
    if unknown:
        raise ConfigError(f"Unknown mutation(s) {sorted(unknown)}. Known: {sorted(MUTATIONS)}")
    return muts


def verify_suite(
    seed: int,
    trials: int,
    mutations: Iterable[str] = (),
    only: Iterable[str] | None = None,
    tol: Tolerances | None = None,
    tol_scale: float = 1.0,
) -> SuiteSummary:
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    tol = tol or DEFAULT_TOLERANCES
    muts = _validate_mutations(mutations)
    names = list(CHECKS) if only is None else list(only)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigError(f"Unknown check(s) {unknown}. Known: {sorted(CHECKS)}")

    out: Dict[str, CheckSummary] = {}
    for index, name in enumerate(CHECKS):
        if name not in names:
            continue
        check = CHECKS[name]
        summary = CheckSummary(name=name, limit=check.limit * tol_scale)
        for trial in range(1 if check.batch else trials):
            rng = make_rng(seed, index, trial)
            summary.runs += 1
            try:
                residual = float(check.fn(rng, tol, muts))
            except (ToolkitError, ArithmeticError, ValueError) as e:
                summary.failed += 1
                summary.errors.append(f"trial {trial}: {type(e).__name__}: {e}")
                continue
            if math.isfinite(residual) and residual <= summary.limit:
                summary.passed += 1
            else:
                summary.failed += 1
                logger.warning("%s trial %d residual %.3e > %.3e", name, trial, residual, summary.limit)
            if not math.isfinite(residual) or residual > summary.worst:
                summary.worst = residual
        out[name] = summary
        logger.info("%s: %d/%d passed (worst %.3e)", name, summary.passed, summary.runs, summary.worst)

    return SuiteSummary(seed=seed, trials=trials, mutations=sorted(muts), checks=out)
