"""
Uncertainty reports: the master inequality F <= Var - Q = K and the lower
bounds it puts on the estimation error of one Lagrange coefficient.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.common.errors import ToolkitError
from src.common.settings import DEFAULT_TOLERANCES, Tolerances
from src.meanforce.derivatives import DependencyMap, modified_energy_operator
from src.opalgebra.families import OperatorFamily
from src.opalgebra.operators import DomainError, HermitianOperator, commutator_norm
from src.opalgebra.states import (
    DensityMatrix,
    clipped_spectrum,
    covariance,
    exp_normalized,
    expectation,
    variance,
)

from .measures import (
    classical_k_avg,
    classical_k_quadrature,
    classical_k_spectral,
    qfi_spectral,
    wyd_skew_avg,
    wyd_skew_quadrature,
    xi_term,
)

logger = logging.getLogger(__name__)


class InfiniteBound(ToolkitError):
    pass


class ConditionViolated(ToolkitError):
    def __init__(self, message: str, result: "KExpansion"):
        super().__init__(message)
        self.result = result


def operator_hash(*ops: HermitianOperator) -> str:
    h = hashlib.sha256()
    for op in ops:
        h.update(np.ascontiguousarray(op.matrix).tobytes())
    return h.hexdigest()[:16]


def cramer_rao_bound(fisher: float, n_shots: int = 1, tol: Tolerances | None = None) -> float:
    """Delta lambda >= 1 / sqrt(n F); F is floored at var_floor."""
    tol = tol or DEFAULT_TOLERANCES
    if n_shots < 1:
        raise DomainError(f"n_shots must be >= 1, got {n_shots}")
    return 1.0 / math.sqrt(max(n_shots * fisher, tol.var_floor))


# ---------- report ----------


class ReportMetadata(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    model_hash: Optional[str] = None
    label: Optional[str] = None
    lambdas: List[float]
    p: int
    clipped_mass: float
    tolerances: Dict[str, Any]


class UncertaintyReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    var: float
    q: float
    k: float
    xi: float
    fisher: float
    phi: float
    bound_tight: float
    bound_loose: float
    bound_cramer_rao: float
    infinite_bound: bool = False
    checks: Dict[str, float] = Field(default_factory=dict)
    metadata: ReportMetadata

    def invariant_violations(self, tol: Tolerances | None = None) -> List[str]:
        tol = tol or DEFAULT_TOLERANCES
        out: List[str] = []
        if self.q < -1e-10 or self.q > self.var + 1e-10:
            out.append(f"var >= q >= 0 broken: var={self.var:.6g} q={self.q:.6g}")
        if abs(self.var - self.q - self.k) > 1e-8 * max(1.0, self.var):
            out.append(f"var - q != k: {self.var - self.q:.6g} vs {self.k:.6g}")
        if self.fisher > self.var - self.q + tol.master_slack:
            out.append(f"master inequality broken: F={self.fisher:.6g} > var-q={self.var - self.q:.6g}")
        if self.bound_tight < self.bound_loose * (1 - 1e-12):
            out.append(f"bound_tight {self.bound_tight:.6g} < bound_loose {self.bound_loose:.6g}")
        return out


def master_inequality_report(
    rho_S: DensityMatrix,
    e_star: HermitianOperator,
    rho_family: OperatorFamily,
    p: int,
    lambdas: Sequence[float],
    deps: DependencyMap | None = None,
    strict: bool = False,
    oracles: bool = True,
    model_hash: str | None = None,
    label: str | None = None,
    tol: Tolerances | None = None,
) -> UncertaintyReport:
    """
    Evaluate Var, Q, K, Xi, F and Phi for E*_S in rho_S and the bounds

        Delta lambda_p >= 1/sqrt(F) >= 1/sqrt(Var - Q) >= 1/sqrt(Var).

    rho_family must reproduce rho_S at `lambdas`; F is taken from it along the
    same dependency direction used to build E*_S.
    """
    tol = tol or DEFAULT_TOLERANCES
    lam = np.asarray(lambdas, dtype=float)

    var = variance(rho_S, e_star)
    q = wyd_skew_avg(rho_S, e_star, tol)
    k = classical_k_avg(rho_S, e_star, tol)
    xi = xi_term(rho_S, e_star, tol)
    phi = expectation(rho_S, e_star)
    fisher = qfi_spectral(rho_family, p, lam, deps, tol).value

    gap = var - q
    infinite = gap < tol.var_floor
    if infinite:
        msg = f"Var - Q = {gap:.3e} is below {tol.var_floor}: lambda_{p} is not estimable"
        if strict:
            raise InfiniteBound(msg)
        logger.info(msg)

    checks: Dict[str, float] = {
        "master_gap": gap - fisher,
        "qfi_decomposition": abs(fisher - (var + xi)) / max(1.0, fisher),
        "k_spectral": abs(k - classical_k_spectral(rho_S, e_star, tol)),
        "family_state": float(np.max(np.abs(rho_family(lam).matrix - rho_S.matrix))),
    }
    if oracles:
        checks["q_quadrature"] = abs(q - wyd_skew_quadrature(rho_S, e_star, tol))
        checks["k_quadrature"] = abs(k - classical_k_quadrature(rho_S, e_star, tol))

    report = UncertaintyReport(
        var=var,
        q=q,
        k=k,
        xi=xi,
        fisher=fisher,
        phi=phi,
        bound_tight=1.0 / math.sqrt(max(gap, tol.var_floor)),
        bound_loose=1.0 / math.sqrt(max(var, tol.var_floor)),
        bound_cramer_rao=cramer_rao_bound(fisher, 1, tol),
        infinite_bound=infinite,
        checks=checks,
        metadata=ReportMetadata(
            model_hash=model_hash,
            label=label,
            lambdas=lam.tolist(),
            p=p,
            clipped_mass=clipped_spectrum(rho_S, tol).clipped_mass,
            tolerances=tol.model_dump(),
        ),
    )
    for problem in report.invariant_violations(tol):
        logger.warning("%s: %s", label or "report", problem)
    return report


# ---------- exponential state families ----------


def exponential_state_family(op_family: OperatorFamily) -> OperatorFamily:
    """theta -> e^{-O_theta} / tr e^{-O_theta}."""
    return OperatorFamily(
        lambda lam: exp_normalized(op_family(lam))[0].op,
        op_family.dim,
        op_family.param_count,
        f"exp[{op_family.name}]",
    )


def exponential_family_report(
    op_family: OperatorFamily,
    p: int,
    lambdas: Sequence[float],
    deps: DependencyMap | None = None,
    strict: bool = False,
    tol: Tolerances | None = None,
) -> UncertaintyReport:
    """F(theta) <= K(rho_theta, B_theta) with B_theta = d O_theta / d theta."""
    b = modified_energy_operator(op_family, p, lambdas, deps, tol)
    rho, _ = exp_normalized(op_family(lambdas))
    return master_inequality_report(
        rho,
        b,
        exponential_state_family(op_family),
        p,
        lambdas,
        deps,
        strict=strict,
        label=op_family.name,
        tol=tol,
    )


# ---------- covariance expansion of K ----------


@dataclass(frozen=True)
class KExpansionParts:
    """
    first: d/d lambda_p [lambda_p A*_p]
    terms: i -> A*_i + lambda_i dA*_i/d lambda_i for every co-varying i != p
    """

    first: HermitianOperator
    terms: Dict[int, HermitianOperator] = field(default_factory=dict)


class KExpansion(BaseModel):
    expanded: float
    direct: float
    condition_ok: bool
    max_commutator: float

    @property
    def relative_gap(self) -> float:
        return abs(self.expanded - self.direct) / max(abs(self.direct), 1e-300)


def k_general_expansion(
    rho_S: DensityMatrix,
    parts: KExpansionParts,
    deps: DependencyMap,
    strict: bool = False,
    tol: Tolerances | None = None,
) -> KExpansion:
    """
    K(rho, E*) with E* = first + sum_i s_i X_i expanded as

        K(rho, first) + 2 sum_i s_i Cov(first, X_i) + sum_ij s_i s_j Cov(X_i, X_j)

    where s_i are the dependency slopes. Exact when every X_i commutes with rho.
    The slopes may include deps.p itself when a caller regroups E* so that
    `first` is not the p-th term.
    """
    tol = tol or DEFAULT_TOLERANCES
    slopes = deps.slopes()
    missing = set(slopes) - set(parts.terms)
    if missing:
        raise DomainError(f"No expansion term supplied for dependent index(es) {sorted(missing)}")
    idx = sorted(slopes)
    xs = [parts.terms[i] for i in idx]
    s = np.array([slopes[i] for i in idx])

    expanded = classical_k_avg(rho_S, parts.first, tol)
    for si, xi_op in zip(s, xs):
        expanded += 2.0 * si * covariance(rho_S, parts.first, xi_op)
    for a, xa in zip(s, xs):
        for b, xb in zip(s, xs):
            expanded += a * b * covariance(rho_S, xa, xb)

    e_star = parts.first
    for si, xi_op in zip(s, xs):
        e_star = e_star + float(si) * xi_op
    direct = classical_k_avg(rho_S, e_star, tol)

    active = [x for x, si in zip(xs, s) if si != 0.0]
    comm = max((commutator_norm(x, rho_S.op) for x in active), default=0.0)
    result = KExpansion(
        expanded=float(expanded),
        direct=direct,
        condition_ok=comm <= tol.expansion_commute_tol,
        max_commutator=comm,
    )
    if not result.condition_ok:
        msg = f"expansion terms fail to commute with rho ({comm:.3e}); K expansion is not exact"
        if strict:
            raise ConditionViolated(msg, result)
        logger.warning(msg)
    return result
