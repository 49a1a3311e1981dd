"""
Generalized Gibbs ensembles rho = exp(-sum_i lambda_i A_i) / Z over commuting charges.

The partition function is always handled as ln Z computed from a shifted
spectrum, so large Lagrange coefficients do not overflow the exponential.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError as PydValidationError

from src.common.errors import ConfigError, ToolkitError
from src.common.settings import DEFAULT_TOLERANCES, Tolerances
from src.opalgebra.families import OperatorFamily
from src.opalgebra.operators import (
    DimMismatch,
    HermitianOperator,
    OperatorPayload,
    _trusted,
    commutator_norm,
    eig,
    operator_from_payload,
)
from src.opalgebra.states import (
    DensityMatrix,
    covariance,
    exp_normalized,
    expectation,
    variance,
    von_neumann_entropy,
)

logger = logging.getLogger(__name__)

# ln of the largest / smallest positive doubles
_LN_MAX = math.log(np.finfo(float).max)
_LN_MIN = math.log(np.finfo(float).tiny)


class NonCommutingCharges(ToolkitError):
    pass


class NumericalOverflow(ToolkitError):
    pass


class IndexOutOfRange(ToolkitError):
    pass


class SingularSusceptibility(ToolkitError):
    pass


# -----------------------------
# Charge sets
# -----------------------------


@dataclass(frozen=True)
class ChargeSet:
    lambdas: Tuple[float, ...]
    operators: Tuple[HermitianOperator, ...]
    commute_tol: float = DEFAULT_TOLERANCES.commute_tol

    @property
    def dim(self) -> int:
        return self.operators[0].dim

    def __len__(self) -> int:
        return len(self.operators)

    def weighted_sum(self, lambdas: Sequence[float] | None = None) -> HermitianOperator:
        lam = self.lambdas if lambdas is None else tuple(lambdas)
        mats = np.stack([a.matrix for a in self.operators])
        return _trusted(np.tensordot(np.asarray(lam, dtype=float), mats, axes=1))

    def check_index(self, i: int) -> None:
        if not 0 <= i < len(self.operators):
            raise IndexOutOfRange(f"Charge index {i} outside 0..{len(self.operators) - 1}")


def charge_set(
    charges: Sequence[Tuple[float, HermitianOperator]], tol: Tolerances | None = None
) -> ChargeSet:
    tol = tol or DEFAULT_TOLERANCES
    if not charges:
        raise DimMismatch("A charge set needs at least one charge")
    lambdas = tuple(float(lam) for lam, _ in charges)
    ops = tuple(op for _, op in charges)
    if any(not math.isfinite(x) for x in lambdas):
        raise ConfigError(f"Lagrange coefficients must be finite, got {list(lambdas)}")
    dims = {op.dim for op in ops}
    if len(dims) != 1:
        raise DimMismatch(f"Charges must share one dimension, got {sorted(dims)}")
    for i in range(len(ops)):
        for j in range(i + 1, len(ops)):
            c = commutator_norm(ops[i], ops[j])
            if c > tol.commute_tol:
                raise NonCommutingCharges(f"||[A_{i}, A_{j}]||_max = {c:.3e} > {tol.commute_tol}")
    return ChargeSet(lambdas=lambdas, operators=ops, commute_tol=tol.commute_tol)


def with_lambdas(cs: ChargeSet, lambdas: Sequence[float]) -> ChargeSet:
    lam = tuple(float(x) for x in lambdas)
    if len(lam) != len(cs):
        raise DimMismatch(f"Expected {len(cs)} Lagrange coefficients, got {len(lam)}")
    return replace(cs, lambdas=lam)


# ---------- JSON ----------


class ChargePayload(BaseModel):
    lambda_: float = Field(alias="lambda")
    op: OperatorPayload


class GGEConfig(BaseModel):
    charges: List[ChargePayload] = Field(min_length=1)


def charge_set_from_payload(raw: Dict, tol: Tolerances | None = None) -> ChargeSet:
    try:
        cfg = GGEConfig.model_validate(raw)
    except PydValidationError as e:
        raise ConfigError(f"Invalid GGE config: {e}") from e
    return charge_set([(c.lambda_, operator_from_payload(c.op)) for c in cfg.charges], tol)


# -----------------------------
# States
# -----------------------------


@dataclass(frozen=True)
class GGEState:
    charge_set: ChargeSet
    log_z: float
    rho: DensityMatrix
    G: HermitianOperator

    @property
    def Z(self) -> float:
        return math.exp(self.log_z)

    @property
    def lambdas(self) -> np.ndarray:
        return np.asarray(self.charge_set.lambdas, dtype=float)


def _checked_log_z(log_z: float) -> float:
    if not _LN_MIN < log_z < _LN_MAX:
        raise NumericalOverflow(f"ln Z = {log_z:.6g} is outside the representable range of Z")
    return log_z


def log_partition(cs: ChargeSet, lambdas: Sequence[float] | None = None) -> float:
    """ln tr exp(-sum_i lambda_i A_i), evaluated on a shifted spectrum."""
    x = eig(cs.weighted_sum(lambdas)).eigenvalues
    s = float(x[0])
    return float(np.log(np.sum(np.exp(-(x - s)))) - s)


def build_gge(cs: ChargeSet) -> GGEState:
    rho, log_z = exp_normalized(cs.weighted_sum())
    _checked_log_z(log_z)
    x = cs.weighted_sum().matrix
    G = _trusted(-x - log_z * np.eye(cs.dim))
    return GGEState(charge_set=cs, log_z=log_z, rho=rho, G=G)


def state_family(cs: ChargeSet) -> OperatorFamily:
    """lambda -> rho(lambda) for a fixed set of charges."""

    def _eval(lam: np.ndarray) -> HermitianOperator:
        return exp_normalized(cs.weighted_sum(lam))[0].op

    return OperatorFamily(_eval, cs.dim, len(cs), "gge_state")


# -----------------------------
# Thermodynamics
# -----------------------------


def _step(tol: Tolerances, lam: float, second: bool = False) -> float:
    base = tol.fd_step_second if second else tol.fd_step
    return base * max(1.0, abs(lam))


def mean_charge(state: GGEState, i: int) -> float:
    state.charge_set.check_index(i)
    return expectation(state.rho, state.charge_set.operators[i])


def mean_charge_from_partition(cs: ChargeSet, i: int, tol: Tolerances | None = None) -> float:
    """-d ln Z / d lambda_i by central difference."""
    tol = tol or DEFAULT_TOLERANCES
    cs.check_index(i)
    lam = np.asarray(cs.lambdas, dtype=float)
    h = _step(tol, lam[i])
    e = np.zeros_like(lam)
    e[i] = h
    return -(log_partition(cs, lam + e) - log_partition(cs, lam - e)) / (2 * h)


def charge_covariance(state: GGEState, i: int, j: int) -> float:
    cs = state.charge_set
    cs.check_index(i)
    cs.check_index(j)
    return covariance(state.rho, cs.operators[i], cs.operators[j])


def log_partition_hessian(cs: ChargeSet, i: int, j: int, tol: Tolerances | None = None) -> float:
    tol = tol or DEFAULT_TOLERANCES
    cs.check_index(i)
    cs.check_index(j)
    lam = np.asarray(cs.lambdas, dtype=float)
    f = lambda v: log_partition(cs, v)  # noqa: E731
    hi = _step(tol, lam[i], second=True)
    ei = np.zeros_like(lam)
    ei[i] = hi
    if i == j:
        return (f(lam + ei) - 2 * f(lam) + f(lam - ei)) / hi**2
    hj = _step(tol, lam[j], second=True)
    ej = np.zeros_like(lam)
    ej[j] = hj
    return (
        f(lam + ei + ej) - f(lam + ei - ej) - f(lam - ei + ej) + f(lam - ei - ej)
    ) / (4 * hi * hj)


def generator_variance(state: GGEState) -> float:
    """Var(rho, G) = sum_ij lambda_i lambda_j Cov(A_i, A_j)."""
    lam = state.lambdas
    n = len(lam)
    cov = np.array([[charge_covariance(state, i, j) for j in range(n)] for i in range(n)])
    return float(max(lam @ cov @ lam, 0.0))


def equilibrium_entropy(
    state: GGEState, k: float = 1.0, tol: Tolerances | None = None
) -> float:
    """S = k (ln Z + sum_i lambda_i <A_i>), cross-checked against -tr(rho ln rho)."""
    means = np.array([mean_charge(state, i) for i in range(len(state.charge_set))])
    s = state.log_z + float(state.lambdas @ means)
    s = max(s, 0.0)
    vn = von_neumann_entropy(state.rho, tol)
    if abs(s - vn) > 1e-8 * max(1.0, vn):
        logger.warning("entropy paths disagree: legendre=%.12g von_neumann=%.12g", s, vn)
    return k * s


def _entropy_at(cs: ChargeSet, lam: np.ndarray, k: float) -> float:
    return equilibrium_entropy(build_gge(with_lambdas(cs, lam)), k)


def _means_at(cs: ChargeSet, lam: np.ndarray) -> np.ndarray:
    st = build_gge(with_lambdas(cs, lam))
    return np.array([mean_charge(st, i) for i in range(len(cs))])


class LegendreReport(BaseModel):
    lambdas: List[float]
    lambda_estimates: List[float]
    residuals: List[float]
    dlnz_direction: List[float]
    dlnz_residual: float
    min_susceptibility: float

    @property
    def max_residual(self) -> float:
        return max(self.residuals + [self.dlnz_residual])


def legendre_check(
    state: GGEState, k: float = 1.0, seed: int = 0, tol: Tolerances | None = None
) -> LegendreReport:
    """
    Recover lambda_i = (1/k) dS/d<A_i> by inverting <A>(lambda) locally.

    dS/d<A> = J^{-T} grad_lambda S, where J_ab = d<A_a>/d lambda_b is minus the
    charge covariance matrix. Also checks d ln Z = -sum <A_i> d lambda_i along a
    seeded random direction.
    """
    tol = tol or DEFAULT_TOLERANCES
    cs = state.charge_set
    lam = state.lambdas
    n = len(lam)

    chi = np.array([[charge_covariance(state, i, j) for j in range(n)] for i in range(n)])
    chi_abs = np.abs(np.linalg.eigvalsh(chi))
    min_chi = float(np.min(chi_abs))
    if min_chi <= 1e-10 * max(1.0, float(np.max(chi_abs))):
        raise SingularSusceptibility(
            f"Charge susceptibility matrix is singular (smallest |eigenvalue| {min_chi:.3e})"
        )

    jac = np.zeros((n, n))
    grad_s = np.zeros(n)
    for b in range(n):
        e = np.zeros(n)
        h = _step(tol, lam[b])
        e[b] = h
        jac[:, b] = (_means_at(cs, lam + e) - _means_at(cs, lam - e)) / (2 * h)
        grad_s[b] = (_entropy_at(cs, lam + e, k) - _entropy_at(cs, lam - e, k)) / (2 * h)

    try:
        ds_dmean = np.linalg.solve(jac.T, grad_s)
    except np.linalg.LinAlgError as e:
        raise SingularSusceptibility(f"Cannot invert the mean-charge Jacobian: {e}") from e
    estimates = ds_dmean / k
    residuals = np.abs(lam - estimates)

    rng = np.random.Generator(np.random.Philox(seed))
    d = rng.standard_normal(n)
    d /= np.linalg.norm(d)
    h = tol.fd_step * max(1.0, float(np.max(np.abs(lam))))
    dlnz = (log_partition(cs, lam + h * d) - log_partition(cs, lam - h * d)) / (2 * h)
    means = np.array([mean_charge(state, i) for i in range(n)])
    dlnz_res = abs(dlnz + float(means @ d))

    logger.debug("legendre residuals %s, dlnZ residual %.3e", residuals.tolist(), dlnz_res)
    return LegendreReport(
        lambdas=lam.tolist(),
        lambda_estimates=estimates.tolist(),
        residuals=residuals.tolist(),
        dlnz_direction=d.tolist(),
        dlnz_residual=dlnz_res,
        min_susceptibility=min_chi,
    )


def variance_of_charge(state: GGEState, i: int) -> float:
    state.charge_set.check_index(i)
    return variance(state.rho, state.charge_set.operators[i])
