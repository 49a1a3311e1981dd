"""
System + environment composites, the Hamiltonian of mean force and
generalized effective Gibbs states of the reduced system.

Layout is always (system, environment); the system factor varies slowest.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
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
    eig,
    identity,
    kron,
    logm_h,
    operator_from_payload,
    zero,
)
from src.opalgebra.states import (
    DensityMatrix,
    SubsystemLayout,
    exp_normalized,
    partial_trace_matrix,
    shifted_exp,
)

logger = logging.getLogger(__name__)

SYSTEM, ENVIRONMENT = 0, 1


class BetaZero(ToolkitError):
    pass


# ---------- composite model ----------


@dataclass(frozen=True)
class CompositeModel:
    H_S: HermitianOperator
    H_E: HermitianOperator
    H_int: HermitianOperator
    g: float
    layout: SubsystemLayout
    name: str = "composite"

    @property
    def dim_S(self) -> int:
        return self.layout.dims[SYSTEM]

    @property
    def dim_E(self) -> int:
        return self.layout.dims[ENVIRONMENT]

    @property
    def H_SE(self) -> HermitianOperator:
        return (
            kron(self.H_S, identity(self.dim_E))
            + kron(identity(self.dim_S), self.H_E)
            + self.g * self.H_int
        )

    def system_op(self, op: HermitianOperator) -> HermitianOperator:
        """op (x) 1_E."""
        return kron(op, identity(self.dim_E))

    def env_op(self, op: HermitianOperator) -> HermitianOperator:
        """1_S (x) op."""
        return kron(identity(self.dim_S), op)

    def with_coupling(self, g: float) -> "CompositeModel":
        return CompositeModel(self.H_S, self.H_E, self.H_int, float(g), self.layout, self.name)


def composite_model(
    H_S: HermitianOperator,
    H_E: HermitianOperator,
    H_int: HermitianOperator,
    g: float,
    name: str = "composite",
) -> CompositeModel:
    lay = SubsystemLayout(dims=(H_S.dim, H_E.dim))
    if H_int.dim != lay.total:
        raise DimMismatch(
            f"H_int has dim {H_int.dim}, expected {H_S.dim}*{H_E.dim} = {lay.total}"
        )
    if not math.isfinite(g):
        raise ConfigError(f"Coupling g must be finite, got {g}")
    return CompositeModel(H_S, H_E, H_int, float(g), lay, name)


class CompositeModelPayload(BaseModel):
    H_S: OperatorPayload
    H_E: OperatorPayload
    H_int: OperatorPayload
    g: float
    dims: Tuple[int, int]


def composite_model_from_payload(raw: Dict) -> CompositeModel:
    try:
        cfg = CompositeModelPayload.model_validate(raw)
    except PydValidationError as e:
        raise ConfigError(f"Invalid composite model: {e}") from e
    model = composite_model(
        operator_from_payload(cfg.H_S),
        operator_from_payload(cfg.H_E),
        operator_from_payload(cfg.H_int),
        cfg.g,
    )
    if tuple(model.layout.dims) != tuple(cfg.dims):
        raise ConfigError(f"dims {list(cfg.dims)} disagree with operator dims {list(model.layout.dims)}")
    return model


# ---------- canonical quantities ----------


@dataclass(frozen=True)
class CompositeGibbs:
    rho: DensityMatrix
    log_z: float

    @property
    def Z(self) -> float:
        return math.exp(self.log_z)


def _log_trace_exp(op: HermitianOperator) -> float:
    x = eig(op).eigenvalues
    s = float(x[0])
    return float(np.log(np.sum(np.exp(-(x - s)))) - s)


def composite_gibbs(model: CompositeModel, beta: float) -> CompositeGibbs:
    if beta < 0:
        raise BetaZero(f"beta must be non-negative, got {beta}")
    rho, log_z = exp_normalized(beta * model.H_SE)
    return CompositeGibbs(rho=rho, log_z=log_z)


def _log_tr_env(x: HermitianOperator, lay: SubsystemLayout) -> HermitianOperator:
    """ln tr_E exp(-x), kept finite through the spectral shift."""
    m, s = shifted_exp(x)
    t = _trusted(partial_trace_matrix(m.matrix, lay, SYSTEM))
    return logm_h(t) - s * identity(t.dim)


def hmf(model: CompositeModel, beta: float) -> HermitianOperator:
    """H*_S = -(1/beta) ln(tr_E e^{-beta H_SE} / tr_E e^{-beta H_E})."""
    if beta <= 0:
        raise BetaZero(f"The Hamiltonian of mean force needs beta > 0, got {beta}")
    log_tr = _log_tr_env(beta * model.H_SE, model.layout)
    log_z_e = _log_trace_exp(beta * model.H_E)
    return (-1.0 / beta) * (log_tr - log_z_e * identity(model.dim_S))


# ---------- generalized charges ----------


@dataclass(frozen=True)
class ChargedComposite:
    """
    Total-space charges I_k, each paired with the environment charge R_k that
    defines Z_E = tr exp(-sum_k lambda_k R_k) for the same coefficients.
    """

    model: CompositeModel
    total_charges: Tuple[HermitianOperator, ...]
    env_charges: Tuple[HermitianOperator, ...]
    names: Tuple[str, ...]

    @property
    def param_count(self) -> int:
        return len(self.total_charges)

    @property
    def layout(self) -> SubsystemLayout:
        return self.model.layout

    def total_sum(self, lambdas: Sequence[float]) -> HermitianOperator:
        return _weighted(self.total_charges, lambdas)

    def env_sum(self, lambdas: Sequence[float]) -> HermitianOperator:
        return _weighted(self.env_charges, lambdas)


def _weighted(ops: Sequence[HermitianOperator], lambdas: Sequence[float]) -> HermitianOperator:
    lam = np.asarray(lambdas, dtype=float)
    if lam.shape != (len(ops),):
        raise DimMismatch(f"Expected {len(ops)} Lagrange coefficients, got shape {lam.shape}")
    return _trusted(np.tensordot(lam, np.stack([o.matrix for o in ops]), axes=1))


def charged_composite(
    model: CompositeModel,
    total_charges: Sequence[HermitianOperator],
    env_charges: Sequence[HermitianOperator],
    names: Sequence[str] | None = None,
) -> ChargedComposite:
    if len(total_charges) != len(env_charges) or not total_charges:
        raise DimMismatch("Each total-space charge needs a matching environment charge")
    for op in total_charges:
        if op.dim != model.layout.total:
            raise DimMismatch(f"Total-space charge has dim {op.dim}, expected {model.layout.total}")
    for op in env_charges:
        if op.dim != model.dim_E:
            raise DimMismatch(f"Environment charge has dim {op.dim}, expected {model.dim_E}")
    labels = tuple(names) if names else tuple(f"I_{k}" for k in range(len(total_charges)))
    return ChargedComposite(model, tuple(total_charges), tuple(env_charges), labels)


def canonical_charges(model: CompositeModel) -> ChargedComposite:
    """lambda = (beta,), I = (H_SE,), R = (H_E,)."""
    return charged_composite(model, [model.H_SE], [model.H_E], ["H"])


def grand_canonical_charges(
    model: CompositeModel,
    number_total: HermitianOperator,
    number_env: HermitianOperator | None = None,
    extra: Sequence[Tuple[str, HermitianOperator, HermitianOperator | None]] = (),
) -> ChargedComposite:
    """
    lambda = (beta, -beta mu, ...). Environment parts default to zero when the
    charge lives on the system only.
    """
    totals: List[HermitianOperator] = [model.H_SE, number_total]
    envs: List[HermitianOperator] = [model.H_E, number_env or zero(model.dim_E)]
    names = ["H", "N"]
    for name, tot, env in extra:
        totals.append(tot)
        envs.append(env or zero(model.dim_E))
        names.append(name)
    return charged_composite(model, totals, envs, names)


# ---------- effective Gibbs state ----------


def effective_potential_sum(charged: ChargedComposite, lambdas: Sequence[float]) -> HermitianOperator:
    """sum_i lambda_i A*_i = -ln(tr_E exp(-sum_k lambda_k I_k) / Z_E)."""
    log_tr = _log_tr_env(charged.total_sum(lambdas), charged.layout)
    log_z_e = _log_trace_exp(charged.env_sum(lambdas))
    return -(log_tr - log_z_e * identity(charged.model.dim_S))


def log_partition_star(charged: ChargedComposite, lambdas: Sequence[float]) -> float:
    """ln Z*_S = ln Z_SE - ln Z_E."""
    return _log_trace_exp(charged.total_sum(lambdas)) - _log_trace_exp(charged.env_sum(lambdas))


def potential_family(charged: ChargedComposite) -> OperatorFamily:
    return OperatorFamily(
        lambda lam: effective_potential_sum(charged, lam),
        charged.model.dim_S,
        charged.param_count,
        f"{charged.model.name}:potential_sum",
    )


def reduced_state_family(charged: ChargedComposite) -> OperatorFamily:
    """lambda -> tr_E rho_SE(lambda), computed on the full space."""

    def _eval(lam: np.ndarray) -> HermitianOperator:
        rho, _ = exp_normalized(charged.total_sum(lam))
        return _trusted(partial_trace_matrix(rho.matrix, charged.layout, SYSTEM))

    return OperatorFamily(
        _eval, charged.model.dim_S, charged.param_count, f"{charged.model.name}:rho_S"
    )


@dataclass(frozen=True)
class EffectiveGibbs:
    rho_S: DensityMatrix
    log_z_star: float
    log_z_se: float
    log_z_e: float
    potential: HermitianOperator
    potential_sum: OperatorFamily
    lambdas: Tuple[float, ...]

    @property
    def Z_star(self) -> float:
        return math.exp(self.log_z_star)


def effective_gibbs(
    charged: ChargedComposite, lambdas: Sequence[float], tol: Tolerances | None = None
) -> EffectiveGibbs:
    tol = tol or DEFAULT_TOLERANCES
    potential = effective_potential_sum(charged, lambdas)
    rho_s, log_z_star = exp_normalized(potential)
    log_z_se = _log_trace_exp(charged.total_sum(lambdas))
    log_z_e = _log_trace_exp(charged.env_sum(lambdas))
    drift = abs(log_z_star - (log_z_se - log_z_e))
    if drift > 1e-9 * max(1.0, abs(log_z_star)):
        logger.warning("ln Z*_S differs from ln Z_SE - ln Z_E by %.3e", drift)
    return EffectiveGibbs(
        rho_S=rho_s,
        log_z_star=log_z_star,
        log_z_se=log_z_se,
        log_z_e=log_z_e,
        potential=potential,
        potential_sum=potential_family(charged),
        lambdas=tuple(float(x) for x in lambdas),
    )
