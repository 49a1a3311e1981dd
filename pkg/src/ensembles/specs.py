"""
Ensemble specifications: which Lagrange coefficients are in play and which
charges they multiply.

Coefficient vectors:
  canonical        (beta,)
  grand_canonical  (beta, -beta mu)
  multi_lagrange   (beta, -beta mu_1, -beta mu_2, -beta mu_3)

The extra charges are given as a system part (acting on S) plus an optional
environment part; the total-space charge is I = I_S (x) 1 + 1 (x) I_E and
Z_E uses the environment part.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, Field, ValidationError as PydValidationError

from src.common.errors import ConfigError, ToolkitError
from src.meanforce.composite import (
    ChargedComposite,
    CompositeModel,
    CompositeModelPayload,
    charged_composite,
    composite_model_from_payload,
)
from src.opalgebra.families import OperatorFamily, constant_family
from src.opalgebra.operators import HermitianOperator, OperatorPayload, operator_from_payload

logger = logging.getLogger(__name__)

EnsembleKind = Literal["canonical", "grand_canonical", "multi_lagrange"]
MultiForm = Literal["translational", "magnetic", "rotational"]

EXTRA_ARITY: Dict[str, int] = {"canonical": 0, "grand_canonical": 1, "multi_lagrange": 3}


class EnsembleSpecError(ToolkitError):
    pass


class MuZero(ToolkitError):
    pass


@dataclass(frozen=True)
class ExtraCharge:
    """
    A conserved charge beyond the energy.

    `effective` is the system-space family X*_i(lambda) used to split the
    potential sum; it defaults to the constant system part.
    """

    name: str
    system_op: HermitianOperator
    env_op: Optional[HermitianOperator] = None
    effective: Optional[OperatorFamily] = None


@dataclass(frozen=True)
class EnsembleSpec:
    kind: EnsembleKind
    model: CompositeModel
    beta: float
    mu: float = 0.0
    mus: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    extra_charges: Tuple[ExtraCharge, ...] = field(default_factory=tuple)
    form: Optional[MultiForm] = None
    label: str = ""

    @property
    def param_count(self) -> int:
        return 1 + EXTRA_ARITY[self.kind]

    @property
    def chemical(self) -> Tuple[float, ...]:
        """mu_i multiplying -beta in lambda_i, i >= 1."""
        if self.kind == "canonical":
            return ()
        if self.kind == "grand_canonical":
            return (self.mu,)
        return tuple(self.mus)

    def lambdas(self) -> List[float]:
        return [self.beta] + [-self.beta * m for m in self.chemical]


def validate_spec(spec: EnsembleSpec) -> EnsembleSpec:
    if spec.kind not in EXTRA_ARITY:
        raise EnsembleSpecError(f"Unknown ensemble kind '{spec.kind}'")
    if not (math.isfinite(spec.beta) and spec.beta > 0):
        raise EnsembleSpecError(f"beta must be finite and > 0, got {spec.beta}")
    want = EXTRA_ARITY[spec.kind]
    if len(spec.extra_charges) != want:
        raise EnsembleSpecError(
            f"{spec.kind} needs {want} extra charge(s), got {len(spec.extra_charges)}"
        )
    if any(not math.isfinite(m) for m in spec.chemical):
        raise EnsembleSpecError(f"Chemical-potential-like parameters must be finite: {spec.chemical}")
    d_s, d_e = spec.model.dim_S, spec.model.dim_E
    for ch in spec.extra_charges:
        if ch.system_op.dim != d_s:
            raise EnsembleSpecError(f"Charge '{ch.name}' has system dim {ch.system_op.dim}, expected {d_s}")
        if ch.env_op is not None and ch.env_op.dim != d_e:
            raise EnsembleSpecError(f"Charge '{ch.name}' has environment dim {ch.env_op.dim}, expected {d_e}")
        if ch.effective is not None and (
            ch.effective.dim != d_s or ch.effective.param_count != spec.param_count
        ):
            raise EnsembleSpecError(f"Effective family of '{ch.name}' has the wrong shape")
    return spec


def charged(spec: EnsembleSpec) -> ChargedComposite:
    model = spec.model
    totals = [model.H_SE]
    envs = [model.H_E]
    names = ["H"]
    for ch in spec.extra_charges:
        tot = model.system_op(ch.system_op)
        if ch.env_op is not None:
            tot = tot + model.env_op(ch.env_op)
            envs.append(ch.env_op)
        else:
            envs.append(0.0 * model.H_E)
        totals.append(tot)
        names.append(ch.name)
    return charged_composite(model, totals, envs, names)


def effective_families(spec: EnsembleSpec) -> List[OperatorFamily]:
    """X*_i for i >= 1."""
    return [
        ch.effective or constant_family(ch.system_op, spec.param_count, f"{ch.name}*")
        for ch in spec.extra_charges
    ]


# ---------- presets ----------


def canonical_spec(model: CompositeModel, beta: float, label: str = "") -> EnsembleSpec:
    return validate_spec(EnsembleSpec("canonical", model, beta, label=label or model.name))


def grand_canonical_spec(
    model: CompositeModel,
    beta: float,
    mu: float,
    number: ExtraCharge,
    label: str = "",
) -> EnsembleSpec:
    return validate_spec(
        EnsembleSpec(
            "grand_canonical", model, beta, mu=mu, extra_charges=(number,), label=label or model.name
        )
    )


def multi_lagrange_spec(
    model: CompositeModel,
    beta: float,
    mus: Sequence[float],
    charges: Sequence[ExtraCharge],
    form: Optional[MultiForm] = None,
    label: str = "",
) -> EnsembleSpec:
    if len(mus) != 3:
        raise EnsembleSpecError(f"multi_lagrange takes three coefficients mu_1..mu_3, got {len(mus)}")
    return validate_spec(
        EnsembleSpec(
            "multi_lagrange",
            model,
            beta,
            mus=(float(mus[0]), float(mus[1]), float(mus[2])),
            extra_charges=tuple(charges),
            form=form,
            label=label or model.name,
        )
    )


def _named(names: Sequence[str], ops: Sequence[HermitianOperator]) -> List[ExtraCharge]:
    if len(ops) != 3:
        raise EnsembleSpecError(f"Expected three component operators, got {len(ops)}")
    return [ExtraCharge(n, op) for n, op in zip(names, ops)]


def translational_spec(
    model: CompositeModel, beta: float, velocity: Sequence[float], momenta: Sequence[HermitianOperator]
) -> EnsembleSpec:
    """rho ~ exp(-beta H - sum_i lambda_i P_i) with lambda_i = -beta v_i."""
    return multi_lagrange_spec(
        model, beta, velocity, _named(("P_x", "P_y", "P_z"), momenta), "translational"
    )


def magnetic_spec(
    model: CompositeModel, beta: float, field_b: Sequence[float], moments: Sequence[HermitianOperator]
) -> EnsembleSpec:
    """rho ~ exp(-beta H_0 + beta B.M)."""
    return multi_lagrange_spec(
        model, beta, field_b, _named(("M_x", "M_y", "M_z"), moments), "magnetic"
    )


def rotational_spec(
    model: CompositeModel, beta: float, omega: Sequence[float], angular: Sequence[HermitianOperator]
) -> EnsembleSpec:
    """rho ~ exp(-beta H_0 + beta omega.J)."""
    return multi_lagrange_spec(
        model, beta, omega, _named(("J_x", "J_y", "J_z"), angular), "rotational"
    )


# ---------- JSON ----------


class ExtraChargePayload(BaseModel):
    name: str
    system: OperatorPayload
    env: Optional[OperatorPayload] = None


class CanonicalPayload(BaseModel):
    kind: Literal["canonical"]
    model: CompositeModelPayload
    beta: float
    label: str = ""


class GrandCanonicalPayload(BaseModel):
    kind: Literal["grand_canonical"]
    model: CompositeModelPayload
    beta: float
    mu: float
    number: ExtraChargePayload
    label: str = ""


class MultiLagrangePayload(BaseModel):
    kind: Literal["multi_lagrange"]
    model: CompositeModelPayload
    beta: float
    mus: Tuple[float, float, float]
    charges: List[ExtraChargePayload] = Field(min_length=3, max_length=3)
    form: Optional[MultiForm] = None
    label: str = ""


class EnsemblePayload(BaseModel):
    spec: Annotated[
        Union[CanonicalPayload, GrandCanonicalPayload, MultiLagrangePayload],
        Field(discriminator="kind"),
    ]


def _extra(p: ExtraChargePayload) -> ExtraCharge:
    return ExtraCharge(
        p.name,
        operator_from_payload(p.system),
        operator_from_payload(p.env) if p.env is not None else None,
    )


def ensemble_spec_from_payload(raw: Dict) -> EnsembleSpec:
    try:
        cfg = EnsemblePayload.model_validate({"spec": raw}).spec
    except PydValidationError as e:
        raise ConfigError(f"Invalid ensemble spec: {e}") from e
    model = composite_model_from_payload(cfg.model.model_dump())
    if isinstance(cfg, CanonicalPayload):
        return canonical_spec(model, cfg.beta, cfg.label)
    if isinstance(cfg, GrandCanonicalPayload):
        return grand_canonical_spec(model, cfg.beta, cfg.mu, _extra(cfg.number), cfg.label)
    return multi_lagrange_spec(
        model, cfg.beta, cfg.mus, [_extra(c) for c in cfg.charges], cfg.form, cfg.label
    )


# ---------- run log ----------


def append_run_log(path: str | Path, record: BaseModel | Dict) -> None:
    """Append one JSON object per line."""
    line = record.model_dump_json() if isinstance(record, BaseModel) else json.dumps(record, sort_keys=True)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("a", encoding="utf-8") as fh:
        fh.write(line + "\n")
