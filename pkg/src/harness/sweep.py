"""
Parameter sweeps over (beta, g, mu) grids.

Points run concurrently through joblib; each point is isolated, so a failure
becomes an error record and the sweep continues. Records come back in grid
order.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import time
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, Field, ValidationError as PydValidationError, field_validator

from src.common.errors import ConfigError, ToolkitError
from src.common.settings import Tolerances
from src.ensembles.bounds import evaluate_spec
from src.ensembles.specs import canonical_spec, grand_canonical_spec
from src.metrology.report import UncertaintyReport

from .models import build_model, number_charge
from .oracles import hmf_round_trip_residual

logger = logging.getLogger(__name__)


class ModelRef(BaseModel):
    kind: Literal["two_qubit", "spin_chain", "hopping_dimer"]
    params: Dict[str, Any] = Field(default_factory=dict)


class SweepConfig(BaseModel):
    model: ModelRef
    beta: List[float] = Field(min_length=1)
    g: List[float] = Field(min_length=1)
    mu: List[float] = Field(default_factory=lambda: [0.0], min_length=1)
    ensemble: Literal["canonical", "grand_canonical"] = "canonical"
    output: Optional[str] = None
    format: Literal["json", "csv"] = "json"
    tol_scale: float = Field(default=1.0, gt=0)
    tolerances: Dict[str, float] = Field(default_factory=dict)

    @field_validator("beta", "g", "mu")
    @classmethod
    def _finite(cls, values: List[float]) -> List[float]:
        bad = [v for v in values if not math.isfinite(v)]
        if bad:
            raise ValueError(f"grid values must be finite, got {bad}")
        return values

    def resolved_tolerances(self) -> Tolerances:
        try:
            base = Tolerances(**self.tolerances)
        except PydValidationError as e:
            raise ConfigError(f"Invalid tolerance overrides: {e}") from e
        return base.scaled(self.tol_scale) if self.tol_scale != 1.0 else base

    def points(self) -> List[Dict[str, float]]:
        mus = self.mu if self.ensemble == "grand_canonical" else [0.0]
        return [
            {"beta": b, "g": g, "mu": m} for b, g, m in itertools.product(self.beta, self.g, mus)
        ]

    def config_hash(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()[:16]


def load_sweep_config(path: str | Path) -> SweepConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read sweep config '{path}': {e}") from e
    try:
        cfg = SweepConfig.model_validate(raw)
    except PydValidationError as e:
        raise ConfigError(f"Invalid sweep config: {e}") from e
    if cfg.ensemble == "grand_canonical" and cfg.model.kind != "hopping_dimer":
        raise ConfigError("grand_canonical sweeps need a model with a number charge (hopping_dimer)")
    return cfg


class RunRecord(BaseModel):
    config_hash: str
    index: int
    point: Dict[str, float]
    reports: List[UncertaintyReport] = Field(default_factory=list)
    residuals: Dict[str, float] = Field(default_factory=dict)
    tolerances: Dict[str, float] = Field(default_factory=dict)
    error: Optional[str] = None
    wall_time: Optional[float] = None


def run_point(
    cfg: SweepConfig, index: int, point: Dict[str, float], timings: bool = False
) -> RunRecord:
    started = time.perf_counter()
    record = RunRecord(config_hash=cfg.config_hash(), index=index, point=point)
    tol = cfg.resolved_tolerances()
    record.tolerances = tol.model_dump()
    try:
        model = build_model(cfg.model.kind, cfg.model.params).with_coupling(point["g"])
        # raises BetaZero for beta <= 0 before any report is built
        residuals = {"hmf_round_trip": hmf_round_trip_residual(model, point["beta"])}
        if cfg.ensemble == "grand_canonical":
            spec = grand_canonical_spec(model, point["beta"], point["mu"], number_charge())
        else:
            spec = canonical_spec(model, point["beta"])
        record.reports = evaluate_spec(spec, tol=tol)
        record.residuals = residuals
        for rep in record.reports:
            for name, value in rep.checks.items():
                record.residuals[f"p{rep.metadata.p}.{name}"] = value
    except (ToolkitError, ArithmeticError, ValueError) as e:
        logger.warning("sweep point %d %s failed: %s", index, point, e)
        record.error = f"{type(e).__name__}: {e}"
    if timings:
        record.wall_time = time.perf_counter() - started
    return record


def run_sweep(cfg: SweepConfig, jobs: int = 1, timings: bool = False) -> List[RunRecord]:
    points = cfg.points()
    logger.info("sweep %s: %d points on %d job(s)", cfg.config_hash(), len(points), jobs)
    return Parallel(n_jobs=jobs)(
        delayed(run_point)(cfg, i, pt, timings) for i, pt in enumerate(points)
    )


# ---------- output ----------


def records_to_json(records: List[RunRecord]) -> str:
    return json.dumps([r.model_dump(mode="json") for r in records], indent=2, sort_keys=True)


def records_to_frame(records: List[RunRecord]) -> pd.DataFrame:
    """One row per report; failed points keep a row with their error."""
    rows: List[Dict[str, Any]] = []
    for r in records:
        base = {"config_hash": r.config_hash, "index": r.index, **r.point, "error": r.error}
        if r.wall_time is not None:
            base["wall_time"] = r.wall_time
        if not r.reports:
            rows.append(base)
            continue
        for rep in r.reports:
            row = dict(base)
            row["p"] = rep.metadata.p
            row.update(rep.model_dump(exclude={"checks", "metadata"}))
            row.update({f"check.{k}": v for k, v in rep.checks.items()})
            row["clipped_mass"] = rep.metadata.clipped_mass
            rows.append(row)
    return pd.DataFrame(rows)


def write_records(records: List[RunRecord], path: str | Path, fmt: str = "json") -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        records_to_frame(records).to_csv(out, index=False)
    else:
        out.write_text(records_to_json(records), encoding="utf-8")
    return out
