from __future__ import annotations

import os

from pydantic import BaseModel, Field, ValidationError

from .errors import ConfigError


class Tolerances(BaseModel):
    """Numerical thresholds shared by every module."""

    model_config = {"frozen": True}

    # operator validation
    herm_tol: float = 1e-12
    trace_tol: float = 1e-10
    psd_clip: float = 1e-12
    commute_tol: float = 1e-10

    # finite differences (h = step * max(1, |lambda|))
    fd_step: float = 1e-5
    fd_step_second: float = 1e-4

    # spectral sums
    degenerate_tol: float = 1e-12
    qfi_pair_floor: float = 1e-12
    qfi_skipped_fraction: float = 0.10
    var_floor: float = 1e-14

    # quadratures
    quad_nodes: int = 64
    quad_tol: float = 1e-10
    quad_max_nodes: int = 4096
    wilcox_nodes: int = 32
    wilcox_tol: float = 1e-8
    wilcox_max_nodes: int = 1024

    # dual-path acceptance
    dual_path_rtol: float = 1e-5
    derivative_rtol: float = 1e-6
    expansion_commute_tol: float = 1e-8
    master_slack: float = 1e-8

    def scaled(self, factor: float) -> "Tolerances":
        """Scale acceptance thresholds; step sizes and node counts are left alone."""
        if factor <= 0:
            raise ConfigError(f"tol-scale must be positive, got {factor}")
        names = (
            "herm_tol",
            "trace_tol",
            "commute_tol",
            "quad_tol",
            "wilcox_tol",
            "dual_path_rtol",
            "derivative_rtol",
            "expansion_commute_tol",
            "master_slack",
        )
        return self.model_copy(update={n: getattr(self, n) * factor for n in names})


DEFAULT_TOLERANCES = Tolerances()


class Settings(BaseModel):
    k_boltzmann: float = Field(default=1.0, gt=0)
    jobs: int = Field(default=1, ge=1)
    log_level: str = "WARNING"
    tol_scale: float = Field(default=1.0, gt=0)
    tolerances: Tolerances = Field(default_factory=Tolerances)


def _env_int(name: str) -> int | None:
    raw = os.getenv(name, "").strip()
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"{name} must be an integer, got '{raw}'") from e


def _env_float(name: str) -> float | None:
    raw = os.getenv(name, "").strip()
    if not raw:
        return None
    try:
        return float(raw)
    except ValueError as e:
        raise ConfigError(f"{name} must be a number, got '{raw}'") from e


def load_settings(jobs: int | None = None, tol_scale: float = 1.0) -> Settings:
    """
    Build Settings from defaults, explicit arguments and environment.

    GGE_BOUNDS_JOBS overrides the `jobs` argument (the CLI --jobs flag).
    """
    values: dict = {}
    if jobs is not None:
        values["jobs"] = jobs
    env_jobs = _env_int("GGE_BOUNDS_JOBS")
    if env_jobs is not None:
        values["jobs"] = env_jobs
    env_k = _env_float("GGE_BOUNDS_K")
    if env_k is not None:
        values["k_boltzmann"] = env_k
    level = os.getenv("GGE_BOUNDS_LOG_LEVEL", "").strip()
    if level:
        values["log_level"] = level
    values["tol_scale"] = tol_scale
    values["tolerances"] = Tolerances().scaled(tol_scale) if tol_scale != 1.0 else Tolerances()
    try:
        return Settings(**values)
    except ValidationError as e:
        raise ConfigError(f"Invalid settings: {e}") from e
