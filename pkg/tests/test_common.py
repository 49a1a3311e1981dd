import logging

import pytest
from pydantic import ValidationError

from src.common.errors import ConfigError, ToolkitError
from src.common.log import configure_logging
from src.common.settings import DEFAULT_TOLERANCES, Tolerances, load_settings


def test_config_error_is_a_toolkit_error():
    assert issubclass(ConfigError, ToolkitError)


def test_tolerances_scale_thresholds_only():
    scaled = DEFAULT_TOLERANCES.scaled(10.0)
    assert scaled.herm_tol == pytest.approx(10 * DEFAULT_TOLERANCES.herm_tol)
    assert scaled.fd_step == DEFAULT_TOLERANCES.fd_step
    assert scaled.quad_nodes == DEFAULT_TOLERANCES.quad_nodes
    with pytest.raises(ConfigError):
        DEFAULT_TOLERANCES.scaled(0.0)


def test_tolerances_are_frozen():
    with pytest.raises(ValidationError):
        Tolerances().herm_tol = 1.0  # type: ignore[misc]


def test_env_overrides_jobs(monkeypatch):
    monkeypatch.delenv("GGE_BOUNDS_JOBS", raising=False)
    assert load_settings(jobs=3).jobs == 3
    monkeypatch.setenv("GGE_BOUNDS_JOBS", "5")
    assert load_settings(jobs=3).jobs == 5
    monkeypatch.setenv("GGE_BOUNDS_JOBS", "many")
    with pytest.raises(ConfigError):
        load_settings()
    monkeypatch.setenv("GGE_BOUNDS_JOBS", "0")
    with pytest.raises(ConfigError):
        load_settings()


def test_k_boltzmann_from_env(monkeypatch):
    monkeypatch.setenv("GGE_BOUNDS_K", "2.5")
    assert load_settings().k_boltzmann == 2.5


def test_tol_scale_reaches_settings():
    assert load_settings(tol_scale=2.0).tolerances.trace_tol == pytest.approx(2e-10)
    assert load_settings(tol_scale=2.0).tol_scale == 2.0
    assert load_settings().tol_scale == 1.0


def test_configure_logging_level(monkeypatch):
    monkeypatch.delenv("GGE_BOUNDS_LOG_LEVEL", raising=False)
    configure_logging("debug")
    assert logging.getLogger().level == logging.DEBUG
    configure_logging()
    assert logging.getLogger().level == logging.WARNING
