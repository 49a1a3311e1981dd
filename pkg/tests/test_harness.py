import json

import numpy as np
import pandas as pd
import pytest

from src.common.errors import ConfigError
from src.harness.cli import main
from src.harness.models import (
    NUMBER,
    DimTooLarge,
    build_model,
    model_hopping_dimer,
    model_spin_chain,
    model_two_qubit,
    sector_charge,
)
from src.harness.oracles import ORACLE_LIMITS, failed_oracles, oracle_residuals
from src.harness.rng import make_rng, random_commuting_charges, random_density_matrix
from src.harness.sweep import (
    SweepConfig,
    load_sweep_config,
    records_to_frame,
    records_to_json,
    run_sweep,
    write_records,
)
from src.harness.verify import CHECKS, MAX_DIM, MIN_DIM, random_dim, verify_suite
from src.meanforce.composite import composite_gibbs, hmf
from src.opalgebra.operators import (
    SIGMA_X,
    SIGMA_Z,
    commutator_norm,
    kron,
    max_norm_distance,
    operator_to_payload,
)
from src.opalgebra.states import exp_normalized


# ---------- models ----------


def test_two_qubit_factorizes_at_zero_coupling():
    model = model_two_qubit(g=0.0)
    rho = composite_gibbs(model, 1.0).rho
    rho_s, _ = exp_normalized(model.H_S)
    rho_e, _ = exp_normalized(model.H_E)
    assert max_norm_distance(rho.op, kron(rho_s.op, rho_e.op)) < 1e-14


def test_two_qubit_kinds():
    xx = model_two_qubit(g=1.0, int_kind="xx")
    assert commutator_norm(xx.system_op(xx.H_S), xx.H_int) > 0
    zz = model_two_qubit(g=1.0, int_kind="zz")
    assert commutator_norm(zz.system_op(zz.H_S), zz.H_SE) == 0.0
    with pytest.raises(ConfigError):
        model_two_qubit(int_kind="yy")
    with pytest.raises(ConfigError):
        model_two_qubit(g=float("nan"))


def test_spin_chain_sizes():
    assert model_spin_chain(n=4, J=1.0, h_field=0.5, g_boundary=0.7).layout.dims == (2, 8)
    assert model_spin_chain(n=2).layout.dims == (2, 2)
    with pytest.raises(DimTooLarge):
        model_spin_chain(n=6)
    with pytest.raises(ConfigError):
        model_spin_chain(n=1)


def test_spin_chain_weak_coupling_hmf():
    model = model_spin_chain(n=3, g_boundary=0.0)
    assert max_norm_distance(hmf(model, 0.9), model.H_S) < 1e-10


def test_dimer_conserves_number():
    model = model_hopping_dimer(g=0.8)
    assert commutator_norm(model.system_op(NUMBER), model.H_SE) < 1e-14


def test_build_model_registry():
    assert build_model("two_qubit", {"g": 0.2}).g == 0.2
    with pytest.raises(ConfigError):
        build_model("three_qubit", {})
    with pytest.raises(ConfigError):
        build_model("two_qubit", {"coupling": 1.0})
    with pytest.raises(ConfigError):
        sector_charge("bad", [1.0, 2.0])


# ---------- rng ----------


def test_rng_streams_are_reproducible_and_independent():
    a = make_rng(7, 1).standard_normal(4)
    assert np.array_equal(a, make_rng(7, 1).standard_normal(4))
    assert not np.array_equal(a, make_rng(7, 2).standard_normal(4))


def test_random_objects():
    rng = make_rng(3)
    rho = random_density_matrix(rng, 5)
    assert np.trace(rho.matrix).real == pytest.approx(1.0)
    a, b = random_commuting_charges(rng, 4, 2)
    assert commutator_norm(a, b) < 1e-12


# ---------- oracles ----------


def test_oracles_pass_on_two_qubit_point():
    res = oracle_residuals(model_two_qubit(g=0.5), 1.0)
    assert failed_oracles(res) == {}


# ---------- sweep ----------


def _config(**overrides):
    raw = {"model": {"kind": "two_qubit", "params": {}}, "beta": [1.0], "g": [0.5]}
    raw.update(overrides)
    return SweepConfig.model_validate(raw)


def test_single_point_sweep():
    records = run_sweep(_config())
    assert len(records) == 1
    rec = records[0]
    assert rec.error is None
    assert rec.residuals["hmf_round_trip"] <= 1e-9
    assert rec.tolerances["herm_tol"] == 1e-12
    assert rec.reports[0].invariant_violations() == []
    assert rec.wall_time is None


def test_failed_point_does_not_stop_the_sweep():
    records = run_sweep(_config(beta=[0.0, 1.0]))
    assert [r.index for r in records] == [0, 1]
    assert records[0].error is not None and records[0].reports == []
    assert records[1].error is None


def test_sweep_is_deterministic_and_ordered():
    cfg = _config(beta=[0.5, 1.5], g=[0.0, 1.0])
    first = records_to_json(run_sweep(cfg, jobs=2))
    second = records_to_json(run_sweep(cfg, jobs=1))
    assert first == second
    points = [r["point"] for r in json.loads(first)]
    assert points[0] == {"beta": 0.5, "g": 0.0, "mu": 0.0}


def test_grand_canonical_sweep_and_csv(tmp_path):
    cfg = _config(model={"kind": "hopping_dimer", "params": {}}, ensemble="grand_canonical", mu=[0.3])
    records = run_sweep(cfg, timings=True)
    assert len(records[0].reports) == 2
    assert records[0].wall_time is not None
    frame = records_to_frame(records)
    assert list(frame["p"]) == [0, 1]
    out = write_records(records, tmp_path / "sweep.csv", "csv")
    assert pd.read_csv(out).shape[0] == 2


def test_sweep_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_sweep_config(bad)
    grand = tmp_path / "grand.json"
    grand.write_text(
        json.dumps({"model": {"kind": "two_qubit"}, "beta": [1.0], "g": [0.1], "ensemble": "grand_canonical"})
    )
    with pytest.raises(ConfigError):
        load_sweep_config(grand)
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"model": {"kind": "two_qubit"}, "beta": [], "g": [0.1]}))
    with pytest.raises(ConfigError):
        load_sweep_config(empty)


# ---------- verification suite ----------


def test_verify_smoke_run_passes():
    summary = verify_suite(seed=42, trials=1)
    assert summary.ok, {n: c.errors or c.worst for n, c in summary.checks.items() if c.failed}
    assert set(summary.checks) == set(CHECKS)


def test_verify_is_deterministic():
    a = verify_suite(seed=5, trials=2, only=["k_identity", "skew_properties"])
    b = verify_suite(seed=5, trials=2, only=["k_identity", "skew_properties"])
    assert a.model_dump() == b.model_dump()


def test_xi_sign_mutation_is_caught():
    summary = verify_suite(seed=42, trials=3, mutations=["xi_sign"], only=["qfi_decomposition"])
    assert not summary.ok
    assert summary.checks["qfi_decomposition"].failed == 3


def test_random_dim_covers_inclusive_range():
    rng = make_rng(11)
    assert {random_dim(rng) for _ in range(400)} == set(range(MIN_DIM, MAX_DIM + 1))
    assert MAX_DIM == 8


def test_verify_argument_errors():
    with pytest.raises(ConfigError):
        verify_suite(seed=0, trials=0)
    with pytest.raises(ConfigError):
        verify_suite(seed=0, trials=1, mutations=["drop_q"])
    with pytest.raises(ConfigError):
        verify_suite(seed=0, trials=1, only=["nope"])


# ---------- cli ----------


def test_cli_hmf_and_oracle(tmp_path):
    cfg = tmp_path / "model.json"
    cfg.write_text(json.dumps({"model": {"kind": "two_qubit", "params": {"g": 0.5}}, "beta": 1.0}))
    out = tmp_path / "hmf.json"
    assert main(["hmf", "--config", str(cfg), "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["round_trip_residual"] <= 1e-9
    assert payload["hmf"]["dim"] == 2
    assert main(["oracle", "--config", str(cfg), "--out", str(tmp_path / "oracle.json")]) == 0


def test_cli_verify_exit_codes(tmp_path):
    out = str(tmp_path / "v.json")
    assert main(["verify", "--trials", "1", "--check", "log_ratio", "--out", out]) == 0
    assert json.loads((tmp_path / "v.json").read_text())["ok"] is True
    assert (
        main(["verify", "--trials", "2", "--check", "qfi_decomposition", "--mutate", "xi_sign", "--out", out])
        == 1
    )


def test_cli_tol_scale_is_applied_once(tmp_path):
    out = tmp_path / "v.json"
    assert main(["verify", "--trials", "1", "--check", "log_ratio", "--tol-scale", "2", "--out", str(out)]) == 0
    limit = json.loads(out.read_text())["checks"]["log_ratio"]["limit"]
    assert limit == pytest.approx(2.0 * CHECKS["log_ratio"].limit)

    cfg = tmp_path / "model.json"
    cfg.write_text(json.dumps({"model": {"kind": "two_qubit", "params": {"g": 0.5}}, "beta": 1.0}))
    oracle_out = tmp_path / "oracle.json"
    assert main(["oracle", "--config", str(cfg), "--tol-scale", "2", "--out", str(oracle_out)]) == 0
    limits = json.loads(oracle_out.read_text())["limits"]
    assert limits == pytest.approx({k: 2.0 * v for k, v in ORACLE_LIMITS.items()})


def _bounds_payload(model, number_op):
    return {
        "kind": "grand_canonical",
        "model": {
            "H_S": operator_to_payload(model.H_S).model_dump(),
            "H_E": operator_to_payload(model.H_E).model_dump(),
            "H_int": operator_to_payload(model.H_int).model_dump(),
            "g": model.g,
            "dims": list(model.layout.dims),
        },
        "beta": 1.0,
        "mu": 0.4,
        "number": {"name": "N", "system": operator_to_payload(number_op).model_dump()},
    }


def test_cli_bounds_fails_on_broken_composition(tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps(_bounds_payload(model_hopping_dimer(g=0.3), NUMBER)))
    assert main(["bounds", "--config", str(good), "--out", str(tmp_path / "good.out")]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(_bounds_payload(model_two_qubit(g=0.5), SIGMA_X)))
    assert main(["bounds", "--config", str(bad), "--out", str(tmp_path / "bad.out")]) == 1
    assert main(["bounds", "--config", str(bad), "--strict", "--out", str(tmp_path / "strict.out")]) == 1


def test_cli_config_error_exit_code(tmp_path):
    assert main(["bounds", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["gge"]) == 2


def test_cli_sweep_csv(tmp_path):
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({"model": {"kind": "two_qubit"}, "beta": [0.5, 1.0], "g": [0.5]}))
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--config", str(cfg), "--format", "csv", "--out", str(out)]) == 0
    assert pd.read_csv(out).shape[0] == 2


def test_cli_gge(tmp_path):
    cfg = tmp_path / "gge.json"
    cfg.write_text(json.dumps({"charges": [{"lambda": 1.0, "op": operator_to_payload(SIGMA_Z).model_dump()}]}))
    out = tmp_path / "gge.json.out"
    assert main(["gge", "--config", str(cfg), "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["fisher_closed_form"][0] == pytest.approx(1.0 - np.tanh(1.0) ** 2)
    assert payload["fisher_spectral"][0] == pytest.approx(payload["fisher_closed_form"][0], rel=1e-6)
