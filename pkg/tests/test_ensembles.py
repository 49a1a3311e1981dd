import json

import pytest

from src.common.errors import ConfigError
from src.ensembles.bounds import (
    canonical_bound,
    chain_rule_residual,
    check_violations,
    dependency_for,
    evaluate_spec,
    grand_canonical_bounds,
    grand_canonical_operators,
    multi_lagrange_bound,
)
from src.ensembles.specs import (
    EnsembleSpec,
    EnsembleSpecError,
    ExtraCharge,
    MuZero,
    append_run_log,
    canonical_spec,
    ensemble_spec_from_payload,
    grand_canonical_spec,
    magnetic_spec,
    multi_lagrange_spec,
    rotational_spec,
    translational_spec,
    validate_spec,
)
from src.harness.models import NUMBER, dimer_charges, model_hopping_dimer, model_two_qubit, number_charge
from src.metrology.report import ConditionViolated
from src.opalgebra.operators import SIGMA_X, SIGMA_Z, max_norm_distance, operator_to_payload, zero


def _dimer_grand(mu: float = 0.4, beta: float = 1.0):
    return grand_canonical_spec(model_hopping_dimer(g=0.3), beta, mu, number_charge())


# ---------- specs ----------


def test_lambdas_follow_chemical_parameters():
    spec = multi_lagrange_spec(model_hopping_dimer(), 2.0, [0.1, -0.2, 0.3], dimer_charges())
    assert spec.param_count == 4
    assert spec.lambdas() == pytest.approx([2.0, -0.2, 0.4, -0.6])


def test_spec_validation():
    with pytest.raises(EnsembleSpecError):
        canonical_spec(model_two_qubit(), 0.0)
    with pytest.raises(EnsembleSpecError):
        validate_spec(EnsembleSpec("grand_canonical", model_hopping_dimer(), 1.0, mu=0.2))
    with pytest.raises(EnsembleSpecError):
        grand_canonical_spec(model_two_qubit(), 1.0, 0.2, number_charge())


def test_dependency_maps():
    assert dependency_for(canonical_spec(model_two_qubit(), 1.0), 0).slopes() == {}
    spec = _dimer_grand(mu=0.5)
    assert dependency_for(spec, 0).slopes() == {1: -0.5}
    assert dependency_for(spec, 1).slopes() == {0: -2.0}
    with pytest.raises(MuZero):
        dependency_for(_dimer_grand(mu=0.0), 1)
    with pytest.raises(EnsembleSpecError):
        dependency_for(spec, 2)


def test_payload_loading():
    m = model_two_qubit(g=0.5)
    model_raw = {
        "H_S": operator_to_payload(m.H_S).model_dump(),
        "H_E": operator_to_payload(m.H_E).model_dump(),
        "H_int": operator_to_payload(m.H_int).model_dump(),
        "g": 0.5,
        "dims": [2, 2],
    }
    spec = ensemble_spec_from_payload({"kind": "canonical", "model": model_raw, "beta": 1.5})
    assert spec.kind == "canonical" and spec.beta == 1.5
    with pytest.raises(ConfigError):
        ensemble_spec_from_payload({"kind": "microcanonical", "model": model_raw, "beta": 1.0})


def test_presets_carry_their_form():
    ops = [c.system_op for c in dimer_charges()]
    spec = translational_spec(model_hopping_dimer(), 1.0, [0.1, 0.0, 0.2], ops)
    assert spec.form == "translational"
    assert [c.name for c in spec.extra_charges] == ["P_x", "P_y", "P_z"]


# ---------- canonical ----------


def test_canonical_two_qubit_report():
    rep = canonical_bound(canonical_spec(model_two_qubit(g=0.5), 1.0))
    assert rep.invariant_violations() == []
    assert rep.q > 0
    assert rep.checks["chain_rule"] < 1e-6
    assert rep.checks["k_composition"] < 1e-7
    assert rep.checks["master_gap"] >= -1e-8


def test_canonical_zero_coupling_reduces_to_energy_variance():
    rep = canonical_bound(canonical_spec(model_two_qubit(g=0.0), 0.7))
    assert rep.q == pytest.approx(0.0, abs=1e-10)
    assert rep.bound_tight == pytest.approx(rep.bound_loose, rel=1e-9)
    assert rep.checks["lnz_curvature"] == pytest.approx(rep.var, rel=1e-5)


def test_commuting_coupling_has_no_quantum_share():
    rep = canonical_bound(canonical_spec(model_two_qubit(g=1.3, int_kind="zz"), 1.0))
    assert rep.q == pytest.approx(0.0, abs=1e-10)
    assert rep.bound_tight == pytest.approx(rep.bound_loose, rel=1e-9)


# ---------- grand canonical ----------


def test_grand_canonical_reports():
    spec = _dimer_grand()
    rep_beta, rep_mu = grand_canonical_bounds(spec)
    for rep in (rep_beta, rep_mu):
        assert rep.invariant_violations() == []
        assert rep.checks["k_composition"] < 1e-7
        assert rep.checks["chain_rule"] < 1e-6
    assert rep_beta.checks["k_grand_form"] < 1e-7
    assert rep_mu.metadata.p == 1


def test_grand_canonical_number_operator_is_constant():
    _, b = grand_canonical_operators(_dimer_grand())
    assert max_norm_distance(b, NUMBER) < 1e-9


def test_chain_rule_and_mu_zero():
    assert chain_rule_residual(_dimer_grand()) < 1e-6
    assert len(evaluate_spec(_dimer_grand(mu=0.0))) == 1
    with pytest.raises(MuZero):
        chain_rule_residual(_dimer_grand(mu=0.0))


def _non_commuting_grand():
    return grand_canonical_spec(model_two_qubit(g=0.5), 1.0, 0.4, ExtraCharge("N", SIGMA_X))


def test_strict_rejects_broken_composition():
    with pytest.raises(ConditionViolated) as err:
        grand_canonical_bounds(_non_commuting_grand(), strict=True)
    assert err.value.result.max_commutator > 1e-8


def test_broken_composition_is_reported_without_strict():
    reports = grand_canonical_bounds(_non_commuting_grand())
    assert max(r.checks["expansion_commutator"] for r in reports) > 1e-8
    assert max(r.checks["k_composition"] for r in reports) > 1e-7
    assert any("k_composition" in v for r in reports for v in check_violations(r))
    assert check_violations(grand_canonical_bounds(_dimer_grand())[0]) == []


# ---------- multi-Lagrange ----------


def test_multi_lagrange_every_coefficient():
    spec = multi_lagrange_spec(model_hopping_dimer(g=0.3), 1.0, [0.2, -0.1, 0.3], dimer_charges())
    reports = evaluate_spec(spec)
    assert [r.metadata.p for r in reports] == [0, 1, 2, 3]
    for rep in reports:
        assert rep.invariant_violations() == []
        assert rep.checks["k_composition"] < 1e-7
        assert rep.checks["expansion_commutator"] < 1e-8


def test_multi_lagrange_skips_zero_coefficients():
    spec = multi_lagrange_spec(model_hopping_dimer(), 1.0, [0.2, 0.0, 0.0], dimer_charges())
    assert len(evaluate_spec(spec)) == 2
    with pytest.raises(MuZero):
        multi_lagrange_bound(spec, p=2)


def test_magnetic_zero_coupling_has_no_quantum_share():
    model = model_two_qubit(g=0.0)
    spec = magnetic_spec(model, 0.8, [0.0, 0.0, 0.4], [zero(2), zero(2), SIGMA_Z])
    assert spec.form == "magnetic"
    rep = evaluate_spec(spec)[0]
    assert rep.q == pytest.approx(0.0, abs=1e-10)
    assert rep.bound_tight == pytest.approx(rep.bound_loose, rel=1e-9)


def test_rotational_about_z_matches_grand_canonical():
    model = model_hopping_dimer(g=0.3)
    rot = evaluate_spec(rotational_spec(model, 1.0, [0.0, 0.0, 0.6], [zero(4), zero(4), NUMBER]))
    grand = evaluate_spec(grand_canonical_spec(model, 1.0, 0.6, number_charge()))
    assert [r.metadata.p for r in rot] == [0, 3]
    for r, g in zip(rot, grand):
        assert r.var == pytest.approx(g.var, rel=1e-6)
        assert r.q == pytest.approx(g.q, rel=1e-6, abs=1e-10)


def test_run_log_appends(tmp_path):
    log = tmp_path / "runs" / "log.jsonl"
    rep = canonical_bound(canonical_spec(model_two_qubit(), 1.0))
    append_run_log(log, rep)
    append_run_log(log, {"note": "second"})
    lines = log.read_text().splitlines()
    assert len(lines) == 2
    assert json.loads(lines[0])["metadata"]["p"] == 0
