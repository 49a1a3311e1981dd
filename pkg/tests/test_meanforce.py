import numpy as np
import pytest

from src.common.errors import ConfigError
from src.gge.gibbs import IndexOutOfRange
from src.harness.models import NUMBER, model_hopping_dimer, model_spin_chain, model_two_qubit
from src.harness.oracles import hmf_round_trip_residual
from src.meanforce.composite import (
    BetaZero,
    canonical_charges,
    composite_gibbs,
    composite_model,
    composite_model_from_payload,
    effective_gibbs,
    grand_canonical_charges,
    hmf,
    log_partition_star,
    potential_family,
    reduced_state_family,
)
from src.meanforce.derivatives import (
    check_continuity,
    dependency_map,
    dependency_map_from_payload,
    direction,
    energy_dual_path_residual,
    family_derivative,
    modified_energy_operator,
    stable_derivative,
    wilcox_derivative,
)
from src.opalgebra.families import OperatorFamily, linear_family
from src.opalgebra.operators import (
    SIGMA_X,
    SIGMA_Z,
    DimMismatch,
    commutator_norm,
    expm_h,
    identity,
    max_norm_distance,
    operator_to_payload,
)
from src.opalgebra.states import partial_trace


# ---------- composite and HMF ----------


def test_zero_coupling_hmf_is_system_hamiltonian():
    model = model_two_qubit(g=0.0)
    assert max_norm_distance(hmf(model, 1.3), model.H_S) < 1e-12


@pytest.mark.parametrize("beta", [0.1, 1.0, 5.0])
@pytest.mark.parametrize("g", [0.0, 0.5, 2.0])
def test_hmf_round_trip(beta, g):
    assert hmf_round_trip_residual(model_two_qubit(g=g), beta) <= 1e-9
    assert hmf_round_trip_residual(model_spin_chain(n=3, g_boundary=g), beta) <= 1e-9


def test_beta_zero():
    model = model_two_qubit()
    with pytest.raises(BetaZero):
        hmf(model, 0.0)
    with pytest.raises(BetaZero):
        composite_gibbs(model, -1.0)


def test_infinite_temperature_gibbs_is_maximally_mixed():
    rho = composite_gibbs(model_two_qubit(), 0.0).rho
    assert np.allclose(rho.matrix, np.eye(4) / 4)


def test_composite_dims_are_checked():
    with pytest.raises(DimMismatch):
        composite_model(SIGMA_Z, SIGMA_Z, identity(3), 1.0)


def test_model_payload():
    m = model_two_qubit(g=0.3)
    raw = {
        "H_S": operator_to_payload(m.H_S).model_dump(),
        "H_E": operator_to_payload(m.H_E).model_dump(),
        "H_int": operator_to_payload(m.H_int).model_dump(),
        "g": 0.3,
        "dims": [2, 2],
    }
    back = composite_model_from_payload(raw)
    assert max_norm_distance(back.H_SE, m.H_SE) == 0.0
    with pytest.raises(ConfigError):
        composite_model_from_payload({**raw, "dims": [4, 1]})


# ---------- effective Gibbs ----------


def test_effective_gibbs_partition_and_state():
    cc = canonical_charges(model_two_qubit(g=0.7))
    eg = effective_gibbs(cc, [1.2])
    assert eg.log_z_star == pytest.approx(eg.log_z_se - eg.log_z_e, abs=1e-10)
    assert eg.log_z_star == pytest.approx(log_partition_star(cc, [1.2]), abs=1e-10)
    reduced = reduced_state_family(cc)([1.2])
    assert max_norm_distance(eg.rho_S.op, reduced) < 1e-10
    full = composite_gibbs(cc.model, 1.2).rho
    assert max_norm_distance(partial_trace(full, cc.layout, 0).op, reduced) < 1e-12


def test_potential_sum_is_beta_hmf():
    model = model_two_qubit(g=0.5)
    pot = potential_family(canonical_charges(model))
    assert max_norm_distance(pot([0.8]), 0.8 * hmf(model, 0.8)) < 1e-10


def test_grand_canonical_charges_shape():
    model = model_hopping_dimer()
    cc = grand_canonical_charges(model, model.system_op(NUMBER))
    assert cc.param_count == 2
    assert cc.names == ("H", "N")
    with pytest.raises(DimMismatch):
        cc.total_sum([1.0])


# ---------- derivatives ----------


def test_direction_rules():
    assert direction(3, dependency_map(0, {1: -0.5})).tolist() == [1.0, -0.5, 0.0]
    with pytest.raises(ConfigError):
        direction(2, dependency_map(0, {0: 1.0}))
    with pytest.raises(IndexOutOfRange):
        direction(2, dependency_map(0, {4: 1.0}))
    with pytest.raises(IndexOutOfRange):
        direction(2, dependency_map(2))


def test_dependency_map_payload():
    dm = dependency_map_from_payload({"p": 1, "deps": [{"i": 0, "slope": -2.0}]})
    assert dm.slopes() == {0: -2.0}
    with pytest.raises(ConfigError):
        dependency_map_from_payload({"p": -1})


def test_linear_family_derivative_is_exact():
    fam = linear_family([SIGMA_X, SIGMA_Z])
    d = family_derivative(fam, 0, [0.3, 0.4], deps=dependency_map(0, {1: 2.0}))
    assert max_norm_distance(d, SIGMA_X + 2.0 * SIGMA_Z) < 1e-10
    assert max_norm_distance(stable_derivative(fam, 1, [0.3, 0.4]), SIGMA_Z) < 1e-10


def test_modified_energy_operator_dual_path():
    cc = canonical_charges(model_two_qubit(g=0.5))
    pot = potential_family(cc)
    e_star = modified_energy_operator(pot, 0, [1.0])
    assert energy_dual_path_residual(pot, 0, [1.0], e_star) <= 1e-5


def test_zero_coupling_energy_operator_is_system_hamiltonian():
    model = model_two_qubit(g=0.0)
    e_star = modified_energy_operator(potential_family(canonical_charges(model)), 0, [2.0])
    assert max_norm_distance(e_star, model.H_S) < 1e-8


def test_zz_energy_operator_commutes_with_state():
    cc = canonical_charges(model_two_qubit(g=1.0, int_kind="zz"))
    e_star = modified_energy_operator(potential_family(cc), 0, [1.0])
    rho = effective_gibbs(cc, [1.0]).rho_S
    assert commutator_norm(e_star, rho.op) < 1e-10


def test_wilcox_matches_finite_difference():
    g_fam = linear_family([SIGMA_X, SIGMA_Z])
    lam = [0.7, -0.4]
    wil = wilcox_derivative(g_fam, 0, lam)
    exp_fam = OperatorFamily(lambda x: expm_h(g_fam(x)), 2, 2, "exp")
    assert max_norm_distance(wil, stable_derivative(exp_fam, 0, lam)) < 1e-8


def test_continuity_spot_check():
    fam = linear_family([SIGMA_X])
    assert check_continuity(fam, [0.2]).continuous

    jump = OperatorFamily(lambda lam: SIGMA_Z if lam[0] == 0.0 else SIGMA_X, 2, 1, "jump")
    assert not check_continuity(jump, [0.0]).continuous
