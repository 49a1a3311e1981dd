import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from src.common.errors import ConfigError
from src.harness.rng import make_rng, random_density_matrix, random_hermitian
from src.opalgebra.families import EvaluationFailure, OperatorFamily, constant_family, linear_family
from src.opalgebra.operators import (
    IDENTITY_2,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    DimMismatch,
    DomainError,
    NonHermitian,
    commutator_norm,
    diag,
    eig,
    embed,
    expm_h,
    kron,
    logm_h,
    max_norm_distance,
    operator_from_payload,
    operator_to_payload,
    powm_h,
    validate_hermitian,
)
from src.opalgebra.states import (
    LayoutMismatch,
    NotADensityMatrix,
    clipped_spectrum,
    covariance,
    density_matrix,
    exp_normalized,
    expectation,
    layout,
    maximally_mixed,
    partial_trace,
    pure_state,
    raw_covariance,
    root_fidelity,
    state_list_mix,
    variance,
    von_neumann_entropy,
)


# ---------- operators ----------


def test_validate_rejects_non_hermitian():
    with pytest.raises(NonHermitian):
        validate_hermitian([[0, 1], [0, 0]])


def test_validate_rejects_non_square_and_non_finite():
    with pytest.raises(DimMismatch):
        validate_hermitian(np.zeros((2, 3)))
    with pytest.raises(DomainError):
        validate_hermitian([[np.nan, 0], [0, 1]])


def test_validate_symmetrizes_roundoff():
    m = np.array([[1.0, 2.0 + 1e-15], [2.0, 3.0]])
    op = validate_hermitian(m)
    assert np.allclose(op.matrix, op.matrix.conj().T, atol=0)


def test_operator_is_immutable():
    op = diag([1.0, 2.0])
    with pytest.raises(ValueError):
        op.matrix[0, 0] = 5.0


def test_numpy_scalar_multiplication_stays_an_operator():
    op = np.float64(2.0) * SIGMA_X
    assert_allclose(op.matrix, 2.0 * SIGMA_X.matrix)
    with pytest.raises(NonHermitian):
        SIGMA_X * 1j


def test_pauli_algebra():
    assert_allclose(SIGMA_X.matrix @ SIGMA_Y.matrix, 1j * SIGMA_Z.matrix)
    assert commutator_norm(SIGMA_Z, SIGMA_Z) == 0.0
    assert commutator_norm(SIGMA_X, SIGMA_Z) == pytest.approx(2.0)


def test_expm_logm_round_trip():
    rng = make_rng(1)
    h = random_hermitian(rng, 5)
    assert max_norm_distance(logm_h(expm_h(h)), h) < 1e-10


def test_logm_outside_domain():
    with pytest.raises(DomainError):
        logm_h(diag([1.0, 0.0]))
    with pytest.raises(DomainError):
        powm_h(diag([1.0, -1.0]), 0.5)


@pytest.mark.parametrize("dim", [2, 6, 16, 64])
def test_eig_reconstructs(dim):
    h = random_hermitian(make_rng(2, dim), dim)
    sd = eig(h)
    assert np.all(np.diff(sd.eigenvalues) >= 0)
    assert_allclose(sd.eigenvectors.conj().T @ sd.eigenvectors, np.eye(dim), atol=1e-12)
    assert_allclose(sd.reconstruct(), h.matrix, atol=1e-11)


def test_expm_matches_scaling_and_squaring():
    h = random_hermitian(make_rng(1), 8)
    ref = scipy.linalg.expm(h.matrix)
    assert np.linalg.norm(expm_h(h).matrix - ref) / np.linalg.norm(ref) < 1e-12


def test_embed_matches_kron():
    assert max_norm_distance(embed(SIGMA_Z, [2, 2], 1), kron(IDENTITY_2, SIGMA_Z)) == 0.0
    assert max_norm_distance(embed(SIGMA_X, [2, 3], 0).matrix[:3, 3:], np.eye(3)) == 0.0
    with pytest.raises(DimMismatch):
        embed(SIGMA_X, [3, 2], 0)


def test_payload_codec():
    op = SIGMA_Y
    back = operator_from_payload(operator_to_payload(op).model_dump())
    assert max_norm_distance(op, back) == 0.0
    with pytest.raises(ConfigError):
        operator_from_payload({"dim": 3, "re": [[0, 1], [1, 0]], "im": [[0, 0], [0, 0]]})
    with pytest.raises(ConfigError):
        operator_from_payload({"dim": 2})


# ---------- states ----------


def test_density_matrix_checks_trace_and_positivity():
    with pytest.raises(NotADensityMatrix):
        density_matrix(np.diag([0.5, 0.6]))
    with pytest.raises(NotADensityMatrix):
        density_matrix(np.diag([1.5, -0.5]))
    assert density_matrix(np.diag([0.25, 0.75])).dim == 2


def test_clipping_zeroes_tiny_eigenvalues():
    rho = density_matrix(np.diag([1.0 - 1e-13, 1e-13]))
    cs = clipped_spectrum(rho)
    assert cs.probs[0] == 0.0
    assert cs.clipped_mass == pytest.approx(1e-13)


def test_pure_and_mixed_entropy():
    assert von_neumann_entropy(pure_state([1, 1j])) == pytest.approx(0.0, abs=1e-12)
    assert von_neumann_entropy(maximally_mixed(4)) == pytest.approx(math.log(4))


def test_thermal_qubit_variance():
    rho, log_z = exp_normalized(SIGMA_Z)
    assert log_z == pytest.approx(math.log(2 * math.cosh(1.0)))
    assert expectation(rho, SIGMA_Z) == pytest.approx(-math.tanh(1.0))
    assert variance(rho, SIGMA_Z) == pytest.approx(1.0 - math.tanh(1.0) ** 2)


def test_cold_thermal_qubit_is_nearly_pure():
    rho, _ = exp_normalized(50.0 * SIGMA_Z)
    assert von_neumann_entropy(rho) <= 1e-8


def test_exp_normalized_survives_large_shifts():
    rho, log_z = exp_normalized(diag([1000.0, 1001.0]))
    assert np.isfinite(log_z)
    assert_allclose(np.diag(rho.matrix).real, [1 / (1 + math.e**-1), math.e**-1 / (1 + math.e**-1)])


def test_covariance_real_and_raw():
    rho = pure_state([1, 0])
    assert covariance(rho, SIGMA_X, SIGMA_Y) == pytest.approx(0.0)
    assert raw_covariance(rho, SIGMA_X, SIGMA_Y) == pytest.approx(1j)


def test_partial_trace_of_product():
    rng = make_rng(3)
    a = random_density_matrix(rng, 2)
    b = random_density_matrix(rng, 3)
    joint = density_matrix(np.kron(a.matrix, b.matrix))
    lay = layout(2, 3)
    assert max_norm_distance(partial_trace(joint, lay, 0).op, a.op) < 1e-14
    assert max_norm_distance(partial_trace(joint, lay, 1).op, b.op) < 1e-14
    with pytest.raises(LayoutMismatch):
        partial_trace(joint, layout(2, 2), 0)


def test_partial_trace_of_bell_state():
    bell = pure_state([1, 0, 0, 1])
    for keep in (0, 1):
        assert_allclose(partial_trace(bell, layout(2, 2), keep).matrix, np.eye(2) / 2, atol=1e-15)


def test_partial_trace_matches_index_loop():
    rho = random_density_matrix(make_rng(4), 6)
    m = rho.matrix.reshape(2, 3, 2, 3)
    ref = np.zeros((3, 3), dtype=complex)
    for a in range(2):
        for b in range(3):
            for c in range(3):
                ref[b, c] += m[a, b, a, c]
    assert_allclose(partial_trace(rho, layout(2, 3), 1).matrix, ref, atol=1e-15)


def test_root_fidelity():
    rho = density_matrix(np.diag([0.25, 0.75]))
    assert root_fidelity(rho, rho) == pytest.approx(1.0)
    assert root_fidelity(pure_state([1, 0]), pure_state([0, 1])) == pytest.approx(0.0, abs=1e-12)


def test_mix_validates_weights():
    a, b = pure_state([1, 0]), pure_state([0, 1])
    assert_allclose(state_list_mix([a, b], [0.5, 0.5]).matrix, np.eye(2) / 2)
    with pytest.raises(NotADensityMatrix):
        state_list_mix([a, b], [0.7, 0.7])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), dim=st.integers(2, 6))
def test_variance_nonnegative(seed, dim):
    rng = make_rng(seed)
    rho = random_density_matrix(rng, dim)
    assert variance(rho, random_hermitian(rng, dim)) >= 0.0


# ---------- families ----------


def test_family_shape_checks():
    fam = linear_family([SIGMA_X, SIGMA_Z])
    assert max_norm_distance(fam([1.0, 2.0]), SIGMA_X + 2.0 * SIGMA_Z) == 0.0
    with pytest.raises(DimMismatch):
        fam([1.0])
    const = constant_family(SIGMA_Y, 3)
    assert const([0.0, 1.0, 2.0]) is SIGMA_Y


def test_family_wraps_failures():
    fam = OperatorFamily(lambda lam: logm_h(diag([lam[0], 1.0])), 2, 1, "log")
    with pytest.raises(EvaluationFailure):
        fam([-1.0])
