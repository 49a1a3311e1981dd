"""
Desk-scale composite models: system + environment with an explicit coupling.
"""

from __future__ import annotations

from typing import Dict, List, Literal, Sequence

import numpy as np

from src.common.errors import ConfigError, ToolkitError
from src.ensembles.specs import ExtraCharge
from src.meanforce.composite import CompositeModel, composite_model
from src.opalgebra.operators import (
    IDENTITY_2,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    HermitianOperator,
    diag,
    embed,
    kron,
    kron_all,
    validate_hermitian,
    zero,
)

InteractionKind = Literal["xx", "zz", "xy"]

MAX_CHAIN = 5


class DimTooLarge(ToolkitError):
    pass


def _check_finite(**params: float) -> None:
    for name, value in params.items():
        if not np.isfinite(value):
            raise ConfigError(f"{name} must be finite, got {value}")


def model_two_qubit(
    omega_S: float = 1.0, omega_E: float = 1.0, g: float = 0.5, int_kind: InteractionKind = "xx"
) -> CompositeModel:
    """H_S = (w_S/2) sz, H_E = (w_E/2) sz, coupling g * H_int."""
    _check_finite(omega_S=omega_S, omega_E=omega_E, g=g)
    interactions = {
        "xx": kron(SIGMA_X, SIGMA_X),
        "zz": kron(SIGMA_Z, SIGMA_Z),
        "xy": 0.5 * (kron(SIGMA_X, SIGMA_X) + kron(SIGMA_Y, SIGMA_Y)),
    }
    if int_kind not in interactions:
        raise ConfigError(f"int_kind must be one of {sorted(interactions)}, got '{int_kind}'")
    return composite_model(
        0.5 * omega_S * SIGMA_Z,
        0.5 * omega_E * SIGMA_Z,
        interactions[int_kind],
        g,
        name=f"two_qubit_{int_kind}",
    )


def _zz(sites: int, k: int) -> HermitianOperator:
    """Z_k Z_{k+1} on a chain of qubits."""
    factors = [SIGMA_Z if i in (k, k + 1) else IDENTITY_2 for i in range(sites)]
    return kron_all(factors)


def model_spin_chain(
    n: int = 3, J: float = 1.0, h_field: float = 0.5, g_boundary: float = 0.5
) -> CompositeModel:
    """
    Transverse-field Ising chain of n spins; spin 0 is the system.

    H_S = h X_0, H_E = J sum Z_k Z_{k+1} + h sum X_k over spins 1..n-1,
    coupling g Z_0 Z_1.
    """
    _check_finite(J=J, h_field=h_field, g_boundary=g_boundary)
    if n > MAX_CHAIN:
        raise DimTooLarge(f"Spin chains are limited to {MAX_CHAIN} sites (dim 32), got n={n}")
    if n < 2:
        raise ConfigError(f"A chain needs at least 2 sites, got n={n}")
    env_dims = [2] * (n - 1)
    h_env = zero(2 ** (n - 1))
    for k in range(n - 1):
        h_env = h_env + h_field * embed(SIGMA_X, env_dims, k)
    for k in range(n - 2):
        h_env = h_env + J * _zz(n - 1, k)
    h_int = kron(SIGMA_Z, embed(SIGMA_Z, env_dims, 0))
    return composite_model(h_field * SIGMA_X, h_env, h_int, g_boundary, name=f"spin_chain_{n}")


# ---------- two-site fermions ----------

# Jordan-Wigner on two sites: n_i = (1 - Z_i)/2, hopping c1^+ c2 + h.c. = (XX + YY)/2
N_1 = 0.5 * (kron(IDENTITY_2, IDENTITY_2) - kron(SIGMA_Z, IDENTITY_2))
N_2 = 0.5 * (kron(IDENTITY_2, IDENTITY_2) - kron(IDENTITY_2, SIGMA_Z))
NUMBER = N_1 + N_2
HOPPING = 0.5 * (kron(SIGMA_X, SIGMA_X) + kron(SIGMA_Y, SIGMA_Y))


def model_hopping_dimer(
    t: float = 1.0, epsilon: float = 0.3, omega_E: float = 1.0, g: float = 0.3
) -> CompositeModel:
    """
    Spinless two-site fermions coupled to one environment qubit through
    g (n_1 - n_2) (x) sx. The system particle number is conserved.
    """
    _check_finite(t=t, epsilon=epsilon, omega_E=omega_E, g=g)
    h_s = -t * HOPPING + epsilon * NUMBER
    h_int = kron(N_1 - N_2, SIGMA_X)
    return composite_model(h_s, 0.5 * omega_E * SIGMA_Z, h_int, g, name="hopping_dimer")


def number_charge() -> ExtraCharge:
    return ExtraCharge("N", NUMBER)


def sector_charge(name: str, values: Sequence[float]) -> ExtraCharge:
    """A function of the dimer particle number: values[N] on the sector with N particles."""
    if len(values) != 3:
        raise ConfigError(f"Need one value per sector N = 0, 1, 2, got {len(values)}")
    n = np.real(np.diag(NUMBER.matrix)).round().astype(int)
    return ExtraCharge(name, diag([values[k] for k in n]))


def dimer_charges() -> List[ExtraCharge]:
    """Three conserved charges of the dimer: N, N^2 and Z_1 Z_2."""
    nsq = validate_hermitian(NUMBER.matrix @ NUMBER.matrix)
    return [
        number_charge(),
        ExtraCharge("N2", nsq),
        ExtraCharge("ZZ", kron(SIGMA_Z, SIGMA_Z)),
    ]


MODEL_BUILDERS: Dict[str, object] = {
    "two_qubit": model_two_qubit,
    "spin_chain": model_spin_chain,
    "hopping_dimer": model_hopping_dimer,
}


def build_model(kind: str, params: Dict[str, object]) -> CompositeModel:
    builder = MODEL_BUILDERS.get(kind)
    if builder is None:
        raise ConfigError(f"Unknown model '{kind}'. Known models: {sorted(MODEL_BUILDERS)}")
    try:
        return builder(**params)  # type: ignore[operator]
    except TypeError as e:
        raise ConfigError(f"Bad parameters for model '{kind}': {e}") from e
