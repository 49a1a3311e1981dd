"""
Seeded random operators and states (Philox counter-based generator).
"""

from __future__ import annotations

import numpy as np

from src.opalgebra.operators import HermitianOperator, validate_hermitian
from src.opalgebra.states import DensityMatrix, density_matrix


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent stream per (seed, *stream) key."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def random_hermitian(rng: np.random.Generator, dim: int, scale: float = 1.0) -> HermitianOperator:
    """GUE-style (A + A^dagger)/2 with unit-normal complex entries."""
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return validate_hermitian(scale * 0.5 * (a + a.conj().T))


def random_unitary(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Haar unitary via QR with phase correction."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def random_density_matrix(
    rng: np.random.Generator, dim: int, min_eig: float = 1e-3
) -> DensityMatrix:
    """Full-rank state with a random spectrum (smallest weight >= min_eig / dim) in a Haar basis."""
    p = rng.dirichlet(np.ones(dim))
    p = (1.0 - min_eig) * p + min_eig / dim
    u = random_unitary(rng, dim)
    return density_matrix((u * p) @ u.conj().T)


def random_commuting_charges(
    rng: np.random.Generator, dim: int, count: int
) -> list[HermitianOperator]:
    """Charges diagonal in one shared random basis."""
    u = random_unitary(rng, dim)
    return [
        validate_hermitian((u * rng.standard_normal(dim)) @ u.conj().T) for _ in range(count)
    ]
