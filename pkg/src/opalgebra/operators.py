"""
Dense Hermitian operators.

Every observable in the toolkit (charges, Hamiltonians, effective potentials,
modified energy operators) is a HermitianOperator: an immutable complex
matrix checked for Hermiticity once at construction.

Kronecker convention: the first factor varies slowest (numpy.kron order).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ValidationError as PydValidationError

from src.common.errors import ConfigError, ToolkitError
from src.common.settings import DEFAULT_TOLERANCES, Tolerances

logger = logging.getLogger(__name__)


class NonHermitian(ToolkitError):
    pass


class DimMismatch(ToolkitError):
    pass


class DomainError(ToolkitError):
    pass


class ConvergenceFailure(ToolkitError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    matrix: np.ndarray

    # numpy scalars defer to __rmul__ instead of broadcasting over the object
    __array_ufunc__ = None

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])

    def __add__(self, other: "HermitianOperator") -> "HermitianOperator":
        _check_same_dim(self, other)
        return _trusted(self.matrix + other.matrix)

    def __sub__(self, other: "HermitianOperator") -> "HermitianOperator":
        _check_same_dim(self, other)
        return _trusted(self.matrix - other.matrix)

    def __neg__(self) -> "HermitianOperator":
        return _trusted(-self.matrix)

    def __mul__(self, scalar: float) -> "HermitianOperator":
        if isinstance(scalar, complex) or np.iscomplexobj(scalar):
            raise NonHermitian("Only real scalars preserve Hermiticity")
        return _trusted(float(scalar) * self.matrix)

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "HermitianOperator":
        return self * (1.0 / float(scalar))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.matrix))) if self.matrix.size else 0.0


def _trusted(matrix: np.ndarray) -> HermitianOperator:
    # internal: result of operations that preserve Hermiticity up to roundoff
    m = np.asarray(matrix, dtype=complex)
    return HermitianOperator(_frozen(0.5 * (m + m.conj().T)))


def _check_same_dim(a: HermitianOperator, b: HermitianOperator) -> None:
    if a.dim != b.dim:
        raise DimMismatch(f"Operator dims differ: {a.dim} vs {b.dim}")


def validate_hermitian(matrix, tol: Tolerances | None = None) -> HermitianOperator:
    """
    Accept a square complex matrix as a HermitianOperator.

    Deviations below herm_tol * max|entry| are symmetrized away; anything
    larger raises NonHermitian.
    """
    tol = tol or DEFAULT_TOLERANCES
    m = np.asarray(matrix, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise DimMismatch(f"Operator matrix must be square and non-empty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DomainError("Operator matrix has non-finite entries")
    scale = float(np.max(np.abs(m)))
    deviation = float(np.max(np.abs(m - m.conj().T)))
    if deviation > tol.herm_tol * scale:
        raise NonHermitian(
            f"Matrix deviates from its adjoint by {deviation:.3e} "
            f"(allowed {tol.herm_tol * scale:.3e})"
        )
    return _trusted(m)


def identity(dim: int) -> HermitianOperator:
    return _trusted(np.eye(dim, dtype=complex))


def zero(dim: int) -> HermitianOperator:
    return _trusted(np.zeros((dim, dim), dtype=complex))


def diag(values: Sequence[float]) -> HermitianOperator:
    return _trusted(np.diag(np.asarray(values, dtype=float)).astype(complex))


SIGMA_X = validate_hermitian([[0, 1], [1, 0]])
SIGMA_Y = validate_hermitian([[0, -1j], [1j, 0]])
SIGMA_Z = validate_hermitian([[1, 0], [0, -1]])
IDENTITY_2 = identity(2)


# -----------------------------
# Spectral decomposition
# -----------------------------


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns |e_n>

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T

    def in_basis(self, op: HermitianOperator) -> np.ndarray:
        """Matrix elements <e_n|op|e_m>."""
        v = self.eigenvectors
        return v.conj().T @ op.matrix @ v


def eig(op: HermitianOperator) -> SpectralDecomposition:
    try:
        w, v = scipy.linalg.eigh(op.matrix)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise ConvergenceFailure(f"eigh did not converge on a {op.dim}x{op.dim} operator: {e}") from e
    w = np.asarray(w, dtype=float)
    w.setflags(write=False)
    v = _frozen(v)
    return SpectralDecomposition(eigenvalues=w, eigenvectors=v)


def from_spectrum(values: np.ndarray, vectors: np.ndarray) -> HermitianOperator:
    v = np.asarray(vectors)
    return _trusted((v * np.asarray(values, dtype=float)) @ v.conj().T)


def matrix_fn(
    op: HermitianOperator,
    f: Callable[[np.ndarray], np.ndarray],
    domain: Callable[[np.ndarray], np.ndarray] | None = None,
    name: str = "f",
) -> HermitianOperator:
    """
    Apply a real function to the spectrum of op.

    `domain` is an optional predicate on eigenvalues; any eigenvalue failing it,
    or any non-finite image, raises DomainError.
    """
    sd = eig(op)
    x = sd.eigenvalues
    if domain is not None:
        ok = np.asarray(domain(x), dtype=bool)
        if not np.all(ok):
            raise DomainError(f"{name} undefined on eigenvalue(s) {x[~ok].tolist()}")
    with np.errstate(all="ignore"):
        fx = np.asarray(f(x), dtype=float)
    if not np.all(np.isfinite(fx)):
        raise DomainError(f"{name} produced non-finite values on spectrum {x.tolist()}")
    return from_spectrum(fx, sd.eigenvectors)


def expm_h(op: HermitianOperator) -> HermitianOperator:
    return matrix_fn(op, np.exp, name="exp")


def logm_h(op: HermitianOperator) -> HermitianOperator:
    return matrix_fn(op, np.log, domain=lambda x: x > 0, name="ln")


def powm_h(op: HermitianOperator, power: float) -> HermitianOperator:
    return matrix_fn(op, lambda x: np.power(x, power), domain=lambda x: x >= 0, name=f"x**{power}")


# -----------------------------
# Products and structure
# -----------------------------


def kron(a: HermitianOperator, b: HermitianOperator) -> HermitianOperator:
    return _trusted(np.kron(a.matrix, b.matrix))


def kron_all(ops: Sequence[HermitianOperator]) -> HermitianOperator:
    if not ops:
        raise DimMismatch("kron_all needs at least one factor")
    out = ops[0].matrix
    for op in ops[1:]:
        out = np.kron(out, op.matrix)
    return _trusted(out)


def embed(op: HermitianOperator, dims: Sequence[int], index: int) -> HermitianOperator:
    """op acting on factor `index`, identity on the others."""
    if not 0 <= index < len(dims):
        raise DimMismatch(f"Factor index {index} outside layout {list(dims)}")
    if op.dim != dims[index]:
        raise DimMismatch(f"Operator dim {op.dim} does not match factor dim {dims[index]}")
    factors = [identity(d) if i != index else op for i, d in enumerate(dims)]
    return kron_all(factors)


def commutator(a: HermitianOperator, b: HermitianOperator) -> np.ndarray:
    _check_same_dim(a, b)
    return a.matrix @ b.matrix - b.matrix @ a.matrix


def commutator_norm(a: HermitianOperator, b: HermitianOperator) -> float:
    return float(np.max(np.abs(commutator(a, b))))


def max_norm_distance(a, b) -> float:
    ma = a.matrix if isinstance(a, HermitianOperator) else np.asarray(a)
    mb = b.matrix if isinstance(b, HermitianOperator) else np.asarray(b)
    return float(np.max(np.abs(ma - mb)))


# -----------------------------
# JSON codec
# -----------------------------


class OperatorPayload(BaseModel):
    dim: int
    re: List[List[float]]
    im: List[List[float]]


def operator_to_payload(op: HermitianOperator) -> OperatorPayload:
    return OperatorPayload(dim=op.dim, re=op.matrix.real.tolist(), im=op.matrix.imag.tolist())


def operator_from_payload(raw) -> HermitianOperator:
    try:
        payload = raw if isinstance(raw, OperatorPayload) else OperatorPayload.model_validate(raw)
    except PydValidationError as e:
        raise ConfigError(f"Invalid operator payload: {e}") from e
    re = np.asarray(payload.re, dtype=float)
    im = np.asarray(payload.im, dtype=float)
    if re.shape != (payload.dim, payload.dim) or im.shape != re.shape:
        raise ConfigError(
            f"Operator payload declares dim={payload.dim} but re/im have shapes {re.shape}/{im.shape}"
        )
    return validate_hermitian(re + 1j * im)
