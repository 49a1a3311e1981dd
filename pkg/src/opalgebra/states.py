"""
Density matrices and state functionals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import scipy.special
from pydantic import BaseModel, Field

from src.common.errors import ToolkitError
from src.common.settings import DEFAULT_TOLERANCES, Tolerances

from .operators import (
    DimMismatch,
    HermitianOperator,
    _trusted,
    eig,
    from_spectrum,
    validate_hermitian,
)

logger = logging.getLogger(__name__)


class NotADensityMatrix(ToolkitError):
    pass


class LayoutMismatch(ToolkitError):
    pass


# ---------- layout ----------


class SubsystemLayout(BaseModel):
    model_config = {"frozen": True}

    dims: Tuple[int, ...] = Field(min_length=1)

    @property
    def total(self) -> int:
        return int(np.prod(self.dims))

    def check(self, dim: int) -> None:
        if any(d < 1 for d in self.dims):
            raise LayoutMismatch(f"Subsystem dims must be positive, got {list(self.dims)}")
        if self.total != dim:
            raise LayoutMismatch(
                f"Layout {list(self.dims)} has total {self.total}, operator dim is {dim}"
            )


def layout(*dims: int) -> SubsystemLayout:
    return SubsystemLayout(dims=tuple(int(d) for d in dims))


# ---------- density matrix ----------


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    op: HermitianOperator

    @property
    def matrix(self) -> np.ndarray:
        return self.op.matrix

    @property
    def dim(self) -> int:
        return self.op.dim


def density_matrix(matrix, tol: Tolerances | None = None) -> DensityMatrix:
    """Validate trace and positivity; accepts a raw matrix or a HermitianOperator."""
    tol = tol or DEFAULT_TOLERANCES
    op = matrix if isinstance(matrix, HermitianOperator) else validate_hermitian(matrix, tol)
    tr = float(np.trace(op.matrix).real)
    if abs(tr - 1.0) > tol.trace_tol:
        raise NotADensityMatrix(f"Trace is {tr!r}, expected 1 within {tol.trace_tol}")
    lo = float(eig(op).eigenvalues[0])
    if lo < -tol.trace_tol:
        raise NotADensityMatrix(f"Smallest eigenvalue {lo:.3e} is below -{tol.trace_tol}")
    return DensityMatrix(op)


def pure_state(vector: Sequence[complex]) -> DensityMatrix:
    v = np.asarray(vector, dtype=complex)
    v = v / np.linalg.norm(v)
    return DensityMatrix(_trusted(np.outer(v, v.conj())))


def maximally_mixed(dim: int) -> DensityMatrix:
    return DensityMatrix(_trusted(np.eye(dim, dtype=complex) / dim))


@dataclass(frozen=True, eq=False)
class ClippedSpectrum:
    probs: np.ndarray
    vectors: np.ndarray
    clipped_mass: float

    def in_basis(self, op: HermitianOperator) -> np.ndarray:
        v = self.vectors
        return v.conj().T @ op.matrix @ v


def clipped_spectrum(rho: DensityMatrix, tol: Tolerances | None = None) -> ClippedSpectrum:
    """
    Eigenvalues of rho with everything at or below psd_clip set to exactly zero.

    Downstream closed forms use the analytic limits of their kernels at p = 0,
    so no positive floor is substituted. The absolute mass removed is reported.
    """
    tol = tol or DEFAULT_TOLERANCES
    sd = eig(rho.op)
    p = np.array(sd.eigenvalues, dtype=float)
    small = p <= tol.psd_clip
    mass = float(np.sum(np.abs(p[small])))
    if np.any(small):
        logger.debug("clipped %d eigenvalue(s), mass %.3e", int(np.sum(small)), mass)
    p[small] = 0.0
    return ClippedSpectrum(probs=p, vectors=np.asarray(sd.eigenvectors), clipped_mass=mass)


# ---------- Gibbs primitive ----------


def shifted_exp(op: HermitianOperator) -> Tuple[HermitianOperator, float]:
    """
    Return (e^{-(op - s)}, s) with s the smallest eigenvalue of op.

    The shifted exponential has largest eigenvalue exactly 1, so it never
    overflows; e^{-op} = e^{-s} * result.
    """
    sd = eig(op)
    s = float(sd.eigenvalues[0])
    w = np.exp(-(sd.eigenvalues - s))
    return from_spectrum(w, sd.eigenvectors), s


def exp_normalized(op: HermitianOperator) -> Tuple[DensityMatrix, float]:
    """e^{-op}/tr e^{-op} together with ln tr e^{-op}."""
    sd = eig(op)
    s = float(sd.eigenvalues[0])
    w = np.exp(-(sd.eigenvalues - s))
    total = float(np.sum(w))
    rho = DensityMatrix(from_spectrum(w / total, sd.eigenvectors))
    return rho, float(np.log(total) - s)


# ---------- partial trace ----------


def partial_trace_matrix(matrix: np.ndarray, lay: SubsystemLayout, keep: int) -> np.ndarray:
    m = np.asarray(matrix, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimMismatch(f"partial trace needs a square matrix, got {m.shape}")
    lay.check(m.shape[0])
    n = len(lay.dims)
    if not 0 <= keep < n:
        raise LayoutMismatch(f"keep={keep} outside layout {list(lay.dims)}")
    dk = lay.dims[keep]
    rest = lay.total // dk
    t = m.reshape(tuple(lay.dims) + tuple(lay.dims))
    order = [keep] + [i for i in range(n) if i != keep]
    t = t.transpose(order + [n + i for i in order]).reshape(dk, rest, dk, rest)
    return np.einsum("iaja->ij", t)


def partial_trace(rho: DensityMatrix, lay: SubsystemLayout, keep: int) -> DensityMatrix:
    return DensityMatrix(_trusted(partial_trace_matrix(rho.matrix, lay, keep)))


# ---------- functionals ----------


def _check_dims(rho: DensityMatrix, *ops: HermitianOperator) -> None:
    for op in ops:
        if op.dim != rho.dim:
            raise DimMismatch(f"State dim {rho.dim} does not match operator dim {op.dim}")


def expectation(rho: DensityMatrix, obs: HermitianOperator) -> float:
    _check_dims(rho, obs)
    return float(np.real(np.einsum("ij,ji->", rho.matrix, obs.matrix)))


def centered(rho: DensityMatrix, obs: HermitianOperator) -> HermitianOperator:
    """dO = O - <O>."""
    mean = expectation(rho, obs)
    return _trusted(obs.matrix - mean * np.eye(obs.dim))


def variance(rho: DensityMatrix, obs: HermitianOperator) -> float:
    d = centered(rho, obs).matrix
    v = float(np.real(np.trace(rho.matrix @ d @ d)))
    return max(v, 0.0)


def raw_covariance(rho: DensityMatrix, x: HermitianOperator, y: HermitianOperator) -> complex:
    """<XY> - <X><Y>, complex for non-commuting arguments."""
    _check_dims(rho, x, y)
    xy = complex(np.trace(rho.matrix @ x.matrix @ y.matrix))
    return xy - expectation(rho, x) * expectation(rho, y)


def covariance(rho: DensityMatrix, x: HermitianOperator, y: HermitianOperator) -> float:
    """Symmetrized covariance (1/2)<{X,Y}> - <X><Y>."""
    return float(raw_covariance(rho, x, y).real)


def von_neumann_entropy(rho: DensityMatrix, tol: Tolerances | None = None) -> float:
    cs = clipped_spectrum(rho, tol)
    return float(np.sum(scipy.special.entr(cs.probs)))


def root_fidelity(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """tr sqrt(sqrt(rho) sigma sqrt(rho)), in [0, 1]."""
    _check_dims(rho, sigma.op)
    sd = eig(rho.op)
    sqrt_rho = from_spectrum(np.sqrt(np.clip(sd.eigenvalues, 0.0, None)), sd.eigenvectors)
    inner = _trusted(sqrt_rho.matrix @ sigma.matrix @ sqrt_rho.matrix)
    w = np.clip(eig(inner).eigenvalues, 0.0, None)
    return float(min(np.sum(np.sqrt(w)), 1.0))


def state_list_mix(states: List[DensityMatrix], weights: Sequence[float]) -> DensityMatrix:
    w = np.asarray(weights, dtype=float)
    if len(states) != len(w) or np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-12:
        raise NotADensityMatrix("Mixture weights must be non-negative and sum to 1")
    out = sum(wi * s.matrix for wi, s in zip(w, states))
    return DensityMatrix(_trusted(np.asarray(out)))
