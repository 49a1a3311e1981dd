"""
Operator families: maps from a Lagrange-coefficient vector to a Hermitian operator.

Families are plain callables wrapped with their shape metadata. They must be
reentrant; every derivative in the toolkit is taken by evaluating a family at
nearby points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from src.common.errors import ToolkitError

from .operators import DimMismatch, HermitianOperator, _trusted


class EvaluationFailure(ToolkitError):
    pass


@dataclass(frozen=True)
class OperatorFamily:
    evaluate: Callable[[np.ndarray], HermitianOperator]
    dim: int
    param_count: int
    name: str = "family"

    def __call__(self, lambdas: Sequence[float]) -> HermitianOperator:
        lam = np.asarray(lambdas, dtype=float)
        if lam.shape != (self.param_count,):
            raise DimMismatch(
                f"{self.name} takes {self.param_count} parameter(s), got shape {lam.shape}"
            )
        try:
            out = self.evaluate(lam)
        except ToolkitError as e:
            raise EvaluationFailure(f"{self.name} failed at lambdas={lam.tolist()}: {e}") from e
        if out.dim != self.dim:
            raise DimMismatch(f"{self.name} returned dim {out.dim}, declared {self.dim}")
        return out

    def rename(self, name: str) -> "OperatorFamily":
        return OperatorFamily(self.evaluate, self.dim, self.param_count, name)


def constant_family(op: HermitianOperator, param_count: int, name: str = "const") -> OperatorFamily:
    return OperatorFamily(lambda lam: op, op.dim, param_count, name)


def linear_family(ops: Sequence[HermitianOperator], name: str = "linear") -> OperatorFamily:
    """lambda -> sum_i lambda_i * ops[i]."""
    mats = np.stack([o.matrix for o in ops])
    dim = ops[0].dim

    def _eval(lam: np.ndarray) -> HermitianOperator:
        return _trusted(np.tensordot(lam, mats, axes=1))

    return OperatorFamily(_eval, dim, len(ops), name)
