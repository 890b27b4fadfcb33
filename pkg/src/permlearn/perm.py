"""Permutation and matrix primitives plus the evaluation metrics.

Orientation convention used everywhere in the package: a permutation
``mapping`` sends row ``i`` (a scrambled piece) to column ``mapping[i]``
(its position in the original object).  The permutation matrix ``P`` has
``P[i, mapping[i]] = 1`` and the reconstruction of a stacked object
``scrambled`` is ``P.T @ scrambled``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError, FeasibilityError

DS_TOL = 1e-6
_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class Permutation:
    mapping: tuple

    def __post_init__(self):
        mapping = tuple(int(m) for m in self.mapping)
        if sorted(mapping) != list(range(len(mapping))):
            raise DomainError(f"not a bijection on 0..{len(mapping) - 1}: {mapping}")
        object.__setattr__(self, "mapping", mapping)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    @classmethod
    def from_matrix(cls, matrix) -> "Permutation":
        m = np.asarray(matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {m.shape}")
        if not np.all((m == 0) | (m == 1)):
            raise DomainError("permutation matrix must be 0/1 valued")
        if not (np.all(m.sum(axis=0) == 1) and np.all(m.sum(axis=1) == 1)):
            raise DomainError("permutation matrix needs exactly one 1 per row and column")
        return cls(tuple(int(j) for j in m.argmax(axis=1)))

    def __len__(self):
        return len(self.mapping)

    @property
    def n(self) -> int:
        return len(self.mapping)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.mapping, dtype=np.intp)

    def to_matrix(self) -> np.ndarray:
        m = np.zeros((self.n, self.n))
        m[np.arange(self.n), self.as_array()] = 1.0
        return m

    def inverse(self) -> "Permutation":
        return Permutation(tuple(int(i) for i in np.argsort(self.as_array())))

    def reconstruct(self, scrambled):
        """Return ``P.T @ scrambled``: piece ``i`` lands in slot ``mapping[i]``."""
        scrambled = np.asarray(scrambled)
        if scrambled.shape[0] != self.n:
            raise DimensionError(
                f"object has {scrambled.shape[0]} pieces, permutation has {self.n}"
            )
        out = np.empty_like(scrambled)
        out[self.as_array()] = scrambled
        return out


@dataclass(frozen=True)
class MetricsReport:
    prop_any_wrong: float
    prop_wrong: float
    kendall_tau: float
    l1: float
    l2: float

    def as_dict(self) -> dict:
        return {
            "prop_any_wrong": self.prop_any_wrong,
            "prop_wrong": self.prop_wrong,
            "kendall_tau": self.kendall_tau,
            "l1": self.l1,
            "l2": self.l2,
        }


def as_logits(X) -> np.ndarray:
    """Validate a square, finite logits matrix (batched leading axes allowed)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim < 2 or X.shape[-1] != X.shape[-2]:
        raise DimensionError(f"logits must be square, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DomainError("logits contain NaN or Inf")
    return X


def check_doubly_stochastic(P, tol: float = DS_TOL) -> np.ndarray:
    """Raise FeasibilityError unless ``P`` lies in the Birkhoff polytope up to ``tol``."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise FeasibilityError("matrix has non-finite entries")
    if P.min() < -tol or P.max() > 1 + tol:
        raise FeasibilityError("entries outside [0, 1]")
    row_err = np.abs(P.sum(axis=1) - 1).max()
    col_err = np.abs(P.sum(axis=0) - 1).max()
    if max(row_err, col_err) > tol:
        raise FeasibilityError(
            f"row/column sums deviate from 1 by {max(row_err, col_err):.3g} > {tol:g}"
        )
    return P


def is_doubly_stochastic(P, tol: float = DS_TOL) -> bool:
    try:
        check_doubly_stochastic(P, tol)
    except (FeasibilityError, DimensionError):
        return False
    return True


def frobenius_inner(A, B) -> float:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"shape mismatch: {A.shape} vs {B.shape}")
    return float(np.sum(A * B))


def entropy(P) -> float:
    """h(P) = -sum P log P with 0 log 0 = 0."""
    P = np.asarray(P, dtype=np.float64)
    if np.any(P < 0):
        raise DomainError("entropy is undefined for negative entries")
    return float(-np.sum(P * np.log(np.maximum(P, _LOG_FLOOR))))


def _as_mapping(p) -> np.ndarray:
    if isinstance(p, Permutation):
        return p.as_array()
    return Permutation(tuple(p)).as_array()


def kendall_tau(p, q) -> float:
    """Kendall tau-a between two rankings of the same items."""
    a, b = _as_mapping(p), _as_mapping(q)
    if a.shape != b.shape:
        raise DimensionError(f"size mismatch: {a.size} vs {b.size}")
    n = a.size
    if n < 2:
        return 1.0
    da = np.sign(a[:, None] - a[None, :])
    db = np.sign(b[:, None] - b[None, :])
    s = np.sum(np.triu(da * db, k=1))
    return float(s / (n * (n - 1) / 2))


def reconstruction_metrics(
    truth: Sequence,
    predicted_perm,
    scrambled: Sequence,
    true_perm,
) -> MetricsReport:
    """Per-object metrics.  ``prop_any_wrong`` is 0/1 here; average it over a batch.

    ``l1`` is the mean absolute error and ``l2`` the root-mean-square error
    between ``truth`` and the predicted reconstruction.
    """
    pred = predicted_perm if isinstance(predicted_perm, Permutation) else Permutation(tuple(predicted_perm))
    true = true_perm if isinstance(true_perm, Permutation) else Permutation(tuple(true_perm))
    truth = np.asarray(truth, dtype=np.float64)
    scrambled = np.asarray(scrambled, dtype=np.float64)
    if not (pred.n == true.n == truth.shape[0] == scrambled.shape[0]):
        raise DimensionError("truth, scrambled and permutations disagree in size")
    if truth.shape != scrambled.shape:
        raise DimensionError(f"truth {truth.shape} vs scrambled {scrambled.shape}")
    wrong = pred.as_array() != true.as_array()
    diff = truth - pred.reconstruct(scrambled)
    return MetricsReport(
        prop_any_wrong=float(wrong.any()),
        prop_wrong=float(wrong.mean()),
        kendall_tau=kendall_tau(pred, true),
        l1=float(np.mean(np.abs(diff))),
        l2=float(np.sqrt(np.mean(diff ** 2))),
    )
