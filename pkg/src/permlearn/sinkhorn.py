"""Truncated, temperature-scaled Sinkhorn normalization.

The operator starts from ``exp(X / tau)`` and applies ``iterations`` rounds
of row normalization followed by column normalization.  The default path
works on ``log S`` so that small temperatures do not overflow.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from .errors import DomainError
from .perm import DS_TOL, as_logits, check_doubly_stochastic, entropy, frobenius_inner


@dataclass(frozen=True)
class SinkhornConfig:
    tau: float = 1.0
    iterations: int = 20
    log_space: bool = True
    final_row_pass: bool = False

    def __post_init__(self):
        if not (self.tau > 0 and np.isfinite(self.tau)):
            raise DomainError(f"tau must be positive, got {self.tau}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise DomainError(f"iterations must be a positive integer, got {self.iterations}")


_UNDERFLOW_GUARD = 1e-200


def axis_sum(a: np.ndarray, axis: int) -> np.ndarray:
    """Sum over one of the last two axes, keeping dims.

    Goes through a matmul with a ones vector, which is several times faster
    than ``ndarray.sum`` when the reduced axis is short.
    """
    if axis in (-1, a.ndim - 1):
        return a @ np.ones((a.shape[-1], 1))
    if axis in (-2, a.ndim - 2):
        return np.ones((1, a.shape[-2])) @ a
    return a.sum(axis=axis, keepdims=True)


def lognorm(a: np.ndarray, axis: int):
    """Return ``(a - logsumexp(a, axis), softmax(a, axis))`` over axis -1 or -2.

    A single global shift is tried first; if any slice underflows it is
    redone with a per-slice maximum.
    """
    shifted = a - a.max()
    e = np.exp(shifted)
    total = axis_sum(e, axis)
    if total.min() < _UNDERFLOW_GUARD:
        shifted = a - a.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        total = axis_sum(e, axis)
    return shifted - np.log(total), e / total


def logsumexp(a: np.ndarray, axis: int, keepdims: bool = True) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)


def log_sinkhorn(log_alpha: np.ndarray, iterations: int, final_row_pass: bool = False) -> np.ndarray:
    """Alternate log-domain row/column normalization over the last two axes."""
    out = np.array(log_alpha, dtype=np.float64)
    for _ in range(iterations):
        out = lognorm(out, -1)[0]
        out = lognorm(out, -2)[0]
    if final_row_pass:
        out = lognorm(out, -1)[0]
    return out


def _naive_sinkhorn(scaled: np.ndarray, iterations: int, final_row_pass: bool) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        S = np.exp(scaled)
        for _ in range(iterations):
            S = S / S.sum(axis=-1, keepdims=True)
            S = S / S.sum(axis=-2, keepdims=True)
        if final_row_pass:
            S = S / S.sum(axis=-1, keepdims=True)
    return S


def sinkhorn(X, cfg: SinkhornConfig | None = None) -> np.ndarray:
    """Return ``S^L(X / tau)``; accepts a single ``(N, N)`` matrix or a batch ``(..., N, N)``."""
    cfg = cfg or SinkhornConfig()
    X = as_logits(X)
    scaled = X / cfg.tau
    if not cfg.log_space:
        S = _naive_sinkhorn(scaled, cfg.iterations, cfg.final_row_pass)
        if np.all(np.isfinite(S)):
            return S
        # exp overflowed or a row underflowed to zero: fall through to log space
    return np.exp(log_sinkhorn(scaled, cfg.iterations, cfg.final_row_pass))


def row_softmax(x, tau: float = 1.0) -> np.ndarray:
    """The one-sided variant: exp(x / tau) with a single row normalization."""
    x = np.asarray(x, dtype=np.float64) / tau
    return np.exp(x - logsumexp(x, axis=-1, keepdims=True))


def entropy_reg_objective(P, X, tau: float, tol: float = DS_TOL) -> float:
    """<P, X>_F + tau * h(P) for a doubly stochastic ``P``."""
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau}")
    P = check_doubly_stochastic(P, tol)
    return frobenius_inner(P, X) + tau * entropy(P)


def exact_marginals(X) -> np.ndarray:
    """E[P] under p(P) proportional to exp(<P, X>_F), by enumerating all N! permutations."""
    X = as_logits(X)
    n = X.shape[0]
    if n > 8:
        raise DomainError("exact marginals enumerate N! permutations; N <= 8 only")
    perms = np.array(list(itertools.permutations(range(n))))
    scores = X[np.arange(n), perms].sum(axis=1)
    w = np.exp(scores - logsumexp(scores, axis=0))
    out = np.zeros((n, n))
    for i in range(n):
        np.add.at(out[i], perms[:, i], w)
    return out
