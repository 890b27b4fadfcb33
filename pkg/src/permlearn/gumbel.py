"""Gumbel noise, Gumbel-Matching / Gumbel-Sinkhorn samplers and the Gumbel-space KL.

Every random draw is keyed by ``(seed, index)``: the stream for draw ``k``
does not depend on how many draws came before it, so batched or parallel
sampling returns the same values as a sequential loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .matching import hungarian
from .perm import Permutation, as_logits
from .sinkhorn import SinkhornConfig, sinkhorn

EULER_GAMMA = float(np.euler_gamma)
MAX_TEMPERATURE_RATIO = 50.0
_U_CLAMP = 1e-20
_EXP_LIMIT = math.log(np.finfo(np.float64).max)


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the stream named by ``(seed, *key)``."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), *(int(k) for k in key)])
    return np.random.Generator(np.random.Philox(ss))


def gumbel(shape, seed: int, index: int = 0) -> np.ndarray:
    u = rng_for(seed, index).random(shape)
    u = np.clip(u, _U_CLAMP, 1.0 - _U_CLAMP)
    return -np.log(-np.log(u))


@dataclass(frozen=True)
class GumbelNoise:
    entries: np.ndarray
    seed: int
    index: int = 0


def sample_gumbel(n: int, seed: int, index: int = 0) -> GumbelNoise:
    """An ``n x n`` matrix of i.i.d. standard Gumbel draws."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    return GumbelNoise(gumbel((n, n), seed, index), seed, index)


def sample_gumbel_matching(X, seed: int, index: int = 0) -> Permutation:
    """One draw of M(X + eps)."""
    X = as_logits(X)
    eps = gumbel(X.shape, seed, index)
    return hungarian(X + eps)


def sample_gumbel_sinkhorn(X, cfg: SinkhornConfig | None = None, seed: int = 0, index: int = 0) -> np.ndarray:
    """One draw of S((X + eps) / tau), sharing ``eps`` with the matching sampler at the same key."""
    X = as_logits(X)
    eps = gumbel(X.shape, seed, index)
    return sinkhorn(X + eps, cfg)


def gumbel_batch(shape, seed: int, count: int, start: int = 0) -> np.ndarray:
    """Stack of ``count`` noise draws with indices ``start .. start + count - 1``."""
    return np.stack([gumbel(shape, seed, start + k) for k in range(count)])


def gumbel_matching_samples(X, seed: int, count: int) -> list[Permutation]:
    X = as_logits(X)
    return [hungarian(X + e) for e in gumbel_batch(X.shape, seed, count)]


def gumbel_sinkhorn_samples(X, cfg: SinkhornConfig | None, seed: int, count: int) -> np.ndarray:
    X = as_logits(X)
    return sinkhorn(X[None] + gumbel_batch(X.shape, seed, count), cfg)


@dataclass(frozen=True)
class KlParams:
    X: np.ndarray
    tau: float
    tau_prior: float

    def __post_init__(self):
        if not (self.tau > 0 and self.tau_prior > 0):
            raise DomainError(f"temperatures must be positive: tau={self.tau}, tau_prior={self.tau_prior}")


def _temperature_ratio(p: KlParams) -> float:
    r = p.tau_prior / p.tau
    if r > MAX_TEMPERATURE_RATIO:
        raise DomainError(
            f"tau_prior / tau = {r:.4g} exceeds {MAX_TEMPERATURE_RATIO:g}; Gamma(1 + r) is not usable"
        )
    return r


def _checked_exp_terms(X: np.ndarray, r: float) -> np.ndarray:
    arg = -X * r
    bad = np.argwhere(arg > _EXP_LIMIT)
    if bad.size:
        i, j = (int(v) for v in bad[0])
        raise OverflowError(
            f"exp(-x * tau_prior / tau) overflows at entry ({i}, {j}) with x = {X[i, j]!r}"
        )
    return np.exp(arg)


def kl_gumbel_space(p: KlParams) -> float:
    """KL((X + eps) / tau || eps / tau_prior) summed over all N^2 independent components."""
    X = as_logits(p.X)
    r = _temperature_ratio(p)
    n2 = X.size
    gamma_term = math.exp(math.lgamma(1.0 + r))
    const = n2 * (math.log(p.tau / p.tau_prior) - 1.0 + EULER_GAMMA * (r - 1.0))
    s1 = r * float(X.sum())
    s2 = float(_checked_exp_terms(X, r).sum())
    return const + s1 + gamma_term * s2


def kl_gumbel_space_grad(p: KlParams) -> np.ndarray:
    """Gradient of :func:`kl_gumbel_space` with respect to ``X``."""
    X = as_logits(p.X)
    r = _temperature_ratio(p)
    gamma_term = math.exp(math.lgamma(1.0 + r))
    return r - gamma_term * r * _checked_exp_terms(X, r)


def _as_distribution(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1 or np.any(d < 0) or not np.isclose(d.sum(), 1.0):
        raise DomainError("expected a 1-D probability vector")
    return d


def discrete_kl(q, p) -> float:
    """KL(q || p) by exact summation; ``math.inf`` when q puts mass where p has none."""
    q, p = _as_distribution(q), _as_distribution(p)
    support = q > 0
    if np.any(p[support] == 0):
        return math.inf
    return float(np.sum(q[support] * np.log(q[support] / p[support])))


def pushforward(d, g, n_out: int | None = None) -> np.ndarray:
    """Law of g(Z) for Z ~ d, with ``g`` given as an index array or callable on indices."""
    d = _as_distribution(d)
    targets = np.array([g(i) for i in range(d.size)] if callable(g) else g, dtype=np.intp)
    if targets.shape != d.shape:
        raise DomainError("map must assign one target to every support point")
    out = np.zeros(n_out if n_out is not None else int(targets.max()) + 1)
    np.add.at(out, targets, d)
    return out


def kl_data_processing_check(q, p, g):
    """Return (KL(q || p), KL(g(q) || g(p))); the first is never smaller up to 1e-12."""
    q, p = _as_distribution(q), _as_distribution(p)
    targets = np.array([g(i) for i in range(q.size)] if callable(g) else g, dtype=np.intp)
    n_out = int(targets.max()) + 1
    before = discrete_kl(q, p)
    after = discrete_kl(pushforward(q, targets, n_out), pushforward(p, targets, n_out))
    return before, after
