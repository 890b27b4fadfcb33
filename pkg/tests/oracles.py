"""Independent reference computations shared by unit and acceptance tests."""

import math

import numpy as np


def gumbel_logpdf(z, loc, scale_inv):
    """log density of (loc + eps) / b at z, written with b = scale_inv: log b - (b z - a + exp(a - b z))."""
    return math.log(scale_inv) - (scale_inv * z - loc + np.exp(loc - scale_inv * z))


def mc_kl(X, tau, tau_prior, draws, seed):
    """Monte Carlo E_q[log q - log p] summed over components, with its standard error."""
    rng = np.random.default_rng(seed)
    total = np.zeros(draws)
    for x in np.asarray(X).ravel():
        z = (x + rng.gumbel(size=draws)) / tau
        total += gumbel_logpdf(z, x, tau) - gumbel_logpdf(z, 0.0, tau_prior)
    return total.mean(), total.std(ddof=1) / math.sqrt(draws)


def random_doubly_stochastic(n, rng):
    """A random point of the Birkhoff polytope: Dirichlet weights over a few random permutation matrices."""
    k = int(rng.integers(1, 2 * n + 1))
    weights = rng.dirichlet(np.ones(k))
    P = np.zeros((n, n))
    for w in weights:
        P[np.arange(n), rng.permutation(n)] += w
    return P
