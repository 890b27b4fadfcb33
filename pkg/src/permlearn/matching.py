"""Maximum-weight perfect matching: Hungarian algorithm and an enumeration oracle."""

from __future__ import annotations

import itertools
from collections import deque

import numpy as np

from .errors import DimensionError, DomainError, SizeError
from .perm import Permutation

BRUTE_FORCE_MAX_N = 8


def _check_square(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {X.shape}")
    if X.shape[0] == 0:
        raise DimensionError("empty matrix")
    if not np.all(np.isfinite(X)):
        raise DomainError("matrix contains NaN or Inf")
    return X


def assignment_value(X, mapping) -> float:
    """sum_i X[i, mapping[i]], i.e. <P, X>_F for the permutation matrix P."""
    X = np.asarray(X, dtype=np.float64)
    m = mapping.as_array() if isinstance(mapping, Permutation) else np.asarray(mapping, dtype=np.intp)
    return float(np.sum(X[np.arange(X.shape[0]), m]))


def _min_cost_assignment(cost: np.ndarray):
    """O(n^3) shortest augmenting path with potentials (rows 1..n, columns 1..n).

    Returns (row -> column mapping, row potentials, column potentials) such that
    cost[i, j] - u[i] - v[j] >= 0 with equality on the matching.
    """
    n = cost.shape[0]
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = cost
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.intp)  # p[j]: row matched to column j
    way = np.zeros(n + 1, dtype=np.intp)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    mapping = np.empty(n, dtype=np.intp)
    mapping[p[1:] - 1] = np.arange(n)
    return mapping, u[1:], v[1:]


def _lexicographic_optimum(X, mapping, tight):
    """Move to the lexicographically smallest optimal mapping.

    ``tight[i, j]`` marks zero reduced cost under an optimal dual, so every
    perfect matching inside ``tight`` is optimal.  Rows are fixed in order;
    for each row we try smaller tight columns and repair the rest of the
    matching with an alternating path over still-free rows.
    """
    n = len(mapping)
    mapping = mapping.copy()
    owner = np.empty(n, dtype=np.intp)
    owner[mapping] = np.arange(n)
    locked_col = np.zeros(n, dtype=bool)
    best = assignment_value(X, mapping)
    for i in range(n):
        c0 = mapping[i]
        for j in np.flatnonzero(tight[i, :c0]):
            if locked_col[j]:
                continue
            r = owner[j]
            parent = {}
            seen = locked_col.copy()
            seen[j] = True
            queue = deque([r])
            found = False
            while queue and not found:
                x = queue.popleft()
                for c in np.flatnonzero(tight[x] & ~seen):
                    seen[c] = True
                    parent[c] = x
                    if c == c0:
                        found = True
                        break
                    queue.append(owner[c])
            if not found:
                continue
            trial = mapping.copy()
            c = c0
            while True:
                x = parent[c]
                prev = trial[x]
                trial[x] = c
                if x == r:
                    break
                c = prev
            trial[i] = j
            value = assignment_value(X, trial)
            if value < best:
                continue  # tolerance admitted a non-tie; keep the exact optimum
            mapping = trial
            owner[mapping] = np.arange(n)
            best = value
            break
        locked_col[mapping[i]] = True
    return mapping


def hungarian(X) -> Permutation:
    """Permutation maximizing sum_i X[i, mapping[i]].

    Ties are broken toward the lexicographically smallest mapping.
    """
    X = _check_square(X)
    n = X.shape[0]
    if n == 1:
        return Permutation((0,))
    mapping, u, v = _min_cost_assignment(-X)
    reduced = -X - u[:, None] - v[None, :]
    tol = 1e-9 * max(1.0, float(np.abs(X).max())) * n
    mapping = _lexicographic_optimum(X, mapping, reduced <= tol)
    return Permutation(tuple(int(j) for j in mapping))


def brute_force_match(X):
    """Enumerate all N! permutations.

    Returns ``(permutation, value, is_unique)``; among exact ties the
    lexicographically smallest mapping wins, matching :func:`hungarian`.
    """
    X = _check_square(X)
    n = X.shape[0]
    if n > BRUTE_FORCE_MAX_N:
        raise SizeError(f"brute force is limited to N <= {BRUTE_FORCE_MAX_N}, got {n}")
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    values = X[np.arange(n), perms].sum(axis=1)
    top = values.max()
    winners = np.flatnonzero(values == top)
    best = perms[winners[0]]
    return Permutation(tuple(int(j) for j in best)), assignment_value(X, best), winners.size == 1


