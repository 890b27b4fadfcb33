"""Permutation-equivariant number sorting with a Gumbel-Sinkhorn layer.

Each number ``x_i`` is passed through the same two dense layers
(1 -> n_units -> N) to give row ``i`` of the logits matrix, so shuffling
the input shuffles the rows identically.  Training minimizes the squared
error between ``S((g + noise) / tau).T @ x`` and the sorted sequence.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import Tape
from .errors import DimensionError, FormatError, TrainingError
from .gumbel import rng_for
from .matching import hungarian
from .optim import Adam
from .perm import Permutation, kendall_tau
from .sinkhorn import SinkhornConfig, sinkhorn

log = logging.getLogger(__name__)

PARAMS_SCHEMA_VERSION = 1
_INIT, _DATA, _NOISE, _EVAL = 0, 1, 2, 3
_PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass
class SortNetParams:
    W1: np.ndarray  # (n_units, 1)
    b1: np.ndarray  # (n_units,)
    W2: np.ndarray  # (N, n_units)
    b2: np.ndarray  # (N,)

    @property
    def n(self) -> int:
        return self.W2.shape[0]

    @property
    def n_units(self) -> int:
        return self.W1.shape[0]

    @classmethod
    def zeros(cls, n: int, n_units: int = 32) -> "SortNetParams":
        return cls(np.zeros((n_units, 1)), np.zeros(n_units), np.zeros((n, n_units)), np.zeros(n))

    @classmethod
    def init(cls, n: int, n_units: int = 32, seed: int = 0) -> "SortNetParams":
        rng = rng_for(seed, _INIT)
        return cls(
            W1=rng.normal(0.0, math.sqrt(2.0), size=(n_units, 1)),
            b1=np.zeros(n_units),
            W2=rng.normal(0.0, math.sqrt(1.0 / n_units), size=(n, n_units)),
            b2=np.zeros(n),
        )

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in _PARAM_NAMES}

    def copy(self) -> "SortNetParams":
        return SortNetParams(**{k: v.copy() for k, v in self.as_dict().items()})

    def to_json(self) -> str:
        doc = {
            "schema_version": PARAMS_SCHEMA_VERSION,
            "kind": "sortnet_params",
            "n": self.n,
            "n_units": self.n_units,
            "tensors": {
                k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]}
                for k, v in self.as_dict().items()
            },
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SortNetParams":
        doc = json.loads(text)
        if doc.get("schema_version") != PARAMS_SCHEMA_VERSION or doc.get("kind") != "sortnet_params":
            raise FormatError("not a sortnet_params document of a supported version")
        arrays = {}
        for k in _PARAM_NAMES:
            t = doc["tensors"][k]
            arrays[k] = np.array(t["data"], dtype=np.float64).reshape(t["shape"])
        return cls(**arrays)


@dataclass
class TrainConfig:
    n: int = 5
    tau: float = 1.0
    iterations: int = 20
    noise_scale: float = 1.0
    samples_per_example: int = 10
    batch_size: int = 10
    learning_rate: float = 1e-3
    steps: int = 10_000
    n_units: int = 32
    seed: int = 0
    train_low: float = 0.0
    train_high: float = 1.0
    test_low: float = 0.0
    test_high: float = 1.0
    test_size: int = 10_000

    def __post_init__(self):
        for name in ("n", "iterations", "samples_per_example", "batch_size", "steps", "n_units", "test_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not (self.train_low < self.train_high and self.test_low < self.test_high):
            raise ValueError("interval bounds need low < high")
        if self.tau <= 0 or self.noise_scale < 0 or self.learning_rate <= 0:
            raise ValueError("tau and learning_rate must be positive, noise_scale nonnegative")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in values.items():
            k = k.replace("-", "_")
            if k not in kinds:
                raise KeyError(f"unknown training option {k!r}")
            out[k] = int(v) if kinds[k] == "int" else float(v)
        return cls(**out)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)

    def smoothed(self, window: int = 200) -> np.ndarray:
        x = np.asarray(self.losses)
        if x.size < window:
            return x.copy()
        c = np.cumsum(np.insert(x, 0, 0.0))
        return (c[window:] - c[:-window]) / window


def _check_sequence(x, params: SortNetParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.n:
        raise DimensionError(f"network sorts {params.n} numbers, got a sequence of length {x.shape[-1]}")
    return x


def logits_from_sequence(x, params: SortNetParams) -> np.ndarray:
    """Row i is ``W2 @ relu(W1 * x_i + b1) + b2``; accepts shape (N,) or (B, N)."""
    x = _check_sequence(x, params)
    hidden = np.maximum(x[..., None] @ params.W1.T + params.b1, 0.0)
    return hidden @ params.W2.T + params.b2


def _tape_logits(tape: Tape, x: np.ndarray, leaves: dict):
    h = tape.add(tape.matmul(tape.leaf(x[..., None]), leaves["W1T"]), leaves["b1"])
    h = tape.relu(h)
    return tape.add(tape.matmul(h, leaves["W2T"]), leaves["b2"])


def sorting_loss(params: SortNetParams, x, noise, tau: float, iterations: int, noise_scale: float = 1.0):
    """Mean over sequences of ||S((g + noise_scale * noise) / tau).T x - sort(x)||^2 and its gradients."""
    x = _check_sequence(x, params)
    x2 = np.atleast_2d(x)
    noise = np.asarray(noise, dtype=np.float64).reshape(x2.shape[0], params.n, params.n)
    tape = Tape()
    leaves = {
        "W1T": tape.leaf(params.W1.T),
        "b1": tape.leaf(params.b1),
        "W2T": tape.leaf(params.W2.T),
        "b2": tape.leaf(params.b2),
    }
    g = _tape_logits(tape, x2, leaves)
    g = tape.add(g, tape.leaf(noise_scale * noise))
    S = tape.sinkhorn(g, tau, iterations)
    rec = tape.matmul(S, tape.leaf(x2[..., None]), transpose_a=True)
    loss = tape.scale(tape.sq_error(rec, np.sort(x2, axis=-1)[..., None]), 1.0 / x2.shape[0])
    grads = tape.backward(loss)
    out = {
        "W1": grads[leaves["W1T"].index].T,
        "b1": grads[leaves["b1"].index],
        "W2": grads[leaves["W2T"].index].T,
        "b2": grads[leaves["b2"].index],
    }
    return float(loss.value), out


def soft_reconstruct(x, params: SortNetParams, tau: float = 1.0, iterations: int = 20, noise_scale: float = 1.0, seed: int = 0):
    """Returns ``(reconstruction, loss, S)`` for one sequence under one Gumbel draw."""
    x = _check_sequence(x, params)
    eps = rng_for(seed, _NOISE).gumbel(size=(params.n, params.n))
    g = logits_from_sequence(x, params) + noise_scale * eps
    S = sinkhorn(g, SinkhornConfig(tau, iterations))
    rec = S.T @ x
    return rec, float(np.sum((rec - np.sort(x)) ** 2)), S


def hard_sort(x, params: SortNetParams) -> Permutation:
    """M(g(x)): the predicted slot of every input number."""
    return hungarian(logits_from_sequence(x, params))


def true_sort_permutation(x) -> Permutation:
    """Mapping that sends each number to its rank (stable for ties)."""
    return Permutation(tuple(int(r) for r in np.argsort(np.argsort(x, kind="stable"), kind="stable")))


def _sample(rng: np.random.Generator, low: float, high: float, shape) -> np.ndarray:
    return rng.uniform(low, high, size=shape)


def train_sort(cfg: TrainConfig, callback=None):
    """Adam on the Monte Carlo sorting loss; fresh data and noise every step.

    Returns ``(params, TrainLog)``.
    """
    params = SortNetParams.init(cfg.n, cfg.n_units, cfg.seed)
    arrays = params.as_dict()
    opt = Adam(arrays, lr=cfg.learning_rate)
    history = TrainLog()
    b, s, n = cfg.batch_size, cfg.samples_per_example, cfg.n
    for step in range(cfg.steps):
        x = _sample(rng_for(cfg.seed, _DATA, step), cfg.train_low, cfg.train_high, (b, n))
        x = np.repeat(x, s, axis=0)
        eps = rng_for(cfg.seed, _NOISE, step).gumbel(size=(b * s, n, n))
        loss, grads = sorting_loss(SortNetParams(**arrays), x, eps, cfg.tau, cfg.iterations, cfg.noise_scale)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingError(f"loss diverged at step {step}", step=step)
        opt.step(arrays, grads)
        history.losses.append(loss)
        if callback is not None:
            callback(step, loss)
    return SortNetParams(**arrays), history


def _thread_count(requested: int | None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("PERMLEARN_THREADS")
    return max(1, int(env)) if env else 1


def evaluate_sort(params: SortNetParams, low: float, high: float, size: int = 10_000, seed: int = 0, threads: int | None = None) -> dict:
    """Reconstruction metrics of :func:`hard_sort` on ``size`` fresh sequences from U(low, high).

    Per-sequence results are stored by index and reduced in index order, so the
    thread count never changes the output.
    """
    xs = _sample(rng_for(seed, _EVAL), low, high, (size, params.n))
    logits = logits_from_sequence(xs, params)
    rows = np.zeros((size, 5))

    def work(lo, hi):
        for k in range(lo, hi):
            x = xs[k]
            pred = hungarian(logits[k])
            true = true_sort_permutation(x)
            wrong = pred.as_array() != true.as_array()
            diff = np.sort(x) - pred.reconstruct(x)
            rows[k] = (wrong.any(), wrong.mean(), kendall_tau(pred, true), np.abs(diff).mean(), np.sqrt(np.mean(diff ** 2)))

    n_threads = min(_thread_count(threads), size)
    bounds = np.linspace(0, size, n_threads + 1).astype(int)
    if n_threads == 1:
        work(0, size)
    else:
        with ThreadPoolExecutor(n_threads) as pool:
            list(pool.map(work, bounds[:-1], bounds[1:]))
    means = rows.mean(axis=0)
    return {
        "test_dist_low": low,
        "test_dist_high": high,
        "N": params.n,
        "prop_any_wrong": float(means[0]),
        "prop_wrong": float(means[1]),
        "kendall_tau": float(means[2]),
        "l1": float(means[3]),
        "l2": float(means[4]),
    }


METRIC_COLUMNS = ("test_dist_low", "test_dist_high", "N", "prop_any_wrong", "prop_wrong", "kendall_tau", "l1", "l2")
