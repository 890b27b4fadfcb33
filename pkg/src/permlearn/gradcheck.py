"""Finite-difference gate over every differentiable piece of the package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, dense_forward_backward, finite_diff_check, sinkhorn_vjp
from .gumbel import rng_for
from .sinkhorn import SinkhornConfig, sinkhorn
from .sortnet import SortNetParams, sorting_loss

_GATE = 20
STEP = 1e-5
# The network loss is checked with the 5-point rule at a larger step (see check_sorting_loss).
NET_STEP = 1e-3


def tolerance_for(tau: float) -> float:
    return 1e-4 if tau >= 1.0 else 1e-3


@dataclass(frozen=True)
class GateRow:
    name: str
    tau: float
    instances: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def check_sinkhorn(tau: float, instances: int, seed: int, n: int = 4, iterations: int = 20) -> float:
    cfg = SinkhornConfig(tau, iterations)
    worst = 0.0
    for k in range(instances):
        rng = rng_for(seed, _GATE, 0, k)
        X = rng.normal(size=(n, n))
        U = rng.normal(size=(n, n))
        g = sinkhorn_vjp(X, U, cfg)
        worst = max(worst, finite_diff_check(lambda x: float(np.sum(U * sinkhorn(x, cfg))), X, STEP, grad=g))
    return worst


def _flatten(p: SortNetParams) -> np.ndarray:
    return np.concatenate([v.ravel() for v in p.as_dict().values()])


def _unflatten(theta: np.ndarray, like: SortNetParams) -> SortNetParams:
    out, k = {}, 0
    for name, v in like.as_dict().items():
        out[name] = theta[k:k + v.size].reshape(v.shape)
        k += v.size
    return SortNetParams(**out)


def _batched_loss(thetas: np.ndarray, like: SortNetParams, x, eps, tau: float, iterations: int) -> np.ndarray:
    """The sorting loss for a stack of flattened parameter vectors, forward only."""
    n, u = like.n, like.n_units
    k = thetas.shape[0]
    W1, b1 = thetas[:, :u], thetas[:, u:2 * u]
    W2 = thetas[:, 2 * u:2 * u + n * u].reshape(k, n, u)
    b2 = thetas[:, 2 * u + n * u:]
    hidden = np.maximum(x[None, :, :, None] * W1[:, None, None, :] + b1[:, None, None, :], 0.0)
    logits = np.einsum("kbiu,kju->kbij", hidden, W2) + b2[:, None, None, :] + eps[None]
    S = sinkhorn(logits, SinkhornConfig(tau, iterations))
    rec = np.einsum("kbij,bi->kbj", S, x)
    return np.sum((rec - np.sort(x, axis=-1)) ** 2, axis=(1, 2)) / x.shape[0]


def _clear_kinks(params: SortNetParams, x: np.ndarray, margin: float, rng) -> None:
    """Resample ``b1`` entries whose hidden pre-activations come within ``margin`` of the ReLU kink."""
    for _ in range(100):
        pre = x[..., None] * params.W1[:, 0] + params.b1
        bad = np.any(np.abs(pre) < margin, axis=(0, 1))
        if not bad.any():
            return
        params.b1[bad] = rng.normal(scale=0.5, size=int(bad.sum()))
    raise RuntimeError("could not place pre-activations away from the ReLU kink")


def check_sorting_loss(tau: float, instances: int, seed: int, n: int = 5, n_units: int = 32, iterations: int = 20) -> float:
    """Gradient of the mean reconstruction loss with respect to all network weights.

    Shifting ``b2`` or a live ``b1`` unit moves every row of the logits by the
    same vector, which Sinkhorn nearly cancels, so those gradients sit around
    1e-9.  At that size the 3-point rule at step 1e-5 is dominated by roundoff
    in the loss; the 5-point rule at a larger step is not.  Instances are kept
    so no perturbation crosses a ReLU kink, where differences are meaningless.
    """
    worst = 0.0
    for k in range(instances):
        rng = rng_for(seed, _GATE, 1, k)
        params = SortNetParams.init(n, n_units, seed=int(rng.integers(2**31)))
        params.b1[:] = rng.normal(scale=0.5, size=n_units)
        x = rng.uniform(0.0, 1.0, size=(2, n))
        eps = rng.gumbel(size=(2, n, n))
        _clear_kinks(params, x, 4 * NET_STEP, rng)
        theta0 = _flatten(params)

        def f(theta):
            loss, grads = sorting_loss(_unflatten(theta, params), x, eps, tau, iterations)
            return loss, np.concatenate([grads[name].ravel() for name in params.as_dict()])

        worst = max(worst, finite_diff_check(f, theta0, NET_STEP, order=4,
                                             batched_f=lambda thetas: _batched_loss(thetas, params, x, eps, tau, iterations)))
    return worst


def check_dense(instances: int, seed: int) -> float:
    worst = 0.0
    for k in range(instances):
        rng = rng_for(seed, _GATE, 2, k)
        W = rng.normal(size=(3, 4))
        b = rng.normal(size=3)
        x = rng.normal(size=(2, 4))
        U = rng.normal(size=(2, 3))
        _, grads = dense_forward_backward(W, b, x, U)
        worst = max(worst, finite_diff_check(lambda w: float(np.sum(U * dense_forward_backward(w, b, x, U)[0])), W, STEP, grad=grads["W"]))
        worst = max(worst, finite_diff_check(lambda c: float(np.sum(U * dense_forward_backward(W, c, x, U)[0])), b, STEP, grad=grads["b"]))
        worst = max(worst, finite_diff_check(lambda z: float(np.sum(U * dense_forward_backward(W, b, z, U)[0])), x, STEP, grad=grads["x"]))
    return worst


def _primitive_programs():
    """One small program per tape primitive, each mapping an input array to an output Var."""
    return {
        "matmul": lambda t, v: t.matmul(v, t.leaf(np.arange(6.0).reshape(3, 2) / 5)),
        "matmul_t": lambda t, v: t.matmul(v, t.leaf(np.arange(6.0).reshape(3, 2) / 5), transpose_a=True),
        "add": lambda t, v: t.add(v, t.leaf(np.array([0.3, -0.2, 0.1]))),
        "relu": lambda t, v: t.relu(v),
        "scale": lambda t, v: t.scale(v, 1.7),
        "row_lognorm": lambda t, v: t.row_lognorm(v),
        "col_lognorm": lambda t, v: t.col_lognorm(v),
        "exp": lambda t, v: t.exp(v),
        "sq_error": lambda t, v: t.sq_error(v, np.full((3, 3), 0.25)),
    }


def check_primitive(name: str, instances: int, seed: int) -> float:
    build = _primitive_programs()[name]
    worst = 0.0
    for k in range(instances):
        rng = rng_for(seed, _GATE, 3, k)
        A = rng.normal(size=(3, 3))
        if name == "relu":
            A = np.where(np.abs(A) < 1e-3, 0.5, A)  # keep clear of the kink
        t = Tape()
        v = t.leaf(A)
        out = build(t, v)
        U = rng.normal(size=out.shape)

        def f(a):
            t2 = Tape()
            return float(np.sum(U * build(t2, t2.leaf(a)).value))

        g = t.backward(out, U)[v.index]
        worst = max(worst, finite_diff_check(f, A, STEP, grad=g))
    return worst


def run_gate(seed: int = 0, instances: int = 20, taus=(1.0, 0.5)) -> list[GateRow]:
    rows = []
    for name in _primitive_programs():
        rows.append(GateRow(f"tape:{name}", float("nan"), instances, check_primitive(name, instances, seed), 1e-4))
    rows.append(GateRow("dense_forward_backward", float("nan"), instances, check_dense(instances, seed), 1e-4))
    for tau in taus:
        rows.append(GateRow("sinkhorn_vjp", tau, instances, check_sinkhorn(tau, instances, seed), tolerance_for(tau)))
    for tau in taus:
        rows.append(GateRow("sorting_loss", tau, instances, check_sorting_loss(tau, instances, seed), tolerance_for(tau)))
    return rows


def format_gate(rows: list[GateRow]) -> str:
    lines = [f"{'check':<26} {'tau':>5} {'n':>4} {'max_rel_err':>12} {'tol':>8}  result"]
    for r in rows:
        tau = "-" if np.isnan(r.tau) else f"{r.tau:g}"
        lines.append(
            f"{r.name:<26} {tau:>5} {r.instances:>4} {r.max_rel_error:>12.3e} {r.tolerance:>8.0e}  {'PASS' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)
