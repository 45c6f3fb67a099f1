"""Training: smooth-L1 loss, spectral-smoothness penalty, reverse-mode gradients, Adam.

Gradients are derived by hand for the exact forward pass in model.py.  The
finite-difference checker below is the independent route that keeps the
analytic chain honest; it stays strictly evaluation-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .filters import Omega, PolyFilter
from .model import AggGnnModel, _window_slices, layer_circulants, run_layers

KINK_EXCLUSION = 1e-6


@dataclass(frozen=True)
class LossSpec:
    """Smooth-L1 data term plus a quadratic hinge on filter derivative magnitudes."""

    smooth_l1_beta: float = 1.0
    penalty_l0_weight: float = 0.0
    penalty_l1_weight: float = 0.0
    l0_target: float = 0.0
    l1_target: float = 0.0
    omega: Omega = field(default_factory=lambda: Omega(-1.05, 1.05))

    def __post_init__(self):
        if self.smooth_l1_beta <= 0:
            raise ValueError("smooth_l1_beta must be > 0")
        if min(self.penalty_l0_weight, self.penalty_l1_weight,
               self.l0_target, self.l1_target) < 0:
            raise ValueError("penalty weights and targets must be >= 0")


@dataclass
class OptimizerState:
    """Adam accumulators; one slot per trainable array."""

    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("forgetting factors must lie in [0, 1)")


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_parameter: str
    probe_count: int


def smooth_l1(pred: float, target: float, beta: float = 1.0) -> float:
    """0.5 d^2/beta inside |d| < beta, |d| - 0.5 beta outside; C1 everywhere."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    d = abs(pred - target)
    if d < beta:
        return 0.5 * d * d / beta
    return d - 0.5 * beta


def _smooth_l1_grad(pred: float, target: float, beta: float) -> float:
    d = pred - target
    if abs(d) < beta:
        return d / beta
    return float(np.sign(d))


def parameters(model: AggGnnModel) -> list[np.ndarray]:
    """Trainable arrays in a fixed order (layer weights, then linear readout)."""
    params = list(model.weights)
    if model.readout == "linear":
        params.append(model.readout_weights)
    return params


def set_parameters(model: AggGnnModel, params: list[np.ndarray]) -> None:
    n_layers = len(model.weights)
    model.weights = [np.asarray(p, dtype=np.float64) for p in params[:n_layers]]
    if model.readout == "linear":
        model.readout_weights = np.asarray(params[n_layers], dtype=np.float64)


def _first_layer_padded(model: AggGnnModel) -> np.ndarray:
    w = model.weights[0]
    flat = w.reshape(-1, w.shape[-1])
    padded = np.zeros((flat.shape[0], model.a + 1))
    padded[:, : flat.shape[1]] = flat
    return padded


def _penalty_terms(padded: np.ndarray, spec: LossSpec) -> tuple[float, np.ndarray]:
    """Penalty value and its gradient w.r.t. the padded tap rows."""
    n = padded.shape[1]
    grid = spec.omega.grid()
    # pow1[k] = k * lambda^(k-1): derivative contribution of coefficient k.
    pow1 = np.zeros((n, grid.size))
    lam_pow = np.ones_like(grid)
    for k in range(1, n):
        pow1[k] = k * lam_pow
        lam_pow = lam_pow * grid
    value = 0.0
    grads = np.zeros_like(padded)
    w0, w1 = spec.penalty_l0_weight, spec.penalty_l1_weight
    for row, taps in enumerate(padded):
        for m in range(n):
            exponents = (np.arange(n) + m) % n
            basis = pow1[exponents]  # (n, grid)
            deriv = taps @ basis
            if w0 > 0:
                excess = np.maximum(np.abs(deriv) - spec.l0_target, 0.0)
                value += w0 * float(np.mean(excess**2))
                grads[row] += w0 * 2.0 * (excess * np.sign(deriv)) @ basis.T / grid.size
            if w1 > 0:
                scaled = grid * deriv
                excess = np.maximum(np.abs(scaled) - spec.l1_target, 0.0)
                value += w1 * float(np.mean(excess**2))
                grads[row] += w1 * 2.0 * (excess * np.sign(scaled) * grid) @ basis.T / grid.size
    return value, grads


def lipschitz_penalty(first_layer_filters, spec: LossSpec) -> float:
    """Quadratic hinge on |p_m'| and |lambda p_m'| over the grid, all shifts, all filters."""
    filters = list(first_layer_filters)
    if not filters:
        return 0.0
    width = max(f.coeffs.size for f in filters)
    padded = np.zeros((len(filters), width))
    for i, f in enumerate(filters):
        padded[i, : f.coeffs.size] = f.coeffs
    value, _ = _penalty_terms(padded, spec)
    return value


def _sigma_grad(kind: str, z: np.ndarray, post: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(np.float64)  # subgradient 0 at the kink
    if kind == "abs":
        return np.sign(z)
    if kind == "tanh":
        return 1.0 - post**2
    return np.ones_like(z)


def _sample_forward(model: AggGnnModel, S, x, circs=None):
    """Forward pass retaining every intermediate needed for the backward sweep."""
    agg, caches, t = run_layers(model, S, x, circs, keep=True)
    per_node = t.reshape(t.shape[0], -1)
    if model.readout == "sum":
        r = float(per_node.sum())
    elif model.readout == "mean":
        r = float(per_node.mean())
    else:
        r = float((model.readout_weights * per_node).sum())
    return agg, caches, per_node, r


def _kink_margin(model: AggGnnModel, caches, pred: float, target: float, beta: float) -> float:
    """Distance to the nearest non-smooth point of the loss surface."""
    margin = abs(abs(pred - target) - beta)
    for spec, cache in zip(model.layer_specs, caches):
        if spec.nonlinearity in ("relu", "abs") and cache["z"].size:
            margin = min(margin, float(np.min(np.abs(cache["z"]))))
        if spec.pool.kind == "max":
            post = cache["post"]
            for lo, hi in _window_slices(cache["width"], spec.pool.stride):
                if hi - lo < 2:
                    continue
                window = np.sort(post[:, lo:hi, :], axis=1)
                top, runner = window[:, -1, :], window[:, -2, :]
                gap = top - runner
                # Exact ties of hard zeros (dead relu paths) are locally constant,
                # not kinks; only ties between live values destabilize the argmax.
                live = (gap > 0) | (np.abs(top) > KINK_EXCLUSION)
                if np.any(live):
                    margin = min(margin, float(np.min(np.where(live, gap, np.inf))))
    return margin


def _unpool_grad(g: np.ndarray, spec, cache) -> np.ndarray:
    if spec.pool.kind == "none":
        return g
    post = cache["post"]
    out = np.zeros_like(post)
    slices = _window_slices(cache["width"], spec.pool.stride)
    for w_idx, (lo, hi) in enumerate(slices):
        if spec.pool.kind == "avg":
            out[:, lo:hi, :] += g[:, w_idx, :][:, None, :] / (hi - lo)
        else:
            window = post[:, lo:hi, :]
            sel = np.argmax(window, axis=1)  # first maximal index on ties
            rows = np.arange(post.shape[0])[:, None]
            feats = np.arange(post.shape[2])[None, :]
            out[rows, lo + sel, feats] += g[:, w_idx, :]
    return out


def _rolled_stack(rows: np.ndarray, taps: int) -> np.ndarray:
    """Stack rows cyclically rolled left by k = 0..taps-1 along a leading axis."""
    return np.stack([np.roll(rows, -k, axis=1) for k in range(taps)])


def _sample_backward(model: AggGnnModel, circs, agg, caches, per_node, pred: float,
                     target: float, beta: float):
    grads = [np.zeros_like(w) for w in model.weights]
    dr = _smooth_l1_grad(pred, target, beta)
    if model.readout == "sum":
        g_flat = np.full(per_node.shape, dr)
        readout_grad = None
    elif model.readout == "mean":
        g_flat = np.full(per_node.shape, dr / per_node.size)
        readout_grad = None
    else:
        g_flat = dr * model.readout_weights
        readout_grad = dr * per_node
    g = g_flat.reshape(caches[-1]["pooled"].shape)
    for idx in range(len(model.layer_specs) - 1, -1, -1):
        spec = model.layer_specs[idx]
        cache = caches[idx]
        g = _unpool_grad(g, spec, cache)
        g = g * _sigma_grad(spec.nonlinearity, cache["z"], cache["post"])
        # z = rows @ circ(w), so d/dw_k contracts g against rows rolled by k.
        if idx == 0:
            rolled = _rolled_stack(agg, spec.taps)
            if model.first_layer_mode == "shared":
                grads[0] = np.einsum("ijf,kij->fk", g, rolled)
            else:
                grads[0] = np.einsum("ijf,kij->fik", g, rolled)
        else:
            prev = caches[idx - 1]["pooled"]
            rolled = _rolled_stack(prev, spec.taps)
            grads[idx] = np.einsum("ijg,kijf->gfk", g, rolled)
            g = np.einsum("ijg,gfmj->imf", g, circs[idx])
    return grads, readout_grad


def batch_loss(model: AggGnnModel, batch, spec: LossSpec) -> tuple[float, float]:
    """(mean smooth-L1 over the batch, penalty value)."""
    S, inputs, targets = batch
    if len(inputs) == 0:
        raise ValueError("batch must be nonempty")
    circs = layer_circulants(model)
    data = 0.0
    for x, y in zip(inputs, targets):
        _, _, _, pred = _sample_forward(model, S, x, circs)
        data += smooth_l1(pred, y, spec.smooth_l1_beta)
    penalty, _ = _penalty_terms(_first_layer_padded(model), spec) \
        if (spec.penalty_l0_weight > 0 or spec.penalty_l1_weight > 0) else (0.0, None)
    return data / len(inputs), penalty


def backward(model: AggGnnModel, batch, spec: LossSpec) -> list[np.ndarray]:
    """Exact gradients of (mean smooth-L1 + penalty) for every trainable array."""
    S, inputs, targets = batch
    if len(inputs) == 0:
        raise ValueError("batch must be nonempty")
    circs = layer_circulants(model)
    grads = [np.zeros_like(w) for w in model.weights]
    readout_acc = None
    for x, y in zip(inputs, targets):
        agg, caches, per_node, pred = _sample_forward(model, S, x, circs)
        sample_grads, readout_grad = _sample_backward(
            model, circs, agg, caches, per_node, pred, y, spec.smooth_l1_beta)
        for acc, sg in zip(grads, sample_grads):
            acc += sg
        if readout_grad is not None:
            readout_acc = readout_grad if readout_acc is None else readout_acc + readout_grad
    scale = 1.0 / len(inputs)
    grads = [gr * scale for gr in grads]
    if spec.penalty_l0_weight > 0 or spec.penalty_l1_weight > 0:
        _, pgrad = _penalty_terms(_first_layer_padded(model), spec)
        taps = model.layer_specs[0].taps
        grads[0] += pgrad[:, :taps].reshape(model.weights[0].shape)
    if model.readout == "linear":
        grads.append(readout_acc * scale)
    return grads


def adam_step(state: OptimizerState, weights: list[np.ndarray],
              grads: list[np.ndarray]) -> tuple[list[np.ndarray], OptimizerState]:
    """One bias-corrected Adam update; returns fresh weight arrays."""
    if len(weights) != len(grads):
        raise ValueError("weights and gradients must align")
    if not state.m:
        state.m = [np.zeros_like(w) for w in weights]
        state.v = [np.zeros_like(w) for w in weights]
    if len(state.m) != len(weights) or any(m.shape != w.shape for m, w in zip(state.m, weights)):
        raise ValueError("optimizer state does not match the weight shapes")
    state.step += 1
    b1c = 1.0 - state.beta1**state.step
    b2c = 1.0 - state.beta2**state.step
    updated = []
    for slot, (w, g) in enumerate(zip(weights, grads)):
        if g.shape != w.shape:
            raise ValueError("gradient shape mismatch")
        state.m[slot] = state.beta1 * state.m[slot] + (1.0 - state.beta1) * g
        state.v[slot] = state.beta2 * state.v[slot] + (1.0 - state.beta2) * g**2
        m_hat = state.m[slot] / b1c
        v_hat = state.v[slot] / b2c
        updated.append(w - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return updated, state


def evaluate_data_loss(model: AggGnnModel, S, samples, indices, beta: float) -> float:
    if not indices:
        return float("nan")
    circs = layer_circulants(model)
    total = 0.0
    for i in indices:
        x, y, _ = samples[i]
        _, _, _, pred = _sample_forward(model, S, x, circs)
        total += smooth_l1(pred, y, beta)
    return total / len(indices)


def train(model: AggGnnModel, task, spec: LossSpec, epochs: int, batch_size: int,
          seed: int, optimizer: OptimizerState | None = None):
    """Mini-batch Adam over the task's train split; returns (model, history).

    History has one row per epoch: dicts with epoch, train_loss, penalty,
    test_loss, all evaluated after that epoch's updates.  The input model is
    left untouched.
    """
    if epochs < 0 or batch_size < 1:
        raise ValueError("epochs must be >= 0 and batch_size >= 1")
    if not task.train_idx:
        raise ValueError("task has an empty training split")
    model = model.copy()
    state = optimizer if optimizer is not None else OptimizerState()
    rng = np.random.default_rng(seed)
    S = task.graph.shift
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(task.train_idx))
        for start in range(0, len(order), batch_size):
            chosen = [task.train_idx[i] for i in order[start:start + batch_size]]
            inputs = [task.samples[i][0] for i in chosen]
            targets = [task.samples[i][1] for i in chosen]
            grads = backward(model, (S, inputs, targets), spec)
            updated, state = adam_step(state, parameters(model), grads)
            set_parameters(model, updated)
        penalty = lipschitz_penalty(
            [PolyFilter(row) for row in _first_layer_padded(model)], spec)
        history.append({
            "epoch": epoch,
            "train_loss": evaluate_data_loss(model, S, task.samples, task.train_idx,
                                             spec.smooth_l1_beta),
            "penalty": penalty,
            "test_loss": evaluate_data_loss(model, S, task.samples, task.test_idx,
                                            spec.smooth_l1_beta),
        })
    return model, history


def grad_check(model: AggGnnModel, batch, spec: LossSpec, fd_step: float = 1e-5,
               probes: int = 32, seed: int = 0) -> GradCheckReport:
    """Compare backward against central finite differences on random weights.

    Probes whose loss surface sits within 1e-6 of a relu/abs/max-pool kink
    are excluded from the comparison (the FD quotient is meaningless there).
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be > 0")
    S, inputs, targets = batch
    params = parameters(model)
    names = [f"layer{i}" for i in range(len(model.weights))]
    if model.readout == "linear":
        names.append("readout")
    sizes = [p.size for p in params]
    total = sum(sizes)
    analytic = backward(model, batch, spec)

    def total_loss() -> tuple[float, float]:
        circs = layer_circulants(model)  # weights just changed; stale stacks would lie
        data = 0.0
        margin = np.inf
        for x, y in zip(inputs, targets):
            _, caches, _, pred = _sample_forward(model, S, x, circs)
            data += smooth_l1(pred, y, spec.smooth_l1_beta)
            margin = min(margin, _kink_margin(model, caches, pred, y, spec.smooth_l1_beta))
        penalty = 0.0
        if spec.penalty_l0_weight > 0 or spec.penalty_l1_weight > 0:
            penalty, _ = _penalty_terms(_first_layer_padded(model), spec)
        return data / len(inputs) + penalty, margin

    rng = np.random.default_rng(seed)
    flat_choices = rng.choice(total, size=4 * probes, replace=total < 4 * probes)
    max_rel = 0.0
    worst = "none"
    compared = 0
    for flat in flat_choices:
        if compared >= probes:
            break
        slot = 0
        offset = int(flat)
        while offset >= sizes[slot]:
            offset -= sizes[slot]
            slot += 1
        idx = np.unravel_index(offset, params[slot].shape)
        original = params[slot][idx]
        params[slot][idx] = original + fd_step
        up, margin_up = total_loss()
        params[slot][idx] = original - fd_step
        down, margin_down = total_loss()
        params[slot][idx] = original
        if min(margin_up, margin_down) < KINK_EXCLUSION:
            continue
        fd = (up - down) / (2.0 * fd_step)
        g = float(analytic[slot][idx])
        rel = abs(g - fd) / max(abs(g), 1e-8)
        compared += 1
        if rel > max_rel:
            max_rel = rel
            worst = f"{names[slot]}{tuple(int(i) for i in idx)}"
    return GradCheckReport(max_rel_error=max_rel, worst_parameter=worst, probe_count=compared)
