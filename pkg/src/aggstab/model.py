"""Aggregation GNN: diffusion stacking, per-node circulant CNN stage, and baselines.

The network collects [x, Sx, ..., S^a x] per node, then runs an ordinary
1-D CNN over each node's aggregation row: circulant convolutions, pointwise
nonlinearities with unit Lipschitz constant and fixed point at zero, and
windowed pooling.  A selection-GNN forward pass is included purely as an
experimental baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .filters import PolyFilter, circulant_from_coeffs
from .graph import Graph, _as_square_matrix, validate_signal

NONLINEARITIES = ("relu", "abs", "tanh", "identity")


@dataclass(frozen=True)
class PoolSpec:
    kind: str = "none"  # none | max | avg
    stride: int = 1

    def __post_init__(self):
        if self.kind not in ("none", "max", "avg"):
            raise ValueError(f"unknown pooling kind {self.kind!r}")
        if self.stride < 1:
            raise ValueError("pooling stride must be >= 1")


@dataclass(frozen=True)
class CnnLayerSpec:
    taps: int
    features_in: int
    features_out: int
    nonlinearity: str = "relu"
    pool: PoolSpec = field(default_factory=PoolSpec)

    def __post_init__(self):
        if self.taps < 1:
            raise ValueError("taps must be >= 1")
        if self.features_in < 1 or self.features_out < 1:
            raise ValueError("feature counts must be >= 1")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")


@dataclass
class AggGnnModel:
    """Aggregation order, CNN layer specs with weights, and readout.

    Weight shapes: layer 1 is (F1, taps) in shared mode or (F1, N, taps) in
    per_node mode; deeper layers are (F_out, F_in, taps).  A linear readout
    has weights shaped like the flattened per-node output.
    """

    a: int
    layer_specs: list[CnnLayerSpec]
    weights: list[np.ndarray]
    first_layer_mode: str = "shared"
    readout: str = "sum"  # sum | mean | linear
    readout_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.a < 0:
            raise ValueError("aggregation order must be >= 0")
        if self.first_layer_mode not in ("shared", "per_node"):
            raise ValueError(f"unknown first_layer_mode {self.first_layer_mode!r}")
        if self.readout not in ("sum", "mean", "linear"):
            raise ValueError(f"unknown readout {self.readout!r}")
        if not self.layer_specs or len(self.layer_specs) != len(self.weights):
            raise ValueError("need one weight tensor per layer spec")
        if self.layer_specs[0].features_in != 1:
            raise ValueError("first layer consumes a single input channel")
        if self.layer_specs[0].taps > self.a + 1:
            raise ValueError("first-layer taps cannot exceed a+1")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        prev_out = None
        for idx, (spec, w) in enumerate(zip(self.layer_specs, self.weights)):
            if prev_out is not None and spec.features_in != prev_out:
                raise ValueError("layer feature dimensions do not chain")
            prev_out = spec.features_out
            if not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite")
            if idx == 0:
                ok = (w.ndim == 2 if self.first_layer_mode == "shared" else w.ndim == 3)
                ok = ok and w.shape[0] == spec.features_out and w.shape[-1] == spec.taps
            else:
                ok = w.shape == (spec.features_out, spec.features_in, spec.taps)
            if not ok:
                raise ValueError(f"layer {idx} weights have shape {w.shape}, "
                                 "inconsistent with its spec")

    def first_layer_filters(self) -> list[PolyFilter]:
        """Every first-layer filter, zero-padded to circulant length a+1."""
        w = self.weights[0]
        flat = w.reshape(-1, w.shape[-1])
        padded = np.zeros((flat.shape[0], self.a + 1))
        padded[:, : flat.shape[1]] = flat
        return [PolyFilter(row) for row in padded]

    def feature_widths(self) -> list[int]:
        """Per-node row widths entering each layer, starting at a+1."""
        widths = [self.a + 1]
        for spec in self.layer_specs:
            widths.append(_pooled_length(widths[-1], spec.pool))
        return widths

    def copy(self) -> "AggGnnModel":
        return replace(
            self,
            weights=[w.copy() for w in self.weights],
            readout_weights=None if self.readout_weights is None else self.readout_weights.copy(),
        )


@dataclass
class SelGnnModel:
    """Stack of graph-polynomial convolution layers; baseline only."""

    layer_specs: list[CnnLayerSpec]
    weights: list[np.ndarray]  # (F_out, F_in, taps) per layer

    def __post_init__(self):
        prev_out = None
        for spec, w in zip(self.layer_specs, self.weights):
            if prev_out is not None and spec.features_in != prev_out:
                raise ValueError("layer feature dimensions do not chain")
            prev_out = spec.features_out
            if w.shape != (spec.features_out, spec.features_in, spec.taps):
                raise ValueError("weight tensor does not match its layer spec")


def aggregate(S, x, a: int) -> np.ndarray:
    """N x (a+1) matrix [x, Sx, ..., S^a x], built by repeated products."""
    if a < 0:
        raise ValueError("aggregation order must be >= 0")
    S = _as_square_matrix(S, "S")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (S.shape[0],):
        raise ValueError(f"signal has shape {x.shape}, expected ({S.shape[0]},)")
    cols = np.empty((S.shape[0], a + 1))
    cols[:, 0] = x
    for k in range(1, a + 1):
        cols[:, k] = S @ cols[:, k - 1]
    return cols


def row_vectorize(m) -> np.ndarray:
    """Row-major flattening: entry (i-1)(a+1)+k holds [S^k x]_i."""
    return np.asarray(m, dtype=np.float64).reshape(-1)


def _padded_circulant(taps: np.ndarray, width: int) -> np.ndarray:
    if taps.size > width:
        raise ValueError(f"{taps.size} taps overflow row width {width}")
    padded = np.zeros(width)
    padded[: taps.size] = taps
    return circulant_from_coeffs(PolyFilter(padded))


def first_layer_operator(S, x, filters, mode: str = "shared", *, a: int | None = None) -> np.ndarray:
    """Apply the first CNN layer to the aggregation rows; linear, no nonlinearity.

    filters is an array (F, taps) in shared mode or (F, N, taps) in per_node
    mode.  Each aggregation row is multiplied (as a row vector) by the
    filter's circulant, so output column q of feature f is p_q(S) x for the
    q-th cyclic shift p_q of filter f.
    """
    filters = np.asarray(filters, dtype=np.float64)
    if mode == "shared":
        if filters.ndim != 2:
            raise ValueError("shared mode expects filters shaped (features, taps)")
    elif mode == "per_node":
        if filters.ndim != 3:
            raise ValueError("per_node mode expects filters shaped (features, nodes, taps)")
    else:
        raise ValueError(f"unknown first-layer mode {mode!r}")
    if a is None:
        a = filters.shape[-1] - 1
    agg = aggregate(S, x, a)
    n, width = agg.shape
    f_out = filters.shape[0]
    out = np.empty((n, width, f_out))
    if mode == "shared":
        for f in range(f_out):
            out[:, :, f] = agg @ _padded_circulant(filters[f], width)
    else:
        if filters.shape[1] != n:
            raise ValueError(f"per_node mode needs {n} filters per feature, got {filters.shape[1]}")
        for f in range(f_out):
            for i in range(n):
                out[i, :, f] = agg[i, :] @ _padded_circulant(filters[f, i], width)
    return out


def apply_nonlinearity(t, kind: str) -> np.ndarray:
    """Pointwise map with Lipschitz constant <= 1 and fixed point at 0."""
    t = np.asarray(t, dtype=np.float64)
    if kind == "relu":
        return np.maximum(t, 0.0)
    if kind == "abs":
        return np.abs(t)
    if kind == "tanh":
        return np.tanh(t)
    if kind == "identity":
        return t.copy()
    raise ValueError(f"unknown nonlinearity {kind!r}")


def _pooled_length(length: int, pool: PoolSpec) -> int:
    if pool.kind == "none":
        return length
    return -(-length // pool.stride)  # trailing partial window kept


def _window_slices(length: int, stride: int):
    return [(start, min(start + stride, length)) for start in range(0, length, stride)]


def apply_pooling(t, pool: PoolSpec) -> np.ndarray:
    """Max or average over non-overlapping windows along axis 1."""
    t = np.asarray(t, dtype=np.float64)
    if pool.kind == "none":
        return t.copy()
    reduce = np.max if pool.kind == "max" else np.mean
    chunks = [reduce(t[:, lo:hi, ...], axis=1) for lo, hi in _window_slices(t.shape[1], pool.stride)]
    return np.stack(chunks, axis=1)


def layer_circulants(model: AggGnnModel) -> list[np.ndarray]:
    """Padded circulant stacks per layer; depend only on the weights.

    Shapes: (F, m, m) for a shared first layer, (F, N, m, m) per node, and
    (F_out, F_in, m, m) for the deeper layers.  Rebuilt after every weight
    update and shared across the samples of a batch.
    """
    widths = model.feature_widths()
    circs = []
    for idx, (spec, w) in enumerate(zip(model.layer_specs, model.weights)):
        width = widths[idx]
        flat = w.reshape(-1, w.shape[-1])
        stack = np.stack([_padded_circulant(taps, width) for taps in flat])
        circs.append(stack.reshape(w.shape[:-1] + (width, width)))
    return circs


def run_layers(model: AggGnnModel, S, x, circs: list[np.ndarray] | None = None,
               keep: bool = False):
    """Shared forward pass; returns (aggregation matrix, layer caches, final tensor)."""
    if circs is None:
        circs = layer_circulants(model)
    agg = aggregate(S, x, model.a)
    caches = [] if keep else None
    t = None
    for idx, spec in enumerate(model.layer_specs):
        if idx == 0:
            if model.first_layer_mode == "shared":
                z = np.einsum("im,fmj->ijf", agg, circs[0])
            else:
                z = np.einsum("im,fimj->ijf", agg, circs[0])
        else:
            z = np.einsum("imf,gfmj->ijg", t, circs[idx])
        post = apply_nonlinearity(z, spec.nonlinearity)
        pooled = apply_pooling(post, spec.pool)
        if keep:
            caches.append({"z": z, "post": post, "pooled": pooled, "width": z.shape[1]})
        t = pooled
    return agg, caches, t


def forward(model: AggGnnModel, S, x) -> tuple[np.ndarray, float]:
    """Evaluate the full network: returns (per-node outputs, scalar readout).

    Per-node outputs are the final layer's rows flattened to shape
    (N, width * features).
    """
    _, _, t = run_layers(model, S, x)
    per_node = t.reshape(t.shape[0], -1)
    return per_node, readout_value(model, per_node)


def readout_value(model: AggGnnModel, per_node: np.ndarray) -> float:
    if model.readout == "sum":
        return float(per_node.sum())
    if model.readout == "mean":
        return float(per_node.mean())
    w = model.readout_weights
    if w is None or w.shape != per_node.shape:
        raise ValueError("linear readout needs weights shaped like the per-node outputs")
    return float((w * per_node).sum())


def selection_gnn_forward(model: SelGnnModel, S, x) -> np.ndarray:
    """Baseline: per layer y = sigma(sum_k h_k S^k y_prev) with feature mixing."""
    S = _as_square_matrix(S, "S")
    y = np.asarray(x, dtype=np.float64).reshape(S.shape[0], -1)
    for spec, w in zip(model.layer_specs, model.weights):
        if y.shape[1] != spec.features_in:
            raise ValueError("input features do not match layer spec")
        out = np.zeros((y.shape[0], spec.features_out))
        for f in range(spec.features_in):
            diffused = y[:, f]
            out += np.outer(diffused, w[:, f, 0])
            for k in range(1, spec.taps):
                diffused = S @ diffused
                out += np.outer(diffused, w[:, f, k])
        y = apply_nonlinearity(out, spec.nonlinearity)
    return y


def permutation_conjugate(g: Graph, x, perm) -> tuple[Graph, np.ndarray]:
    """Relabel nodes: (P S P^T, P x) where row i of the result is row perm[i]."""
    perm = np.asarray(perm, dtype=np.intp)
    if sorted(perm.tolist()) != list(range(g.n)):
        raise ValueError("perm must be a bijection on node indices")
    x = validate_signal(g, x)
    shift = g.shift[np.ix_(perm, perm)]
    labels = [g.labels[i] for i in perm] if g.labels is not None else None
    return Graph(n=g.n, shift=shift, labels=labels), x[perm]


def init_model(a: int, layer_specs: list[CnnLayerSpec], seed: int, *,
               first_layer_mode: str = "shared", n_nodes: int | None = None,
               readout: str = "sum", readout_size: int | None = None) -> AggGnnModel:
    """Seeded uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] initialization."""
    rng = np.random.default_rng(seed)
    weights = []
    for idx, spec in enumerate(layer_specs):
        fan_in = spec.taps * spec.features_in
        bound = 1.0 / np.sqrt(fan_in)
        if idx == 0:
            if first_layer_mode == "per_node":
                if n_nodes is None:
                    raise ValueError("per_node mode needs the node count at init")
                shape = (spec.features_out, n_nodes, spec.taps)
            else:
                shape = (spec.features_out, spec.taps)
        else:
            shape = (spec.features_out, spec.features_in, spec.taps)
        weights.append(rng.uniform(-bound, bound, size=shape))
    readout_weights = None
    if readout == "linear":
        if readout_size is None or n_nodes is None:
            raise ValueError("linear readout needs n_nodes and readout_size")
        readout_weights = rng.uniform(-1.0, 1.0, size=(n_nodes, readout_size))
    return AggGnnModel(a=a, layer_specs=layer_specs, weights=weights,
                       first_layer_mode=first_layer_mode, readout=readout,
                       readout_weights=readout_weights)


def _pool_to_dict(p: PoolSpec) -> dict:
    return {"kind": p.kind, "stride": p.stride}


def model_to_json(model: AggGnnModel) -> str:
    layers = []
    for spec, w in zip(model.layer_specs, model.weights):
        layers.append({
            "taps": spec.taps,
            "features_in": spec.features_in,
            "features_out": spec.features_out,
            "nonlinearity": spec.nonlinearity,
            "pool": _pool_to_dict(spec.pool),
            "weights": w.tolist(),
        })
    doc = {
        "a": model.a,
        "first_layer_mode": model.first_layer_mode,
        "layers": layers,
        "readout": model.readout,
        "readout_weights": None if model.readout_weights is None else model.readout_weights.tolist(),
    }
    return json.dumps(doc, sort_keys=True)


def model_from_json(text: str) -> AggGnnModel:
    doc = json.loads(text)
    specs = []
    weights = []
    for layer in doc["layers"]:
        pool = layer.get("pool") or {}
        specs.append(CnnLayerSpec(
            taps=int(layer["taps"]),
            features_in=int(layer["features_in"]),
            features_out=int(layer["features_out"]),
            nonlinearity=layer["nonlinearity"],
            pool=PoolSpec(kind=pool.get("kind", "none"), stride=int(pool.get("stride", 1))),
        ))
        weights.append(np.array(layer["weights"], dtype=np.float64))
    rw = doc.get("readout_weights")
    return AggGnnModel(
        a=int(doc["a"]),
        layer_specs=specs,
        weights=weights,
        first_layer_mode=doc["first_layer_mode"],
        readout=doc["readout"],
        readout_weights=None if rw is None else np.array(rw, dtype=np.float64),
    )
