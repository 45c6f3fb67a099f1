"""Perturbation sweeps: empirical output differences against theoretical bounds."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .filters import (
    LipschitzEstimate,
    Omega,
    PolyFilter,
    circulant_from_coeffs,
    estimate_lipschitz_bank,
    multilayer_bound,
    stability_bound,
)
from .graph import Graph, PerturbationSpec, realize_perturbation, spectral_norm
from .model import AggGnnModel, CnnLayerSpec, PoolSpec, first_layer_operator, forward, init_model
from .training import LossSpec, train


class OmegaCoverageError(Exception):
    """The certification interval misses part of a (perturbed) spectrum."""


@dataclass(frozen=True)
class SweepConfig:
    epsilons: tuple[float, ...]
    trials: int = 10
    kind: str = "mixed"  # additive | multiplicative | mixed
    probe_signals: int = 16
    seed: int = 0
    bound_layer: str = "first_layer"  # first_layer | full_network

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if any(e < 0 for e in eps) or list(eps) != sorted(eps):
            raise ValueError("epsilons must be nonnegative and ascending")
        if self.trials < 1 or self.probe_signals < 1:
            raise ValueError("trials and probe_signals must be >= 1")
        if self.kind not in ("additive", "multiplicative", "mixed"):
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.bound_layer not in ("first_layer", "full_network"):
            raise ValueError(f"unknown bound_layer {self.bound_layer!r}")
        object.__setattr__(self, "epsilons", eps)


@dataclass(frozen=True)
class StabilityRecord:
    epsilon: float
    trial: int
    kind: str
    empirical: float
    bound: float
    ratio: float


def _mix_seed(seed: int, *parts: int) -> int:
    """splitmix64-style deterministic seed derivation."""
    h = (seed ^ 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    for p in parts:
        h = (h + p + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
        h = ((h ^ (h >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        h = ((h ^ (h >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        h = h ^ (h >> 31)
    return int(h)


def _split_norms(kind: str, eps: float) -> tuple[float, float]:
    if kind == "additive":
        return eps, 0.0
    if kind == "multiplicative":
        return 0.0, eps
    return eps / 2.0, eps / 2.0


def output_difference(model: AggGnnModel, S, S_tilde, probes,
                      bound_layer: str = "first_layer") -> float:
    """Max over probes of the per-node output change, normalized by the input norm."""
    worst = 0.0
    for x in probes:
        x = np.asarray(x, dtype=np.float64)
        norm = float(np.linalg.norm(x))
        if norm == 0.0:
            raise ValueError("probe signals must be nonzero")
        if bound_layer == "first_layer":
            y0 = first_layer_operator(S, x, model.weights[0], model.first_layer_mode, a=model.a)
            y1 = first_layer_operator(S_tilde, x, model.weights[0], model.first_layer_mode,
                                      a=model.a)
        else:
            y0, _ = forward(model, S, x)
            y1, _ = forward(model, S_tilde, x)
        worst = max(worst, float(np.linalg.norm((y0 - y1).ravel())) / norm)
    return worst


def layer_operator_norms(model: AggGnnModel) -> list[float]:
    """Spectral norms of the circulant operators in layers 2..L."""
    widths = model.feature_widths()
    norms = []
    for idx in range(1, len(model.layer_specs)):
        spec = model.layer_specs[idx]
        w = model.weights[idx]
        width = widths[idx]
        block = np.zeros((width * spec.features_out, width * spec.features_in))
        for g in range(spec.features_out):
            for f in range(spec.features_in):
                taps = np.zeros(width)
                taps[: spec.taps] = w[g, f]
                block[g * width:(g + 1) * width, f * width:(f + 1) * width] = \
                    circulant_from_coeffs(PolyFilter(taps)).T
        norms.append(spectral_norm(block) if block.size else 0.0)
    return norms


def run_sweep(model: AggGnnModel, graph: Graph, cfg: SweepConfig,
              estimates: LipschitzEstimate, threads: int = 1) -> list[StabilityRecord]:
    """Measure empirical vs bounded output differences over the epsilon grid.

    Every trial draws a fresh perturbation from a seed mixed with its
    (epsilon, trial) indices, so record content is independent of execution
    order and of the thread count.
    """
    rng = np.random.default_rng(_mix_seed(cfg.seed, 0xABCD))
    probes = rng.standard_normal((cfg.probe_signals, graph.n))
    probes /= np.linalg.norm(probes, axis=1, keepdims=True)
    # Adjacency spectra straddle zero, so coverage is judged on the symmetric radius.
    covered = min(-estimates.omega.lo, estimates.omega.hi)
    base_norm = spectral_norm(graph.shift)
    if base_norm > covered:
        raise OmegaCoverageError(
            f"omega radius {covered:.6g} misses the unperturbed spectrum ({base_norm:.6g})")

    deeper_norms = layer_operator_norms(model) if cfg.bound_layer == "full_network" else []

    def one_trial(eps_idx: int, trial: int) -> StabilityRecord:
        eps = cfg.epsilons[eps_idx]
        t0_norm, t1_norm = _split_norms(cfg.kind, eps)
        spec = PerturbationSpec(kind=cfg.kind, t0_norm=t0_norm, t1_norm=t1_norm,
                                seed=_mix_seed(cfg.seed, eps_idx, trial))
        real = realize_perturbation(spec, graph)
        perturbed_norm = spectral_norm(real.perturbed_shift)
        if perturbed_norm > covered:
            raise OmegaCoverageError(
                f"omega radius {covered:.6g} misses the perturbed spectrum "
                f"({perturbed_norm:.6g}) at epsilon={eps:g}, trial={trial}")
        empirical = output_difference(model, graph.shift, real.perturbed_shift, probes,
                                      cfg.bound_layer)
        base = stability_bound(graph.n, model.a, estimates.L0, estimates.L1, t0_norm, t1_norm)
        bound = float(multilayer_bound(base, deeper_norms).total if deeper_norms else base.total)
        ratio = empirical / bound if bound > 0 else math.inf
        return StabilityRecord(epsilon=eps, trial=trial, kind=cfg.kind,
                               empirical=empirical, bound=bound, ratio=ratio)

    jobs = [(i, t) for i in range(len(cfg.epsilons)) for t in range(cfg.trials)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda job: one_trial(*job), jobs))
    else:
        records = [one_trial(*job) for job in jobs]
    return records


def bound_check(records, slack: float = 1.1) -> list[StabilityRecord]:
    """Records whose empirical/bound ratio exceeds the slack."""
    return [r for r in records if r.ratio > slack]


def median_by_epsilon(records) -> dict[float, dict[str, float]]:
    """Per-epsilon medians of empirical, bound, and ratio."""
    grouped: dict[float, list[StabilityRecord]] = {}
    for r in records:
        grouped.setdefault(r.epsilon, []).append(r)
    out = {}
    for eps in sorted(grouped):
        rows = grouped[eps]
        out[eps] = {
            "median_empirical": float(np.median([r.empirical for r in rows])),
            "median_bound": float(np.median([r.bound for r in rows])),
            "median_ratio": float(np.median([r.ratio for r in rows])),
        }
    return out


def compare_aggregation_counts(graph: Graph, task, a_values, cfg: SweepConfig,
                               constrained: bool, *, loss_spec: LossSpec | None = None,
                               epochs: int = 20, batch_size: int = 10,
                               taps: int | None = None):
    """Median empirical differences per aggregation order, plus a monotonicity flag.

    With a task the models are trained (penalty on when constrained); without
    one, first-layer taps are random draws, rescaled onto the certification
    targets when constrained.
    """
    a_values = list(a_values)
    if len(set(a_values)) != len(a_values):
        raise ValueError("aggregation orders must be distinct")
    spec = loss_spec if loss_spec is not None else LossSpec(
        penalty_l0_weight=1.0 if constrained else 0.0,
        penalty_l1_weight=1.0 if constrained else 0.0,
        l0_target=1.0, l1_target=1.0)
    medians: dict[int, dict[float, float]] = {}
    for a in a_values:
        k = taps if taps is not None else a + 1
        layer = CnnLayerSpec(taps=k, features_in=1, features_out=1,
                             nonlinearity="relu", pool=PoolSpec("none"))
        model = init_model(a, [layer], seed=_mix_seed(cfg.seed, a))
        if task is not None:
            model, _ = train(model, task, spec, epochs=epochs, batch_size=batch_size,
                             seed=_mix_seed(cfg.seed, a, 1))
        elif constrained:
            model.weights[0] = _rescale_to_targets(model.weights[0], model.a, spec)
        est = default_estimate(model, graph, cfg)
        records = run_sweep(model, graph, cfg, est)
        medians[a] = {eps: stats["median_empirical"]
                      for eps, stats in median_by_epsilon(records).items()}
    ordered = sorted(a_values)
    nondecreasing = {}
    for eps in cfg.epsilons:
        values = [medians[a][eps] for a in ordered]
        nondecreasing[eps] = all(v2 >= v1 for v1, v2 in zip(values, values[1:]))
    return {"a_values": ordered, "medians": medians, "nondecreasing": nondecreasing}


def default_estimate(model: AggGnnModel, graph: Graph, cfg: SweepConfig) -> LipschitzEstimate:
    """First-layer constants over an interval wide enough for the sweep's worst case."""
    worst_eps = max(cfg.epsilons) if cfg.epsilons else 0.0
    t0, t1 = _split_norms(cfg.kind, worst_eps)
    radius = spectral_norm(graph.shift)
    hi = 1.05 * (radius + t0 + t1 * radius) + 1e-9
    return estimate_lipschitz_bank(model.first_layer_filters(), Omega(-hi, hi))


def _rescale_to_targets(weights: np.ndarray, a: int, spec: LossSpec) -> np.ndarray:
    padded = [PolyFilter(np.concatenate([row, np.zeros(a + 1 - row.size)]))
              for row in weights.reshape(-1, weights.shape[-1])]
    est = estimate_lipschitz_bank(padded, spec.omega)
    scale = min(
        spec.l0_target / est.L0 if est.L0 > 0 else 1.0,
        spec.l1_target / est.L1 if est.L1 > 0 else 1.0,
        1.0,
    )
    return weights * scale


def emit_report(records, path, *, dat: bool = False) -> dict:
    """Write records CSV plus a summary JSON; returns the summary document.

    CSV columns are exactly epsilon,trial,kind,empirical,bound,ratio with
    repr-exact floats.  The optional .dat file holds (epsilon, median
    empirical) pairs for external plotting.
    """
    path = Path(path)
    lines = ["epsilon,trial,kind,empirical,bound,ratio"]
    for r in records:
        lines.append(f"{float(r.epsilon)!r},{r.trial},{r.kind},"
                     f"{float(r.empirical)!r},{float(r.bound)!r},{float(r.ratio)!r}")
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    if not records:
        summary = {"count": 0}
    else:
        per_eps = median_by_epsilon(records)
        summary = {
            "count": len(records),
            "per_epsilon": [{"epsilon": eps, **stats} for eps, stats in per_eps.items()],
            "max_ratio": max(r.ratio for r in records),
        }
    summary_path = path.with_name(path.stem + ".summary.json")
    summary_path.write_text(_json_dumps(summary) + "\n", encoding="ascii")
    if dat and records:
        per_eps = median_by_epsilon(records)
        dat_lines = [f"{eps!r} {stats['median_empirical']!r}" for eps, stats in per_eps.items()]
        path.with_suffix(".dat").write_text("\n".join(dat_lines) + "\n", encoding="ascii")
    return summary


def _sanitize(doc):
    """Replace non-finite floats with strings so the summary stays strict JSON."""
    if isinstance(doc, dict):
        return {k: _sanitize(v) for k, v in doc.items()}
    if isinstance(doc, list):
        return [_sanitize(v) for v in doc]
    if isinstance(doc, float) and not math.isfinite(doc):
        return repr(doc)
    return doc


def _json_dumps(doc) -> str:
    return json.dumps(_sanitize(doc), sort_keys=True)


def records_from_csv(path) -> list[StabilityRecord]:
    """Parse a CSV produced by emit_report."""
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != "epsilon,trial,kind,empirical,bound,ratio":
        raise ValueError(f"{path}: not a sweep records file")
    records = []
    for line in lines[1:]:
        eps, trial, kind, emp, bound, ratio = line.split(",")
        records.append(StabilityRecord(
            epsilon=float(eps), trial=int(trial), kind=kind,
            empirical=float(emp), bound=float(bound), ratio=float(ratio)))
    return records
