"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines and timings.
"""

import time
from pathlib import Path

import numpy as np

from aggstab import (
    CnnLayerSpec,
    LossSpec,
    PolyFilter,
    PoolSpec,
    SweepConfig,
    aggregate,
    bound_check,
    build_shift_from_adjacency,
    circulant_eigenvalues,
    circulant_from_coeffs,
    forward,
    frechet_derivative_poly,
    frechet_fd_oracle,
    grad_check,
    parse_movielens,
    permutation_conjugate,
    random_graph,
    run_sweep,
    train,
)
from aggstab.datasets import synthetic_source_localization
from aggstab.model import init_model
from aggstab.sweep import _mix_seed, compare_aggregation_counts, default_estimate, median_by_epsilon
from aggstab.training import evaluate_data_loss

DATA_DIR = Path(__file__).parent / "data"

TWO_LAYER = [
    CnnLayerSpec(taps=5, features_in=1, features_out=8, nonlinearity="relu",
                 pool=PoolSpec("avg", 3)),
    CnnLayerSpec(taps=3, features_in=8, features_out=4, nonlinearity="relu",
                 pool=PoolSpec("avg", 3)),
]


def _report(criterion: int, ok: bool, detail: str) -> None:
    print(f"[criterion {criterion:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def _normalized_er_graph(n, p, seed):
    adj = random_graph("erdos_renyi", n, seed, p=p)
    return build_shift_from_adjacency(adj.shift, "symmetric_degree")


def test_c01_first_layer_bound_soundness():
    start = time.perf_counter()
    graph = random_graph("erdos_renyi", 16, 101, p=0.3)
    layer = CnnLayerSpec(taps=5, features_in=1, features_out=1, nonlinearity="relu")
    model = init_model(8, [layer], seed=5)
    cfg = SweepConfig(epsilons=(1e-3, 3e-3, 1e-2), trials=200, kind="mixed",
                      probe_signals=16, seed=77, bound_layer="first_layer")
    estimates = default_estimate(model, graph, cfg)
    records = run_sweep(model, graph, cfg, estimates)
    elapsed = time.perf_counter() - start
    violations = bound_check(records, slack=1.1)
    worst = max(r.ratio for r in records)
    _report(1, len(records) == 600 and not violations and elapsed <= 10.0,
            f"600 mixed trials, worst empirical/bound ratio {worst:.3g}, "
            f"{len(violations)} violations at slack 1.1, {elapsed:.1f}s")


def test_c02_zero_perturbation_identity():
    start = time.perf_counter()
    worst = 0.0
    for i in range(100):
        n = 4 + (i % 9)
        graph = random_graph("erdos_renyi", n, 300 + i, p=0.4)
        if i % 3 == 0:
            specs = [CnnLayerSpec(taps=2, features_in=1, features_out=1,
                                  nonlinearity="relu")]
        elif i % 3 == 1:
            specs = [CnnLayerSpec(taps=3, features_in=1, features_out=2,
                                  nonlinearity="tanh", pool=PoolSpec("max", 2))]
        else:
            specs = [CnnLayerSpec(taps=2, features_in=1, features_out=2,
                                  nonlinearity="abs", pool=PoolSpec("avg", 2)),
                     CnnLayerSpec(taps=2, features_in=2, features_out=1,
                                  nonlinearity="relu")]
        model = init_model(2 + (i % 5), specs, seed=i)
        cfg = SweepConfig(epsilons=(0.0,), trials=1, kind="mixed", probe_signals=2,
                          seed=i, bound_layer="full_network" if i % 2 else "first_layer")
        records = run_sweep(model, graph, cfg, default_estimate(model, graph, cfg))
        worst = max(worst, records[0].empirical)
    elapsed = time.perf_counter() - start
    _report(2, worst <= 1e-12 and elapsed <= 2.0,
            f"100 zero-perturbation sweeps, worst empirical {worst:.3g}, {elapsed:.1f}s")


def test_c03_aggregation_count_trend():
    start = time.perf_counter()
    graph = random_graph("erdos_renyi", 16, 101, p=0.3)
    hits = 0
    for rep in range(10):
        cfg = SweepConfig(epsilons=(0.1,), trials=50, kind="multiplicative",
                          probe_signals=8, seed=1000 + rep, bound_layer="full_network")
        trend = compare_aggregation_counts(graph, None, [4, 8, 16], cfg, constrained=False)
        hits += trend["nondecreasing"][0.1]
    elapsed = time.perf_counter() - start
    _report(3, hits >= 9 and elapsed <= 30.0,
            f"median difference nondecreasing in a for {hits}/10 seeded runs, {elapsed:.1f}s")


def test_c04_constraint_benefit():
    start = time.perf_counter()
    wins = 0
    losses_ok = 0
    for rep in range(10):
        rep_seed = 2000 + rep
        graph = _normalized_er_graph(12, 0.4, _mix_seed(rep_seed, 1))
        task = synthetic_source_localization(graph, 2, 60, _mix_seed(rep_seed, 2))
        base = init_model(8, TWO_LAYER, seed=_mix_seed(rep_seed, 3))
        from aggstab import Omega

        omega = Omega(-1.3, 1.3, 512)
        free_spec = LossSpec(smooth_l1_beta=1.0, omega=omega)
        pel_spec = LossSpec(smooth_l1_beta=1.0, penalty_l0_weight=0.5,
                            penalty_l1_weight=0.5, l0_target=1.0, l1_target=1.0,
                            omega=omega)
        m_free, h_free = train(base, task, free_spec, epochs=40, batch_size=10,
                               seed=_mix_seed(rep_seed, 4))
        m_pel, h_pel = train(base, task, pel_spec, epochs=40, batch_size=10,
                             seed=_mix_seed(rep_seed, 4))
        cfg = SweepConfig(epsilons=(0.1,), trials=50, kind="multiplicative",
                          probe_signals=8, seed=_mix_seed(rep_seed, 5),
                          bound_layer="full_network")
        medians = {}
        for name, model in (("free", m_free), ("pel", m_pel)):
            records = run_sweep(model, graph, cfg, default_estimate(model, graph, cfg))
            medians[name] = median_by_epsilon(records)[0.1]["median_empirical"]
        wins += medians["pel"] <= medians["free"]
        losses_ok += h_pel[-1]["train_loss"] <= 2.0 * h_free[-1]["train_loss"]
    elapsed = time.perf_counter() - start
    _report(4, wins >= 8 and losses_ok >= 8 and elapsed <= 180.0,
            f"penalty-trained median smaller in {wins}/10 reps, "
            f"loss within 2x in {losses_ok}/10, {elapsed:.1f}s")


def test_c05_frechet_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(55)
    worst = 0.0
    for _ in range(50):
        s = rng.standard_normal((6, 6))
        s = 0.5 * (s + s.T)
        xi = rng.standard_normal((6, 6))
        xi = 0.5 * (xi + xi.T)
        f = PolyFilter(rng.standard_normal(7))
        exact = frechet_derivative_poly(f, s, xi)
        fd = frechet_fd_oracle(f, s, xi, t=1e-6)
        worst = max(worst, float(np.max(np.abs(exact - fd))))
    elapsed = time.perf_counter() - start
    _report(5, worst <= 1e-5 and elapsed <= 1.0,
            f"50 degree-6 pairs at N=6, max elementwise error {worst:.3g}, {elapsed:.2f}s")


def test_c06_gradient_correctness():
    start = time.perf_counter()
    graph = random_graph("erdos_renyi", 6, 3, p=0.5)
    rng = np.random.default_rng(0)
    batch = (graph.shift, [rng.standard_normal(6) for _ in range(3)], [0.3, -0.2, 1.0])
    smooth_model = init_model(4, [
        CnnLayerSpec(taps=3, features_in=1, features_out=3, nonlinearity="tanh",
                     pool=PoolSpec("avg", 2)),
        CnnLayerSpec(taps=2, features_in=3, features_out=2, nonlinearity="tanh",
                     pool=PoolSpec("avg", 3)),
    ], seed=7)
    smooth_spec = LossSpec(smooth_l1_beta=5.0, penalty_l0_weight=0.5,
                           penalty_l1_weight=0.5, l0_target=0.1, l1_target=0.1)
    smooth = grad_check(smooth_model, batch, smooth_spec, fd_step=1e-5, probes=40)
    linear_model = init_model(4, [
        CnnLayerSpec(taps=3, features_in=1, features_out=2, nonlinearity="identity",
                     pool=PoolSpec("avg", 2)),
        CnnLayerSpec(taps=2, features_in=2, features_out=1, nonlinearity="identity",
                     pool=PoolSpec("none")),
    ], seed=9)
    linear = grad_check(linear_model, batch, LossSpec(smooth_l1_beta=50.0),
                        fd_step=1e-5, probes=40)
    elapsed = time.perf_counter() - start
    ok = (smooth.max_rel_error <= 1e-4 and linear.max_rel_error <= 1e-7
          and smooth.probe_count >= 32 and linear.probe_count >= 32
          and elapsed <= 5.0)
    _report(6, ok, f"smooth max rel err {smooth.max_rel_error:.3g}, "
                   f"linear {linear.max_rel_error:.3g}, {elapsed:.1f}s")


def test_c07_circulant_dft_identity():
    rng = np.random.default_rng(21)
    worst = 0.0
    for _ in range(100):
        size = int(rng.integers(1, 17))
        f = PolyFilter(rng.standard_normal(size))
        analytic = circulant_eigenvalues(f)
        numerical = list(np.linalg.eigvals(circulant_from_coeffs(f)))
        for value in analytic:
            dists = [abs(value - other) for other in numerical]
            best = int(np.argmin(dists))
            worst = max(worst, dists[best])
            numerical.pop(best)
    _report(7, worst <= 1e-10, f"100 random filters (a+1 <= 16), worst pairing "
                               f"distance {worst:.3g}")


def test_c08_aggregation_brute_force():
    rng = np.random.default_rng(31)
    worst = 0.0
    for n in (2, 4, 6, 8):
        for a in (0, 2, 5, 8):
            graph = random_graph("erdos_renyi", n, 10 * n + a, p=0.5)
            x = rng.standard_normal(n)
            agg = aggregate(graph.shift, x, a)
            for k in range(a + 1):
                expected = np.linalg.matrix_power(graph.shift, k) @ x
                scale = max(1.0, float(np.linalg.norm(expected)))
                worst = max(worst, float(np.max(np.abs(agg[:, k] - expected))) / scale)
    _report(8, worst <= 1e-13, f"N <= 8, a <= 8 against matrix powers, worst "
                               f"relative deviation {worst:.3g}")


def test_c09_permutation_equivariance():
    rng = np.random.default_rng(71)
    model = init_model(8, TWO_LAYER, seed=13)
    worst_node = 0.0
    worst_readout = 0.0
    for trial in range(50):
        graph = random_graph("erdos_renyi", 9, 500 + trial, p=0.5)
        x = rng.standard_normal(9)
        perm = rng.permutation(9)
        conj_graph, conj_x = permutation_conjugate(graph, x, perm)
        base_nodes, base_readout = forward(model, graph.shift, x)
        conj_nodes, conj_readout = forward(model, conj_graph.shift, conj_x)
        worst_node = max(worst_node, float(np.max(np.abs(conj_nodes - base_nodes[perm]))))
        scale = max(1.0, abs(base_readout))
        worst_readout = max(worst_readout, abs(conj_readout - base_readout) / scale)
    _report(9, worst_node <= 1e-10 and worst_readout <= 1e-10,
            f"50 graph/permutation pairs, worst per-node deviation {worst_node:.3g}, "
            f"readout deviation {worst_readout:.3g}")


def test_c10_movielens_ingestion():
    table = parse_movielens(DATA_DIR / "ratings_fixture.data")
    fixture_ok = (len(table.entries) == 100 and table.user_count == 10
                  and table.item_count == 10)
    detail = f"fixture: {len(table.entries)} entries, {table.user_count} users"
    full = next((p for p in (DATA_DIR / "u.data", Path("/root/pkg/u.data"))
                 if p.exists()), None)
    full_ok = True
    if full is not None:
        big = parse_movielens(full)
        # item_count is taken from the file alone; the printed corpus size
        # disagrees with the distributed one, so it is not asserted.
        full_ok = len(big.entries) == 100_000 and big.user_count == 943
        detail += f"; u.data: {len(big.entries)} entries, {big.user_count} users"
    else:
        detail += "; full u.data not present, skipped its assertions"
    _report(10, fixture_ok and full_ok, detail)


def test_c11_training_substitute():
    # The published accuracy tables need full-corpus training; the desk-scale
    # stand-in requires halving the loss in 50 epochs at lr 0.005, betas 0.9/0.999.
    start = time.perf_counter()
    ratios = []
    for seed in (0, 1):
        graph = _normalized_er_graph(10, 0.4, _mix_seed(seed, 21))
        task = synthetic_source_localization(graph, 2, 60, _mix_seed(seed, 22))
        probe = init_model(8, TWO_LAYER, seed=0, n_nodes=10)
        flat = forward(probe, graph.shift, task.samples[0][0])[0].shape[1]
        model = init_model(8, TWO_LAYER, seed=_mix_seed(seed, 23), n_nodes=10,
                           readout="linear", readout_size=flat)
        init_loss = evaluate_data_loss(model, graph.shift, task.samples,
                                       task.train_idx, 1.0)
        _, history = train(model, task, LossSpec(), epochs=50, batch_size=1,
                           seed=_mix_seed(seed, 24))
        ratios.append(history[-1]["train_loss"] / init_loss)
    elapsed = time.perf_counter() - start
    _report(11, max(ratios) <= 0.5,
            f"loss reduced to {', '.join(f'{r:.0%}' for r in ratios)} of the "
            f"initial value within 50 epochs, {elapsed:.1f}s")
