import json
from pathlib import Path

import numpy as np
import pytest

from aggstab.cli import main
from aggstab.graph import graph_from_json
from aggstab.model import init_model, model_from_json
from aggstab.sweep import _mix_seed


def _write_graph(tmp_path, n=8, p=0.5, seed=1) -> Path:
    out = tmp_path / "graph.json"
    assert main(["gen-graph", "--model", "er", "--p", str(p), "--n", str(n),
                 "--seed", str(seed), "--out", str(out)]) == 0
    return out


def _base_config(tmp_path, **overrides) -> Path:
    cfg = {
        "seed": 7,
        "output_dir": str(tmp_path / "out"),
        "graph": {"model": "erdos_renyi", "n": 8, "p": 0.5, "normalization": "symmetric_degree"},
        "dataset": {"kind": "synthetic", "diffusion_steps": 1, "samples": 20},
        "model": {"a": 4, "layers": [
            {"taps": 3, "features_out": 2, "nonlinearity": "tanh",
             "pool": {"kind": "avg", "stride": 2}},
            {"taps": 2, "features_out": 1, "nonlinearity": "identity",
             "pool": {"kind": "none"}},
        ]},
        "loss": {"smooth_l1_beta": 1.0},
        "optimizer": {"lr": 0.005, "epochs": 3, "batch_size": 5},
        "sweep": {"epsilons": [1e-3, 1e-2], "trials": 4, "kind": "mixed",
                  "probe_signals": 4},
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestGenGraph:
    def test_writes_requested_size(self, tmp_path):
        out = _write_graph(tmp_path, n=16, p=0.3)
        g = graph_from_json(out.read_text())
        assert g.n == 16

    def test_invalid_probability_names_flag(self, tmp_path, capsys):
        code = main(["gen-graph", "--model", "er", "--p", "2", "--n", "4",
                     "--seed", "0", "--out", str(tmp_path / "g.json")])
        assert code == 2
        assert "--p" in capsys.readouterr().err

    def test_reruns_byte_identical(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        a = _write_graph(tmp_path / "a", n=12, seed=5)
        b = _write_graph(tmp_path / "b", n=12, seed=5)
        assert a.read_bytes() == b.read_bytes()

    def test_sbm_requires_probabilities(self, tmp_path, capsys):
        code = main(["gen-graph", "--model", "sbm", "--n", "6", "--seed", "0",
                     "--blocks", "2", "--out", str(tmp_path / "g.json")])
        assert code == 2
        assert "--p-in" in capsys.readouterr().err

    def test_normalized_variant(self, tmp_path):
        out = tmp_path / "g.json"
        assert main(["gen-graph", "--model", "er", "--p", "0.8", "--n", "6",
                     "--seed", "3", "--normalization", "symmetric_degree",
                     "--out", str(out)]) == 0
        g = graph_from_json(out.read_text())
        assert np.max(np.abs(g.shift)) <= 1.0


class TestIngest:
    def test_fixture_graph_and_task(self, tmp_path, ratings_fixture_path):
        out = tmp_path / "ingested"
        code = main(["ingest", "--ratings", str(ratings_fixture_path),
                     "--movies", "1,2,3,6", "--target", "1",
                     "--min-common", "2", "--top-k", "3", "--out-dir", str(out)])
        assert code == 0
        g = graph_from_json((out / "graph.json").read_text())
        assert g.n == 4
        task = json.loads((out / "task.json").read_text())
        assert len(task["samples"]) == 10

    def test_missing_file_is_input_error(self, tmp_path):
        code = main(["ingest", "--ratings", str(tmp_path / "absent.data"),
                     "--movies", "1,2", "--out-dir", str(tmp_path)])
        assert code == 2

    def test_unqualified_target_is_data_error(self, tmp_path, ratings_fixture_path, capsys):
        code = main(["ingest", "--ratings", str(ratings_fixture_path),
                     "--movies", "1,2,3", "--target", "1",
                     "--min-ratings-per-user", "99", "--out-dir", str(tmp_path)])
        assert code == 3
        assert "data error" in capsys.readouterr().err


class TestTrain:
    def test_zero_epochs_checkpoint_equals_initialization(self, tmp_path):
        cfg = _base_config(tmp_path)
        assert main(["train", "--config", str(cfg), "--epochs", "0"]) == 0
        trained = model_from_json((tmp_path / "out" / "checkpoint.json").read_text())
        doc = json.loads(cfg.read_text())
        expected = init_model(
            4,
            trained.layer_specs,
            _mix_seed(doc["seed"], 3),
            n_nodes=8,
        )
        for got, want in zip(trained.weights, expected.weights):
            np.testing.assert_array_equal(got, want)
        history = (tmp_path / "out" / "history.csv").read_text().splitlines()
        assert history == ["epoch,train_loss,penalty,test_loss"]

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = _base_config(tmp_path)
        assert main(["train", "--config", str(cfg)]) == 0
        first = (tmp_path / "out" / "checkpoint.json").read_bytes()
        first_hist = (tmp_path / "out" / "history.csv").read_bytes()
        assert main(["train", "--config", str(cfg)]) == 0
        assert (tmp_path / "out" / "checkpoint.json").read_bytes() == first
        assert (tmp_path / "out" / "history.csv").read_bytes() == first_hist

    def test_convex_config_reaches_low_loss(self, tmp_path):
        cfg = _base_config(
            tmp_path,
            graph={"model": "erdos_renyi", "n": 1, "p": 0.0},
            dataset={"kind": "synthetic", "diffusion_steps": 0, "samples": 6},
            model={"a": 0, "layers": [{"taps": 1, "features_out": 1,
                                       "nonlinearity": "identity",
                                       "pool": {"kind": "none"}}]},
            optimizer={"lr": 0.02, "epochs": 120, "batch_size": 6},
        )
        assert main(["train", "--config", str(cfg)]) == 0
        rows = (tmp_path / "out" / "history.csv").read_text().splitlines()[1:]
        final = float(rows[-1].split(",")[1])
        assert final <= 1e-3

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = _base_config(tmp_path)
        doc = json.loads(cfg.read_text())
        doc["extra_section"] = {}
        cfg.write_text(json.dumps(doc))
        assert main(["train", "--config", str(cfg)]) == 2
        assert "unknown keys" in capsys.readouterr().err

    def test_missing_seed_rejected(self, tmp_path):
        cfg = _base_config(tmp_path)
        doc = json.loads(cfg.read_text())
        del doc["seed"]
        cfg.write_text(json.dumps(doc))
        assert main(["train", "--config", str(cfg)]) == 2

    def test_env_seed_override_changes_outputs(self, tmp_path, monkeypatch):
        cfg = _base_config(tmp_path)
        assert main(["train", "--config", str(cfg), "--epochs", "1"]) == 0
        base = (tmp_path / "out" / "checkpoint.json").read_bytes()
        monkeypatch.setenv("AGGSTAB_SEED", "12345")
        assert main(["train", "--config", str(cfg), "--epochs", "1"]) == 0
        assert (tmp_path / "out" / "checkpoint.json").read_bytes() != base


class TestCertify:
    def _checkpoint(self, tmp_path, taps, a):
        from aggstab.model import AggGnnModel, CnnLayerSpec, model_to_json

        spec = CnnLayerSpec(taps=len(taps), features_in=1, features_out=1,
                            nonlinearity="identity")
        model = AggGnnModel(a=a, layer_specs=[spec], weights=[np.array([taps])])
        path = tmp_path / "checkpoint.json"
        path.write_text(model_to_json(model))
        return path

    def test_constant_filter_passes(self, tmp_path, capsys):
        ckpt = self._checkpoint(tmp_path, [0.7], a=0)
        code = main(["certify", "--checkpoint", str(ckpt), "--omega-lo", "-2",
                     "--omega-hi", "2", "--l0-max", "0", "--l1-max", "0", "--n", "8"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["pass"] is True
        assert doc["L0"] == 0.0 and doc["L1"] == 0.0
        assert doc["C0"] == 0.0

    def test_padding_shifts_are_certified_too(self, tmp_path, capsys):
        # A 1-tap filter padded into a length-(a+1) circulant acts as a delay
        # bank, so its shifted polynomials carry nonzero constants.
        ckpt = self._checkpoint(tmp_path, [0.7], a=4)
        code = main(["certify", "--checkpoint", str(ckpt), "--omega-lo", "-2",
                     "--omega-hi", "2", "--l0-max", "0", "--l1-max", "0", "--n", "8"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["pass"] is False
        assert doc["L0"] > 0.0

    def test_steep_filter_fails_target(self, tmp_path, capsys):
        ckpt = self._checkpoint(tmp_path, [0.0, 2.0], a=4)
        code = main(["certify", "--checkpoint", str(ckpt), "--omega-lo", "-1",
                     "--omega-hi", "1", "--l0-max", "1", "--l1-max", "10", "--n", "4"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["pass"] is False
        assert doc["L0"] >= 2.0

    def test_missing_checkpoint(self, tmp_path):
        code = main(["certify", "--checkpoint", str(tmp_path / "none.json"),
                     "--omega-lo", "-1", "--omega-hi", "1",
                     "--l0-max", "1", "--l1-max", "1", "--n", "4"])
        assert code == 2

    def test_needs_node_count(self, tmp_path):
        ckpt = self._checkpoint(tmp_path, [0.7], a=0)
        code = main(["certify", "--checkpoint", str(ckpt), "--omega-lo", "-1",
                     "--omega-hi", "1", "--l0-max", "1", "--l1-max", "1"])
        assert code == 2


class TestSweep:
    def test_outputs_and_summary(self, tmp_path):
        cfg = _base_config(tmp_path)
        assert main(["sweep", "--config", str(cfg)]) == 0
        out = tmp_path / "out"
        rows = (out / "records.csv").read_text().splitlines()
        assert len(rows) == 1 + 2 * 4
        summary = json.loads((out / "records.summary.json").read_text())
        assert summary["count"] == 8
        assert summary["violations"] == 0
        assert (out / "records.dat").exists()
        assert (out / "records.svg").exists()

    def test_deterministic_outputs(self, tmp_path):
        cfg = _base_config(tmp_path)
        assert main(["sweep", "--config", str(cfg)]) == 0
        out = tmp_path / "out"
        snapshots = {p.name: p.read_bytes() for p in out.iterdir()}
        assert main(["sweep", "--config", str(cfg)]) == 0
        for p in out.iterdir():
            assert snapshots[p.name] == p.read_bytes(), p.name

    def test_threads_flag_preserves_results(self, tmp_path):
        cfg = _base_config(tmp_path)
        assert main(["sweep", "--config", str(cfg), "--out-dir", str(tmp_path / "seq")]) == 0
        assert main(["sweep", "--config", str(cfg), "--threads", "4",
                     "--out-dir", str(tmp_path / "par")]) == 0
        assert (tmp_path / "seq" / "records.csv").read_bytes() == \
            (tmp_path / "par" / "records.csv").read_bytes()

    def test_narrow_omega_exits_4(self, tmp_path, capsys):
        cfg = _base_config(tmp_path)
        doc = json.loads(cfg.read_text())
        doc["sweep"]["omega"] = {"lo": -0.01, "hi": 0.01}
        cfg.write_text(json.dumps(doc))
        assert main(["sweep", "--config", str(cfg)]) == 4
        assert "numeric domain" in capsys.readouterr().err

    def test_trials_flag_overrides_config(self, tmp_path):
        cfg = _base_config(tmp_path)
        assert main(["sweep", "--config", str(cfg), "--trials", "2"]) == 0
        rows = (tmp_path / "out" / "records.csv").read_text().splitlines()
        assert len(rows) == 1 + 2 * 2


class TestReport:
    def test_regenerates_from_csv(self, tmp_path):
        cfg = _base_config(tmp_path)
        assert main(["sweep", "--config", str(cfg)]) == 0
        records_csv = tmp_path / "out" / "records.csv"
        out2 = tmp_path / "report"
        assert main(["report", "--records", str(records_csv), "--out-dir", str(out2)]) == 0
        assert (out2 / "records.summary.json").exists()
        assert (out2 / "records.svg").exists()
        assert (out2 / "records.csv").read_bytes() == records_csv.read_bytes()


class TestUsageErrors:
    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_required_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["gen-graph", "--model", "er"])
        assert exc.value.code == 2
