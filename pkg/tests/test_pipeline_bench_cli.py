import json
import math

import numpy as np
import pytest

from symgpt import bench
from symgpt.cli import main
from symgpt.eqgen import GenConfig, generate_instance, instance_rng, read_corpus
from symgpt.expr import evaluate_batch, parse
from symgpt.fit import mse_n
from symgpt.gp import GPConfig
from symgpt.pipeline import FAILURE, InferOptions, predict


class ScriptedModel:
    """Stands in for a trained model: returns the given samples in order."""

    d_max = 2

    def __init__(self, *samples):
        self.samples = list(samples)
        self.calls = 0

    def embed(self, points):
        return np.zeros(4)

    def sample(self, w_D, rng=None, top_k=40, max_len=200):
        s = self.samples[min(self.calls, len(self.samples) - 1)]
        self.calls += 1
        return s


@pytest.fixture(scope="module")
def linear_data():
    x = np.linspace(-3, 3, 30)[:, None]
    return x, 1.5 * x[:, 0] - 0.7


class TestPredict:
    def test_exact_skeleton_fits(self, linear_data):
        X, y = linear_data
        p = predict(ScriptedModel("((C*x1)+C)"), X, y)
        assert p.ok and p.attempts == 1 and p.mse_n < 1e-6
        assert p.skeleton == "((C*x1)+C)"

    def test_unparseable_without_retries_is_sentinel(self, linear_data):
        X, y = linear_data
        model = ScriptedModel("((C*x1")
        p = predict(model, X, y, InferOptions(retries=0))
        assert p.mse_n == FAILURE == math.inf and not p.ok
        assert model.calls == 1 and p.attempts == 1

    def test_retry_after_bad_samples(self, linear_data):
        X, y = linear_data
        model = ScriptedModel("sin(", "(C*x2)", "log((x1-C-9))", "((C*x1)+C)")
        p = predict(model, X, y, InferOptions(retries=3))
        assert p.ok and p.attempts == 4 and model.calls == 4

    def test_budget_exhausted(self, linear_data):
        X, y = linear_data
        model = ScriptedModel("x1+")
        p = predict(model, X, y, InferOptions(retries=2))
        assert p.mse_n == FAILURE and model.calls == 3

    def test_timing_accounting(self, linear_data):
        X, y = linear_data
        p = predict(ScriptedModel("x1)", "sin((C*x1))"), X, y)
        parts = p.t_encode + p.t_sample + p.t_fit
        assert abs(parts - p.t_total) <= 0.01 * p.t_total

    def test_record(self, linear_data):
        X, y = linear_data
        rec = predict(ScriptedModel("((C*x1)+C)"), X, y).to_dict()
        assert json.loads(json.dumps(rec))["equation"] == rec["equation"]
        assert mse_n(y, evaluate_batch(parse(rec["equation"]), X)) == pytest.approx(rec["mse_n"], abs=1e-10)


@pytest.fixture(scope="module")
def instances():
    cfg = GenConfig(d=(1, 2), n_points=(10, 30))
    return [generate_instance(cfg, instance_rng(8, i)) for i in range(6)]


def crashing_method(X, y, seed=0):
    raise RuntimeError("boom")


@pytest.fixture(scope="module")
def rows(instances):
    methods = {"mean": bench.mean_method, "gp": bench.GPMethod(GPConfig(population=30, generations=2)),
               "broken": crashing_method}
    return bench.run_benchmark(instances, methods)


class TestBenchmark:
    def test_one_row_per_method_and_instance(self, rows, instances):
        assert len(rows) == 3 * len(instances)
        assert [(r.method, r.instance_id) for r in rows[:3]] == [("mean", 0), ("mean", 1), ("mean", 2)]

    def test_crash_becomes_sentinel_row(self, rows):
        broken = [r for r in rows if r.method == "broken"]
        assert all(r.mse_n == math.inf and r.equation == "" for r in broken)

    def test_scores_recomputable_from_csv(self, rows, instances, tmp_path):
        bench.write_csv(rows, tmp_path / "r.csv")
        back = bench.read_csv(tmp_path / "r.csv")
        assert len(back) == len(rows)
        for r in back:
            inst = instances[r.instance_id]
            expected = bench.score_equation(r.equation, inst.X, inst.y)
            if math.isinf(expected):
                assert math.isinf(r.mse_n)
            else:
                assert r.mse_n == pytest.approx(expected, rel=1e-10, abs=1e-10)

    def test_deterministic_csv_omits_time(self, rows, tmp_path):
        bench.write_csv(rows, tmp_path / "a.csv", deterministic=True)
        assert all(r.split(",")[5] == "nan" for r in (tmp_path / "a.csv").read_text().splitlines()[1:])

    def test_parallel_matches_serial(self, instances):
        methods = {"mean": bench.mean_method}
        serial = bench.run_benchmark(instances, methods)
        parallel = bench.run_benchmark(instances, methods, workers=2)
        assert [(r.instance_id, r.mse_n) for r in serial] == [(r.instance_id, r.mse_n) for r in parallel]

    def test_cdf_file(self, rows, tmp_path):
        bench.write_cdf(rows, tmp_path / "cdf.csv")
        lines = (tmp_path / "cdf.csv").read_text().splitlines()
        assert lines[0] == "log10_mse_n,mean,gp,broken"
        assert lines[-1].startswith("inf,1.0,1.0,1.0")


class TestSummaries:
    def test_cdf_monotone_and_complete(self):
        scores = [1e-12, 1e-3, 0.5, math.inf, 0.0, 2.0]
        t, frac = bench.cdf_curve(scores)
        assert np.all(np.diff(frac) >= 0)
        assert frac[-1] == 1.0 and t[-1] == math.inf
        assert frac[-2] == pytest.approx(5 / 6)

    def test_cdf_explicit_thresholds(self):
        t, frac = bench.cdf_curve([1e-4, 1e-2, 1.0], [-3, 0])
        np.testing.assert_array_equal(frac, [1 / 3, 1.0, 1.0])

    def test_timing_table_format(self):
        rows = [bench.Row("gp", i, 1, 30, 0.1, s, "x1") for i, s in enumerate([1.0, 3.0])]
        rows.append(bench.Row("mean", 0, 1, 30, 0.2, 0.0, "1.0"))
        table = bench.timing_table({"one_var": rows, "two_var": rows[:1]})
        lines = table.splitlines()
        assert lines[0] == "| Method | one_var | two_var |"
        assert lines[2] == "| gp | 2.00 ± 1.00 | 1.00 ± 0.00 |"
        assert lines[3] == "| mean | 0.00 ± 0.00 | n/a |"

    def test_sweep(self, instances, tmp_path):
        cfg = GenConfig(d=(1, 2))
        sweep = bench.point_sweep(instances[:3], {"mean": bench.mean_method}, cfg, ns=(25, 50))
        assert [(s["n"], s["method"]) for s in sweep] == [(25, "mean"), (50, "mean")]
        bench.write_sweep(sweep, tmp_path / "s.csv")
        assert bench.read_sweep(tmp_path / "s.csv") == sweep

    def test_resample_keeps_equation(self, instances):
        data, ids = bench.resample(instances, 40, GenConfig(d=(1, 2)), seed=0)
        for inst, i in zip(data, ids):
            assert inst.n == 40 and inst.expr == instances[i].expr

    def test_plots_are_svg(self, tmp_path):
        rows = [bench.Row("m", i, 1, 10, s, 0.1, "x1") for i, s in enumerate([1e-3, 0.1, math.inf])]
        bench.plot_cdf(rows, tmp_path / "c.svg")
        bench.plot_sweep([{"n": 25, "method": "m", "median_mse_n": 0.1}], tmp_path / "s.svg")
        assert (tmp_path / "c.svg").read_text().lstrip().startswith("<?xml")
        assert "<svg" in (tmp_path / "s.svg").read_text()


def tiny_config(tmp_path, **extra) -> str:
    cfg = {
        "name": "one_var",
        "counts": {"train": 40, "val": 10, "test": 6},
        "tnet": {"e": 16},
        "gpt": {"n_layers": 1, "n_heads": 2, "width": 16},
        "train": {"epochs": 1, "batch_size": 16},
        "infer": {"restarts": 2, "retries": 0},
        "gp": {"population": 20, "generations": 2},
        "methods": ["symbolicgpt", "gp", "mean"],
        "sweep": [25, 50],
        **extra,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


class TestCli:
    def test_generate_scaled_counts_and_domains(self, tmp_path):
        out = tmp_path / "run"
        assert main(["generate", "--config", tiny_config(tmp_path), "--scale", "0.5", "--out", str(out)]) == 0
        train = read_corpus(out / "data" / "train.jsonl")
        test = read_corpus(out / "data" / "test.jsonl")
        assert len(train) == 20 and len(test) == 3
        assert all(i.d == 1 and i.n == 30 for i in train + test)
        assert all(np.all((np.abs(i.X) >= 3) & (np.abs(i.X) <= 5)) for i in test)

    def test_generate_is_deterministic(self, tmp_path):
        cfg = tiny_config(tmp_path)
        for name in ("a", "b"):
            assert main(["generate", "--config", cfg, "--out", str(tmp_path / name), "--seed", "3"]) == 0
        for split in ("train", "val", "test"):
            a = (tmp_path / "a" / "data" / f"{split}.jsonl").read_bytes()
            assert a == (tmp_path / "b" / "data" / f"{split}.jsonl").read_bytes()

    def test_full_workflow(self, tmp_path, capsys):
        cfg = tiny_config(tmp_path)
        out = str(tmp_path / "run")
        assert main(["generate", "--config", cfg, "--out", out]) == 0
        assert main(["train", "--config", cfg, "--out", out]) == 0
        metrics = [json.loads(line) for line in (tmp_path / "run" / "model" / "metrics.jsonl").read_text().splitlines()]
        assert any("val_loss" in m for m in metrics)
        assert main(["infer", "--config", cfg, "--out", out, "--limit", "2"]) == 0
        preds = (tmp_path / "run" / "predictions.jsonl").read_text().splitlines()
        assert len(preds) == 2
        assert main(["benchmark", "--config", cfg, "--out", out]) == 0
        bench_dir = tmp_path / "run" / "bench"
        for name in ("results.csv", "cdf.csv", "cdf.svg", "timing.md", "sweep.csv", "sweep.svg"):
            assert (bench_dir / name).exists(), name
        assert len(bench.read_csv(bench_dir / "results.csv")) == 3 * 6
        assert main(["plot", "--config", cfg, "--out", out]) == 0
        assert "| Method |" in capsys.readouterr().out

    def test_missing_corpus_is_input_error(self, tmp_path):
        assert main(["train", "--config", tiny_config(tmp_path), "--out", str(tmp_path / "empty")]) == 2

    def test_unknown_config_key(self, tmp_path):
        assert main(["generate", "--config", tiny_config(tmp_path, gpt={"depth": 3})]) == 2

    def test_index_out_of_range(self, tmp_path):
        cfg = tiny_config(tmp_path)
        out = str(tmp_path / "run")
        main(["generate", "--config", cfg, "--out", out])
        main(["train", "--config", cfg, "--out", out])
        assert main(["infer", "--config", cfg, "--out", out, "--index", "99"]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_diverged_training_exit_code(self, tmp_path):
        cfg = tiny_config(tmp_path, train={"epochs": 1, "batch_size": 16, "lr": 1e300, "grad_clip": 1e300})
        out = str(tmp_path / "run")
        main(["generate", "--config", cfg, "--out", out])
        assert main(["train", "--config", cfg, "--out", out]) == 3
