import json
import subprocess
import sys

import numpy as np
import pytest

from cpdkit import io
from cpdkit.cli import generate, main, run_bench
from cpdkit.core import KruskalTensor
from cpdkit.generators import warmup_tensor
from cpdkit.learning import IDENTITY, MultilinearModel
from cpdkit.solver import SolverOptions, SolveStats, cpd

XOR_CSV = "0,0,0\n0,1,1\n1,0,1\n1,1,0\n"


class TestTensorFile:
    def test_round_trip(self, tmp_path, slices_tensor):
        p = tmp_path / "t.tsr"
        io.write_tensor(p, slices_tensor)
        assert np.array_equal(io.read_tensor(p), slices_tensor)

    def test_exact_doubles(self, tmp_path, rng):
        t = rng.standard_normal((3, 2)) * 10.0 ** rng.integers(-300, 300, (3, 2))
        t[0, 0] = 0.1 + 0.2
        t[1, 1] = 5e-324
        p = tmp_path / "t.tsr"
        io.write_tensor(p, t)
        back = io.read_tensor(p)
        assert np.array_equal(back.view(np.int64), t.view(np.int64))

    def test_layout_first_index_fastest(self):
        t = io.parse_tensor("TSRv1\n2\n2 3\n1\n2\n3\n4\n5\n6\n")
        assert np.array_equal(t, [[1, 3, 5], [2, 4, 6]])

    def test_missing_value(self):
        text = "TSRv1\n3\n3 4 2\n" + "\n".join(["1.0"] * 23) + "\n"
        with pytest.raises(io.ParseError, match="expected 24 values for dims 3 4 2, found 23"):
            io.parse_tensor(text)

    def test_extra_value(self):
        text = "TSRv1\n1\n2\n1\n2\n3\n"
        with pytest.raises(io.ParseError, match="line 6"):
            io.parse_tensor(text)

    def test_comments_and_blanks(self):
        t = io.parse_tensor("# header comment\nTSRv1\n\n1\n# dims\n2\n1.5e0\n\n-2\n")
        assert np.array_equal(t, [1.5, -2.0])

    @pytest.mark.parametrize("text,pat", [
        ("TSRv2\n1\n1\n0\n", "magic"),
        ("TSRv1\n2\n3\n", "expected 2 values"),
        ("TSRv1\n1\n2\n1\nabc\n", "line 5"),
        ("TSRv1\n1\n0\n", "positive"),
    ])
    def test_malformed(self, text, pat):
        with pytest.raises(io.ParseError, match=pat):
            io.parse_tensor(text)


class TestFactorFile:
    def test_round_trip(self, tmp_path, rng):
        k = KruskalTensor([rng.standard_normal((d, 2)) for d in (3, 4, 2)], np.array([2.5, 0.1]))
        p = tmp_path / "k.kru"
        io.write_kruskal(p, k)
        back = io.read_kruskal(p)
        assert np.array_equal(back.weights, k.weights)
        assert all(np.array_equal(a, b) for a, b in zip(back.factors, k.factors))

    def test_layout(self):
        k = io.parse_kruskal("KRUv1\n1 2\n2\n3 4\n1\n2\n5\n6\n")
        assert np.array_equal(k.factors[0], [[1, 5], [2, 6]])
        assert np.array_equal(k.weights, [3, 4])

    def test_bad_weights(self):
        with pytest.raises(io.ParseError, match="weights"):
            io.parse_kruskal("KRUv1\n1 2\n1\n3\n1\n2\n")

    def test_solver_output_conventions(self, tmp_path):
        k, _ = cpd(warmup_tensor(), 3, SolverOptions(seed=0))
        p = tmp_path / "w.kru"
        io.write_kruskal(p, k)
        back = io.read_kruskal(p)
        assert np.all(back.weights >= 0)
        for w in back.factors:
            assert np.allclose(np.linalg.norm(w, axis=0), 1.0)


class TestModelAndStats:
    def test_model_round_trip(self, tmp_path):
        m = MultilinearModel.random(3, 2, 3, 2, seed=0, activation=IDENTITY)
        p = tmp_path / "m.mlm"
        io.write_model(p, m)
        back = io.read_model(p)
        assert back.activation.name == "identity"
        x = np.array([1.0, 0.3, -2.0])
        assert np.allclose(back.predict(x), m.predict(x), rtol=1e-15)

    def test_model_unknown_activation(self, tmp_path):
        p = tmp_path / "m.mlm"
        p.write_text("MLMv1\n1 relu\n")
        with pytest.raises(io.ParseError, match="activation"):
            io.read_model(p)

    def test_stats_json(self):
        _, st = cpd(warmup_tensor(), 3, SolverOptions(seed=0))
        d = json.loads(io.stats_json(st, timings=False))
        assert set(d) == {"stop_reason", "iterations", "rel_error", "improvement",
                          "grad_supnorm", "damping", "gain_ratio", "cg_iters", "timings",
                          "trunc_dims", "seed"}
        for key in ("rel_error", "improvement", "grad_supnorm", "damping", "gain_ratio",
                    "cg_iters"):
            assert len(d[key]) == d["iterations"]
        assert set(d["timings"].values()) == {0.0}
        assert d["trunc_dims"] == [3, 3, 3]

    def test_csv(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("# x1,x2,label\n" + XOR_CSV)
        X, y = io.read_csv_dataset(p)
        assert X.shape == (4, 2) and list(y) == [0, 1, 1, 0]

    def test_csv_label(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0,0,0.5\n")
        with pytest.raises(io.ParseError, match="label"):
            io.read_csv_dataset(p)


@pytest.fixture
def warmup_file(tmp_path):
    p = tmp_path / "warmup.tsr"
    io.write_tensor(p, warmup_tensor())
    return p


class TestDecompose:
    def test_worked_example(self, tmp_path, warmup_file, capsys):
        stats = tmp_path / "s.json"
        code = main(["decompose", "--input", str(warmup_file), "--rank", "3", "--init", "mlsvd",
                     "--seed", "7", "--deterministic", "--output", str(tmp_path / "out"),
                     "--stats", str(stats)])
        assert code == 0
        d = json.loads(stats.read_text())
        assert d["rel_error"][-1] <= 1e-4
        assert len(d["cg_iters"]) == d["iterations"]
        k = io.read_kruskal(tmp_path / "out.kru")
        t = warmup_tensor()
        assert np.linalg.norm(t - k.full()) / np.linalg.norm(t) <= 1e-4
        assert "stop=" in capsys.readouterr().out

    def test_deterministic_byte_identical(self, tmp_path, warmup_file):
        outs = []
        for run in range(2):
            pre = tmp_path / f"r{run}"
            main(["--deterministic", "decompose", "--input", str(warmup_file), "--rank", "3",
                  "--seed", "11", "--output", str(pre), "--stats", str(pre) + ".json"])
            outs.append((pre.with_suffix(".kru").read_bytes(),
                         (tmp_path / f"r{run}.json").read_bytes()))
        assert outs[0] == outs[1]

    def test_default_prefix(self, warmup_file):
        assert main(["decompose", "--input", str(warmup_file), "--rank", "2"]) == 0
        assert warmup_file.with_suffix(".kru").exists()

    @pytest.mark.parametrize("method", ["als", "tt"])
    def test_methods(self, tmp_path, warmup_file, capsys, method):
        code = main(["decompose", "--input", str(warmup_file), "--rank", "3", "--method", method,
                     "--output", str(tmp_path / method)])
        assert code == 0
        err = capsys.readouterr().err
        assert ("order" in err) == (method == "tt")

    def test_order4_tt(self, tmp_path, capsys):
        from cpdkit.generators import random_kruskal
        p = tmp_path / "h.tsr"
        io.write_tensor(p, random_kruskal((6, 5, 6, 5), 3, seed=0).full())
        assert main(["decompose", "--input", str(p), "--rank", "3", "--method", "tt"]) == 0
        assert capsys.readouterr().err == ""

    def test_rank_zero(self, warmup_file, capsys):
        assert main(["decompose", "--input", str(warmup_file), "--rank", "0"]) == 1
        assert "rank" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["decompose", "--input", str(tmp_path / "nope.tsr"), "--rank", "2"]) == 1

    def test_parse_error_exit(self, tmp_path):
        p = tmp_path / "bad.tsr"
        p.write_text("TSRv1\n3\n3 4 2\n" + "1\n" * 23)
        assert main(["decompose", "--input", str(p), "--rank", "2"]) == 1

    @pytest.mark.parametrize("argv", [
        ["decompose", "--input", "x.tsr"],
        ["decompose", "--input", "x.tsr", "--rank", "2", "--bogus"],
        ["frobnicate"],
        [],
    ])
    def test_usage_errors(self, argv, capsys):
        assert main(argv) == 64
        assert "usage" in capsys.readouterr().err

    def test_help(self, capsys):
        assert main(["--help"]) == 0


class TestMlsvdCommand:
    def test_outputs(self, tmp_path, warmup_file, capsys):
        pre = tmp_path / "c"
        assert main(["mlsvd", "--input", str(warmup_file), "--rank-cap", "3",
                     "--output", str(pre)]) == 0
        d = json.loads(capsys.readouterr().out)
        assert d["trunc_dims"] == [3, 3, 3]
        core = io.read_tensor(tmp_path / "c.core.tsr")
        us = [io.read_tensor(tmp_path / f"c.u{l}.tsr") for l in (1, 2, 3)]
        from cpdkit.core import multilinear_multiply
        t = warmup_tensor()
        assert np.linalg.norm(multilinear_multiply(us, core) - t) / np.linalg.norm(t) \
            == pytest.approx(d["rel_error"], abs=1e-12)


class TestBench:
    def test_warmup(self, capsys):
        assert main(["bench", "--suite", "warmup", "--repeats", "20", "--deterministic"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 22
        summary = json.loads(lines[-1])
        assert summary["rel_error"]["mean"] < 1e-3
        assert set(summary["time"].values()) == {0.0}

    def test_no_precond_ablation(self):
        # typical runs stay within 2x; the occasional unpreconditioned run stalls, so
        # the comparison is on medians while the mean only has to be no better
        _, base = run_bench("warmup", 20)
        _, abl = run_bench("warmup", 20, ablate="no-precond")
        ratio = abl["rel_error"]["median"] / base["rel_error"]["median"]
        assert 0.5 <= ratio <= 2.0
        assert abl["rel_error"]["mean"] >= base["rel_error"]["mean"]
        assert abl["mean_cg"] > base["mean_cg"]

    def test_other_ablations(self):
        _, s = run_bench("warmup", 2, ablate="fixed-cg:3")
        assert s["mean_cg"] == 3
        _, s = run_bench("warmup", 5, ablate="no-reg")
        assert s["rel_error"]["mean"] < 1e-3

    def test_init_override(self):
        _, s = run_bench("warmup", 1, init="random")
        assert s["init"] == "random"
        _, s = run_bench("warmup", 1)
        assert s["init"] == "mlsvd"

    def test_repeats_zero(self):
        assert main(["bench", "--suite", "warmup", "--repeats", "0"]) == 1

    def test_unknown_suite(self):
        assert main(["bench", "--suite", "mnist"]) == 64

    def test_unknown_ablation(self):
        assert main(["bench", "--suite", "warmup", "--ablate", "no-cg"]) == 64

    @pytest.mark.parametrize("suite", ["swamp", "bottleneck", "border", "matmul", "highorder"])
    def test_small_suites(self, suite):
        size = {"swamp": 12, "bottleneck": 12, "matmul": 2, "highorder": 6}.get(suite)
        rank = {"swamp": 3, "bottleneck": 3}.get(suite)
        rows, s = run_bench(suite, 1, size=size, rank=rank, maxiter=30)
        assert len(rows) == 1 and np.isfinite(s["rel_error"]["min"])


class TestGen:
    @pytest.mark.parametrize("kind", ["warmup", "collinear", "bottleneck", "matmul", "border",
                                      "random", "ill"])
    def test_kinds(self, tmp_path, kind):
        p = tmp_path / f"{kind}.tsr"
        args = ["gen", "--kind", kind, "--output", str(p), "--seed", "3"]
        if kind == "matmul":
            args += ["--n", "2"]
        if kind == "ill":
            args += ["--rank", "15", "--c", "0.5"]
        assert main(args) == 0
        assert np.array_equal(io.read_tensor(p), generate(
            kind, rank=15 if kind == "ill" else 3, n=2 if kind == "matmul" else 10, seed=3))

    def test_dims_and_noise(self, tmp_path):
        p = tmp_path / "r.tsr"
        assert main(["gen", "--kind", "random", "--dims", "4,3,2", "--nu", "0.1",
                     "--output", str(p)]) == 0
        assert io.read_tensor(p).shape == (4, 3, 2)

    def test_bad_dims(self, tmp_path):
        assert main(["gen", "--kind", "random", "--dims", "4,x", "--output",
                     str(tmp_path / "x")]) == 64


class TestLearnClassify:
    def test_xor(self, tmp_path, capsys):
        data = tmp_path / "xor.csv"
        data.write_text(XOR_CSV)
        model = tmp_path / "xor.mlm"
        assert main(["learn", "--input", str(data), "--rank", "2", "--seed", "1",
                     "--output", str(model)]) == 0
        capsys.readouterr()
        assert main(["classify", "--input", str(data), "--model", str(model)]) == 0
        acc = float(capsys.readouterr().out.strip().split("=")[1])
        assert acc >= 0.99

    def test_multiclass_and_mlsvd(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        centers = np.array([[4, 0, 0, 0], [0, 4, 0, 0], [0, 0, 4, 0]], dtype=float)
        rows = [np.r_[c + rng.standard_normal(4) * 0.5, k] for k, c in enumerate(centers)
                for _ in range(20)]
        data = tmp_path / "blobs.csv"
        np.savetxt(data, rows, delimiter=",", fmt="%.17g")
        model = tmp_path / "b.mlm"
        assert main(["learn", "--input", str(data), "--order", "1", "--rank", "1",
                     "--alpha", "0.5", "--epochs", "200", "--output", str(model)]) == 0
        assert io.read_model(model).outputs == 3
        capsys.readouterr()
        assert main(["classify", "--input", str(data), "--train", str(data),
                     "--rank", "4", "--sub-rank", "1"]) == 0
        assert float(capsys.readouterr().out.strip().split("=")[1]) >= 0.9

    def test_non_integer_label(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        data.write_text("0,0,0.5\n1,1,1\n")
        assert main(["learn", "--input", str(data), "--rank", "1", "--output",
                     str(tmp_path / "m")]) == 1
        assert "label" in capsys.readouterr().err

    def test_feature_mismatch(self, tmp_path):
        data = tmp_path / "xor.csv"
        data.write_text(XOR_CSV)
        model = tmp_path / "m.mlm"
        io.write_model(model, MultilinearModel.random(4, 1, 2, 2))
        assert main(["classify", "--input", str(data), "--model", str(model)]) == 1

    def test_needs_model_or_train(self, tmp_path):
        data = tmp_path / "xor.csv"
        data.write_text(XOR_CSV)
        assert main(["classify", "--input", str(data)]) == 64


def test_console_script(tmp_path):
    out = subprocess.run([sys.executable, "-m", "cpdkit.cli", "gen", "--kind", "warmup",
                          "--output", str(tmp_path / "w.tsr")], capture_output=True, text=True)
    assert out.returncode == 0 and "6 5 4" in out.stdout
    out = subprocess.run([sys.executable, "-m", "cpdkit.cli", "bench", "--suite", "nope"],
                         capture_output=True, text=True)
    assert out.returncode == 64
