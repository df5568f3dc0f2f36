import subprocess
import sys

import numpy as np
import pytest

from mixeddyn import io as mio
from mixeddyn.cli import main, three_step_report
from mixeddyn.learning import TrainConfig, em_train
from mixeddyn.model import ModelParams, SequenceData, sample
from mixeddyn.parallel import pmap, worker_count

from oracles import random_model


@pytest.fixture
def model_file(tmp_path):
    p = random_model(np.random.default_rng(0), N=2, M=2, S=2)
    path = tmp_path / "model.txt"
    mio.save_model(p, path)
    return p, path


class TestRepro:
    def test_costs_17_and_9(self, capsys):
        assert main(["repro-sec4", "--k", "0"]) == 0
        text = capsys.readouterr().out
        assert "greedy path: -1 +1 -1 cost 17" in text
        assert "least-cost path: -1 -1 -1 cost 9" in text
        assert "not available" in text

    def test_k1_has_variational_trace(self):
        text = three_step_report(1.0, 0.5, 0.0)
        assert "variational path: -1 -1 -1" in text
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and ln.split()[0].isdigit()]
        assert rows[0][0] == "0" and len(rows) >= 2
        # iter, three log q values, three u values, bound (absent on the initial row)
        assert all(len(r) == 8 for r in rows[1:]) and len(rows[0]) == 7

    def test_writes_file_with_out(self, tmp_path):
        assert main(["repro-sec4", "--out", str(tmp_path)]) == 0
        assert "cost 17" in (tmp_path / "three_step.txt").read_text()


class TestInfer:
    def test_exact_over_cap_fails(self, tmp_path, model_file, capsys):
        _, mpath = model_file
        mio.save_sequence(SequenceData(np.zeros((6, 2))), tmp_path / "y.txt")
        rc = main(["infer", "--model", str(mpath), "--sequence", str(tmp_path / "y.txt"),
                   "--method", "exact", "--cap", "32"])
        assert rc != 0
        assert "error" in capsys.readouterr().err

    @pytest.mark.parametrize("method", ["variational", "greedy", "exact"])
    def test_methods_write_outputs(self, tmp_path, model_file, method):
        p, mpath = model_file
        y, _ = sample(p, 5, seed=1)
        mio.save_sequence(y, tmp_path / "y.txt")
        out = tmp_path / method
        assert main(["infer", "--model", str(mpath), "--sequence", str(tmp_path / "y.txt"),
                     "--method", method, "--out", str(out)]) == 0
        summary = (out / "summary.txt").read_text()
        assert summary.startswith(f"method {method}")
        rows = (out / "posterior.tsv").read_text().splitlines()
        assert len(rows) == 1 + 5

    def test_malformed_model_reports_field(self, tmp_path, capsys):
        (tmp_path / "bad.txt").write_text("state_dim 1\nobs_dim 1\nnum_states 1\nA\n1\n")
        mio.save_sequence(SequenceData(np.zeros((3, 1))), tmp_path / "y.txt")
        rc = main(["infer", "--model", str(tmp_path / "bad.txt"), "--sequence", str(tmp_path / "y.txt")])
        assert rc == 1
        assert "field C" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        rc = main(["infer", "--model", str(tmp_path / "nope.txt"), "--sequence", str(tmp_path / "y.txt")])
        assert rc == 1 and "infer: error" in capsys.readouterr().err


class TestSampleAndDeterminism:
    def test_sample_outputs(self, tmp_path, model_file):
        _, mpath = model_file
        assert main(["sample", "--model", str(mpath), "--length", "7", "--seed", "3", "--out", str(tmp_path / "s")]) == 0
        y = mio.load_sequence(tmp_path / "s" / "sequence.txt")
        assert y.T == 7 and y.true_states is not None
        assert len((tmp_path / "s" / "latents.tsv").read_text().splitlines()) == 8

    def test_identical_invocations_identical_files(self, tmp_path, model_file):
        _, mpath = model_file
        for d in ("a", "b"):
            main(["sample", "--model", str(mpath), "--length", "9", "--seed", "4", "--out", str(tmp_path / d)])
        for name in ("sequence.txt", "latents.tsv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        main(["sample", "--model", str(mpath), "--length", "9", "--seed", "5", "--out", str(tmp_path / "c")])
        assert (tmp_path / "a" / "sequence.txt").read_bytes() != (tmp_path / "c" / "sequence.txt").read_bytes()

    def test_out_required(self, model_file):
        _, mpath = model_file
        with pytest.raises(SystemExit):
            main(["sample", "--model", str(mpath), "--length", "3"])


class TestTrainAndClassify:
    def test_train_matches_library(self, tmp_path):
        rng = np.random.default_rng(2)
        truth = random_model(rng, N=2, M=2, S=1)
        y, _ = sample(truth, 30, seed=2)
        init = random_model(np.random.default_rng(3), N=2, M=2, S=1)
        mio.save_dataset(tmp_path / "ds", [(y, "only", 0)])
        mio.save_model(init, tmp_path / "init.txt")
        assert main(["train", "--manifest", str(tmp_path / "ds" / "manifest.txt"), "--init",
                     str(tmp_path / "init.txt"), "--max-em", "5", "--out", str(tmp_path / "o")]) == 0
        lib, hist = em_train([mio.load_sequence(tmp_path / "ds" / "seq_00000.txt")], mio.load_model(tmp_path / "init.txt"),
                             TrainConfig(max_em_iter=5))
        got = mio.load_model(tmp_path / "o" / "model.txt")
        for name in ("A", "C", "D", "Q", "R", "Pi", "pi0"):
            assert np.array_equal(getattr(got, name), getattr(lib, name)), name
        lines = (tmp_path / "o" / "bound_history.tsv").read_text().splitlines()[1:]
        assert [float(ln.split("\t")[1]) for ln in lines] == hist

    def test_bad_freeze(self, tmp_path, capsys):
        mio.save_dataset(tmp_path / "ds", [(SequenceData(np.zeros((4, 2))), "a", 0)])
        mio.save_model(random_model(np.random.default_rng(4)), tmp_path / "init.txt")
        rc = main(["train", "--manifest", str(tmp_path / "ds"), "--init", str(tmp_path / "init.txt"),
                   "--freeze", "A,Z", "--out", str(tmp_path / "o")])
        assert rc == 1 and "Z" in capsys.readouterr().err

    def test_classify_report(self, tmp_path):
        rng = np.random.default_rng(5)
        a = ModelParams(A=[[0.5]], C=[[1.0]], D=[[3.0]], Q=[[0.1]], R=[[0.1]], Pi=[[1.0]], pi0=[1.0])
        b = a.replace(D=[[-3.0]])
        (tmp_path / "models").mkdir()
        mio.save_model(a, tmp_path / "models" / "pos.txt")
        mio.save_model(b, tmp_path / "models" / "neg.txt")
        entries = []
        for k in range(4):
            for name, p in (("pos", a), ("neg", b)):
                entries.append((sample(p, 10, seed=int(rng.integers(1 << 30)))[0], name, k % 2))
        mio.save_dataset(tmp_path / "ds", entries)
        assert main(["classify", "--models", str(tmp_path / "models"), "--manifest",
                     str(tmp_path / "ds" / "manifest.txt"), "--out", str(tmp_path / "o")]) == 0
        m = mio.load_report(tmp_path / "o" / "report.tsv")
        assert m.class_names == ["neg", "pos"]
        assert np.array_equal(m.confusion, [[4, 0], [0, 4]])
        assert m.overall_error == 0.0
        assert len(m.bound_traces) == 16
        preds = (tmp_path / "o" / "predictions.tsv").read_text().splitlines()
        assert preds[0].split("\t") == ["file", "true", "predicted", "bound_neg", "bound_pos"]

    def test_classify_unknown_class(self, tmp_path, capsys):
        (tmp_path / "models").mkdir()
        mio.save_model(random_model(np.random.default_rng(6)), tmp_path / "models" / "x.txt")
        mio.save_dataset(tmp_path / "ds", [(SequenceData(np.zeros((3, 2))), "y", 0)])
        rc = main(["classify", "--models", str(tmp_path / "models"), "--manifest", str(tmp_path / "ds"),
                   "--out", str(tmp_path / "o")])
        assert rc == 1 and "without a model" in capsys.readouterr().err


class TestWorkers:
    def test_env_cap(self, monkeypatch):
        monkeypatch.setenv("MIXEDDYN_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("MIXEDDYN_THREADS", "0")
        assert worker_count() >= 1
        monkeypatch.setenv("MIXEDDYN_THREADS", "-1")
        with pytest.raises(ValueError):
            worker_count()

    def test_pool_matches_serial(self, monkeypatch):
        monkeypatch.setenv("MIXEDDYN_THREADS", "2")
        assert pmap(abs, [-3, 1, -2, 5]) == [3, 1, 2, 5]


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "mixeddyn.cli", "repro-sec4"], capture_output=True, text=True)
    assert r.returncode == 0 and "cost 9" in r.stdout
    r = subprocess.run([sys.executable, "-m", "mixeddyn.cli", "bogus"], capture_output=True, text=True)
    assert r.returncode != 0
