import json
import subprocess
import sys

import numpy as np
import pytest

from sdlearn import cli
from sdlearn.cli import main
from sdlearn.data import LabeledDataset, save_dataset
from sdlearn.errors import TrainingAborted
from sdlearn.model import LINEAR, DecisionParams, Hyperparams, SdlModel, load_model, save_model
from sdlearn.synthetic import separable_codes
from sdlearn.training import init_dictionary

FAST = ["--k", "4", "--outer-iterations", "2", "--gamma-iterations", "1", "--workers", "1"]


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "data.bin"
    save_dataset(separable_codes(m_per_class=12, n=8, seed=1), path)
    return str(path)


@pytest.fixture
def trained(tmp_path, dataset):
    out = str(tmp_path / "model.bin")
    assert main(["train", "--data", dataset, "--mode", "sdl-d", "--mu-steps", "2",
                 "--out", out] + FAST) == 0
    return out


def test_train_writes_artifacts(tmp_path, dataset, capsys):
    out = str(tmp_path / "m.bin")
    code = main(["train", "--data", dataset, "--mode", "sdl-d", "--variant", "linear",
                 "--kappa", "0.15", "--mu-steps", "3", "--out", out] + FAST)
    assert code == 0
    model = load_model(out)
    assert model.k == 4 and model.p == 2
    records = [json.loads(line) for line in open(out + ".trace.jsonl")]
    assert {r["mu"] for r in records} == {0.0, 0.5, 1.0}
    run = json.load(open(out + ".run.json"))
    assert run["mode"] == "sdl-d" and run["seed"] == 0
    printed = capsys.readouterr().out
    assert "final objective" in printed and "chosen mu" in printed and "validation error" in printed


def test_rec_mode(tmp_path, dataset):
    out = str(tmp_path / "rec.bin")
    assert main(["train", "--data", dataset, "--mode", "rec", "--out", out] + FAST) == 0
    records = [json.loads(line) for line in open(out + ".trace.jsonl")]
    assert all(r["mu"] is None for r in records)


def test_pairwise_scheme(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 5))
    path = tmp_path / "three.bin"
    save_dataset(LabeledDataset(X, np.arange(30) % 3), path)
    out = str(tmp_path / "ens.bin")
    assert main(["train", "--data", str(path), "--scheme", "pairwise", "--mode", "sdl-g",
                 "--out", out] + FAST) == 0
    members = {json.loads(line)["member"] for line in open(out + ".trace.jsonl")}
    assert members == {0, 1, 2}


@pytest.mark.parametrize("argv", [
    ["train", "--out", "x.bin"],                                        # no dataset
    ["train", "--data", "/nonexistent/file", "--out", "x.bin"],          # missing path
    ["train", "--data", "{data}", "--kappa", "0.2", "--lambda1", "0.5", "--out", "x.bin"],
    ["train", "--data", "{data}", "--k", "0", "--out", "x.bin"],
    ["train", "--data", "{data}", "--mu", "0.5,0.2", "--out", "x.bin"],
    ["train", "--data", "{data}", "--workers", "0", "--out", "x.bin"],
    ["train", "--data", "{data}", "--mode", "fancy", "--out", "x.bin"],
    ["probe", "--data", "{data}", "--mu", ""],
    ["eval", "--data", "{data}", "--model", "/nonexistent/model"],
    ["gridsearch", "--data", "{data}", "--k", "a", "--kappa", "0.1"],
])
def test_usage_errors(argv, dataset, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    argv = [a.replace("{data}", dataset) for a in argv]
    assert main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_eval_report(tmp_path, dataset, trained, capsys):
    report = tmp_path / "report.json"
    assert main(["eval", "--data", dataset, "--model", trained, "--report", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert 0.0 <= doc["error_rate"] <= 1.0
    assert np.sum(doc["confusion"]) == 24
    assert f"error rate: {100 * doc['error_rate']:.2f}%" in capsys.readouterr().out


def test_eval_dimension_mismatch(tmp_path, trained, capsys):
    other = tmp_path / "other.bin"
    save_dataset(separable_codes(m_per_class=4, n=6, seed=2), other)
    assert main(["eval", "--data", str(other), "--model", trained]) == 3
    err = capsys.readouterr().err
    assert "n=6" in err and "n=8" in err


def test_eval_constant_predictor(tmp_path, capsys):
    model = SdlModel(init_dictionary(5, 3), DecisionParams(LINEAR, np.zeros((3, 2)), [4.0, 0.0]),
                     Hyperparams.from_kappa(1.0, 0.15), [0, 1])
    save_model(model, tmp_path / "const.bin")
    X = np.random.default_rng(3).standard_normal((10, 5))
    save_dataset(LabeledDataset(X, np.arange(10) % 2), tmp_path / "bal.bin")
    assert main(["eval", "--data", str(tmp_path / "bal.bin"), "--model",
                 str(tmp_path / "const.bin"), "--report", str(tmp_path / "r.json")]) == 0
    assert "error rate: 50.00%" in capsys.readouterr().out


def test_corrupted_model_is_data_error(tmp_path, dataset):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"not a model at all")
    assert main(["eval", "--data", dataset, "--model", str(bad)]) == 3


def test_gridsearch(tmp_path, dataset, capsys):
    out = tmp_path / "rank.csv"
    argv = ["gridsearch", "--data", dataset, "--k", "2,4", "--kappa", "0.15", "--folds", "3",
            "--rec-iterations", "3", "--workers", "1", "--out", str(out)]
    assert main(argv) == 0
    assert "fewer than" in capsys.readouterr().err
    lines = out.read_text().splitlines()
    assert lines[0] == "rank,k,kappa,lambda2,mean_error,std_error,kept"
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 2
    means = [float(r[4]) for r in rows]
    assert means == sorted(means)
    assert [r[6] for r in rows] == ["1", "1"]
    first = out.read_bytes()
    assert main(argv) == 0
    assert out.read_bytes() == first


def test_gridsearch_infeasible_folds(tmp_path):
    path = tmp_path / "small.bin"
    save_dataset(LabeledDataset(np.eye(4)[[0, 1, 2, 3, 0]], [0, 0, 0, 0, 1]), path)
    assert main(["gridsearch", "--data", str(path), "--k", "2", "--kappa", "0.15",
                 "--folds", "3", "--workers", "1"]) == 3


def test_probe_output(tmp_path, dataset):
    out = tmp_path / "curve.txt"
    assert main(["probe", "--data", dataset, "--mu", "0,0.9", "--out", str(out)] + FAST) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 2
    pairs = [tuple(float(v) for v in line.split(",")) for line in lines]
    assert [p[0] for p in pairs] == [0.0, 0.9]
    assert all(0.0 <= p[1] <= 1.0 for p in pairs)


def test_code_command(tmp_path, trained, capsys):
    signals = tmp_path / "x.txt"
    np.savetxt(signals, np.random.default_rng(4).standard_normal((3, 8)))
    out = tmp_path / "codes.json"
    assert main(["code", "--model", trained, "--signals", str(signals), "--normalize",
                 "--out", str(out)]) == 0
    codes = json.loads(out.read_text())["codes"]
    assert len(codes) == 6
    assert all(len(c["alpha"]) == 4 for c in codes)
    assert main(["code", "--model", trained, "--signals", str(signals), "--class", "1",
                 "--out", str(out)]) == 0
    assert {c["class"] for c in json.loads(out.read_text())["codes"]} == {1}
    np.save(tmp_path / "x.npy", np.ones((2, 8)))
    assert main(["code", "--model", trained, "--signals", str(tmp_path / "x.npy")]) == 0
    assert main(["code", "--model", trained, "--signals", str(signals), "--class", "5"]) == 2
    np.savetxt(signals, np.ones((2, 3)))
    assert main(["code", "--model", trained, "--signals", str(signals)]) == 3


def test_training_abort_exit_code(tmp_path, dataset, monkeypatch):
    def abort(*args, **kwargs):
        raise TrainingAborted("non-finite objective at mu=0.0, iteration 0")

    monkeypatch.setattr(cli, "train_sdl", abort)
    assert main(["train", "--data", dataset, "--out", str(tmp_path / "m.bin")] + FAST) == 4


def test_byte_identical_reruns(tmp_path, dataset):
    outputs = []
    for run in range(2):
        out = str(tmp_path / f"m{run}.bin")
        rep = str(tmp_path / f"r{run}.json")
        assert main(["train", "--data", dataset, "--mu-steps", "2", "--seed", "5",
                     "--out", out] + FAST) == 0
        assert main(["eval", "--data", dataset, "--model", out, "--report", rep]) == 0
        outputs.append((open(out, "rb").read(), open(rep, "rb").read(),
                        open(out + ".trace.jsonl", "rb").read()))
    assert outputs[0] == outputs[1]


def test_config_file_reproduces_run(tmp_path, dataset, trained):
    again = str(tmp_path / "again.bin")
    assert main(["train", "--config", trained + ".run.json", "--out", again]) == 0
    assert open(again, "rb").read() == open(trained, "rb").read()
    (tmp_path / "bad.json").write_text("[1, 2]")
    assert main(["train", "--config", str(tmp_path / "bad.json"), "--out", again]) == 2


def test_no_normalize_warns(tmp_path, dataset, capsys):
    assert main(["train", "--data", dataset, "--no-normalize", "--mode", "sdl-g",
                 "--out", str(tmp_path / "m.bin")] + FAST) == 0
    assert "normalization disabled" in capsys.readouterr().err


def test_synth(tmp_path, capsys):
    out = tmp_path / "s.bin"
    assert main(["synth", "--kind", "sign", "--m-per-class", "5", "--out", str(out)]) == 0
    assert "wrote 10 signals" in capsys.readouterr().out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "sdlearn", "--help"], capture_output=True,
                         text=True, timeout=120)
    assert res.returncode == 0
    for command in ("train", "eval", "gridsearch", "probe", "code"):
        assert command in res.stdout
