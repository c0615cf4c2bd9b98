import json
import re

import numpy as np
import pytest

from ldl import bench, cli
from ldl.data import encode_idx
from ldl.linalg import make_rng
from ldl.model import init_predictor_bank, make_target, save_checkpoint


@pytest.fixture(scope="module")
def fake_mnist(tmp_path_factory):
    """Tiny IDX files: class c images are bright in band c, 6 train and 2 test per class."""
    d = tmp_path_factory.mktemp("mnist")
    rng = np.random.default_rng(0)
    for split, per in (("train", 6), ("t10k", 2)):
        labels = np.repeat(np.arange(10), per).astype(np.uint8)
        imgs = rng.integers(0, 40, size=(len(labels), 28, 28)).astype(np.uint8)
        for i, c in enumerate(labels):
            imgs[i, 2 * c:2 * c + 3] = 250
        (d / f"{split}-images-idx3-ubyte").write_bytes(encode_idx(imgs))
        (d / f"{split}-labels-idx1-ubyte").write_bytes(encode_idx(labels))
    return d


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_happy_path(fake_mnist):
    cfg = cli.parse_args(["bench", "--dataset", "mnist", "--methods", "o2md,bd", "--shots", "1,10,50,100,200",
                          "--trials", "100", "--seed", "42", "--data-dir", str(fake_mnist)])
    assert cfg.methods == ["o2md", "bd"] and cfg.shots == [1, 10, 50, 100, 200]
    assert cfg.trials == 100 and cfg.seed == 42 and cfg.dataset == "mnist"
    bcfg = cfg.bench_config()
    assert bcfg.train_config("bd").m2ord_learning_rate == 1e-4


def test_defaults(fake_mnist, monkeypatch):
    monkeypatch.setenv("LDL_DATA_DIR", str(fake_mnist))
    cfg = cli.parse_args(["bench"])
    assert cfg.trials == 100 and cfg.data_dir == str(fake_mnist) and cfg.jobs >= 1


def test_unknown_method_lists_valid_ones(fake_mnist, capsys):
    code, _, err = run(["bench", "--methods", "o2md,svm", "--data-dir", str(fake_mnist)], capsys)
    assert code == 2
    assert "svm" in err and "naive, logreg, mlp, o2md, bd" in err


def test_missing_data_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("LDL_DATA_DIR", raising=False)
    code, _, err = run(["bench", "--data-dir", str(tmp_path / "nope")], capsys)
    assert code == 2
    assert "train-images-idx3-ubyte" in err and "t10k-labels-idx1-ubyte" in err
    code, _, err = run(["bench", "--dataset", "omniglot", "--data-dir", str(tmp_path)], capsys)
    assert code == 2 and "omniglot.ldlt" in err


@pytest.mark.parametrize("argv", [["--shots", "0"], ["--ways", "a"], ["--trials", "0"], ["--lr", "-1"],
                                  ["--schedule", "m2ord:x"], ["--optimizer", "rmsprop"]])
def test_bad_values_are_usage_errors(fake_mnist, capsys, argv):
    code, _, _ = run(["bench", "--data-dir", str(fake_mnist)] + argv, capsys)
    assert code == 2


def test_config_precedence(fake_mnist, tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"trials": 7, "seed": 3, "methods": "naive", "lr": 0.5}))
    cfg = cli.parse_args(["bench", "--config", str(conf), "--seed", "9", "--data-dir", str(fake_mnist)])
    assert cfg.trials == 7 and cfg.seed == 9 and cfg.methods == ["naive"]
    assert cfg.train_config("naive").learning_rate == 0.5
    conf.write_text(json.dumps({"shots": [1, 5], "ways": "3"}))
    cfg = cli.parse_args(["bench", "--config", str(conf), "--data-dir", str(fake_mnist)])
    assert cfg.shots == [1, 5] and cfg.ways == [3]
    for bad in ({"bogus": 1}, {"methods": ["svm"]}, {"shots": [0]}):
        conf.write_text(json.dumps(bad))
        with pytest.raises(SystemExit):
            cli.parse_args(["bench", "--config", str(conf), "--data-dir", str(fake_mnist)])


def test_schedule_flag(fake_mnist):
    cfg = cli.parse_args(["bench", "--schedule", "m2ord:2,o2md:1", "--data-dir", str(fake_mnist)])
    assert cfg.train_config("bd").schedule == (("m2ord", 2), ("o2md", 1))


def _bench(fake_mnist, out, capsys, extra=()):
    return run(["bench", "--data-dir", str(fake_mnist), "--out", str(out), "--methods", "naive,o2md,bd",
                "--shots", "1,2", "--output-dims", "8", "--trials", "2", "--epochs", "2", "--jobs", "1",
                "--no-timing", *extra], capsys)


def test_bench_outputs_and_determinism(fake_mnist, tmp_path, capsys):
    code, out, _ = _bench(fake_mnist, tmp_path / "a", capsys)
    assert code == 0
    assert "mean" in out and "o2md" in out
    names = {p.name for p in (tmp_path / "a").iterdir()}
    assert names == {"results.csv", "summary.csv", "loss_history.csv", "manifest.json"}
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 0 and manifest["kernel_backend"] in ("cython", "python")
    assert "version" in manifest
    results = (tmp_path / "a" / "results.csv").read_text().splitlines()
    assert len(results) == 1 + 3 * 2 * 2
    _bench(fake_mnist, tmp_path / "b", capsys)
    for name in ("results.csv", "summary.csv", "loss_history.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_bench_save_models(fake_mnist, tmp_path, capsys):
    code, _, _ = run(["bench", "--data-dir", str(fake_mnist), "--out", str(tmp_path), "--methods", "naive",
                      "--shots", "1", "--trials", "1", "--epochs", "1", "--save-models"], capsys)
    assert code == 0
    assert [p.name for p in (tmp_path / "checkpoints").iterdir()] == ["naive_w10_s1_k784_t0.ldlm"]


def test_bench_trial_failure_exit_code(fake_mnist, tmp_path, capsys):
    # only 6 training images per class exist, so 10-shot episodes cannot be drawn
    code, _, err = _bench(fake_mnist, tmp_path, capsys, extra=("--shots", "10"))
    assert code == 1
    assert "InsufficientDataError" in err


def test_train_eval_inspect(fake_mnist, tmp_path, capsys):
    code, out, _ = run(["train", "--data-dir", str(fake_mnist), "--out", str(tmp_path), "--method", "bd",
                        "--shot", "3", "--output-dim", "16", "--epochs", "3", "--lr", "1e-2"], capsys)
    assert code == 0 and "accuracy" in out
    ckpt = tmp_path / "model.ldlm"
    assert ckpt.exists() and (tmp_path / "loss_history.csv").exists()
    code, out, _ = run(["eval", str(ckpt), "--data-dir", str(fake_mnist)], capsys)
    assert code == 0
    acc = float(re.search(r"accuracy ([0-9.]+)", out).group(1))
    assert 0.0 <= acc <= 1.0
    for idx in range(20):
        code, out, _ = run(["inspect", str(ckpt), "--index", str(idx), "--data-dir", str(fake_mnist)], capsys)
        assert code == 0
        lines = out.strip().splitlines()
        scores = [float(l.split()[1]) for l in lines[2:12]]
        chosen, margin = re.search(r"chosen (\d+)\s+margin ([-0-9.e]+)", lines[-1]).groups()
        assert int(chosen) == int(np.argmin(scores))
        assert float(margin) >= 0.0
        true = int(re.search(r"true label (\d+)", lines[0]).group(1))
        if int(chosen) == true:
            assert scores[true] == min(scores)


def test_inspect_untrained_bank(fake_mnist, tmp_path):
    rng = make_rng(0)
    bank = init_predictor_bank(10, [784, 5], rng)
    target = make_target([784, 5], rng)
    save_checkpoint(tmp_path / "u.ldlm", "ldl", [p.layers for p in bank.predictors] + [target.layers])
    table = cli.inspect(tmp_path / "u.ldlm", 0, fake_mnist)
    assert len(table.splitlines()) == 2 + 10 + 1
    with pytest.raises(IndexError):
        cli.inspect(tmp_path / "u.ldlm", 10**6, fake_mnist)


def test_inspect_rejects_softmax_models(fake_mnist, tmp_path, capsys):
    ds = bench.load_mnist(fake_mnist, "train")
    model = bench.fit_method("logreg", ds, 784, bench.baselines.BASELINE_DEFAULTS["logreg"], make_rng(0))
    bench.save_model(tmp_path / "lr.ldlm", model)
    code, _, err = run(["inspect", str(tmp_path / "lr.ldlm"), "--data-dir", str(fake_mnist)], capsys)
    assert code == 1 and "distance-based" in err
    code, _, err = run(["eval", str(tmp_path / "missing.ldlm"), "--data-dir", str(fake_mnist)], capsys)
    assert code == 2 and "checkpoint not found" in err
