import csv
import json

import numpy as np
import pytest
import yaml

from spherelab import cli, verify
from spherelab.errors import ConfigError

TINY = {
    "seed": 1,
    "dataset": {"num_classes": 4, "per_class": 5, "input_dim": 4},
    "model": {"embedding_dim": 4},
    "batch": {"classes_per_batch": 4, "samples_per_class": 2},
    "loss": {"kind": "triplet"},
    "regularizer": {"kind": "sec", "eta": 1.0},
    "train": {"iterations": 20, "eval_interval": 10, "snapshot_interval": 10, "recall_ks": [1, 2]},
}


def write(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", "--config", write(tmp_path, TINY), "--out", str(out)])
    assert code == cli.EXIT_OK
    for name in ("runlog.csv", "runlog.json", "norms_hist.csv", "curves.png", "norms_hist.png", "metrics.png"):
        assert (out / name).is_file(), name
    rows = list(csv.DictReader(open(out / "runlog.csv")))
    assert len(rows) == 20
    hist = list(csv.DictReader(open(out / "norms_hist.csv")))
    assert sum(int(r["count"]) for r in hist) == 20
    assert not list(out.glob(".tmp-*"))


def test_run_without_plots(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", write(tmp_path, TINY), "--out", str(out), "--no-plots"]) == 0
    assert not list(out.glob("*.png"))


def test_run_echo_reflects_overrides_and_seed(tmp_path):
    out = tmp_path / "out"
    cli.main(["run", "--config", write(tmp_path, TINY), "--out", str(out), "--no-plots",
              "--set", "regularizer.eta=0.5", "--seed", "9"])
    echo = json.loads((out / "runlog.json").read_text())["config"]
    assert echo["regularizer"]["eta"] == 0.5 and echo["seed"] == 9


def test_echoed_config_reproduces_run(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    cli.main(["run", "--config", write(tmp_path, TINY), "--out", str(out1), "--no-plots"])
    echo = json.loads((out1 / "runlog.json").read_text())["config"]
    cli.main(["run", "--config", write(tmp_path, echo, "echo.yaml"), "--out", str(out2), "--no-plots"])
    assert (out1 / "runlog.csv").read_bytes() == (out2 / "runlog.csv").read_bytes()


def test_unknown_key_exit_code(tmp_path, capsys):
    doc = {**TINY, "optimizer": {"lerning_rate": 0.1}}
    assert cli.main(["run", "--config", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "optimizer.lerning_rate" in capsys.readouterr().err


def test_missing_config_exit_code(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "nope.yaml")]) == cli.EXIT_CONFIG


def test_inconsistent_config_exit_code(tmp_path):
    doc = {**TINY, "loss": {"kind": "ntxent"}, "batch": {"classes_per_batch": 2, "samples_per_class": 3}}
    assert cli.main(["run", "--config", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_divergence_exit_code(tmp_path):
    doc = {**TINY, "loss": {"kind": "none"}, "regularizer": {"kind": "l2reg", "eta": 1.0},
           "optimizer": {"kind": "sgd", "lr": 1e3}, "train": {"iterations": 300}}
    out = tmp_path / "o"
    assert cli.main(["run", "--config", write(tmp_path, doc), "--out", str(out)]) == cli.EXIT_DIVERGED
    assert (out / "runlog.csv").is_file()


def test_verify_prop1_passes(capsys):
    assert cli.main(["verify", "prop1"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    rows = [line for line in out.splitlines() if line.startswith("prop1")]
    assert len(rows) == 9 and all(r.endswith("PASS") for r in rows)
    assert all(float(r.split()[3]) < 1e-10 for r in rows)


@pytest.fixture
def fast_gradcheck(monkeypatch):
    monkeypatch.setattr(verify, "N_POINTS", 5)


def test_verify_is_deterministic(capsys, fast_gradcheck):
    cli.main(["verify", "all", "--seed", "7"])
    first = capsys.readouterr().out
    cli.main(["verify", "all", "--seed", "7"])
    assert capsys.readouterr().out == first
    cli.main(["verify", "prop2", "--seed", "8"])
    assert capsys.readouterr().out != first


def test_injected_gradient_sign_error_is_caught(monkeypatch, capsys, fast_gradcheck):
    good = verify.GRAD_CASES["triplet"]

    def flipped(rng):
        ev, x = good(rng)
        return (lambda z: (lambda v, g: (v, -g))(*ev(z))), x

    monkeypatch.setattr(verify, "GRAD_CASES", {"triplet": flipped})
    assert cli.main(["verify", "gradcheck"]) == cli.EXIT_VERIFY
    rows = {" ".join(line.split()[1:4]): line for line in capsys.readouterr().out.splitlines()
            if line.startswith("gradcheck")}
    assert rows["fd coord triplet"].endswith("FAIL")
    assert rows["fd norm triplet"].endswith("FAIL")


def test_unmodified_triplet_gradcheck_passes(monkeypatch, fast_gradcheck):
    monkeypatch.setattr(verify, "GRAD_CASES", {"triplet": verify.GRAD_CASES["triplet"]})
    assert verify.all_passed(verify.run_suites("gradcheck", 0))


def test_compare_outputs(tmp_path):
    doc = {"base": {**TINY, "output_dir": str(tmp_path / "cmp")}, "variants": [
        {"name": "none", "regularizer": {"kind": "none"}},
        {"name": "sec", "regularizer": {"kind": "sec", "eta": 0.5}},
        {"name": "l2reg", "regularizer": {"kind": "l2reg", "eta": 1e-3}},
    ]}
    assert cli.main(["compare", "--config", write(tmp_path, doc)]) == cli.EXIT_OK
    out = tmp_path / "cmp"
    header = next(csv.reader(open(out / "compare.csv")))
    assert len(header) == 1 + 3 * len(cli.COMPARE_COLUMNS)
    assert header[:3] == ["iter", "none.norm_var", "none.recall_at_1"]
    summary = json.loads((out / "compare_summary.json").read_text())
    assert set(summary["variants"]) == {"none", "sec", "l2reg"}
    assert all(np.isfinite(v["final_norm_var"]) for v in summary["variants"].values())
    assert summary["reference"] == "none" and set(summary["deltas"]) == {"sec", "l2reg"}
    for name in ("none", "sec", "l2reg"):
        assert (out / name / "runlog.csv").is_file()
    assert (out / "compare_norm_var.png").is_file()


def test_compare_parallel_matches_serial(tmp_path):
    doc = {"base": TINY, "variants": [{"name": "a", "regularizer": {"kind": "none"}},
                                       {"name": "b", "regularizer": {"kind": "sec", "eta": 0.5}}]}
    cfg = write(tmp_path, doc)
    cli.main(["compare", "--config", cfg, "--out", str(tmp_path / "s"), "--no-plots"])
    cli.main(["compare", "--config", cfg, "--out", str(tmp_path / "p"), "--no-plots", "--jobs", "2"])
    assert (tmp_path / "s" / "compare.csv").read_bytes() == (tmp_path / "p" / "compare.csv").read_bytes()


def test_compare_empty_variants(tmp_path):
    path = write(tmp_path, {"base": TINY, "variants": []})
    assert cli.main(["compare", "--config", path]) == cli.EXIT_CONFIG
    with pytest.raises(ConfigError):
        from spherelab.config import load_compare_config
        load_compare_config(path)
