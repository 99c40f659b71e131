import json
import re
import os
import subprocess
import sys

import numpy as np
import pytest

from etree.cli import build_parser, run
from etree.data import save_coordinate
from etree.model import load_model
from etree.synth import SynthSpec, gen_synthetic


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    X = gen_synthetic(SynthSpec(N=30, layer_sizes=(12, 4, 3), R=3, noise_std=0.05, seed=2)).X
    save_coordinate(X, d / "x.csv", "csv-triplet")
    with open(d / "ratings.tsv", "w") as fh:
        for i, j, v in zip(X.rows, X.cols, X.vals):
            fh.write(f"{i + 1}\t{j + 1}\t{float(v)!r}\t0\n")
    return d


def _fit_args(d, out, *extra):
    return ["fit", "--data", str(d / "x.csv"), "--format", "csv-triplet", "--min-item-ratings", "0",
            "--rank", "3", "--layers", "12,4,3", "--mu", "0.5", "--lambda", "0.1", "--max-epochs", "15",
            "--init-epochs", "5", "--seed", "7", "--out", str(out), *extra]


def test_fit_writes_checkpoint_and_trace(workdir):
    out, trace = workdir / "m.etree", workdir / "t.csv"
    assert run(_fit_args(workdir, out, "--trace", str(trace))) == 0
    model = load_model(out)
    assert model.layer_sizes == (12, 4, 3) and model.hyper.mu == 0.5
    lines = trace.read_text().splitlines()
    assert lines[0] == "epoch,objective,val_rmse" and len(lines) == len(model.trace) + 1


def test_fit_movielens_format_and_zero_leaf_size(workdir):
    out = workdir / "ml.etree"
    args = ["fit", "--data", str(workdir / "ratings.tsv"), "--rank", "2", "--layers", "0,3",
            "--min-item-ratings", "5", "--max-epochs", "5", "--init-epochs", "2", "--val-fraction", "0.2",
            "--out", str(out)]
    assert run(args) == 0
    assert load_model(out).layer_sizes == (12, 3)


def test_predict_pairs_and_data(workdir, capsys):
    model = workdir / "p.etree"
    assert run(_fit_args(workdir, model)) == 0
    pairs = workdir / "pairs.csv"
    pairs.write_text("i,j\n0,0\n3,5\n")
    capsys.readouterr()
    assert run(["predict", "--model", str(model), "--pairs", str(pairs), "--clip", "0,1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "i,j,prediction" and len(lines) == 3
    assert all(0 <= float(l.split(",")[2]) <= 1 for l in lines[1:])
    out = workdir / "pred.csv"
    assert run(["predict", "--model", str(model), "--data", str(workdir / "x.csv"), "--format", "csv-triplet",
                "--min-item-ratings", "0", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "i,j,prediction,value"


def test_export_tree(workdir, capsys):
    model = workdir / "e.etree"
    assert run(_fit_args(workdir, model)) == 0
    capsys.readouterr()
    assert run(["export-tree", "--model", str(model), "--format", "dot"]) == 0
    assert capsys.readouterr().out.count("->") == 12 + 4
    assert run(["export-tree", "--model", str(model)]) == 0
    assert json.loads(capsys.readouterr().out)["layers"] == 3


def test_eval_report(workdir):
    out, traces = workdir / "rep.json", workdir / "traces.csv"
    args = ["eval", "--data", str(workdir / "x.csv"), "--format", "csv-triplet", "--min-item-ratings", "0",
            "--method", "nmf", "--folds", "2", "--repeats", "1", "--grid-rank", "2", "--grid-lambda", "0.1",
            "--max-epochs", "10", "--out", str(out), "--traces", str(traces)]
    assert run(args) == 0
    rep = json.loads(out.read_text())
    assert len(rep["runs"]) == 2 and "seconds" not in rep["runs"][0]
    assert traces.read_text().startswith("fold,repeat,epoch")


def test_synth_check(workdir):
    out = workdir / "synth.json"
    args = ["synth-check", "--seeds", "2", "--N", "30", "--layers", "12,4,3", "--R", "3",
            "--max-epochs", "50", "--out", str(out)]
    assert run(args) == 0
    rep = json.loads(out.read_text())
    assert rep["summary"]["seeds"] == 2 and rep["hyperparams"]["mu"] == 10.0 and rep["hyperparams"]["rank"] == 3


def test_exit_codes(workdir, capsys):
    assert run(["fit", "--rank", "3"]) == 1
    assert run(["bogus"]) == 1
    assert run(["fit", "--rank", "x"]) == 1
    assert run(_fit_args(workdir, workdir / "m.etree")[:-2] + ["--out", str(workdir / "no" / "m.etree")]) == 2
    missing = _fit_args(workdir, workdir / "m.etree")
    missing[2] = str(workdir / "missing.csv")
    assert run(missing) == 2
    bad = workdir / "bad.csv"
    bad.write_text("i,j,value,2,2\n0,0,abc\n")
    missing[2] = str(bad)
    assert run(missing) == 2
    err = capsys.readouterr().err
    assert err.count("\n") >= 1 and "error" in err
    huge = workdir / "huge.csv"
    huge.write_text("i,j,value,3,3\n" + "".join(f"{i},{j},1e200\n" for i in range(3) for j in range(3)))
    assert run(["fit", "--data", str(huge), "--format", "csv-triplet", "--min-item-ratings", "0", "--rank", "1",
                "--layers", "3,2", "--init-epochs", "0", "--out", str(workdir / "h.etree")]) == 3


def test_layers_must_match_columns(workdir):
    args = _fit_args(workdir, workdir / "m.etree")
    args[args.index("--layers") + 1] = "11,4,3"
    assert run(args) == 1


def test_config_defaults_and_override(workdir):
    conf = workdir / "conf.json"
    conf.write_text(json.dumps({"mu": 2.5, "admm-iters": 3, "tree_iters": 2}))
    out = workdir / "c.etree"
    args = [a for a in _fit_args(workdir, out)]
    i = args.index("--mu")
    del args[i:i + 2]
    assert run(args + ["--config", str(conf), "--tree-iters", "4"]) == 0
    hyper = load_model(out).hyper
    assert hyper.mu == 2.5 and hyper.admm_iters == 3 and hyper.tree_iters == 4
    conf.write_text(json.dumps({"not-a-flag": 1}))
    assert run(args + ["--config", str(conf)]) == 1


SPEC_DEFAULTS = {
    "fit": {"--lambda": "0.0", "--mu": "0.0", "--eta": "1000.0", "--admm-iters": "5", "--tree-iters": "5",
            "--eps": "0.0001", "--max-epochs": "1000", "--patience": "10", "--min-item-ratings": "10"},
    "eval": {"--folds": "5", "--repeats": "20", "--val-fraction": "0.1", "--patience": "10"},
    "synth-check": {"--seeds": "20", "--spec": "default"},
    "export-tree": {"--format": "json"},
    "predict": {"--format": "movielens"},
}


@pytest.mark.parametrize("command", sorted(SPEC_DEFAULTS))
def test_help_lists_flags_with_defaults(command, capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args([command, "--help"])
    raw = capsys.readouterr().out
    text = " ".join(raw.split())
    blocks = {}
    for chunk in re.split(r"\n(?=  -)", raw):
        head = chunk.split()[0].rstrip(",")
        blocks[head] = " ".join(chunk.split())
    sub = build_parser()._subparsers._group_actions[0].choices[command]
    for action in sub._actions:
        for opt in action.option_strings:
            assert opt in text
    for flag, default in SPEC_DEFAULTS[command].items():
        assert f"(default: {default})" in blocks[flag], flag


def _subprocess_fit(workdir, out, workers):
    env = dict(os.environ, NUMBA_NUM_THREADS="4", ETREE_BACKEND="numba")
    cmd = [sys.executable, "-m", "etree.cli", *_fit_args(workdir, out, "--trace", str(out) + ".csv"),
           "--workers", str(workers)]
    return subprocess.run(cmd, env=env, capture_output=True, text=True)


def test_outputs_identical_across_worker_counts(workdir):
    res = [_subprocess_fit(workdir, workdir / f"w{w}.etree", w) for w in (1, 3)]
    assert all(r.returncode == 0 for r in res), [r.stderr for r in res]
    assert (workdir / "w1.etree").read_bytes() == (workdir / "w3.etree").read_bytes()
    assert (workdir / "w1.etree.csv").read_bytes() == (workdir / "w3.etree.csv").read_bytes()
