import json
import math

import numpy as np
import pytest

from etree.errors import ContractError, NumericError
from etree.evaluate import (
    BUDGET_GRID, FULL_GRID, EvalConfig, EvalRunError, cross_validate, mae, rmse, write_trace_csv,
)
from etree.synth import SynthSpec, gen_synthetic

TINY_GRID = {"rank": (2,), "lam": (0.1,), "mu": (1.0,), "layers": ((3,),)}


def _tiny_data():
    return gen_synthetic(SynthSpec(N=25, layer_sizes=(10, 3), R=2, noise_std=0.05, seed=7)).X


def _tiny_cfg(**kw):
    base = dict(folds=2, repeats=1, grid=TINY_GRID, max_epochs=20, init_epochs=5, patience=3, seed=1)
    base.update(kw)
    return EvalConfig(**base)


def test_metric_examples():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0 and mae([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(math.sqrt(12.5))
    assert mae([0.0, 0.0], [3.0, 4.0]) == 3.5


def test_metrics_match_loop_oracle():
    rng = np.random.default_rng(0)
    p, t = rng.standard_normal(101), rng.standard_normal(101)
    sq = ab = 0.0
    for a, b in zip(p, t):
        sq += (a - b) ** 2
        ab += abs(a - b)
    assert rmse(p, t) == pytest.approx(math.sqrt(sq / 101), rel=1e-12)
    assert mae(p, t) == pytest.approx(ab / 101, rel=1e-12)


def test_metric_contracts():
    with pytest.raises(ContractError):
        rmse([], [])
    with pytest.raises(ContractError):
        mae([1.0], [1.0, 2.0])


def test_config_contracts():
    with pytest.raises(ContractError):
        EvalConfig(folds=1)
    with pytest.raises(ContractError):
        EvalConfig(val_fraction=1.0)
    with pytest.raises(ContractError):
        EvalConfig(grid={"rank": (), "lam": (1.0,), "mu": (1.0,)})
    with pytest.raises(ContractError):
        EvalConfig(clip=(5, 1))


def test_grid_points_per_method():
    cfg = EvalConfig()
    assert len(cfg.points("etree")) == 8
    assert len(cfg.points("nmf")) == 4 and cfg.points("nmf")[0]["layers"] == []
    assert all(p["mu"] == 0.0 for p in cfg.points("nmf_km"))
    assert {len(s) + 1 for s in FULL_GRID["layers"]} == {2, 3, 4}
    assert set(BUDGET_GRID["rank"]) <= set(FULL_GRID["rank"])


@pytest.mark.parametrize("method", ["etree", "nmf", "nmf_km"])
def test_smoke_two_folds(method):
    rep = cross_validate(_tiny_data(), method, _tiny_cfg())
    assert len(rep.runs) == 2 and len(rep.chosen) == 2
    assert all(np.isfinite(r.rmse) for r in rep.runs)


def test_report_is_deterministic_and_means_exact():
    X = _tiny_data()
    cfg = _tiny_cfg(repeats=2, grid={**TINY_GRID, "lam": (0.1, 1.0)})
    a, b = cross_validate(X, "etree", cfg), cross_validate(X, "etree", cfg)
    assert a.to_json(timings=False) == b.to_json(timings=False)
    assert a.mean_rmse == float(np.mean([r.rmse for r in a.runs]))
    assert a.mean_mae == float(np.mean([r.mae for r in a.runs]))
    doc = json.loads(a.to_json())
    assert len(doc["runs"]) == 4 and "seconds" in doc["runs"][0]
    assert len(doc["grid_scores"][0]["val_rmse"]) == 2


def test_reported_validation_is_best_epoch():
    rep = cross_validate(_tiny_data(), "etree", _tiny_cfg(max_epochs=40))
    for r in rep.runs:
        assert r.val_rmse == pytest.approx(min(v for _, _, v in r.trace), rel=1e-9)


def test_traces_written(tmp_path):
    rep = cross_validate(_tiny_data(), "nmf", _tiny_cfg())
    rep.write_traces(tmp_path / "all.csv")
    lines = (tmp_path / "all.csv").read_text().splitlines()
    assert lines[0] == "fold,repeat,epoch,objective,val_rmse"
    assert len(lines) == 1 + sum(len(r.trace) for r in rep.runs)
    write_trace_csv(rep.runs[0].trace, tmp_path / "one.csv")
    assert (tmp_path / "one.csv").read_text().startswith("epoch,objective,val_rmse\n")


def test_clip_bounds_predictions():
    rep = cross_validate(_tiny_data(), "nmf", _tiny_cfg(clip=(0.0, 0.5)))
    assert all(np.isfinite(r.rmse) for r in rep.runs)


def test_failures_carry_context():
    from etree.data import ObservedMatrix

    X = ObservedMatrix.from_dense(np.full((12, 8), 1e200))
    with pytest.raises(EvalRunError) as info:
        cross_validate(X, "nmf", _tiny_cfg(grid={**TINY_GRID, "rank": (1,)}))
    assert info.value.fold == 0 and isinstance(info.value.cause, NumericError)


def test_unknown_method():
    with pytest.raises(ContractError):
        cross_validate(_tiny_data(), "svd", _tiny_cfg())
