import json

import numpy as np
import pytest
import yaml

from mfkrig import cli, data_io
from mfkrig.benchmarks import make_benchmark
from mfkrig.multifidelity import FidelityDataset, MultiFidelityGP

FAST_FIT = {"n_restarts": 2}


def _config(tmp_path, **sections):
    cfg = {"output": str(tmp_path / "out"), "fit": FAST_FIT, "pool": {"size": 200}}
    cfg.update(sections)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return path


SYNTH = [
    {"source": "synthetic", "benchmark": "linear-coupled", "fidelity": "low", "cost": 1.0},
    {"source": "synthetic", "benchmark": "linear-coupled", "fidelity": "high", "cost": 10.0},
]


def test_train_budget(tmp_path, capsys):
    cfg = _config(tmp_path, levels=SYNTH, initial={"sizes": [6, 3]},
                  acquisition={"epsilon": 0.0, "max_iterations": 20})
    assert cli.main(["train", "--config", str(cfg)]) == 0
    log = (tmp_path / "out" / "training_log.jsonl").read_text().splitlines()
    assert len(log) == 20
    assert "iterations=20" in capsys.readouterr().out
    for name in ("model.json", "level1.csv", "level2.csv"):
        assert (tmp_path / "out" / name).is_file()


def test_train_four_levels(tmp_path):
    levels = [
        {"source": "synthetic", "benchmark": "forrester-like", "fidelity": "low", "cost": 1.0},
        {"source": "synthetic", "benchmark": "forrester-like", "fidelity": "high", "scale": 0.8, "offset": 0.5, "cost": 5.0},
        {"source": "synthetic", "benchmark": "forrester-like", "fidelity": "high", "cost": 20.0},
        {"source": "synthetic", "benchmark": "forrester-like", "fidelity": "high", "scale": 1.05, "cost": 40.0},
    ]
    cfg = _config(tmp_path, levels=levels, initial={"sizes": [10, 6, 4, 3]},
                  acquisition={"epsilon": 0.0, "max_iterations": 3})
    assert cli.main(["train", "--config", str(cfg)]) == 0
    models, _, _ = cli.load_model_set(tmp_path / "out" / "model.json")
    assert models[0].n_levels == 4


def _replay_files(tmp_path):
    b = make_benchmark("linear-coupled")
    X = np.random.default_rng(0).random((30, 2))
    paths = []
    for k, f in enumerate((b.low, b.high), start=1):
        ds = FidelityDataset(k, X, f(X), input_names=("x0", "x1"), output_names=("y",))
        p = tmp_path / f"replay{k}.csv"
        data_io.save_dataset(ds, p)
        paths.append(str(p))
    return paths


def test_train_replay(tmp_path):
    p1, p2 = _replay_files(tmp_path)
    levels = [{"source": "replay", "path": p1, "cost": 1.0, "outputs": ["y"]},
              {"source": "replay", "path": p2, "cost": 10.0, "outputs": ["y"]}]
    cfg = _config(tmp_path, levels=levels, pool={"kind": "replay", "size": 1}, initial={"sizes": [5, 3]},
                  acquisition={"epsilon": 0.0, "max_iterations": 10})
    assert cli.main(["train", "--config", str(cfg)]) == 0


def test_train_replay_out_of_pool(tmp_path):
    p1, p2 = _replay_files(tmp_path)
    levels = [{"source": "replay", "path": p1, "cost": 1.0, "outputs": ["y"]},
              {"source": "replay", "path": p2, "cost": 10.0, "outputs": ["y"]}]
    cfg = _config(tmp_path, levels=levels, pool={"kind": "uniform", "size": 50}, initial={"sizes": [5, 3]})
    assert cli.main(["train", "--config", str(cfg)]) == 5


def test_train_isherwood(tmp_path):
    cfg = _config(tmp_path, pool={"size": 300}, initial={"sizes": [10, 4]},
                  acquisition={"epsilon": 0.0, "max_iterations": 3})
    assert cli.main(["train", "--config", str(cfg)]) == 0
    models, names, outputs = cli.load_model_set(tmp_path / "out" / "model.json")
    assert names == ("C_LOA", "M", "ASS_AL", "phi") and outputs == ("c_x", "c_y", "c_m")


def test_reduced_inputs_from_reduce_run(tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / "reduction.json").write_text(json.dumps({"selected": ["C_LOA", "phi"]}))
    cat = tmp_path / "cat.csv"
    cat.write_text("label,C_LOA\na,0.4\nb,0.5\n")
    cfg = cli.RunConfig.load(_config(tmp_path, reduced_inputs=None, catalogue=str(cat)))
    assert cli._reduced_inputs(cfg) == ["C_LOA", "phi"]
    sources, names, _, pool = cli.build_problem(cfg)
    assert names == ("C_LOA", "phi") and pool.dim == 2


def test_missing_reduction(tmp_path):
    cfg = _config(tmp_path, reduced_inputs=None)
    assert cli.main(["train", "--config", str(cfg)]) == 2


@pytest.mark.parametrize(
    "section",
    [{"reduce": {"threshold": 1.5}}, {"pool": {"size": 0}}, {"levels": []}, {"seed": -1},
     {"initial": {"sizes": [3, 5]}}, {"levels": [{"source": "cfd", "cost": 1}]}, {"table": "nope.csv"}],
)
def test_config_errors(tmp_path, section):
    cfg = _config(tmp_path, **section)
    assert cli.main(["train", "--config", str(cfg)]) == 2


def _trained(tmp_path):
    cfg = _config(tmp_path, levels=SYNTH, initial={"sizes": [8, 4]}, fit={"n_restarts": 2, "nugget": 0.0},
                  acquisition={"epsilon": 0.0, "max_iterations": 2})
    assert cli.main(["train", "--config", str(cfg)]) == 0
    return cfg, tmp_path / "out"


def test_predict_training_points(tmp_path):
    cfg, out = _trained(tmp_path)
    top = data_io.load_dataset(out / "level2.csv", output_names=("y",))
    inputs = tmp_path / "x.csv"
    data_io.write_csv(inputs, ["x0", "x1"], top.inputs.tolist())
    assert cli.main(["predict", "--model", str(out / "model.json"), "--inputs", str(inputs),
                     "--output", str(tmp_path / "p.csv")]) == 0
    _, P = data_io.read_numeric_csv(tmp_path / "p.csv")
    np.testing.assert_allclose(P[:, 2], top.targets[:, 0], atol=1e-6)


def test_predict_empty_and_batch(tmp_path):
    cfg, out = _trained(tmp_path)
    empty = tmp_path / "e.csv"
    empty.write_text("x0,x1\n")
    assert cli.main(["predict", "--model", str(out / "model.json"), "--inputs", str(empty),
                     "--output", str(tmp_path / "pe.csv")]) == 0
    assert (tmp_path / "pe.csv").read_text() == "x0,x1,y_mean,y_std\n"
    models, _, _ = cli.load_model_set(out / "model.json")
    X = np.random.default_rng(0).random((1000, 2))
    batch = cli.predict_table(models, X)
    single = np.vstack([cli.predict_table(models, x[None, :]) for x in X[:50]])
    # means are bit-identical; the triangular solve behind the std is blocked
    # differently for one row, so it agrees to round-off only
    np.testing.assert_array_equal(batch[:50, 0], single[:, 0])
    np.testing.assert_allclose(batch[:50, 1], single[:, 1], rtol=0, atol=1e-10)


def test_predict_dimension_mismatch(tmp_path):
    cfg, out = _trained(tmp_path)
    bad = tmp_path / "b.csv"
    bad.write_text("x0\n0.5\n")
    assert cli.main(["predict", "--model", str(out / "model.json"), "--inputs", str(bad),
                     "--output", str(tmp_path / "p.csv")]) == 3


def test_predict_missing_model(tmp_path):
    x = tmp_path / "x.csv"
    x.write_text("x0\n0.5\n")
    assert cli.main(["predict", "--model", str(tmp_path / "none.json"), "--inputs", str(x)]) == 3


def test_report_resolution(tmp_path):
    cfg, out = _trained(tmp_path)
    with open(cfg) as fh:
        raw = yaml.safe_load(fh)
    raw["sensitivity"] = {"sobol_samples": 256, "resolution": [7, 3]}
    cfg.write_text(yaml.safe_dump(raw))
    assert cli.main(["report", "--config", str(cfg), "--model", str(out / "model.json")]) == 0
    _, grid = data_io.read_numeric_csv(out / "surface_y.csv")
    assert grid.shape == (21, 3)
    assert len(np.unique(grid[:, 0])) == 7 and len(np.unique(grid[:, 1])) == 3
    assert (out / "sobol.csv").is_file()


def test_report_constant_model(tmp_path):
    X = np.random.default_rng(0).random((5, 2))
    mf = MultiFidelityGP(n_restarts=1, nugget=1e-6).fit([X], [np.full(5, 2.0)])
    path = tmp_path / "m.json"
    path.write_text(json.dumps(cli.model_set_dict([mf], ("x0", "x1"), ("y",), [1.0])))
    cfg = _config(tmp_path)
    assert cli.main(["report", "--config", str(cfg), "--model", str(path)]) == 4


def test_reduce_threshold_one_keeps_all(tmp_path, capsys):
    cfg = _config(tmp_path, reduce={"threshold": 1.0, "bootstrap_samples": 40, "gradient_samples": 50})
    assert cli.main(["reduce", "--config", str(cfg)]) == 0
    report = json.loads((tmp_path / "out" / "reduction.json").read_text())
    assert len(report["selected"]) == 8
    assert "selected:" in capsys.readouterr().out


def test_isherwood_command(tmp_path, capsys):
    g = tmp_path / "g.yaml"
    g.write_text("length_overall: 200\nbeam: 32\nair_draft: 40\nlateral_area: 4400\ntransverse_area: 900\n"
                 "lateral_perimeter: 460\ncentroid_from_bow: 100\nsuperstructure_area: 1100\ncontainer_groups: 4\n")
    assert cli.main(["isherwood", "--geometry", str(g), "--phi", "0", "90", "--output", str(tmp_path / "c.csv")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "phi,c_x,c_y,c_m" and len(lines) == 3
    assert cli.main(["isherwood", "--geometry", str(g), "--phi", "190"]) == 2


def test_sensitivity_commands(tmp_path, capsys):
    cfg, out = _trained(tmp_path)
    assert cli.main(["sensitivity", "subspace", "--config", str(cfg), "--model", str(out / "model.json")]) == 0
    assert (out / "active_subspace.csv").is_file()
    assert cli.main(["sensitivity", "sobol", "--config", str(cfg), "--model", str(out / "model.json")]) == 0
    assert "top-ranked" in capsys.readouterr().out
