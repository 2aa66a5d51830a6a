import json

import numpy as np
import pytest

from pogrid.cli import main
from pogrid.config import ForestModel, GridModel, HypothesisModel, RunConfig, load_config, with_overrides
from pogrid.errors import ConfigError
from pogrid.evaluation import quantize
from pogrid.grid import load_grid
from pogrid.scenario import ObjectSweep, Scene, SweepAxis, SweepSpec, save_scenario, straight_scene


def toy_config(**kw):
    # with two training scenes a tree sees only one of them 1 time in 4; 101 trees keep every plurality safe
    base = dict(grid=GridModel(x0=0.0, y0=-5.0, cell_length=1.0, cell_width=1.0, I=30, J=10),
                instances=[0.5, 1.0], hypotheses=HypothesisModel(n_lon=3, n_lat=1),
                forest=ForestModel(n_trees=101, seed=1))
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture
def toy(tmp_path):
    scen = tmp_path / "scenario.json"
    sweep = SweepSpec({"car": ObjectSweep(SweepAxis(-3, 3, 3))})
    save_scenario(scen, straight_scene(8.0, 25.0), sweep)
    conf = tmp_path / "config.json"
    conf.write_text(toy_config().dumps())
    return tmp_path, scen, conf


def run(*argv):
    return main([str(a) for a in argv])


def test_toy_train_then_predict_memorises(toy):
    d, scen, conf = toy
    assert run("generate-dataset", "--scenario", scen, "--config", conf, "--out", d / "ds", "--jobs", 1) == 0
    assert run("train", "--dataset", d / "ds", "--out", d / "model.bin", "--jobs", 1) == 0
    manifest = json.loads((d / "ds" / "manifest.json").read_text())
    assert len(manifest["split"]["train"]) == 2
    for i in manifest["split"]["train"]:
        scene = d / "ds" / "scenes" / f"{i:06d}.json"
        out = d / f"pred{i}"
        assert run("predict", "--model", d / "model.bin", "--scene", scene, "--config", conf, "--out", out) == 0
        for k in range(2):
            truth = load_grid(d / "ds" / "pog" / f"{i:06d}_{k}.pgrd")
            est = load_grid(out / f"pog_{k}.pgrd")
            assert np.array_equal(est.values, quantize(truth).values)
    assert run("evaluate", "--model", d / "model.bin", "--dataset", d / "ds", "--out", d / "rep.json") == 0
    report = json.loads((d / "rep.json").read_text())
    assert len(report["table"]) == 2 and (d / "rep_hist.csv").exists()


def test_invalid_config_field_exits_2_without_output(toy, capsys):
    d, scen, conf = toy
    doc = json.loads(conf.read_text())
    doc["forest"]["n_tress"] = 5
    bad = d / "bad.json"
    bad.write_text(json.dumps(doc, indent=1))
    assert run("simulate", "--scene", scen, "--config", bad, "--out", d / "sim") == 2
    assert "bad.json" in capsys.readouterr().err
    assert not (d / "sim").exists()
    assert run("simulate", "--scene", scen, "--config", conf, "--set", "forest.n_trees=0", "--out", d / "sim") == 2
    assert not (d / "sim").exists()
    assert run("simulate", "--scene", d / "missing.json", "--out", d / "sim") == 2
    assert [p.name for p in d.iterdir() if p.name.startswith(".")] == []


def test_domain_error_exits_1(toy, tmp_path):
    d, scen, conf = toy
    scene = straight_scene(8.0, 25.0)
    one = d / "one.json"
    save_scenario(one, scene)
    # a sweep-free scenario cannot be expanded into a dataset: usage error
    assert run("generate-dataset", "--scenario", one, "--config", conf, "--out", d / "ds") == 2
    assert run("generate-dataset", "--scenario", scen, "--config", conf, "--out", d / "ds", "--jobs", 1) == 0
    assert run("train", "--dataset", d / "ds", "--out", d / "m.bin", "--jobs", 1) == 0
    other = toy_config(grid=GridModel(x0=0.0, y0=-5.0, I=20, J=10))
    conf2 = d / "c2.json"
    conf2.write_text(other.dumps())
    assert run("generate-dataset", "--scenario", scen, "--config", conf2, "--out", d / "ds2", "--jobs", 1) == 0
    # model trained on another grid
    assert run("evaluate", "--model", d / "m.bin", "--dataset", d / "ds2", "--out", d / "r.json") == 1
    assert not (d / "r.json").exists()
    assert run("criticality", "--scene", one, "--config", conf, "--ego", "nobody") == 1


def test_simulate_empty_scene_and_rerun_identical(toy):
    d, _, conf = toy
    base = straight_scene()
    empty = d / "empty.json"
    save_scenario(empty, Scene(base.road, (), None))
    assert run("simulate", "--scene", empty, "--config", conf, "--out", d / "a") == 0
    aog = load_grid(d / "a" / "aog.pgrd")
    road = aog.data[..., 0] == 1.0
    assert road.any()
    for k in range(2):
        g = load_grid(d / "a" / f"pog_{k}.pgrd")
        assert np.array_equal(g.values == 1.0, road) and not g.values[~road].any()
    assert run("simulate", "--scene", empty, "--config", conf, "--out", d / "b") == 0
    for name in ("aog.pgrd", "pog_0.pgrd", "pog_1.pgrd", "manifest.json", "config.json"):
        assert (d / "a" / name).read_bytes() == (d / "b" / name).read_bytes()
    # rerunning into the same directory replaces it
    assert run("simulate", "--scene", empty, "--config", conf, "--out", d / "a") == 0


def test_text_grid_format(toy):
    d, scen, conf = toy
    assert run("simulate", "--scene", scen, "--config", conf, "--set", "grid_format=\"text\"", "--out", d / "t") == 0
    assert (d / "t" / "pog_0.txt").exists()


def test_refuses_to_overwrite_foreign_directory(toy):
    d, scen, conf = toy
    (d / "mine").mkdir()
    (d / "mine" / "notes.txt").write_text("keep")
    assert run("simulate", "--scene", scen, "--config", conf, "--out", d / "mine") == 2
    assert (d / "mine" / "notes.txt").read_text() == "keep"


def test_overrides_and_hash():
    cfg = toy_config()
    changed = with_overrides(cfg, ["forest.n_trees=7", "seed=3"])
    assert changed.forest.n_trees == 7 and changed.seed == 3
    assert changed.config_hash() != cfg.config_hash()
    assert with_overrides(cfg, []).config_hash() == cfg.config_hash()
    with pytest.raises(ConfigError):
        with_overrides(cfg, ["forest.nope=1"])
    with pytest.raises(ConfigError):
        with_overrides(cfg, ["instances=[1.0, 0.5]"])
    with pytest.raises(ConfigError):
        with_overrides(cfg, ["seed"])


def test_config_file_roundtrip(tmp_path):
    cfg = toy_config()
    p = tmp_path / "c.json"
    p.write_text(cfg.dumps())
    assert load_config(p) == cfg


def test_preset_and_criticality(tmp_path, capsys):
    assert run("preset", "desk", "--out-dir", tmp_path) == 0
    scenario = json.loads((tmp_path / "desk_scenario.json").read_text())
    assert {o["id"] for o in scenario["objects"]} >= {"car1", "bike"}
    capsys.readouterr()
    assert run("criticality", "--scene", tmp_path / "desk_scenario.json", "--config", tmp_path / "desk_config.json",
               "--ego", "car1") == 0
    rep = json.loads(capsys.readouterr().out)
    assert 0.0 <= rep["total"] <= 1.0 and len(rep["per_instance"]) == 3


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--scene", "x", "--out", "y", "--jobs", "0"])
    assert exc.value.code == 2
