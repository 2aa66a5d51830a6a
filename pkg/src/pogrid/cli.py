"""Command-line entry point.

Exit codes: 0 success, 1 domain error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .config import RunConfig, desk_config, load_config, poc_config, with_overrides
from .errors import ConfigError, PogridError
from .forest import default_jobs
from .scenario import (ObjectSweep, SweepAxis, SweepSpec, dumps_scenario, intersection_scene,
                       intersection_sweep, load_scenario, straight_scene)


def desk_sweep(seed: int = 0) -> SweepSpec:
    """27 car variants times 9 bicycle variants: 243 scenes."""
    car = intersection_sweep("car1", seed).objects["car1"]
    bike = ObjectSweep(SweepAxis(-3, 3, 3), SweepAxis(-5, 5, 3))
    return SweepSpec({"car1": car, "bike": bike}, seed)


def _presets(name: str, seed: int):
    if name == "desk":
        return intersection_scene("car1,bike"), desk_sweep(seed), desk_config(seed)
    if name == "poc":
        sweep = SweepSpec({"car": ObjectSweep(SweepAxis(-4.75, 4.75, 20), SweepAxis(-10, 10, 15))}, seed)
        return straight_scene(6.75, 30.0), sweep, poc_config(seed)
    if name == "intersection":
        return intersection_scene(), intersection_sweep(seed=seed), RunConfig(seed=seed)
    raise ConfigError(f"unknown preset {name!r}")


def resolve_config(args, fallback: RunConfig | None = None) -> RunConfig:
    cfg = load_config(args.config) if args.config else (fallback or RunConfig())
    sets = list(args.set or ())
    if args.seed is not None:
        sets += [f"seed={args.seed}", f"forest.seed={args.seed}"]
    return with_overrides(cfg, sets) if sets else cfg


def _config_given(args) -> bool:
    return bool(args.config or args.set or args.seed is not None)


def _emit(obj, out=None) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if out:
        pipeline.atomic_write(out, text)
    else:
        sys.stdout.write(text)


def cmd_preset(args):
    scene, sweep, cfg = _presets(args.name, args.seed or 0)
    cfg = resolve_config(args, cfg)
    scen = Path(args.out_dir) / f"{args.name}_scenario.json"
    conf = Path(args.out_dir) / f"{args.name}_config.json"
    pipeline.atomic_write(scen, dumps_scenario(scene, sweep, cfg.seed))
    pipeline.atomic_write(conf, cfg.dumps())
    print(f"wrote {scen} ({sweep.size()} scenes) and {conf}")


def cmd_generate_dataset(args):
    base, sweep, _ = load_scenario(args.scenario)
    cfg = resolve_config(args)
    m = pipeline.generate_dataset(base, sweep, cfg, args.out, args.jobs)
    print(f"wrote {m['n_scenes']} scenes to {args.out} "
          f"(train {len(m['split']['train'])}, test {len(m['split']['test'])}, config {m['config_hash'][:12]})")


def cmd_simulate(args):
    scene, _, _ = load_scenario(args.scene)
    cfg = resolve_config(args)
    m = pipeline.simulate(scene, cfg, args.out)
    print(f"wrote AOG and {len(m['files']['pog'])} POGs to {args.out}")


def cmd_train(args):
    ds = pipeline.load_dataset(args.dataset)
    cfg = resolve_config(args, ds.config) if _config_given(args) else None
    est = pipeline.train(ds, cfg, args.jobs)
    pipeline.save_estimator(args.out, est, pipeline.model_meta(ds))
    print(f"trained {est.n_classifiers} classifiers "
          f"({len(est.instances) * est.spec.n_cells - est.n_classifiers} stubs); wrote {args.out}")


def cmd_predict(args):
    est, _ = pipeline.load_estimator(args.model)
    scene, _, _ = load_scenario(args.scene)
    cfg = resolve_config(args)
    pogs = pipeline.predict(est, scene)
    pipeline.write_predictions(pogs, args.out, cfg)
    print(f"wrote {len(pogs)} estimated POGs to {args.out}")


def cmd_evaluate(args):
    est, header = pipeline.load_estimator(args.model)
    ds = pipeline.load_dataset(args.dataset)
    report = pipeline.evaluate(est, ds, args.split, header)
    pipeline.write_report(report, args.out)
    print(pipeline.format_table(report))


def cmd_criticality(args):
    scene, _, _ = load_scenario(args.scene)
    est = None
    fallback = None
    if args.model:
        est, _ = pipeline.load_estimator(args.model)
        fallback = RunConfig(grid=est.spec.to_dict(), instances=list(est.instances))
    cfg = resolve_config(args, fallback)
    _emit(pipeline.criticality_report(scene, cfg, args.ego, est), args.out)


def cmd_benchmark(args):
    est, _ = pipeline.load_estimator(args.model)
    scene, _, _ = load_scenario(args.scene)
    cfg = resolve_config(args, RunConfig(grid=est.spec.to_dict(), instances=list(est.instances)))
    _emit(pipeline.benchmark(scene, cfg, est, args.repeats), args.out)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=int, help="override the run and forest seed")
    common.add_argument("--jobs", type=int, default=default_jobs(), help="worker processes (default: cores)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config field, e.g. forest.n_trees=20")

    p = argparse.ArgumentParser(prog="pogrid", description="Predicted occupancy grids: simulation and learning.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preset", parents=[common], help="write a preset scenario and config")
    s.add_argument("name", choices=["desk", "poc", "intersection"])
    s.add_argument("--out-dir", default=".")
    s.set_defaults(fn=cmd_preset)

    s = sub.add_parser("generate-dataset", parents=[common], help="sweep a scenario into a training dataset")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_generate_dataset)

    s = sub.add_parser("simulate", parents=[common], help="model-based AOG and POGs for one scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("train", parents=[common], help="train the per-cell estimator")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="estimate POGs for one scene")
    s.add_argument("--model", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_predict)

    s = sub.add_parser("evaluate", parents=[common], help="quality report on a dataset split")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=["test", "train"], default="test")
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("criticality", parents=[common], help="collision criticality of the ego vehicle")
    s.add_argument("--model", help="estimate other objects with this model (default: model-based)")
    s.add_argument("--scene", required=True)
    s.add_argument("--ego", required=True)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_criticality)

    s = sub.add_parser("benchmark", parents=[common], help="time model-based vs estimator POGs")
    s.add_argument("--model", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--repeats", type=int, default=10)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    try:
        args.fn(args)
    except ConfigError as exc:
        print(f"pogrid: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"pogrid: error: {exc.filename}: no such file", file=sys.stderr)
        return 2
    except PogridError as exc:
        print(f"pogrid: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
