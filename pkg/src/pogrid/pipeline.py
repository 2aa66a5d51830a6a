"""End-to-end orchestration: ground truth, datasets, training, evaluation, criticality, timing.

Every writer builds its output in a temporary sibling and renames it into
place, so a failing command leaves no partial files behind.
"""

from __future__ import annotations

import csv
import io
import json
import os
import shutil
import statistics
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

from . import grid as gridmod
from .config import RunConfig, load_config
from .errors import ConfigError, PogridError
from .evaluation import HIST_EDGES, aggregate, criticality, quality, quantize
from .forest import MODEL_VERSION, ModelFile, PogEstimator, dumps_model, estimate_pog, train_estimator
from .grid import AugmentedOccupancyGrid, build_aog, build_pog, load_grid, road_mask
from .hypotheses import hypothesis_sets
from .scenario import SCHEMA_VERSION, Scene, dumps_scenario, generate_scenes, load_scenario, split_indices

DATASET_VERSION = 1
FOOTPRINT_NOTE = ("footprints are rasterised by cell-centre containment with half-open edges; "
                  "the cell holding the reference point is always occupied")


# --- ground truth -----------------------------------------------------------

def object_stacks(scene: Scene, config: RunConfig, object_ids=None) -> list:
    """Hypothesis sets per object (outer) and instance (inner)."""
    hc = config.hypothesis_config()
    ids = [o.id for o in scene.objects] if object_ids is None else list(object_ids)
    return [hypothesis_sets(scene, oid, config.instances, hc) for oid in ids]


def pog_stack(scene: Scene, config: RunConfig, object_ids=None, with_road: bool = True) -> list:
    spec = config.grid_spec()
    per_object = object_stacks(scene, config, object_ids)
    road = road_mask(scene.road, spec) if with_road else None
    return [build_pog([hs[k] for hs in per_object], spec, t, road_cells=road)
            for k, t in enumerate(config.instances)]


def ground_truth(scene: Scene, config: RunConfig):
    """AOG of the scene and its model-based POG per prediction instance."""
    return build_aog(scene, config.grid_spec()), pog_stack(scene, config)


# --- atomic output helpers -----------------------------------------------------

@contextmanager
def atomic_dir(target):
    """Yield a fresh temporary directory that replaces ``target`` on success.

    An existing ``target`` is only replaced when it holds a ``manifest.json``
    written by this package.
    """
    target = Path(target)
    if target.exists():
        mf = target / "manifest.json"
        if not target.is_dir() or (any(target.iterdir()) and not mf.exists()):
            raise ConfigError(f"{target}: exists and is not an output directory of this tool")
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if target.exists():
        shutil.rmtree(target)
    os.replace(tmp, target)


def atomic_write(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _grid_name(stem: str, config: RunConfig) -> str:
    return stem + (".txt" if config.grid_format == "text" else ".pgrd")


def _write_grid(path, grid, config: RunConfig, meta=None) -> None:
    if config.grid_format == "text":
        atomic_write(path, gridmod.dumps_grid_text(grid, meta))
    else:
        atomic_write(path, gridmod.dumps_grid_binary(grid, meta))


def _manifest(config: RunConfig, kind: str, **extra) -> dict:
    out = {
        "kind": kind,
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "instances": list(config.instances),
        "versions": {"dataset": DATASET_VERSION, "grid": gridmod.FORMAT_VERSION,
                     "scenario": SCHEMA_VERSION, "model": MODEL_VERSION},
        "footprint_rasterisation": FOOTPRINT_NOTE,
    }
    out.update(extra)
    return out


# --- simulate ----------------------------------------------------------------------

def simulate(scene: Scene, config: RunConfig, out_dir) -> dict:
    aog, pogs = ground_truth(scene, config)
    with atomic_dir(out_dir) as tmp:
        files = {"aog": _grid_name("aog", config), "pog": []}
        _write_grid(tmp / files["aog"], aog, config)
        for k, g in enumerate(pogs):
            name = _grid_name(f"pog_{k}", config)
            _write_grid(tmp / name, g, config, {"instance": k})
            files["pog"].append(name)
        (tmp / "config.json").write_text(config.dumps())
        manifest = _manifest(config, "simulation", files=files)
        (tmp / "manifest.json").write_text(_dumps_json(manifest))
    return manifest


# --- datasets ---------------------------------------------------------------------

def _gt_worker(args):
    scene, config = args
    return ground_truth(scene, config)


def _pool_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def generate_dataset(base: Scene, sweep, config: RunConfig, out_dir, jobs: int = 1) -> dict:
    """Sweep ``base``, simulate every scene and write the dataset directory."""
    if sweep is None:
        raise ConfigError("scenario file has no sweep section; cannot generate a dataset")
    scenes = generate_scenes(base, sweep)
    results = _pool_map(_gt_worker, [(s, config) for s in scenes], jobs)
    train, test = split_indices(len(scenes), config.train_fraction, config.seed)
    with atomic_dir(out_dir) as tmp:
        for sub in ("scenes", "aog", "pog"):
            (tmp / sub).mkdir()
        for i, (scene, (aog, pogs)) in enumerate(zip(scenes, results)):
            stem = f"{i:06d}"
            (tmp / "scenes" / f"{stem}.json").write_text(dumps_scenario(scene, seed=config.seed))
            _write_grid(tmp / "aog" / _grid_name(stem, config), aog, config)
            for k, g in enumerate(pogs):
                _write_grid(tmp / "pog" / _grid_name(f"{stem}_{k}", config), g, config, {"instance": k})
        (tmp / "config.json").write_text(config.dumps())
        manifest = _manifest(config, "dataset", n_scenes=len(scenes), split={"train": train, "test": test},
                             grid_format=config.grid_format)
        (tmp / "manifest.json").write_text(_dumps_json(manifest))
    return manifest


@dataclass
class Dataset:
    root: Path
    manifest: dict
    config: RunConfig

    @property
    def n_scenes(self) -> int:
        return self.manifest["n_scenes"]

    def _name(self, stem: str) -> str:
        return _grid_name(stem, self.config)

    def scene(self, i: int) -> Scene:
        return load_scenario(self.root / "scenes" / f"{i:06d}.json")[0]

    def aog(self, i: int) -> AugmentedOccupancyGrid:
        return load_grid(self.root / "aog" / self._name(f"{i:06d}"))

    def pogs(self, i: int) -> list:
        return [load_grid(self.root / "pog" / self._name(f"{i:06d}_{k}")) for k in range(len(self.config.instances))]

    def split(self, part: str) -> list:
        return list(self.manifest["split"][part])


def load_dataset(path) -> Dataset:
    root = Path(path)
    mf = root / "manifest.json"
    if not mf.exists():
        raise ConfigError(f"{root}: not a dataset directory (no manifest.json)")
    manifest = json.loads(mf.read_text())
    if manifest.get("kind") != "dataset":
        raise ConfigError(f"{root}: manifest does not describe a dataset")
    if manifest["versions"].get("dataset") != DATASET_VERSION:
        raise ConfigError(f"{root}: unsupported dataset version {manifest['versions'].get('dataset')}")
    config = load_config(root / "config.json")
    if config.config_hash() != manifest["config_hash"]:
        raise ConfigError(f"{root}: config.json does not match the manifest hash")
    return Dataset(root, manifest, config)


# --- training and prediction -------------------------------------------------------

def train(dataset: Dataset, config: Optional[RunConfig] = None, jobs: int = 1) -> PogEstimator:
    """Fit the per-cell estimator on the training split.

    The dataset's config fixes grid and instances; ``config`` may change the
    forest section only.
    """
    cfg = dataset.config
    if config is not None:
        if config.grid_spec() != cfg.grid_spec() or config.instances != cfg.instances:
            raise ConfigError("config grid/instances differ from the dataset's; regenerate the dataset")
        forest = config.forest_config()
    else:
        forest = cfg.forest_config()
    idx = dataset.split("train")
    if not idx:
        raise PogridError("training split is empty")
    aogs = [dataset.aog(i) for i in idx]
    pogs = [dataset.pogs(i) for i in idx]
    return train_estimator(aogs, pogs, forest, tuple(cfg.instances), jobs)


def model_meta(dataset: Dataset) -> dict:
    return {"dataset_config_hash": dataset.manifest["config_hash"], "n_train": len(dataset.split("train"))}


def save_estimator(path, est: PogEstimator, meta: dict) -> None:
    atomic_write(path, dumps_model(est, meta))


def predict(est: PogEstimator, scene: Scene) -> list:
    aog = build_aog(scene, est.spec)
    return [estimate_pog(est, aog, t) for t in est.instances]


def write_predictions(pogs, out_dir, config: RunConfig) -> None:
    with atomic_dir(out_dir) as tmp:
        files = []
        for k, g in enumerate(pogs):
            name = _grid_name(f"pog_{k}", config)
            _write_grid(tmp / name, g, config, {"instance": k, "source": "estimator"})
            files.append(name)
        manifest = _manifest(config, "prediction", files=files)
        (tmp / "manifest.json").write_text(_dumps_json(manifest))


# --- evaluation -----------------------------------------------------------------

def _q(v: Optional[float]):
    return None if v is None else round(v, 12)


def evaluate(est: PogEstimator, dataset: Dataset, part: str = "test", model_header: Optional[dict] = None) -> dict:
    meta = (model_header or {}).get("meta", {})
    want = meta.get("dataset_config_hash")
    if want is not None and want != dataset.manifest["config_hash"]:
        raise PogridError("model was trained on a dataset with a different config hash")
    if est.spec != dataset.config.grid_spec():
        raise PogridError("model grid does not match the dataset grid")
    idx = dataset.split(part)
    if not idx:
        raise PogridError(f"{part} split is empty")
    per_instance = [[] for _ in est.instances]
    truths = [[] for _ in est.instances]
    roads = []
    rows = []
    for i in idx:
        scene = dataset.scene(i)
        road = road_mask(scene.road, est.spec)
        roads.append(road)
        aog = dataset.aog(i)
        for k, (t, g) in enumerate(zip(est.instances, dataset.pogs(i))):
            truth = quantize(g)
            rep = quality(estimate_pog(est, aog, t), truth, road)
            per_instance[k].append(rep)
            truths[k].append(truth)
            rows.append({"scene": i, "t_pred": t, **{k2: _q(v) if isinstance(v, float) else v
                                                      for k2, v in asdict(rep).items()}})
    table = []
    for k, t in enumerate(est.instances):
        agg = aggregate(per_instance[k], t, truths[k], roads)
        d = asdict(agg)
        for key in ("eps", "eps_low", "eps_med", "eps_high", "mean_per_cell"):
            d[key] = _q(d[key])
        table.append(d)
    return {"kind": "evaluation", "split": part, "n_scenes": len(idx),
            "dataset_config_hash": dataset.manifest["config_hash"], "per_scene": rows, "table": table}


def histogram_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["bin_lo", "bin_hi"]
    for row in report["table"]:
        head += [f"pq_t{row['t_pred']}", f"eps_t{row['t_pred']}"]
    w.writerow(head)
    for b in range(len(HIST_EDGES) - 1):
        line = [f"{HIST_EDGES[b]:.2f}", f"{HIST_EDGES[b + 1]:.2f}"]
        for row in report["table"]:
            line += [row["pq_hist"][b], row["eps_hist"][b]]
        w.writerow(line)
    return buf.getvalue()


def format_table(report: dict) -> str:
    """Plain-text table with one column per prediction instance."""
    rows = report["table"]
    fmt = lambda v: "   n/a" if v is None else f"{v:.4f}"
    lines = ["t_pred [s]  " + "  ".join(f"{r['t_pred']:>6}" for r in rows)]
    for key, label in (("eps_low", "eps_low"), ("eps_med", "eps_med"), ("eps_high", "eps_high"),
                       ("eps", "eps"), ("mean_per_cell", "per-cell")):
        lines.append(f"{label:<10}  " + "  ".join(fmt(r[key]) for r in rows))
    return "\n".join(lines)


def write_report(report: dict, out_path) -> None:
    out_path = Path(out_path)
    atomic_write(out_path, _dumps_json(report))
    atomic_write(out_path.with_name(out_path.stem + "_hist.csv"), histogram_csv(report))


# --- criticality -------------------------------------------------------------------

def criticality_stacks(scene: Scene, config: RunConfig, ego: str, est: Optional[PogEstimator] = None):
    """Ego stack (model-based, no road cells) and the stack of everything else.

    With an estimator the other stack is inferred from the AOG of the scene
    with the ego removed; otherwise it is model-based including road limits.
    """
    scene.object(ego)
    ego_stack = pog_stack(scene, config, [ego], with_road=False)
    rest = scene.without(ego)
    if est is not None:
        if est.spec != config.grid_spec() or tuple(est.instances) != tuple(config.instances):
            raise PogridError("model grid/instances differ from the run config")
        others = predict(est, rest)
    else:
        others = pog_stack(rest, config)
    return ego_stack, others


def criticality_report(scene: Scene, config: RunConfig, ego: str, est: Optional[PogEstimator] = None) -> dict:
    e, o = criticality_stacks(scene, config, ego, est)
    rep = criticality(e, o)
    return {"kind": "criticality", "ego": ego, "source": "estimator" if est is not None else "model",
            "instances": list(rep.instances), "per_instance": list(rep.per_instance),
            "argmax": [list(c) for c in rep.argmax], "total": rep.total}


# --- benchmark -------------------------------------------------------------------

def _median_time(fn, repeats: int) -> tuple[float, list]:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), times


def benchmark(scene: Scene, config: RunConfig, est: PogEstimator, repeats: int = 10) -> dict:
    """Median wall clock of model-based vs estimator-based construction of all instances."""
    if repeats < 1:
        raise PogridError("repeats must be at least 1")
    if est.spec != config.grid_spec() or tuple(est.instances) != tuple(config.instances):
        raise PogridError("model grid/instances differ from the run config")
    predict(est, scene)  # warm-up: builds the packed inference arrays once
    t_model, model_times = _median_time(lambda: ground_truth(scene, config), repeats)
    t_ml, ml_times = _median_time(lambda: predict(est, scene), repeats)
    return {"kind": "benchmark", "repeats": repeats, "t_model": t_model, "t_ml": t_ml,
            "speedup": t_model / t_ml if t_ml > 0 else float("inf"),
            "model_times": model_times, "ml_times": ml_times}


def load_estimator(path):
    mf = ModelFile(path)
    return mf.load(), mf.header
