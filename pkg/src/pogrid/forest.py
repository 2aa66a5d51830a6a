"""Random forest classification from scratch and the per-cell POG estimator.

Trees are CART with Gini impurity, grown until pure. Every split evaluates a
random subset of ``m_try`` features; when none of them varies inside the node,
one more feature is drawn among those that do. Forests bag bootstrap resamples
and keep the in-bag record for out-of-bag error estimates.
"""

from __future__ import annotations

import json
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, PogridError
from .evaluation import QSET, quantize_index
from .grid import AugmentedOccupancyGrid, GridSpec, PredictedOccupancyGrid


@dataclass(eq=False)
class DecisionTree:
    """Flat binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, n_classes)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaf_class(self) -> np.ndarray:
        return np.argmax(self.counts, axis=1)

    def apply(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r, n = rows[active], node[active]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        return self.leaf_class()[self.apply(X)]


def _best_split(X, y, idx, cand, n_classes, min_leaf):
    """Best ``(feature, threshold)`` among candidate columns, or None."""
    n = len(idx)
    Xc = X[np.ix_(idx, cand)]
    order = np.argsort(Xc, axis=0, kind="stable")
    xs = np.take_along_axis(Xc, order, axis=0)
    ys = y[idx][order]
    cum = np.stack([np.cumsum(ys == k, axis=0) for k in range(n_classes)], axis=-1)[:-1]
    total = np.bincount(y[idx], minlength=n_classes)
    n_left = np.arange(1, n, dtype=np.int64)[:, None]
    n_right = n - n_left
    right = total - cum
    sl = np.sum(cum.astype(np.int64) ** 2, axis=-1)
    sr = np.sum(right.astype(np.int64) ** 2, axis=-1)
    valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    # maximising sl/nl + sr/nr minimises the weighted Gini impurity; the single
    # division keeps equal rationals bit-identical so ties are detected exactly
    score = np.where(valid, (sl * n_right + sr * n_left) / (n_left * n_right), -np.inf)
    best = score.max()
    pos, col = np.nonzero(score == best)
    feats = np.asarray(cand)[col]
    f = feats.min()
    k = pos[feats == f].min()
    c = col[feats == f][0]
    lo, hi = xs[k, c], xs[k + 1, c]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return int(f), float(thr)


def train_tree(X, y, m_try: int, rng, n_classes: int = len(QSET), min_leaf: int = 1,
               sample_idx: Optional[np.ndarray] = None) -> DecisionTree:
    """Grow one CART tree on the rows ``sample_idx`` (default: all, once each)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    n_features = X.shape[1]
    if m_try < 1:
        raise PogridError("m_try must be at least 1")
    m_try = min(m_try, n_features)
    idx0 = np.arange(len(y)) if sample_idx is None else np.asarray(sample_idx)
    if len(idx0) == 0:
        raise PogridError("cannot grow a tree on zero samples")
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y[idx], minlength=n_classes))
        return len(feature) - 1

    stack = [(new_node(idx0), idx0)]
    while stack:
        node, idx = stack.pop()
        if np.count_nonzero(counts[node]) <= 1 or len(idx) < 2 * min_leaf:
            continue
        cand = rng.choice(n_features, m_try, replace=False) if m_try < n_features else np.arange(n_features)
        split = _best_split(X, y, idx, cand, n_classes, min_leaf)
        if split is None and m_try < n_features:
            xs = X[idx]
            varying = np.flatnonzero(xs.min(axis=0) < xs.max(axis=0))
            if len(varying):
                split = _best_split(X, y, idx, [int(rng.choice(varying))], n_classes, min_leaf)
        if split is None:
            continue
        f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri))
        stack.append((left[node], li))
    return DecisionTree(
        np.array(feature, dtype=np.int32),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int32),
        np.array(right, dtype=np.int32),
        np.array(counts, dtype=np.uint32).reshape(-1, n_classes),
    )


def unit_rng(seed: int, *unit: int) -> np.random.Generator:
    """Generator for one work unit; identical whichever process runs it."""
    return np.random.default_rng(np.random.SeedSequence([seed, *unit]))


@dataclass(eq=False)
class ForestClassifier:
    trees: list
    classes: tuple = QSET
    inbag: Optional[np.ndarray] = None  # (n_trees, n_samples) bool
    m_try: int = 1
    seed: int = 0
    n_features: int = 0

    @property
    def n_classes(self) -> int:
        return len(self.classes)


def default_m_try(n_features: int) -> int:
    return max(1, math.ceil(math.sqrt(n_features)))


def train_forest(X, y, n_trees: int = 100, m_try: Optional[int] = None, seed: int = 0,
                 classes=QSET, min_leaf: int = 1, bootstrap: bool = True, unit=()) -> ForestClassifier:
    """Bagged ensemble of CART trees. ``unit`` is mixed into every tree's seed."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    if n < 2 and bootstrap:
        raise PogridError("a bagged forest needs at least two samples")
    if n_trees < 1:
        raise PogridError("n_trees must be at least 1")
    m_try = m_try or default_m_try(X.shape[1])
    trees = []
    inbag = np.zeros((n_trees, n), dtype=bool) if bootstrap else None
    for t in range(n_trees):
        rng = unit_rng(seed, *unit, t)
        if bootstrap:
            idx = np.sort(rng.integers(0, n, n))
            inbag[t, idx] = True
        else:
            idx = np.arange(n)
        trees.append(train_tree(X, y, m_try, rng, len(classes), min_leaf, idx))
    return ForestClassifier(trees, tuple(classes), inbag, m_try, seed, X.shape[1])


def vote_counts(forest: ForestClassifier, X) -> np.ndarray:
    """``(n_samples, n_trees)`` class index voted by each tree."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != forest.n_features:
        raise PogridError(f"expected {forest.n_features} features, got {X.shape[1]}")
    return np.stack([t.predict(X) for t in forest.trees], axis=1)


def _plurality(votes: np.ndarray, n_classes: int) -> np.ndarray:
    hist = np.zeros((len(votes), n_classes), dtype=np.int64)
    for k in range(n_classes):
        hist[:, k] = np.count_nonzero(votes == k, axis=1)
    return hist


def predict(forest: ForestClassifier, features):
    """Return ``(class value, vote histogram)`` for one feature vector."""
    features = np.asarray(features, dtype=float)
    if features.ndim != 1:
        raise PogridError("predict expects a single feature vector")
    hist = _plurality(vote_counts(forest, features[None]), forest.n_classes)[0]
    k = int(np.argmax(hist))
    return forest.classes[k], hist / hist.sum()


def predict_index(forest: ForestClassifier, X) -> np.ndarray:
    return np.argmax(_plurality(vote_counts(forest, X), forest.n_classes), axis=1)


def oob_error(forest: ForestClassifier, X, y, return_excluded: bool = False):
    """Misclassification rate using only trees that did not see each sample.

    Samples that are in-bag for every tree are skipped; pass
    ``return_excluded=True`` to also get their count.
    """
    if forest.inbag is None:
        raise PogridError("forest was trained without bootstrap; no out-of-bag record")
    y = np.asarray(y, dtype=np.int64)
    votes = vote_counts(forest, X)
    oob = ~forest.inbag.T
    errors, used = 0, 0
    for i in range(len(y)):
        v = votes[i, oob[i]]
        if len(v) == 0:
            continue
        used += 1
        errors += int(np.argmax(np.bincount(v, minlength=forest.n_classes)) != y[i])
    rate = errors / used if used else float("nan")
    return (rate, len(y) - used) if return_excluded else rate


# --- per-cell estimator ----------------------------------------------------

@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    m_try: Optional[int] = None
    min_leaf: int = 1
    seed: int = 0


@dataclass(eq=False)
class PogEstimator:
    """One forest per (instance, cell); ``None`` entries are constant-zero stubs."""

    spec: GridSpec
    instances: tuple
    forests: list  # [instance][cell] -> ForestClassifier | None
    n_features: int
    classes: tuple = QSET
    config: ForestConfig = field(default_factory=ForestConfig)
    _packed: dict = field(default_factory=dict, repr=False)

    @property
    def n_classifiers(self) -> int:
        return sum(f is not None for row in self.forests for f in row)

    def instance_index(self, t_pred: float) -> int:
        for k, t in enumerate(self.instances):
            if abs(t - t_pred) < 1e-9:
                return k
        raise PogridError(f"estimator has no prediction instance {t_pred}")

    def packed(self, k: int):
        if k not in self._packed:
            self._packed[k] = _pack([(c, f) for c, f in enumerate(self.forests[k]) if f is not None])
        return self._packed[k]


def _pack(cell_forests):
    feats, thrs, lefts, rights, leafc, roots, owner = [], [], [], [], [], [], []
    offset = 0
    for cell, forest in cell_forests:
        for tree in forest.trees:
            feats.append(tree.feature)
            thrs.append(tree.threshold)
            lefts.append(np.where(tree.left >= 0, tree.left + offset, -1))
            rights.append(np.where(tree.right >= 0, tree.right + offset, -1))
            leafc.append(tree.leaf_class())
            roots.append(offset)
            owner.append(cell)
            offset += tree.n_nodes
    if not roots:
        return None
    return {
        "feature": np.concatenate(feats).astype(np.int64),
        "threshold": np.concatenate(thrs),
        "left": np.concatenate(lefts).astype(np.int64),
        "right": np.concatenate(rights).astype(np.int64),
        "leaf_class": np.concatenate(leafc).astype(np.int64),
        "roots": np.array(roots, dtype=np.int64),
        "owner": np.array(owner, dtype=np.int64),
    }


def _predict_packed(p, x, n_cells, n_classes) -> np.ndarray:
    node = p["roots"].copy()
    feature, threshold = p["feature"], p["threshold"]
    active = np.flatnonzero(feature[node] >= 0)
    while len(active):
        n = node[active]
        go_left = x[feature[n]] <= threshold[n]
        node[active] = np.where(go_left, p["left"][n], p["right"][n])
        active = active[feature[node[active]] >= 0]
    votes = np.zeros(n_cells * n_classes, dtype=np.int64)
    np.add.at(votes, p["owner"] * n_classes + p["leaf_class"][node], 1)
    votes = votes.reshape(n_cells, n_classes)
    out = np.argmax(votes, axis=1)
    out[votes.sum(axis=1) == 0] = 0
    return out


def estimate_pog(estimator: PogEstimator, aog: AugmentedOccupancyGrid, t_pred: float) -> PredictedOccupancyGrid:
    if aog.spec != estimator.spec:
        raise PogridError("AOG grid spec does not match the estimator")
    x = aog.features()
    if x.size != estimator.n_features:
        raise PogridError(f"AOG has {x.size} features, estimator expects {estimator.n_features}")
    k = estimator.instance_index(t_pred)
    p = estimator.packed(k)
    spec = estimator.spec
    if p is None:
        values = np.zeros(spec.shape)
    else:
        values = np.asarray(estimator.classes)[_predict_packed(p, x, spec.n_cells, len(estimator.classes))]
    return PredictedOccupancyGrid(spec, estimator.instances[k], values.reshape(spec.shape))


_SHARED = {}


def _init_worker(X, Y):
    _SHARED["X"], _SHARED["Y"] = X, Y


def _train_units(units, config: ForestConfig, m_try: int, n_classes: int):
    X, Y = _SHARED["X"], _SHARED["Y"]
    out = []
    for k, cell in units:
        labels = Y[:, k, cell]
        out.append(train_forest(X, labels, config.n_trees, m_try, config.seed, QSET[:n_classes],
                                config.min_leaf, True, unit=(k, cell)))
    return out


def train_estimator(aogs, pogs, config: Optional[ForestConfig] = None, instances=None, jobs: int = 1) -> PogEstimator:
    """Train one forest per (instance, cell) on quantised targets.

    ``aogs`` is a list of AOGs; ``pogs`` a list (per scene) of per-instance
    ground-truth POGs, quantised here. Cells whose labels are all zero become
    stubs. Results do not depend on ``jobs``.
    """
    config = config or ForestConfig()
    if not aogs or len(aogs) != len(pogs):
        raise PogridError("need matching, non-empty AOG and POG lists")
    spec = aogs[0].spec
    kappa = len(pogs[0])
    for a, stack in zip(aogs, pogs):
        if a.spec != spec or len(stack) != kappa or any(g.spec != spec for g in stack):
            raise PogridError("all AOGs and POGs must share one grid spec and instance count")
    if instances is None:
        instances = tuple(g.t_pred for g in pogs[0])
    X = np.stack([a.features() for a in aogs])
    Y = np.stack([[quantize_index(g.values).reshape(-1) for g in stack] for stack in pogs]).astype(np.int64)
    m_try = config.m_try or default_m_try(X.shape[1])
    units = [(k, c) for k in range(kappa) for c in range(spec.n_cells) if Y[:, k, c].any()]
    n_classes = len(QSET)
    if jobs <= 1 or len(units) < 2:
        _init_worker(X, Y)
        trained = _train_units(units, config, m_try, n_classes)
    else:
        chunk = max(1, math.ceil(len(units) / (jobs * 8)))
        batches = [units[i:i + chunk] for i in range(0, len(units), chunk)]
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(X, Y)) as pool:
            trained = [f for part in pool.map(_train_units, batches, [config] * len(batches),
                                              [m_try] * len(batches), [n_classes] * len(batches)) for f in part]
    forests = [[None] * spec.n_cells for _ in range(kappa)]
    for (k, c), f in zip(units, trained):
        forests[k][c] = f
    return PogEstimator(spec, tuple(instances), forests, X.shape[1], QSET, config)


def default_jobs() -> int:
    return os.cpu_count() or 1


# --- model file --------------------------------------------------------------

MODEL_MAGIC = b"PGRF"
MODEL_VERSION = 1


def _forest_blob(f: ForestClassifier) -> bytes:
    n_samples = f.inbag.shape[1] if f.inbag is not None else 0
    parts = [struct.pack("<IIII", len(f.trees), n_samples, f.m_try, f.n_classes)]
    for k, t in enumerate(f.trees):
        parts.append(struct.pack("<I", t.n_nodes))
        parts += [t.feature.astype("<i4").tobytes(), t.threshold.astype("<f8").tobytes(),
                  t.left.astype("<i4").tobytes(), t.right.astype("<i4").tobytes(),
                  t.counts.astype("<u4").tobytes()]
        if n_samples:
            parts.append(np.packbits(f.inbag[k]).tobytes())
    return b"".join(parts)


def _read_forest(blob: bytes, meta: dict) -> ForestClassifier:
    n_trees, n_samples, m_try, n_classes = struct.unpack_from("<IIII", blob, 0)
    pos = 16
    trees, inbag = [], []
    for _ in range(n_trees):
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4

        def take(dtype, count):
            nonlocal pos
            arr = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
            pos += arr.nbytes
            return arr

        feature = take("<i4", n)
        threshold = take("<f8", n)
        left = take("<i4", n)
        right = take("<i4", n)
        counts = take("<u4", n * n_classes).reshape(n, n_classes)
        trees.append(DecisionTree(feature, threshold, left, right, counts))
        if n_samples:
            nb = (n_samples + 7) // 8
            inbag.append(np.unpackbits(take("u1", nb))[:n_samples].astype(bool))
    return ForestClassifier(trees, tuple(meta["classes"][:n_classes]), np.array(inbag) if inbag else None,
                            m_try, meta["config"]["seed"], meta["n_features"])


def _header(est: PogEstimator, meta: Optional[dict]) -> dict:
    cfg = est.config
    return {
        "format_version": MODEL_VERSION,
        "spec": est.spec.to_dict(),
        "instances": list(est.instances),
        "classes": list(est.classes),
        "n_features": est.n_features,
        "config": {"n_trees": cfg.n_trees, "m_try": cfg.m_try, "min_leaf": cfg.min_leaf, "seed": cfg.seed},
        "meta": meta or {},
    }


def dumps_model(est: PogEstimator, meta: Optional[dict] = None) -> bytes:
    head = json.dumps(_header(est, meta), sort_keys=True).encode()
    n_slots = len(est.instances) * est.spec.n_cells
    index = np.full((n_slots, 2), -1, dtype="<i8")
    blobs, offset = [], 0
    for k, row in enumerate(est.forests):
        for c, f in enumerate(row):
            if f is None:
                continue
            b = _forest_blob(f)
            index[k * est.spec.n_cells + c] = (offset, len(b))
            blobs.append(b)
            offset += len(b)
    return MODEL_MAGIC + struct.pack("<II", MODEL_VERSION, len(head)) + head + index.tobytes() + b"".join(blobs)


def save_model(path, est: PogEstimator, meta: Optional[dict] = None) -> None:
    Path(path).write_bytes(dumps_model(est, meta))


class ModelFile:
    """Random access to one classifier at a time without reading the whole model."""

    def __init__(self, path):
        self.path = Path(path)
        with open(self.path, "rb") as fh:
            pre = fh.read(12)
            if pre[:4] != MODEL_MAGIC:
                raise ConfigError(f"{path}: not a model file")
            version, n = struct.unpack("<II", pre[4:12])
            if version != MODEL_VERSION:
                raise ConfigError(f"{path}: unsupported model version {version}")
            self.header = json.loads(fh.read(n))
            self.spec = GridSpec(**self.header["spec"])
            self.instances = tuple(self.header["instances"])
            n_slots = len(self.instances) * self.spec.n_cells
            self.index = np.frombuffer(fh.read(16 * n_slots), dtype="<i8").reshape(n_slots, 2)
            self._base = 12 + n + 16 * n_slots

    def classifier(self, k: int, cell: int) -> Optional[ForestClassifier]:
        off, length = self.index[k * self.spec.n_cells + cell]
        if off < 0:
            return None
        with open(self.path, "rb") as fh:
            fh.seek(self._base + int(off))
            return _read_forest(fh.read(int(length)), self.header)

    def load(self) -> PogEstimator:
        blob = self.path.read_bytes()
        forests = []
        for k in range(len(self.instances)):
            row = []
            for c in range(self.spec.n_cells):
                off, length = self.index[k * self.spec.n_cells + c]
                row.append(None if off < 0 else
                           _read_forest(blob[self._base + int(off):self._base + int(off) + int(length)], self.header))
            forests.append(row)
        cfg = self.header["config"]
        return PogEstimator(self.spec, self.instances, forests, self.header["n_features"],
                            tuple(self.header["classes"]), ForestConfig(**cfg))


def load_model(path) -> PogEstimator:
    return ModelFile(path).load()
