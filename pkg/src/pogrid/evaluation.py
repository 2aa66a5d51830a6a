"""Quantisation, the symmetric-difference quality measure, aggregation and criticality."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import PogridError

QSET = (0.0, 0.25, 0.5, 0.75, 1.0)
CATEGORIES = {"low": (0.25,), "med": (0.5, 0.75), "high": (1.0,)}
HIST_EDGES = np.linspace(0.0, 1.0, 21)


def check_qset(qset) -> np.ndarray:
    q = np.asarray(qset, dtype=float)
    if q.ndim != 1 or len(q) < 2 or q[0] != 0.0 or q[-1] != 1.0 or np.any(np.diff(q) <= 0):
        raise PogridError("quantisation set must be sorted, unique, start at 0 and end at 1")
    return q


def quantize_index(values, qset=QSET) -> np.ndarray:
    """Index of the nearest quantisation value; exact midpoints go to the larger one."""
    q = check_qset(qset)
    v = np.asarray(values, dtype=float)
    if np.isnan(v).any() or (v.size and (v.min() < 0.0 or v.max() > 1.0)):
        raise PogridError("values to quantise must lie in [0, 1]")
    mids = 0.5 * (q[1:] + q[:-1])
    return np.searchsorted(mids, v, side="right")


def quantize(values, qset=QSET):
    """Quantise an array, or a grid object carrying ``values``, to ``qset``."""
    q = check_qset(qset)
    if hasattr(values, "values") and hasattr(values, "spec"):
        from .grid import PredictedOccupancyGrid

        return PredictedOccupancyGrid(values.spec, values.t_pred, q[quantize_index(values.values, q)])
    return q[quantize_index(values, q)]


@dataclass(frozen=True)
class Quality:
    eps: float
    eps_low: Optional[float]
    eps_med: Optional[float]
    eps_high: Optional[float]
    mean_per_cell: float
    K: int

    def category(self, name: str) -> Optional[float]:
        return getattr(self, "eps_" + name)


def _grid_values(g):
    return np.asarray(getattr(g, "values", g), dtype=float)


def quality(estimated, truth_quantized, road_cells=None) -> Quality:
    """Quality of an estimated POG against the quantised ground truth.

    Cells in ``road_cells`` are left out of every sum and count. A category
    error is ``None`` when the truth holds no cell of that category.
    """
    est = _grid_values(estimated)
    tru = _grid_values(truth_quantized)
    if est.shape != tru.shape:
        raise PogridError(f"grid shapes differ: {est.shape} vs {tru.shape}")
    n_cells = est.size
    keep = np.ones(est.shape, dtype=bool) if road_cells is None else ~np.asarray(road_cells, dtype=bool)
    est, tru = est[keep], tru[keep]
    sq = (est - tru) ** 2
    total = math.fsum(sq)
    b = est != 0.0
    d = tru != 0.0
    K = int(np.count_nonzero(b ^ d))
    if K > 0:
        eps = math.sqrt(total / K)
    elif total == 0.0:
        eps = 0.0
    else:
        # identical non-zero supports with differing values
        eps = math.sqrt(total / int(np.count_nonzero(b | d)))
    cats = {}
    for name, vals in CATEGORIES.items():
        in_cat = np.isin(tru, vals)
        if not in_cat.any():
            cats[name] = None
            continue
        miss = in_cat & (est != tru)
        k = int(np.count_nonzero(miss))
        cats[name] = math.sqrt(math.fsum(sq[miss]) / k) if k else 0.0
    return Quality(eps, cats["low"], cats["med"], cats["high"], total / n_cells, K)


@dataclass
class Aggregate:
    t_pred: float
    n_scenes: int
    eps: float
    eps_low: Optional[float]
    eps_med: Optional[float]
    eps_high: Optional[float]
    mean_per_cell: float
    pq_hist: list = field(default_factory=list)
    eps_hist: list = field(default_factory=list)
    pq_counts: dict = field(default_factory=dict)


def _mean(xs) -> Optional[float]:
    xs = [x for x in xs if x is not None]
    return math.fsum(xs) / len(xs) if xs else None


def aggregate(reports: Sequence[Quality], t_pred: float, truths=(), road_cells=None) -> Aggregate:
    """Average per-scene qualities; histograms use 0.05-wide bins over [0, 1].

    ``truths`` are the quantised ground-truth grids, used for the histogram of
    non-zero ``p_q`` values.
    """
    if not reports:
        raise PogridError("aggregate needs at least one report")
    eps_vals = np.clip([r.eps for r in reports], 0.0, 1.0)
    pq = []
    counts = {q: 0 for q in QSET[1:]}
    for k, t in enumerate(truths):
        v = _grid_values(t)
        mask = v != 0.0
        if road_cells is not None:
            rc = road_cells[k] if isinstance(road_cells, (list, tuple)) else road_cells
            mask &= ~np.asarray(rc, dtype=bool)
        pq.append(v[mask])
        for q in counts:
            counts[q] += int(np.count_nonzero(v[mask] == q))
    pq = np.concatenate(pq) if pq else np.zeros(0)
    return Aggregate(
        t_pred=t_pred,
        n_scenes=len(reports),
        eps=_mean(r.eps for r in reports),
        eps_low=_mean(r.eps_low for r in reports),
        eps_med=_mean(r.eps_med for r in reports),
        eps_high=_mean(r.eps_high for r in reports),
        mean_per_cell=_mean(r.mean_per_cell for r in reports),
        pq_hist=np.histogram(pq, HIST_EDGES)[0].tolist(),
        eps_hist=np.histogram(eps_vals, HIST_EDGES)[0].tolist(),
        pq_counts={str(q): c for q, c in counts.items()},
    )


@dataclass(frozen=True)
class CriticalityReport:
    instances: tuple
    per_instance: tuple
    argmax: tuple
    total: float


def criticality(ego_stack, others_stack) -> CriticalityReport:
    """Per-instance maximum over cells of ``p_ego * p_other``."""
    if len(ego_stack) != len(others_stack) or not ego_stack:
        raise PogridError("criticality needs two non-empty stacks of equal length")
    per, where, times = [], [], []
    for e, o in zip(ego_stack, others_stack):
        if getattr(e, "spec", None) != getattr(o, "spec", None):
            raise PogridError("ego and other grids have different specs")
        if abs(e.t_pred - o.t_pred) > 1e-9:
            raise PogridError("ego and other grids are for different instances")
        c = e.values * o.values
        k = int(np.argmax(c))
        per.append(float(c.reshape(-1)[k]))
        where.append(tuple(int(x) for x in np.unravel_index(k, c.shape)))
        times.append(e.t_pred)
    return CriticalityReport(tuple(times), tuple(per), tuple(where), max(per))
