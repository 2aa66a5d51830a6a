"""Grid geometry, augmented occupancy grids and predicted occupancy grids.

Arrays are indexed ``[i, j]`` with ``i`` the column (x) and ``j`` the row (y).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, PogridError

ATTRIBUTES = ("occupancy", "v", "psi", "ax", "ay")
_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    x0: float = 0.0
    y0: float = 0.0
    cell_length: float = 0.5
    cell_width: float = 0.5
    I: int = 80
    J: int = 80

    def __post_init__(self):
        if self.cell_length <= 0 or self.cell_width <= 0:
            raise PogridError("cell dimensions must be positive")
        if self.I < 1 or self.J < 1:
            raise PogridError("grid needs at least one row and one column")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.I, self.J)

    @property
    def n_cells(self) -> int:
        return self.I * self.J

    def center(self, i, j):
        return self.x0 + (np.asarray(i) + 0.5) * self.cell_length, self.y0 + (np.asarray(j) + 0.5) * self.cell_width

    def cell_of(self, x: float, y: float) -> Optional[tuple[int, int]]:
        i = math.floor((x - self.x0) / self.cell_length)
        j = math.floor((y - self.y0) / self.cell_width)
        if 0 <= i < self.I and 0 <= j < self.J:
            return i, j
        return None

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "cell_length": self.cell_length,
                "cell_width": self.cell_width, "I": self.I, "J": self.J}


def _canonical_axis(ux: float, uy: float) -> tuple[float, float]:
    # fixes the sign of an edge normal so boundary ties do not depend on heading mod pi
    if uy < -_TOL or (abs(uy) <= _TOL and ux < 0):
        return -ux, -uy
    return ux, uy


def footprint_cells(pose, footprint, spec: GridSpec) -> np.ndarray:
    """Flat (C-order) indices of cells whose centre lies in the oriented rectangle.

    Each edge pair uses a half-open interval so that tiling rectangles never
    share a cell; the cell containing the reference point is always included.
    """
    X, Y, psi = pose
    length, width = footprint
    if length <= 0 or width <= 0:
        raise PogridError("footprint dimensions must be positive")
    c, s = math.cos(psi), math.sin(psi)
    hl, hw = 0.5 * length, 0.5 * width
    ex, ey = abs(hl * c) + abs(hw * s), abs(hl * s) + abs(hw * c)
    i_lo = max(math.floor((X - ex - spec.x0) / spec.cell_length), 0)
    i_hi = min(math.floor((X + ex - spec.x0) / spec.cell_length), spec.I - 1)
    j_lo = max(math.floor((Y - ey - spec.y0) / spec.cell_width), 0)
    j_hi = min(math.floor((Y + ey - spec.y0) / spec.cell_width), spec.J - 1)
    own = spec.cell_of(X, Y)
    if i_lo > i_hi or j_lo > j_hi:
        return np.zeros(0, dtype=np.int64)
    ii, jj = np.meshgrid(np.arange(i_lo, i_hi + 1), np.arange(j_lo, j_hi + 1), indexing="ij")
    dx = spec.x0 + (ii + 0.5) * spec.cell_length - X
    dy = spec.y0 + (jj + 0.5) * spec.cell_width - Y
    ux, uy = _canonical_axis(c, s)
    nx, ny = _canonical_axis(-s, c)
    a = dx * ux + dy * uy
    b = dx * nx + dy * ny
    inside = (a >= -hl - _TOL) & (a < hl - _TOL) & (b >= -hw - _TOL) & (b < hw - _TOL)
    if own is not None:
        inside[own[0] - i_lo, own[1] - j_lo] = True
    return (ii[inside] * spec.J + jj[inside]).astype(np.int64)


def rasterize_footprint(pose, footprint, spec: GridSpec) -> set:
    return {divmod(int(k), spec.J) for k in footprint_cells(pose, footprint, spec)}


def polyline_cells(points, spec: GridSpec) -> np.ndarray:
    """Flat indices of cells touched by a densely sampled polyline."""
    pts = np.asarray(points, dtype=float)
    step = 0.25 * min(spec.cell_length, spec.cell_width)
    cells = []
    for p, q in zip(pts[:-1], pts[1:]):
        n = max(int(math.ceil(math.hypot(*(q - p)) / step)), 1)
        u = np.linspace(0.0, 1.0, n + 1)[:, None]
        samples = p + u * (q - p)
        i = np.floor((samples[:, 0] - spec.x0) / spec.cell_length).astype(np.int64)
        j = np.floor((samples[:, 1] - spec.y0) / spec.cell_width).astype(np.int64)
        ok = (i >= 0) & (i < spec.I) & (j >= 0) & (j < spec.J)
        cells.append(i[ok] * spec.J + j[ok])
    if not cells:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(cells))


def road_mask(road, spec: GridSpec) -> np.ndarray:
    mask = np.zeros(spec.n_cells, dtype=bool)
    if road is not None:
        for pl in road.road_limits:
            mask[polyline_cells(getattr(pl, "points", pl), spec)] = True
    return mask.reshape(spec.shape)


@dataclass(frozen=True, eq=False)
class AugmentedOccupancyGrid:
    spec: GridSpec
    data: np.ndarray  # (I, J, 5)

    def features(self) -> np.ndarray:
        return self.data.reshape(-1)


@dataclass(frozen=True, eq=False)
class PredictedOccupancyGrid:
    spec: GridSpec
    t_pred: float
    values: np.ndarray  # (I, J)

    def __post_init__(self):
        v = self.values
        if v.shape != self.spec.shape:
            raise PogridError(f"grid values have shape {v.shape}, expected {self.spec.shape}")
        if v.size and (np.isnan(v).any() or v.min() < 0.0 or v.max() > 1.0):
            raise PogridError("occupancy probabilities must lie in [0, 1]")


def build_aog(scene, spec: GridSpec) -> AugmentedOccupancyGrid:
    data = np.zeros((spec.n_cells, len(ATTRIBUTES)))
    data[road_mask(scene.road, spec).reshape(-1), 0] = 1.0
    for obj in sorted(scene.objects, key=lambda o: o.id):
        st = obj.state
        cells = footprint_cells((st.X, st.Y, st.psi), obj.footprint, spec)
        data[cells] = (1.0, st.v, st.psi, st.ax, st.ay)
    return AugmentedOccupancyGrid(spec, data.reshape(spec.I, spec.J, len(ATTRIBUTES)))


def object_contribution(hset, spec: GridSpec, footprint=None) -> np.ndarray:
    """Flat array of ``r_ij^T p(h)`` for one object's hypothesis set."""
    fp = footprint or hset.footprint
    contrib = np.zeros(spec.n_cells)
    for pose, w in zip(hset.poses, hset.weights):
        contrib[footprint_cells(pose, fp, spec)] += w
    return contrib


def build_pog(hypothesis_sets, spec: GridSpec, t_pred: float, footprints=None,
              road_cells: Optional[np.ndarray] = None) -> PredictedOccupancyGrid:
    """Combine per-object hypothesis sets into occupancy probabilities.

    ``footprints`` optionally maps object id to ``(length, width)``; otherwise each
    set's own footprint is used. ``road_cells`` is a boolean ``(I, J)`` mask of
    road-limit cells, which are forced to probability one.
    """
    hsets = list(hypothesis_sets)
    for h in hsets:
        total = float(np.sum(h.weights))
        if abs(total - 1.0) > 1e-9:
            raise PogridError(f"weights of object {h.object_id} sum to {total!r}, not 1")
        if abs(h.t_pred - t_pred) > 1e-9:
            raise PogridError(f"hypothesis set of {h.object_id} is for t={h.t_pred}, not {t_pred}")
    total = np.zeros(spec.n_cells)
    for h in hsets:
        fp = footprints.get(h.object_id) if footprints else None
        total += object_contribution(h, spec, fp)
    values = np.minimum(1.0, total).reshape(spec.shape)
    if road_cells is not None:
        values[np.asarray(road_cells, dtype=bool)] = 1.0
    return PredictedOccupancyGrid(spec, t_pred, values)


# --- file format -----------------------------------------------------------

MAGIC = b"PGRD"
FORMAT_VERSION = 1


def _header(grid, meta) -> dict:
    if isinstance(grid, AugmentedOccupancyGrid):
        head = {"kind": "aog", "attributes": list(ATTRIBUTES), "t_pred": 0.0}
    else:
        head = {"kind": "pog", "attributes": ["p_occupied"], "t_pred": grid.t_pred}
    head.update({"format_version": FORMAT_VERSION, "spec": grid.spec.to_dict(), "meta": meta or {}})
    return head


def _payload(grid) -> np.ndarray:
    arr = grid.data if isinstance(grid, AugmentedOccupancyGrid) else grid.values
    return np.ascontiguousarray(arr, dtype="<f8").reshape(-1)


def _from_parts(head: dict, flat: np.ndarray):
    spec = GridSpec(**head["spec"])
    n_attr = len(head["attributes"])
    if flat.size != spec.n_cells * n_attr:
        raise ConfigError(f"grid payload has {flat.size} values, header implies {spec.n_cells * n_attr}")
    if head["kind"] == "aog":
        return AugmentedOccupancyGrid(spec, flat.reshape(spec.I, spec.J, n_attr).astype(float))
    return PredictedOccupancyGrid(spec, head["t_pred"], flat.reshape(spec.I, spec.J).astype(float))


def dumps_grid_text(grid, meta=None) -> str:
    head = _header(grid, meta)
    flat = _payload(grid)
    per_line = grid.spec.J * len(head["attributes"])
    lines = ["POGRID-GRID %d" % FORMAT_VERSION, json.dumps(head, sort_keys=True)]
    for r in range(grid.spec.I):
        lines.append(" ".join(repr(float(x)) for x in flat[r * per_line:(r + 1) * per_line]))
    return "\n".join(lines) + "\n"


def loads_grid_text(text: str):
    lines = text.splitlines()
    if not lines or not lines[0].startswith("POGRID-GRID"):
        raise ConfigError("not a text grid file")
    head = json.loads(lines[1])
    flat = np.array([float(x) for line in lines[2:] for x in line.split()])
    return _from_parts(head, flat)


def dumps_grid_binary(grid, meta=None) -> bytes:
    head = json.dumps(_header(grid, meta), sort_keys=True).encode()
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(head)) + head + _payload(grid).tobytes()


def loads_grid_binary(blob: bytes):
    if blob[:4] != MAGIC:
        raise ConfigError("not a binary grid file")
    version, n = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported grid format version {version}")
    head = json.loads(blob[12:12 + n])
    return _from_parts(head, np.frombuffer(blob[12 + n:], dtype="<f8"))


def save_grid(path, grid, meta=None) -> None:
    path = Path(path)
    if path.suffix == ".txt":
        path.write_text(dumps_grid_text(grid, meta))
    else:
        path.write_bytes(dumps_grid_binary(grid, meta))


def load_grid(path):
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] == MAGIC:
        return loads_grid_binary(blob)
    return loads_grid_text(blob.decode())


def read_grid_header(path) -> dict:
    blob = Path(path).read_bytes()
    if blob[:4] == MAGIC:
        _, n = struct.unpack("<II", blob[4:12])
        return json.loads(blob[12:12 + n])
    return json.loads(blob.decode().splitlines()[1])
