"""Road networks, traffic scenes and deterministic scenario sweeps."""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .dynamics import BICYCLE_PARAMS, CAR_PARAMS, TireParams, TwoTrackParams, VehicleState
from .errors import ConfigError, PogridError
from .geometry import Polyline
from .schema import load_validated

SCHEMA_VERSION = 1


class ManeuverLabel(str, enum.Enum):
    FollowLane = "FollowLane"
    DriveStraight = "DriveStraight"
    ChangeLane = "ChangeLane"
    TurnLeft = "TurnLeft"
    TurnRight = "TurnRight"


@dataclass(frozen=True, eq=False)
class Lane:
    id: str
    centerline: Polyline
    width: float
    maneuvers: tuple[ManeuverLabel, ...]
    successors: dict = field(default_factory=dict)
    change_to: Optional[str] = None

    def __post_init__(self):
        if self.width <= 0:
            raise PogridError(f"lane {self.id}: width must be positive")
        if not self.maneuvers:
            raise PogridError(f"lane {self.id}: no allowed maneuver")


@dataclass(frozen=True, eq=False)
class RoadNetwork:
    lanes: dict
    road_limits: tuple[Polyline, ...] = ()

    def __post_init__(self):
        for lane in self.lanes.values():
            for label, succ in lane.successors.items():
                if succ not in self.lanes:
                    raise PogridError(f"lane {lane.id}: unknown successor {succ!r}")
                gap = np.hypot(*(self.lanes[succ].centerline.points[0] - lane.centerline.points[-1]))
                if gap > 0.1:
                    raise PogridError(f"lane {lane.id} -> {succ}: endpoints {gap:.3f} m apart")
            if lane.change_to is not None and lane.change_to not in self.lanes:
                raise PogridError(f"lane {lane.id}: unknown change-lane target {lane.change_to!r}")

    def lane(self, lane_id: str) -> Lane:
        try:
            return self.lanes[lane_id]
        except KeyError:
            raise PogridError(f"unknown lane {lane_id!r}") from None


FOOTPRINTS = {"car": (4.5, 2.0), "bicycle": (1.8, 0.6)}
DEFAULT_PARAMS = {"car": CAR_PARAMS, "bicycle": BICYCLE_PARAMS}


@dataclass(frozen=True)
class TrafficObject:
    id: str
    kind: Literal["car", "bicycle"]
    state: VehicleState
    lane: str
    length: float = 0.0
    width: float = 0.0
    params: Optional[TwoTrackParams] = None

    def __post_init__(self):
        if self.kind not in FOOTPRINTS:
            raise PogridError(f"object {self.id}: unknown kind {self.kind!r}")
        if self.length <= 0 or self.width <= 0:
            length, width = FOOTPRINTS[self.kind]
            object.__setattr__(self, "length", self.length if self.length > 0 else length)
            object.__setattr__(self, "width", self.width if self.width > 0 else width)
        if self.params is None:
            object.__setattr__(self, "params", DEFAULT_PARAMS[self.kind])

    @property
    def footprint(self) -> tuple[float, float]:
        return self.length, self.width

    @property
    def model(self) -> str:
        return "two_track" if self.kind == "car" else "single_track"


@dataclass(frozen=True, eq=False)
class Scene:
    road: RoadNetwork
    objects: tuple[TrafficObject, ...] = ()
    ego: Optional[str] = None

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise PogridError("object ids must be unique")
        if self.ego is not None and self.ego not in ids:
            raise PogridError(f"ego {self.ego!r} is not an object of the scene")
        for obj in self.objects:
            lane = self.road.lane(obj.lane)
            s, d = lane.centerline.project((obj.state.X, obj.state.Y))
            if abs(d) > lane.width:
                raise PogridError(f"object {obj.id} is {abs(d):.2f} m from lane {lane.id}")

    def object(self, object_id: str) -> TrafficObject:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise PogridError(f"unknown object {object_id!r}")

    def without(self, object_id: str) -> "Scene":
        return Scene(self.road, tuple(o for o in self.objects if o.id != object_id))


@dataclass(frozen=True)
class SweepAxis:
    min: float = 0.0
    max: float = 0.0
    count: int = 1

    def values(self) -> list[float]:
        if self.count < 1:
            raise PogridError("sweep counts must be at least 1")
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise PogridError("sweep ranges must be finite")
        if self.count == 1:
            return [0.0]
        return [float(v) for v in np.linspace(self.min, self.max, self.count)]


@dataclass(frozen=True)
class ObjectSweep:
    """Offsets applied to one object: arc-length position [m], speed [km/h],
    longitudinal acceleration [m/s^2]."""

    position: SweepAxis = SweepAxis()
    speed_kmh: SweepAxis = SweepAxis()
    accel: SweepAxis = SweepAxis()


@dataclass(frozen=True)
class SweepSpec:
    objects: dict = field(default_factory=dict)
    seed: int = 0

    def size(self) -> int:
        n = 1
        for sw in self.objects.values():
            n *= sw.position.count * sw.speed_kmh.count * sw.accel.count
        return n


def displace(obj: TrafficObject, road: RoadNetwork, d_pos: float, d_speed_kmh: float, d_accel: float) -> TrafficObject:
    lane = road.lane(obj.lane)
    line = lane.centerline
    s0, d0 = line.project((obj.state.X, obj.state.Y))
    s = s0 + d_pos
    if s < 0.0 or s > line.length:
        raise PogridError(f"sweep moves object {obj.id} off lane {lane.id} (s={s:.2f}, length {line.length:.2f})")
    v = obj.state.v + d_speed_kmh / 3.6
    if v < 0:
        raise PogridError(f"sweep gives object {obj.id} a negative speed")
    h = line.heading_at(s)
    normal = np.array([-math.sin(h), math.cos(h)])
    xy = line.point_at(s) + d0 * normal
    psi = obj.state.psi - line.heading_at(s0) + h
    state = replace(obj.state, X=float(xy[0]), Y=float(xy[1]), v=v, psi=psi, ax=obj.state.ax + d_accel)
    return replace(obj, state=state)


def sweep_grid(base: Scene, sweep: SweepSpec) -> list[tuple]:
    """Offset tuples in generation order, one ``(dp, dv, da)`` triple per object."""
    for oid in sweep.objects:
        base.object(oid)
    per_object = []
    for obj in base.objects:
        sw = sweep.objects.get(obj.id, ObjectSweep())
        per_object.append(list(itertools.product(sw.position.values(), sw.speed_kmh.values(), sw.accel.values())))
    return list(itertools.product(*per_object))


def generate_scenes(base: Scene, sweep: SweepSpec) -> list[Scene]:
    """Cartesian sweep over per-object position, speed and acceleration offsets."""
    scenes = []
    for combo in sweep_grid(base, sweep):
        objs = tuple(displace(o, base.road, *off) for o, off in zip(base.objects, combo))
        scenes.append(Scene(base.road, objs, base.ego))
    return scenes


def split_dataset(scenes: list, train_fraction: float, seed: int):
    """Seeded shuffle then split; the training part has ``floor(n * fraction)`` items."""
    if not 0 < train_fraction < 1:
        raise PogridError("train_fraction must lie strictly between 0 and 1")
    order = np.random.default_rng(seed).permutation(len(scenes))
    n_train = int(math.floor(len(scenes) * train_fraction + 1e-9))
    train = [scenes[i] for i in sorted(order[:n_train])]
    val = [scenes[i] for i in sorted(order[n_train:])]
    return train, val


def split_indices(n: int, train_fraction: float, seed: int):
    idx = list(range(n))
    return split_dataset(idx, train_fraction, seed)


# --- presets ---------------------------------------------------------------

def _arc(center, radius, x0, x1, n=80):
    cx, cy = center
    th = np.linspace(math.asin((x0 - cx) / radius), math.asin((x1 - cx) / radius), n)
    return np.column_stack([cx + radius * np.sin(th), cy + radius * np.cos(th)])


def _bezier(p0, h0, p3, h3, k=4.0, n=40):
    p0 = np.asarray(p0, float)
    p3 = np.asarray(p3, float)
    p1 = p0 + k * np.array([math.cos(h0), math.sin(h0)])
    p2 = p3 - k * np.array([math.cos(h3), math.sin(h3)])
    u = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - u) ** 3 * p0 + 3 * (1 - u) ** 2 * u * p1 + 3 * (1 - u) * u**2 * p2 + u**3 * p3


def _on_arc(center, radius, x):
    cx, cy = center
    th = math.asin((x - cx) / radius)
    return np.array([cx + radius * math.sin(th), cy + radius * math.cos(th)]), -th


def intersection_network() -> RoadNetwork:
    """Two-lane one-way road on a curve with a junction to a side road, spanning
    the 40 m x 40 m square with origin (0, 0)."""
    c = (20.0, -60.0)
    ra, rb = 74.0, 77.5
    x_turn, x_merge = 18.0, 30.0
    ML = ManeuverLabel
    s_start = np.array([25.75, 8.0])
    n_end = np.array([22.25, 10.0])
    p_turn, h_turn = _on_arc(c, ra, x_turn)
    p_merge, h_merge = _on_arc(c, ra, x_merge)
    lanes = {
        "A1": Lane("A1", Polyline(_arc(c, ra, -15.0, x_turn)), 3.5,
                   (ML.FollowLane, ML.ChangeLane, ML.TurnRight),
                   {"FollowLane": "A2", "TurnRight": "T1"}, change_to="B"),
        "A2": Lane("A2", Polyline(_arc(c, ra, x_turn, x_merge, 20)), 3.5,
                   (ML.FollowLane, ML.ChangeLane), {"FollowLane": "A3"}, change_to="B"),
        "A3": Lane("A3", Polyline(_arc(c, ra, x_merge, 55.0)), 3.5,
                   (ML.FollowLane, ML.ChangeLane), change_to="B"),
        "B": Lane("B", Polyline(_arc(c, rb, -15.0, 55.0, 120)), 3.5,
                  (ML.FollowLane, ML.ChangeLane), change_to="A1"),
        "T1": Lane("T1", Polyline(_bezier(p_turn, h_turn, s_start, -math.pi / 2)), 3.5,
                   (ML.FollowLane,), {"FollowLane": "S"}),
        "S": Lane("S", Polyline([s_start, (25.75, -20.0)]), 3.5, (ML.FollowLane,)),
        "N": Lane("N", Polyline([(22.25, -15.0), n_end]), 3.5,
                  (ML.TurnRight,), {"TurnRight": "T2"}),
        "T2": Lane("T2", Polyline(_bezier(n_end, math.pi / 2, p_merge, h_merge)), 3.5,
                   (ML.FollowLane,), {"FollowLane": "A3"}),
    }
    right_w = _arc(c, 72.25, -15.0, 20.5)
    right_e = _arc(c, 72.25, 27.5, 55.0)
    limits = (
        Polyline(_arc(c, 79.25, -15.0, 55.0, 120)),
        Polyline(np.vstack([right_w, [(20.5, -20.0)]])[::-1]),
        Polyline(np.vstack([[(27.5, -20.0)], right_e])),
    )
    return RoadNetwork(lanes, limits)


def _object_on(road, oid, kind, lane_id, s, v_kmh, ax=0.0):
    line = road.lane(lane_id).centerline
    p = line.point_at(s)
    st = VehicleState(X=float(p[0]), Y=float(p[1]), v=v_kmh / 3.6, psi=line.heading_at(s), ax=ax)
    return TrafficObject(oid, kind, st, lane_id)


def intersection_scene(objects: str = "car1,car2,bike") -> Scene:
    """Reference scene: two cars on the curved road and a bicycle on the side road."""
    road = intersection_network()
    catalog = {
        "car1": _object_on(road, "car1", "car", "A1", 22.0, 40.0),
        "car2": _object_on(road, "car2", "car", "B", 22.0, 45.0),
        "bike": _object_on(road, "bike", "bicycle", "N", 19.0, 15.0),
    }
    chosen = [catalog[k] for k in objects.split(",") if k]
    ego = "car1" if any(o.id == "car1" for o in chosen) else None
    return Scene(road, tuple(chosen), ego)


def intersection_sweep(objects: str = "car1,car2,bike", seed: int = 0) -> SweepSpec:
    """Sweep sizes: with all three objects 27 * 12 * 3 = 972 scenes."""
    sweeps = {
        "car1": ObjectSweep(SweepAxis(-5, 5, 3), SweepAxis(-10, 10, 3), SweepAxis(-1.5, 1.0, 3)),
        "car2": ObjectSweep(SweepAxis(-5, 5, 3), SweepAxis(-10, 10, 2), SweepAxis(-1.5, 1.0, 2)),
        "bike": ObjectSweep(SweepAxis(-3, 3, 3), SweepAxis(-5, 5, 1), SweepAxis(-0.5, 0.5, 1)),
    }
    return SweepSpec({k: sweeps[k] for k in objects.split(",") if k}, seed)


def straight_network(length: float = 60.0) -> RoadNetwork:
    """Straight two-lane road along +x with lane marking, centred on y = 0."""
    ML = ManeuverLabel
    lanes = {
        "R": Lane("R", Polyline([(-10.0, -1.75), (length, -1.75)]), 3.5, (ML.FollowLane,)),
        "L": Lane("L", Polyline([(length, 1.75), (-10.0, 1.75)]), 3.5, (ML.FollowLane,)),
    }
    limits = (
        Polyline([(-10.0, -3.5), (length, -3.5)]),
        Polyline([(-10.0, 3.5), (length, 3.5)]),
        Polyline([(-10.0, 0.0), (length, 0.0)]),
    )
    return RoadNetwork(lanes, limits)


def straight_scene(x: float = 2.5, v_kmh: float = 30.0) -> Scene:
    road = straight_network()
    st = VehicleState(X=x, Y=-1.75, v=v_kmh / 3.6)
    return Scene(road, (TrafficObject("car", "car", st, "R"),), "car")


# --- file format -------------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LaneModel(_Strict):
    id: str
    centerline: list[tuple[float, float]] = Field(min_length=2)
    width: float = Field(gt=0)
    maneuvers: list[ManeuverLabel] = Field(min_length=1)
    successors: dict[ManeuverLabel, str] = {}
    change_to: Optional[str] = None


class RoadModel(_Strict):
    lanes: list[LaneModel]
    road_limits: list[list[tuple[float, float]]] = []


class TireModel(_Strict):
    mu_max: float = Field(1.0, gt=0, le=1.5)
    B_stiff: float = Field(10.0, gt=0)
    C_shape: float = Field(1.9, gt=0)


class ParamsModel(_Strict):
    m: float = Field(gt=0)
    Iz: float = Field(gt=0)
    lf: float = Field(gt=0)
    lr: float = Field(gt=0)
    w: float = Field(0.0, ge=0)
    tire: TireModel = TireModel()


class StateModel(_Strict):
    X: float
    Y: float
    v: float = Field(ge=0)
    beta: float = 0.0
    psi: float = 0.0
    psi_dot: float = 0.0
    ax: float = 0.0
    ay: float = 0.0


class ObjectModel(_Strict):
    id: str
    kind: Literal["car", "bicycle"]
    lane: str
    state: StateModel
    length: Optional[float] = Field(None, gt=0)
    width: Optional[float] = Field(None, gt=0)
    params: Optional[ParamsModel] = None


class AxisModel(_Strict):
    min: float = 0.0
    max: float = 0.0
    count: int = Field(1, ge=1)


class ObjectSweepModel(_Strict):
    position: AxisModel = AxisModel()
    speed_kmh: AxisModel = AxisModel()
    accel: AxisModel = AxisModel()


class SweepModel(_Strict):
    objects: dict[str, ObjectSweepModel] = {}
    seed: int = 0


class ScenarioFile(_Strict):
    schema_version: Literal[1] = 1
    road: RoadModel
    objects: list[ObjectModel] = []
    ego: Optional[str] = None
    sweep: Optional[SweepModel] = None
    seed: int = 0


def _pl(points) -> list:
    return [[float(x), float(y)] for x, y in np.asarray(points)]


def scene_to_dict(scene: Scene, sweep: Optional[SweepSpec] = None, seed: int = 0) -> dict:
    lanes = []
    for lane in scene.road.lanes.values():
        lanes.append({
            "id": lane.id,
            "centerline": _pl(lane.centerline.points),
            "width": lane.width,
            "maneuvers": [m.value for m in lane.maneuvers],
            "successors": {str(getattr(k, "value", k)): v for k, v in lane.successors.items()},
            "change_to": lane.change_to,
        })
    objects = []
    for o in scene.objects:
        st = o.state
        p = o.params
        objects.append({
            "id": o.id, "kind": o.kind, "lane": o.lane,
            "state": {k: float(getattr(st, k)) for k in ("X", "Y", "v", "beta", "psi", "psi_dot", "ax", "ay")},
            "length": o.length, "width": o.width,
            "params": {"m": p.m, "Iz": p.Iz, "lf": p.lf, "lr": p.lr, "w": p.w,
                       "tire": {"mu_max": p.tire.mu_max, "B_stiff": p.tire.B_stiff, "C_shape": p.tire.C_shape}},
        })
    out = {
        "schema_version": SCHEMA_VERSION,
        "road": {"lanes": lanes, "road_limits": [_pl(pl.points) for pl in scene.road.road_limits]},
        "objects": objects,
        "ego": scene.ego,
        "seed": seed,
    }
    if sweep is not None:
        out["sweep"] = {
            "seed": sweep.seed,
            "objects": {
                oid: {ax: {"min": float(getattr(sw, ax).min), "max": float(getattr(sw, ax).max),
                      "count": getattr(sw, ax).count}
                      for ax in ("position", "speed_kmh", "accel")}
                for oid, sw in sweep.objects.items()
            },
        }
    return out


def scene_from_model(doc: ScenarioFile) -> tuple[Scene, Optional[SweepSpec], int]:
    lanes = {}
    for lm in doc.road.lanes:
        lanes[lm.id] = Lane(lm.id, Polyline(lm.centerline), lm.width, tuple(lm.maneuvers),
                            {k.value: v for k, v in lm.successors.items()}, lm.change_to)
    road = RoadNetwork(lanes, tuple(Polyline(p) for p in doc.road.road_limits))
    objects = []
    for om in doc.objects:
        params = None
        if om.params is not None:
            pm = om.params
            params = TwoTrackParams(pm.m, pm.Iz, pm.lf, pm.lr, pm.w, TireParams(**pm.tire.model_dump()))
        objects.append(TrafficObject(om.id, om.kind, VehicleState(**om.state.model_dump()), om.lane,
                                     om.length or 0.0, om.width or 0.0, params))
    scene = Scene(road, tuple(objects), doc.ego)
    sweep = None
    if doc.sweep is not None:
        sweep = SweepSpec({
            oid: ObjectSweep(*(SweepAxis(**getattr(sw, ax).model_dump()) for ax in ("position", "speed_kmh", "accel")))
            for oid, sw in doc.sweep.objects.items()
        }, doc.sweep.seed)
    return scene, sweep, doc.seed


def dumps_scenario(scene: Scene, sweep: Optional[SweepSpec] = None, seed: int = 0) -> str:
    return json.dumps(scene_to_dict(scene, sweep, seed), indent=1, sort_keys=True) + "\n"


def save_scenario(path, scene: Scene, sweep: Optional[SweepSpec] = None, seed: int = 0) -> None:
    Path(path).write_text(dumps_scenario(scene, sweep, seed))


def load_scenario(path) -> tuple[Scene, Optional[SweepSpec], int]:
    doc = load_validated(path, ScenarioFile)
    try:
        return scene_from_model(doc)
    except (PogridError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
