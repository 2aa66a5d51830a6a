"""Weighted motion hypotheses per traffic object.

Main hypotheses are maneuvers with rule-based probabilities; each one is driven
through the vehicle model by a pure-pursuit tracker. Sub-hypotheses are
quantised longitudinal/lateral deviations from the main-hypothesis pose, weighted
by independent triangular densities with mode zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import (
    G,
    SLIP_MAX,
    STEERING_RATIO,
    DriverInput,
    SingleTrackInput,
    Trajectory,
    integrate,
)
from .errors import PogridError
from .geometry import Polyline, concat, ray_distance
from .scenario import ManeuverLabel, RoadNetwork, Scene, TrafficObject

__all__ = [
    "DeviationBounds",
    "HypothesisConfig",
    "HypothesisSet",
    "MainHypothesis",
    "ManeuverLabel",
    "RuleTerm",
    "SubHypothesis",
    "TrackingError",
    "deviation_bounds",
    "hypothesis_set",
    "hypothesis_sets",
    "main_hypothesis_probabilities",
    "main_trajectory",
    "maneuver_route",
    "sub_hypotheses",
    "triangular_cdf",
]


class TrackingError(PogridError):
    """The path tracker lost its reference path."""


@dataclass(frozen=True)
class RuleTerm:
    """Logistic factor ``1 / (1 + exp(-slope * (x - center)))`` of one state variable.

    ``variable`` is ``"v"`` (speed, m/s), ``"ax"`` (longitudinal acceleration) or
    ``"abs_ax"`` (its magnitude).
    """

    variable: str
    slope: float
    center: float

    def factor(self, v: float, ax: float) -> float:
        x = {"v": v, "ax": ax, "abs_ax": abs(ax)}[self.variable]
        z = self.slope * (x - self.center)
        return 1.0 / (1.0 + math.exp(-z)) if z > -700 else 0.0


@dataclass(frozen=True)
class MainRule:
    base: float
    terms: tuple[RuleTerm, ...] = ()

    def weight(self, v: float, ax: float) -> float:
        w = self.base
        for term in self.terms:
            w *= term.factor(v, ax)
        return w


def default_rules() -> dict:
    steady = (RuleTerm("abs_ax", -3.0, 1.0),)
    turning = (RuleTerm("v", -0.4, 8.0), RuleTerm("ax", -2.0, -0.5))
    return {
        ManeuverLabel.FollowLane: MainRule(1.0, steady),
        ManeuverLabel.DriveStraight: MainRule(1.0, steady),
        ManeuverLabel.ChangeLane: MainRule(0.3, (RuleTerm("v", 0.3, 8.0),)),
        ManeuverLabel.TurnRight: MainRule(0.6, turning),
        ManeuverLabel.TurnLeft: MainRule(0.6, turning),
    }


@dataclass(frozen=True)
class HypothesisConfig:
    n_lon: int = 9
    n_lat: int = 7
    a_decel_max: float = 9.0
    a_accel_max: float = 4.5
    a_lat_max: float = 7.0
    rules: dict = field(default_factory=default_rules)
    dt: float = 0.01
    lookahead_min: float = 4.0
    lookahead_gain: float = 0.8
    a_lat_comfort: float = 4.0
    speed_gain: float = 2.0
    route_extension: float = 200.0


@dataclass(frozen=True)
class MainHypothesis:
    label: ManeuverLabel
    probability: float
    trajectory: Trajectory


@dataclass(frozen=True)
class DeviationBounds:
    lon_min: float
    lon_max: float
    lat_min: float
    lat_max: float


@dataclass(frozen=True)
class SubHypothesis:
    d_lon: float
    d_lat: float
    probability: float


@dataclass(frozen=True)
class HypothesisSet:
    """All ``S = M * N`` hypotheses of one object at one prediction instance.

    ``poses`` has rows ``(X, Y, heading)``; ``main_index`` maps each row to its
    main hypothesis.
    """

    object_id: str
    t_pred: float
    poses: np.ndarray
    weights: np.ndarray
    main_index: np.ndarray
    footprint: tuple[float, float]

    @property
    def size(self) -> int:
        return len(self.weights)


# --- main hypotheses -------------------------------------------------------

def main_hypothesis_probabilities(scene: Scene, object_id: str, config: Optional[HypothesisConfig] = None):
    config = config or HypothesisConfig()
    obj = scene.object(object_id)
    lane = scene.road.lane(obj.lane)
    if not lane.maneuvers:
        raise PogridError(f"lane {lane.id} allows no maneuver; road network is malformed")
    weights = []
    for label in lane.maneuvers:
        rule = config.rules.get(label)
        if rule is None:
            raise PogridError(f"no rule for maneuver {label.value}")
        weights.append(rule.weight(obj.state.v, obj.state.ax))
    total = math.fsum(weights)
    if total <= 0:
        # every rule vanished; fall back to a uniform assignment
        weights, total = [1.0] * len(weights), float(len(weights))
    return [(label, w / total) for label, w in zip(lane.maneuvers, weights)]


def _chain(road: RoadNetwork, lane_id: str, limit: int = 16) -> list[Polyline]:
    out = []
    seen = set()
    while lane_id is not None and lane_id not in seen and len(out) < limit:
        seen.add(lane_id)
        lane = road.lane(lane_id)
        out.append(lane.centerline)
        lane_id = lane.successors.get(ManeuverLabel.FollowLane.value)
    return out


def maneuver_route(road: RoadNetwork, lane_id: str, label: ManeuverLabel, extension: float = 200.0) -> Polyline:
    """Reference path for ``label`` starting from lane ``lane_id``."""
    lane = road.lane(lane_id)
    label = ManeuverLabel(label)
    if label not in lane.maneuvers:
        raise PogridError(f"maneuver {label.value} is not allowed on lane {lane_id}")
    if label is ManeuverLabel.ChangeLane:
        if lane.change_to is None:
            raise PogridError(f"lane {lane_id} has no neighbour for a lane change")
        parts = _chain(road, lane.change_to)
    elif label is ManeuverLabel.FollowLane:
        parts = _chain(road, lane_id)
    else:
        succ = lane.successors.get(label.value)
        parts = [lane.centerline] + (_chain(road, succ) if succ else [])
    return concat(parts).extended(extension)


def _curvature(route: Polyline) -> np.ndarray:
    h = np.unwrap(np.arctan2(route._seg[:, 1], route._seg[:, 0]))
    k = np.zeros(len(route.points))
    if len(h) > 1:
        ds = 0.5 * (route._len[1:] + route._len[:-1])
        k[1:-1] = np.abs(np.diff(h)) / ds
    return k


def _pedals(a_cmd: float, obj: TrafficObject) -> tuple[float, float]:
    tire = obj.params.tire
    ratio = a_cmd / (tire.mu_max * G)
    slip = tire.slip_for(max(-0.999, min(0.999, ratio)))
    pedal = min(abs(slip) / SLIP_MAX, 1.0)
    return (pedal, 0.0) if a_cmd >= 0 else (0.0, pedal)


def _tracker(obj: TrafficObject, route: Polyline, lane_width: float, config: HypothesisConfig):
    v0, a0 = obj.state.v, obj.state.ax
    wheelbase = obj.params.wheelbase
    kappa = _curvature(route)
    two_track = obj.model == "two_track"

    def control(t, st):
        s, d = route.project((st.X, st.Y))
        if abs(d) > 2.0 * lane_width:
            raise TrackingError(f"object {obj.id} left its reference path by {abs(d):.2f} m")
        v = st.v
        ld = max(config.lookahead_min, config.lookahead_gain * v)
        tx, ty = route.point_at(s + ld)
        dist = math.hypot(tx - st.X, ty - st.Y)
        alpha = math.atan2(ty - st.Y, tx - st.X) - st.psi
        delta = math.atan2(2.0 * wheelbase * math.sin(alpha), max(dist, 1e-6))
        delta = max(-0.6, min(0.6, delta))

        v_ref = max(0.0, v0 + a0 * t)
        a_ff = a0 if v_ref > 0.0 else 0.0
        preview = max(ld, 1.5 * v)
        lo, hi = np.searchsorted(route.s, [s, s + preview])
        k_ahead = float(kappa[lo:hi + 1].max()) if hi >= lo else 0.0
        if k_ahead > 1e-6:
            v_curve = math.sqrt(config.a_lat_comfort / k_ahead)
            if v_curve < v_ref:
                v_ref, a_ff = v_curve, 0.0
        a_cmd = a_ff + config.speed_gain * (v_ref - v)
        a_cmd = max(-config.a_decel_max, min(config.a_accel_max, a_cmd))
        if two_track:
            throttle, brake = _pedals(a_cmd, obj)
            return DriverInput(STEERING_RATIO * delta, throttle, brake)
        return SingleTrackInput(a_cmd, delta)

    return control


def main_trajectory(scene: Scene, object_id: str, label: ManeuverLabel, horizon: float,
                    config: Optional[HypothesisConfig] = None) -> Trajectory:
    config = config or HypothesisConfig()
    obj = scene.object(object_id)
    lane = scene.road.lane(obj.lane)
    route = maneuver_route(scene.road, obj.lane, label, config.route_extension)
    control = _tracker(obj, route, lane.width, config)
    return integrate(obj.state, obj.params, control, horizon, config.dt, obj.model)


# --- sub hypotheses --------------------------------------------------------

def _course(state) -> float:
    return state.psi + state.beta


def deviation_bounds(obj: TrafficObject, main, t_pred: float, config: Optional[HypothesisConfig] = None,
                     road: Optional[RoadNetwork] = None) -> DeviationBounds:
    """Deviation bounds around the main-hypothesis pose at ``t_pred``.

    ``main`` is a :class:`MainHypothesis` or a bare trajectory.
    """
    config = config or HypothesisConfig()
    traj = getattr(main, "trajectory", main)
    if t_pred <= 0:
        raise PogridError("t_pred must be positive")
    travelled = traj.arc_length(t_pred)
    lon_min = max(-0.5 * config.a_decel_max * t_pred**2, -travelled)
    lon_max = 0.5 * config.a_accel_max * t_pred**2
    lat = 0.5 * config.a_lat_max * t_pred**2
    lat_left = lat_right = lat
    if road is not None and road.road_limits:
        st = traj.at(t_pred)
        c = _course(st)
        normal = (-math.sin(c), math.cos(c))
        origin = (st.X, st.Y)
        lat_left = min(lat, ray_distance(origin, normal, road.road_limits))
        lat_right = min(lat, ray_distance(origin, (-normal[0], -normal[1]), road.road_limits))
    return DeviationBounds(lon_min, lon_max, -lat_right, lat_left)


def triangular_cdf(x, lo: float, hi: float):
    """CDF of the triangular density on ``[lo, hi]`` with mode 0 (``lo <= 0 <= hi``)."""
    x = np.clip(np.asarray(x, dtype=float), lo, hi)
    width = hi - lo
    out = np.empty_like(x)
    neg = x <= 0.0
    if lo < 0:
        out[neg] = (x[neg] - lo) ** 2 / (width * -lo)
    else:
        out[neg] = 0.0
    if hi > 0:
        out[~neg] = 1.0 - (hi - x[~neg]) ** 2 / (width * hi)
    else:
        out[~neg] = 1.0
    return out


def _axis(lo: float, hi: float, n: int):
    """Grid points (zero included) and bin probabilities for one axis."""
    if n < 1 or n % 2 == 0:
        raise PogridError("sub-hypothesis counts must be odd and at least 1")
    if not lo <= 0.0 <= hi:
        raise PogridError(f"deviation bounds [{lo}, {hi}] must contain zero")
    if hi - lo <= 0.0 or n == 1:
        return np.zeros(1), np.ones(1)
    half = (n - 1) // 2
    if lo < 0 and hi > 0:
        pts = np.concatenate([lo * np.arange(half, 0, -1) / half, [0.0], hi * np.arange(1, half + 1) / half])
    elif hi > 0:
        pts = hi * np.arange(n) / (n - 1)
    else:
        pts = lo * np.arange(n - 1, -1, -1) / (n - 1)
    edges = np.concatenate([[lo], 0.5 * (pts[1:] + pts[:-1]), [hi]])
    cdf = triangular_cdf(edges, lo, hi)
    prob = np.diff(cdf)
    return pts, prob / prob.sum()


def sub_hypotheses(bounds: DeviationBounds, n_lon: int, n_lat: int) -> list[SubHypothesis]:
    lon, p_lon = _axis(bounds.lon_min, bounds.lon_max, n_lon)
    lat, p_lat = _axis(bounds.lat_min, bounds.lat_max, n_lat)
    prob = np.outer(p_lon, p_lat)
    prob /= prob.sum()
    return [SubHypothesis(float(lon[a]), float(lat[b]), float(prob[a, b]))
            for a in range(len(lon)) for b in range(len(lat))]


def _expand(obj: TrafficObject, mains, t_pred: float, config: HypothesisConfig, road) -> HypothesisSet:
    poses, weights, index = [], [], []
    for m, main in enumerate(mains):
        st = main.trajectory.at(t_pred)
        subs = sub_hypotheses(deviation_bounds(obj, main, t_pred, config, road), config.n_lon, config.n_lat)
        d = np.array([(s.d_lon, s.d_lat) for s in subs])
        c = _course(st)
        cc, sc = math.cos(c), math.sin(c)
        xy = np.column_stack([st.X + d[:, 0] * cc - d[:, 1] * sc, st.Y + d[:, 0] * sc + d[:, 1] * cc])
        poses.append(np.column_stack([xy, np.full(len(subs), st.psi)]))
        weights.append(main.probability * np.array([s.probability for s in subs]))
        index.append(np.full(len(subs), m))
    w = np.concatenate(weights)
    if abs(w.sum() - 1.0) > 1e-9:
        raise PogridError(f"hypothesis weights of {obj.id} sum to {w.sum()!r}")
    return HypothesisSet(obj.id, t_pred, np.vstack(poses), w, np.concatenate(index), obj.footprint)


def main_hypotheses(scene: Scene, object_id: str, horizon: float, config: Optional[HypothesisConfig] = None):
    config = config or HypothesisConfig()
    return [MainHypothesis(label, p, main_trajectory(scene, object_id, label, horizon, config))
            for label, p in main_hypothesis_probabilities(scene, object_id, config)]


def hypothesis_sets(scene: Scene, object_id: str, instances, config: Optional[HypothesisConfig] = None,
                    mains=None):
    """One :class:`HypothesisSet` per prediction instance, sharing main trajectories.

    ``mains`` may pass precomputed main hypotheses covering ``max(instances)``.
    """
    config = config or HypothesisConfig()
    if mains is None:
        mains = main_hypotheses(scene, object_id, max(instances), config)
    obj = scene.object(object_id)
    return [_expand(obj, mains, t, config, scene.road) for t in instances]


def hypothesis_set(scene: Scene, object_id: str, t_pred: float, config: Optional[HypothesisConfig] = None) -> HypothesisSet:
    return hypothesis_sets(scene, object_id, [t_pred], config)[0]
