import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import cell_in_footprint, pog_bruteforce
from pogrid.dynamics import VehicleState
from pogrid.errors import ConfigError, PogridError
from pogrid.grid import (
    GridSpec, PredictedOccupancyGrid, build_aog, build_pog, dumps_grid_binary, dumps_grid_text,
    footprint_cells, load_grid, loads_grid_binary, loads_grid_text, rasterize_footprint, read_grid_header,
    road_mask, save_grid,
)
from pogrid.hypotheses import HypothesisSet
from pogrid.scenario import Scene, TrafficObject, straight_network, straight_scene


def hset(oid, poses, weights, fp=(1.0, 1.0), t=1.0):
    poses = np.asarray(poses, dtype=float).reshape(-1, 3)
    return HypothesisSet(oid, t, poses, np.asarray(weights, dtype=float), np.zeros(len(poses), int), fp)


SMALL = GridSpec(0.0, 0.0, 1.0, 1.0, 10, 10)


def test_axis_aligned_car_footprint():
    spec = GridSpec(0, 0, 0.5, 0.5, 40, 40)
    cells = rasterize_footprint((10.25, 10.25, 0.0), (4.5, 2.0), spec)
    assert len(cells) == 36


def test_tiny_footprint_is_one_cell():
    assert rasterize_footprint((3.3, 4.7, 0.3), (0.1, 0.1), SMALL) == {(3, 4)}


@settings(max_examples=200, deadline=None)
@given(x=st.floats(0, 10), y=st.floats(0, 10), psi=st.floats(-4, 4),
       L=st.floats(0.2, 6), W=st.floats(0.2, 3))
def test_rotation_by_pi_and_oracle(x, y, psi, L, W):
    a = rasterize_footprint((x, y, psi), (L, W), SMALL)
    b = rasterize_footprint((x, y, psi + math.pi), (L, W), SMALL)
    assert a == b
    own = SMALL.cell_of(x, y)
    if own is not None:
        assert own in a
    want = {(i, j) for i in range(10) for j in range(10) if cell_in_footprint(i, j, (x, y, psi), (L, W), SMALL)}
    assert a == want


def test_pose_outside_grid_is_clipped():
    assert footprint_cells((-20.0, -20.0, 0.0), (2.0, 2.0), SMALL).size == 0


def test_aog_attributes():
    road = straight_network()
    car = TrafficObject("c", "car", VehicleState(X=10.0, Y=-1.75, v=10.0, psi=0.2, ax=1.0), "R")
    spec = GridSpec(0, -5, 0.5, 0.5, 60, 20)
    aog = build_aog(Scene(road, (car,), None), spec)
    i, j = spec.cell_of(10.0, -1.75)
    assert aog.data[i, j].tolist() == [1.0, 10.0, 0.2, 1.0, 0.0]
    empty = build_aog(Scene(road, (), None), spec)
    mask = road_mask(road, spec)
    assert mask.any()
    assert np.array_equal(empty.data[..., 0] == 1.0, mask)
    assert not empty.data[..., 1:].any()


def test_single_hypothesis_pog():
    g = build_pog([hset("a", [5.5, 5.5, 0.0], [1.0], (3.0, 1.0))], SMALL, 1.0)
    assert sorted(zip(*np.nonzero(g.values))) == [(4, 5), (5, 5), (6, 5)]
    assert set(np.unique(g.values)) == {0.0, 1.0}


def test_two_objects_clamp():
    a = hset("a", [[5.5, 5.5, 0.0], [1.5, 1.5, 0.0]], [0.6, 0.4])
    b = hset("b", [[5.5, 5.5, 0.0], [8.5, 8.5, 0.0]], [0.6, 0.4])
    g = build_pog([a, b], SMALL, 1.0)
    assert g.values[5, 5] == 1.0


def test_weight_sum_checked_before_writing():
    with pytest.raises(PogridError):
        build_pog([hset("a", [5.5, 5.5, 0.0], [0.9])], SMALL, 1.0)
    with pytest.raises(PogridError):
        build_pog([hset("a", [5.5, 5.5, 0.0], [1.0], t=2.0)], SMALL, 1.0)


def test_road_cells_forced_to_one():
    road = np.zeros(SMALL.shape, bool)
    road[0, :] = True
    g = build_pog([], SMALL, 1.0, road_cells=road)
    assert (g.values[0] == 1.0).all() and g.values[1:].sum() == 0


def _random_sets(rng, n_obj, max_h=12):
    out = []
    for k in range(n_obj):
        n = int(rng.integers(1, max_h + 1))
        poses = np.column_stack([rng.uniform(0, 10, n), rng.uniform(0, 10, n), rng.uniform(-3.2, 3.2, n)])
        w = rng.random(n)
        w /= w.sum()
        out.append(hset(f"o{k}", poses, w, (float(rng.uniform(0.3, 4.5)), float(rng.uniform(0.3, 2)))))
    return out


def test_bruteforce_equivalence_and_properties():
    rng = np.random.default_rng(11)
    for _ in range(20):
        sets = _random_sets(rng, int(rng.integers(1, 4)))
        g = build_pog(sets, SMALL, 1.0)
        ref = pog_bruteforce([(h.poses, h.weights, h.footprint) for h in sets], SMALL)
        assert g.values.tolist() == ref
        perm = build_pog(sets[::-1], SMALL, 1.0)
        np.testing.assert_allclose(perm.values, g.values, rtol=0, atol=1e-12)
        more = build_pog(sets + _random_sets(rng, 1), SMALL, 1.0)
        assert (more.values >= g.values - 1e-12).all()


def test_single_cell_mass():
    rng = np.random.default_rng(2)
    (h,) = _random_sets(rng, 1)
    h = HypothesisSet(h.object_id, 1.0, h.poses, h.weights, h.main_index, (0.01, 0.01))
    g = build_pog([h], SMALL, 1.0)
    assert g.values.sum() == pytest.approx(1.0, abs=1e-12)


def test_pog_validation():
    with pytest.raises(PogridError):
        PredictedOccupancyGrid(SMALL, 1.0, np.full(SMALL.shape, 1.5))
    with pytest.raises(PogridError):
        PredictedOccupancyGrid(SMALL, 1.0, np.zeros((3, 3)))


@pytest.mark.parametrize("suffix", [".txt", ".pgrd"])
def test_grid_roundtrip(tmp_path, suffix):
    sc = straight_scene(10.0, 40.0)
    spec = GridSpec(0, -5, 0.5, 0.5, 60, 20)
    aog = build_aog(sc, spec)
    path = tmp_path / ("aog" + suffix)
    save_grid(path, aog, {"note": "x"})
    back = load_grid(path)
    assert back.spec == spec and np.array_equal(back.data, aog.data)
    assert read_grid_header(path)["meta"] == {"note": "x"}
    pog = PredictedOccupancyGrid(spec, 0.5, np.random.default_rng(0).random(spec.shape))
    assert np.array_equal(loads_grid_text(dumps_grid_text(pog)).values, pog.values)
    assert np.array_equal(loads_grid_binary(dumps_grid_binary(pog)).values, pog.values)


def test_bad_grid_file(tmp_path):
    p = tmp_path / "g.pgrd"
    p.write_bytes(b"PGRD" + (99).to_bytes(4, "little") + b"\0" * 8)
    with pytest.raises(ConfigError):
        load_grid(p)
