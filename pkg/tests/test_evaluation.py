import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import criticality_bruteforce
from pogrid.errors import PogridError
from pogrid.evaluation import QSET, aggregate, criticality, quality, quantize
from pogrid.grid import GridSpec, PredictedOccupancyGrid

SPEC = GridSpec(0, 0, 1, 1, 6, 5)
unit = st.floats(0.0, 1.0, allow_nan=False)


def pog(values, t=1.0, spec=SPEC):
    return PredictedOccupancyGrid(spec, t, np.asarray(values, dtype=float))


def test_quantize_examples():
    assert quantize([0.0, 1.0, 0.30, 0.125]).tolist() == [0.0, 1.0, 0.25, 0.25]
    assert quantize([0.124999, 0.875]).tolist() == [0.0, 1.0]
    with pytest.raises(PogridError):
        quantize([1.2])
    with pytest.raises(PogridError):
        quantize([0.5], qset=(0.0, 0.5))


@given(arrays(float, 20, elements=unit))
def test_quantize_idempotent_and_nearest(v):
    q = quantize(v)
    assert np.array_equal(quantize(q), q)
    assert set(q.tolist()) <= set(QSET)
    assert (np.abs(q - v) <= 0.125 + 1e-15).all()


def test_quality_hand_example():
    est, tru = np.zeros(SPEC.shape), np.zeros(SPEC.shape)
    est[0, 0], tru[0, 0] = 0.25, 0.0
    est[1, 1], tru[1, 1] = 0.5, 0.75
    est[2, 2], tru[2, 2] = 0.0, 0.25
    q = quality(pog(est), pog(tru))
    assert q.K == 2
    assert q.eps == pytest.approx(math.sqrt(0.09375), abs=1e-15)
    assert q.eps_low == pytest.approx(0.25) and q.eps_med == pytest.approx(0.25) and q.eps_high is None
    assert q.mean_per_cell == pytest.approx(0.1875 / 30)


def test_perfect_estimate():
    v = quantize(np.random.default_rng(0).random(SPEC.shape))
    q = quality(pog(v), pog(v))
    assert (q.eps, q.K) == (0.0, 0)
    assert all(q.category(c) in (0.0, None) for c in ("low", "med", "high"))


def test_same_support_different_values_falls_back_to_union():
    est, tru = np.zeros(SPEC.shape), np.zeros(SPEC.shape)
    est[0, 0], tru[0, 0] = 0.5, 0.75
    q = quality(pog(est), pog(tru))
    assert q.K == 0 and q.eps == pytest.approx(0.25)


def test_road_cells_excluded():
    est, tru = np.zeros(SPEC.shape), np.zeros(SPEC.shape)
    est[0, :] = tru[0, :] = 1.0
    est[3, 3] = 0.25
    road = np.zeros(SPEC.shape, bool)
    road[0, :] = True
    with_road = quality(pog(est), pog(tru), road_cells=road)
    assert with_road.K == 1 and with_road.eps == pytest.approx(0.25)
    assert with_road.eps_high is None


@settings(max_examples=100, deadline=None)
@given(arrays(float, (4, 4), elements=st.sampled_from(QSET)), arrays(float, (4, 4), elements=st.sampled_from(QSET)),
       st.integers(1, 20))
def test_eps_invariant_under_zero_padding(a, b, pad):
    base = quality(a, b)
    big_a, big_b = np.zeros((4 + pad, 4 + pad)), np.zeros((4 + pad, 4 + pad))
    big_a[:4, :4], big_b[:4, :4] = a, b
    padded = quality(big_a, big_b)
    assert padded.eps == base.eps and padded.K == base.K
    assert (padded.eps_low, padded.eps_med, padded.eps_high) == (base.eps_low, base.eps_med, base.eps_high)
    for c in ("low", "med", "high"):
        e = base.category(c)
        assert e is None or 0.0 <= e <= 1.0
    assert base.eps >= 0.0 and math.isfinite(base.eps)


def test_quality_shape_mismatch():
    with pytest.raises(PogridError):
        quality(np.zeros((2, 2)), np.zeros((3, 3)))


def test_aggregate_means_and_histograms():
    est, tru = np.zeros(SPEC.shape), np.zeros(SPEC.shape)
    tru[0, 0], est[0, 0] = 0.25, 0.35
    r1 = quality(est, tru)
    est[0, 0] = 0.45
    r2 = quality(est, tru)
    one = aggregate([r1], 1.0)
    assert (one.eps, one.eps_low, one.eps_high) == (r1.eps, r1.eps_low, None)
    agg = aggregate([r1, r2], 1.0, truths=[tru, tru])
    assert agg.eps_low == pytest.approx(0.15)
    assert agg.pq_counts["0.25"] == 2 and sum(agg.pq_hist) == 2
    assert sum(agg.eps_hist) == 2 and len(agg.eps_hist) == 20
    with pytest.raises(PogridError):
        aggregate([], 1.0)


def test_criticality_examples():
    e, o = np.zeros(SPEC.shape), np.zeros(SPEC.shape)
    e[2, 3], o[2, 3] = 0.5, 0.75
    e[0, 0] = 1.0
    rep = criticality([pog(e)], [pog(o)])
    assert rep.total == 0.375 and rep.argmax == ((2, 3),)
    disjoint = np.zeros(SPEC.shape)
    disjoint[5, 4] = 1.0
    assert criticality([pog(e), pog(e, 2.0)], [pog(disjoint), pog(disjoint, 2.0)]).per_instance == (0.0, 0.0)


def test_criticality_errors():
    z = np.zeros(SPEC.shape)
    with pytest.raises(PogridError):
        criticality([pog(z)], [pog(z, 2.0)])
    with pytest.raises(PogridError):
        criticality([pog(z)], [pog(np.zeros((2, 2)), spec=GridSpec(0, 0, 1, 1, 2, 2))])
    with pytest.raises(PogridError):
        criticality([], [])


def random_stack(rng, times=(0.5, 1.0, 2.0)):
    return [pog(rng.random(SPEC.shape) * (rng.random(SPEC.shape) < 0.4), t) for t in times]


def test_criticality_oracle_and_monotone():
    rng = np.random.default_rng(3)
    for _ in range(30):
        e, o = random_stack(rng), random_stack(rng)
        rep = criticality(e, o)
        per, total = criticality_bruteforce([g.values.tolist() for g in e], [g.values.tolist() for g in o])
        assert list(rep.per_instance) == per and rep.total == total
        assert 0.0 <= rep.total <= 1.0
        bumped = [pog(np.minimum(1.0, g.values + rng.random(SPEC.shape) * 0.2), g.t_pred) for g in o]
        assert criticality(e, bumped).total >= rep.total
