import numpy as np
import pytest

from costdriver.impact import (
    ImpactConfig,
    decompose_price_utilization,
    decompose_utilization,
    ewa,
    impact_breakdown,
    impact_total,
)
from costdriver.testkit import (
    build_uptake_fixture,
    ewa_direct,
    utilization_split_by_definition,
)

CFG = ImpactConfig(w=0.5, periods_per_year=4)


def test_ewa_constant_series():
    assert ewa([5.0] * 7, 0.3) == pytest.approx(5.0, abs=1e-12)


def test_ewa_two_values_hand_computed():
    assert ewa([1.0, 3.0], 0.5) == pytest.approx(7.0 / 3.0, abs=1e-12)


def test_ewa_single_value_any_weight():
    for w in (0.1, 0.5, 0.9):
        assert ewa([2.5], w) == 2.5


def test_ewa_errors():
    with pytest.raises(ValueError, match="empty"):
        ewa([], 0.5)
    with pytest.raises(ValueError, match="missing"):
        ewa([np.nan, np.nan], 0.5)
    with pytest.raises(ValueError, match="w must"):
        ewa([1.0], 1.0)


def test_ewa_missing_values_renormalize():
    # Positions keep their weights: (w^2, w, 1) with the middle term dropped.
    value = ewa([1.0, np.nan, 3.0], 0.5)
    assert value == pytest.approx((0.25 * 1.0 + 1.0 * 3.0) / 1.25, abs=1e-12)


def test_ewa_linearity(rng):
    for _ in range(100):
        n = int(rng.integers(1, 12))
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        alpha, beta = rng.normal(size=2)
        w = float(rng.uniform(0.05, 0.95))
        lhs = ewa(alpha * x + beta * y, w)
        rhs = alpha * ewa(x, w) + beta * ewa(y, w)
        assert lhs == pytest.approx(rhs, abs=1e-12)


def test_ewa_matches_direct_transcription(rng):
    for _ in range(500):
        n = int(rng.integers(1, 20))
        values = rng.normal(size=n)
        w = float(rng.uniform(0.05, 0.95))
        assert ewa(values, w) == pytest.approx(ewa_direct(list(values), w), rel=1e-12, abs=1e-12)


def test_impact_total_no_change_is_zero():
    s = np.tile([3.0, 4.0, 5.0, 6.0], 2)
    assert impact_total(s, CFG) == pytest.approx(0.0, abs=1e-12)


def test_impact_total_linear_trend():
    s = np.arange(1.0, 13.0)
    for w in (0.2, 0.5, 0.8):
        cfg = ImpactConfig(w=w, periods_per_year=4)
        assert impact_total(s, cfg) == pytest.approx(4.0, abs=1e-12)


def test_impact_total_needs_a_yoy_lag():
    with pytest.raises(ValueError, match="periods"):
        impact_total(np.ones(4), CFG)


def test_price_frozen_makes_price_component_vanish():
    a = np.full(8, 2.0)
    e = np.array([1.0, 1.0, 1.0, 1.0, 1.5, 1.6, 1.7, 1.8])
    i_price, i_util, delta1 = decompose_price_utilization(a, e, CFG)
    total = impact_total(a * e, CFG)
    assert i_price == pytest.approx(0.0, abs=1e-12)
    assert i_util == pytest.approx(total, abs=1e-12)
    assert delta1 == pytest.approx(0.0, abs=1e-12)


def test_utilization_frozen_makes_utilization_component_vanish():
    a = np.array([2.0, 2.0, 2.0, 2.0, 2.4, 2.5, 2.6, 2.7])
    e = np.full(8, 1.5)
    i_price, i_util, _ = decompose_price_utilization(a, e, CFG)
    total = impact_total(a * e, CFG)
    assert i_util == pytest.approx(0.0, abs=1e-12)
    assert i_price == pytest.approx(total, abs=1e-12)


def test_mismatched_lengths_error():
    with pytest.raises(ValueError, match="lengths"):
        decompose_price_utilization(np.ones(8), np.ones(7), CFG)
    with pytest.raises(ValueError, match="lengths"):
        decompose_utilization(np.ones(8), np.ones(8), np.ones(7), np.ones(8), CFG)


def test_only_participation_changes():
    i = np.full(8, 10.0)
    v = np.full(8, 0.05)
    a = np.full(8, 3.0)
    p = np.array([0.2, 0.2, 0.2, 0.2, 0.3, 0.32, 0.34, 0.36])
    i_int, i_part, i_prev, delta2 = decompose_utilization(i, p, v, a, CFG)
    _, i_util, _ = decompose_price_utilization(a, i * p * v, CFG)
    assert i_int == pytest.approx(0.0, abs=1e-12)
    assert i_prev == pytest.approx(0.0, abs=1e-12)
    assert i_part == pytest.approx(i_util, abs=1e-12)
    assert delta2 == pytest.approx(0.0, abs=1e-12)


def _random_panel(rng):
    T = int(rng.choice([2, 4]))
    P = int(rng.integers(T + 2, 25))
    med = lambda: rng.uniform(0.5, 2.0, size=P)
    return med(), med(), rng.uniform(0.01, 0.2, size=P), med(), T


def test_additivity_on_random_panels(rng):
    for _ in range(500):
        a, i, v, p, T = _random_panel(rng)
        w = float(rng.choice([0.3, 0.5, 0.8]))
        cfg = ImpactConfig(w=w, periods_per_year=T)
        b = impact_breakdown(a, i, p, v, cfg)
        scale = max(abs(b.i_total), abs(b.i_price) + abs(b.i_utilization), 1e-9)
        assert abs((b.i_price + b.i_utilization) - b.i_total) <= 1e-9 * scale
        scale2 = max(abs(b.i_utilization),
                     abs(b.i_intensity) + abs(b.i_participation) + abs(b.i_prevalence), 1e-9)
        assert abs((b.i_intensity + b.i_participation + b.i_prevalence) - b.i_utilization) <= 1e-9 * scale2


def test_matches_reference_decomposition(rng):
    for _ in range(1000):
        a, i, v, p, T = _random_panel(rng)
        w = float(rng.uniform(0.1, 0.9))
        cfg = ImpactConfig(w=w, periods_per_year=T)
        b = impact_breakdown(a, i, p, v, cfg)
        ref = utilization_split_by_definition(list(i), list(p), list(v), list(a), T, w)
        for mine, theirs in [
            (b.i_total, ref["i_total"]),
            (b.i_price, ref["i_price"]),
            (b.i_utilization, ref["i_utilization"]),
            (b.delta1, ref["delta1"]),
            (b.i_intensity, ref["i_intensity"]),
            (b.i_participation, ref["i_participation"]),
            (b.i_prevalence, ref["i_prevalence"]),
            (b.delta2, ref["delta2"]),
        ]:
            assert mine == pytest.approx(theirs, rel=1e-12, abs=1e-12)


def test_sign_coherence():
    a = np.array([1.0, 1.1, 1.2, 1.3, 1.5, 1.5, 1.6, 1.9])
    e = np.full(8, 2.0)
    i_price, _, _ = decompose_price_utilization(a, e, CFG)
    assert i_price >= 0.0


def test_missing_periods_drop_jointly_and_stay_additive():
    a = np.array([2.0, 2.0, np.nan, 2.0, 2.2, 2.3, 2.4, 2.5])
    i = np.full(8, 10.0)
    p = np.array([0.2, 0.2, 0.2, 0.2, 0.25, 0.26, 0.27, 0.28])
    v = np.full(8, 0.05)
    b = impact_breakdown(a, i, p, v, CFG)
    assert np.isfinite(b.i_total)
    assert (b.i_price + b.i_utilization) == pytest.approx(b.i_total, abs=1e-15)
    assert (b.i_intensity + b.i_participation + b.i_prevalence) == pytest.approx(
        b.i_utilization, abs=1e-15
    )
    # Dropping the affected pairs changes the estimate, not the identities.
    full = impact_breakdown(np.where(np.isnan(a), 2.0, a), i, p, v, CFG)
    assert b.i_total != pytest.approx(full.i_total, abs=1e-12)


def test_breakdown_with_no_observable_pairs_is_nan():
    a = np.full(8, np.nan)
    b = impact_breakdown(a, np.ones(8), np.ones(8), np.ones(8), CFG)
    assert np.isnan(b.i_total) and np.isnan(b.i_price) and np.isnan(b.delta2)


def test_fixture_target_arithmetic_is_consistent():
    # The fixture targets themselves: the two-way split sums exactly, and the
    # three-way split sums to the utilization figure within rounding.
    assert 0.0098 + 0.0989 == pytest.approx(0.1087, abs=1e-12)
    assert 0.1044 + 0.0073 - 0.0129 == pytest.approx(0.0989, abs=2e-4)


def test_uptake_fixture_reproduces_target_components():
    fx = build_uptake_fixture()
    cfg = ImpactConfig(w=fx["w"], periods_per_year=fx["periods_per_year"])
    b = impact_breakdown(fx["a"], fx["i"], fx["p"], fx["v"], cfg)
    assert b.i_total == pytest.approx(0.1087, abs=1e-4)
    assert b.i_price == pytest.approx(0.0098, abs=1e-4)
    assert b.i_utilization == pytest.approx(0.0989, abs=1e-4)
    assert b.i_participation == pytest.approx(0.1044, abs=1e-4)
    assert b.i_intensity == pytest.approx(0.0073, abs=1e-4)
    assert b.i_prevalence == pytest.approx(-0.0129, abs=1e-4)
    # The fixture's decay weight is immaterial for piecewise-constant years.
    for w in (0.2, 0.8):
        alt = impact_breakdown(fx["a"], fx["i"], fx["p"], fx["v"],
                               ImpactConfig(w=w, periods_per_year=fx["periods_per_year"]))
        assert alt.i_total == pytest.approx(b.i_total, abs=1e-12)
