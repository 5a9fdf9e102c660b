"""Acceptance suite: one test per criterion, each printing a PASS line with
its runtime. Run with `pytest tests/test_acceptance.py -v -s`."""

import time

import numpy as np
import pytest

from test_pipeline import read_rows, tree_bytes, write_config

from costdriver.detect import (
    CusumMode,
    Direction,
    NullKind,
    NullModel,
    ReportingRule,
    cusum,
    CusumConfig,
    decision_statistics,
    learn_threshold,
    _simulation_matrix,
)
from costdriver.impact import ImpactConfig, impact_breakdown
from costdriver.offsets import ComparabilityBasis, OffsetNetwork, compute_migration, offset_cost_impact
from costdriver.patterns import PatternLabel, characterize
from costdriver.pipeline import load_pipeline_config, run_pipeline
from costdriver.testkit import brute_force_migration, build_switch_fixture, build_uptake_fixture

END = ReportingRule.END_OF_WINDOW


def _report(number: int, elapsed: float, message: str) -> None:
    print(f"[acceptance {number}] PASS ({elapsed:.1f}s): {message}")


def test_criterion_1_decomposition_additivity(rng):
    started = time.monotonic()
    for _ in range(1000):
        T = int(rng.choice([2, 4, 12]))
        P = int(rng.integers(max(8, T + 2), 41))
        w = float(rng.choice([0.3, 0.5, 0.8]))
        cfg = ImpactConfig(w=w, periods_per_year=T)
        a = rng.uniform(0.5, 3.0, size=P)
        i = rng.uniform(1.0, 20.0, size=P)
        p = rng.uniform(0.05, 0.6, size=P)
        v = rng.uniform(0.01, 0.2, size=P)
        b = impact_breakdown(a, i, p, v, cfg)
        scale1 = max(abs(b.i_total), abs(b.i_price) + abs(b.i_utilization), 1e-9)
        assert abs((b.i_price + b.i_utilization) - b.i_total) <= 1e-9 * scale1
        parts = b.i_intensity + b.i_participation + b.i_prevalence
        scale2 = max(abs(b.i_utilization),
                     abs(b.i_intensity) + abs(b.i_participation) + abs(b.i_prevalence), 1e-9)
        assert abs(parts - b.i_utilization) <= 1e-9 * scale2
    elapsed = time.monotonic() - started
    assert elapsed < 5.0
    _report(1, elapsed, "both additivity identities hold to 1e-9 on 1000 random panels")


def test_criterion_2_reference_number_fixtures():
    started = time.monotonic()
    fx = build_uptake_fixture()
    cfg = ImpactConfig(w=fx["w"], periods_per_year=fx["periods_per_year"])
    b = impact_breakdown(fx["a"], fx["i"], fx["p"], fx["v"], cfg)
    targets = {
        "i_total": 0.1087,
        "i_price": 0.0098,
        "i_utilization": 0.0989,
        "i_participation": 0.1044,
        "i_intensity": 0.0073,
        "i_prevalence": -0.0129,
    }
    for name, target in targets.items():
        assert getattr(b, name) == pytest.approx(target, abs=1e-4), name

    net, prices, member_months = build_switch_fixture()
    flows = compute_migration(net)
    pmpm = offset_cost_impact(flows, prices, member_months)
    assert pmpm == pytest.approx(0.2720, abs=1e-4)
    elapsed = time.monotonic() - started
    assert elapsed < 1.0
    _report(2, elapsed, "uptake fixture hits all six components; switch fixture hits 0.2720 PMPM")


@pytest.mark.parametrize("model", [
    NullModel(NullKind.WHITE_NOISE, sigma=1.0),
    NullModel(NullKind.AR1, sigma=1.0, phi=0.5),
])
def test_criterion_3_threshold_calibration(model):
    started = time.monotonic()
    trials = np.arange(0.25, 14.0, 0.25)
    search = learn_threshold(
        model, k=0.5, length=8, target_far=0.05, trial_thresholds=trials,
        n_sims=5000, seed=404, reporting_rule=END, direction=Direction.UP,
    )
    fresh = _simulation_matrix(model, 8, 10_000, seed=90_001)
    stats = decision_statistics(fresh, 0.5, END, CusumMode.NON_RESTARTING, Direction.UP)
    far = float((stats > search.threshold).mean())
    elapsed = time.monotonic() - started
    assert 0.035 <= far <= 0.065, (model.kind, far)
    assert elapsed < 60.0
    _report(3, elapsed, f"{model.kind.value}: learned h={search.threshold:.2f}, independent FAR={far:.4f}")


def test_criterion_4_detection_power():
    started = time.monotonic()
    model = NullModel(NullKind.WHITE_NOISE, sigma=1.0)
    trials = np.arange(0.25, 14.0, 0.25)
    search = learn_threshold(
        model, k=0.5, length=8, target_far=0.05, trial_thresholds=trials,
        n_sims=5000, seed=505, reporting_rule=END, direction=Direction.UP,
    )
    config = CusumConfig(h_high=search.threshold, h_low=search.threshold, k=0.5, reporting_rule=END)

    shifted = _simulation_matrix(model, 8, 1000, seed=91_001)
    shifted[:, 4:] += 5.0  # sustained five-sigma year-over-year shift at mid-window
    flagged = sum(cusum(shifted[row], config).flagged_up for row in range(1000))
    power = flagged / 1000.0

    null = _simulation_matrix(model, 8, 10_000, seed=92_001)
    null_stats = decision_statistics(null, 0.5, END, CusumMode.NON_RESTARTING, Direction.UP)
    null_rate = float((null_stats > search.threshold).mean())

    elapsed = time.monotonic() - started
    assert power >= 0.99, power
    assert null_rate <= 0.065, null_rate
    assert elapsed < 30.0
    _report(4, elapsed, f"power={power:.3f} at h={search.threshold:.2f}, null flag rate={null_rate:.4f}")


def test_criterion_5_migration_feasibility_and_conservation(rng):
    started = time.monotonic()
    for trial in range(1000):
        n_o = int(rng.integers(1, 7))
        n_r = int(rng.integers(1, 7))
        outflow = rng.uniform(0.1, 10.0, size=n_o)
        inflow = rng.uniform(0.1, 10.0, size=n_r)
        complete = trial % 2 == 0
        edges = []
        for _ in range(n_o):
            if complete:
                edges.append(tuple(f"R{j}" for j in range(n_r)))
            else:
                count = int(rng.integers(1, n_r + 1))
                picked = sorted(rng.choice(n_r, size=count, replace=False).tolist())
                edges.append(tuple(f"R{j}" for j in picked))
        net = OffsetNetwork(
            "n", "w", "C", ComparabilityBasis.THERAPEUTIC_CLASS,
            tuple(f"O{i}" for i in range(n_o)), tuple(map(float, outflow)),
            tuple(f"R{j}" for j in range(n_r)), tuple(map(float, inflow)),
            tuple(edges),
        )
        flows = compute_migration(net)
        out_cap = dict(zip(net.originators, net.outflow_capacity))
        in_cap = dict(zip(net.receivers, net.inflow_capacity))
        for name, value in flows.outflows.items():
            assert 0.0 <= value <= out_cap[name] * (1 + 1e-9)
        for name, value in flows.inflows.items():
            assert value <= in_cap[name] * (1 + 1e-9)
        assert sum(flows.outflows.values()) == pytest.approx(flows.total_migration, rel=1e-9)
        assert sum(flows.inflows.values()) == pytest.approx(flows.total_migration, rel=1e-9)

        bound = brute_force_migration(net, grid_resolution=max(outflow.sum() / 37.0, 1e-3))
        assert flows.total_migration <= bound * (1 + 1e-9)
        if complete:
            expected = min(outflow.sum(), inflow.sum())
            assert flows.total_migration == pytest.approx(expected, rel=1e-9)
            assert bound == pytest.approx(expected, rel=1e-9)
    elapsed = time.monotonic() - started
    assert elapsed < 10.0
    _report(5, elapsed, "flows feasible and conservative on 1000 random networks; closed form matches brute force")


def test_criterion_6_pattern_table():
    started = time.monotonic()
    up, down, none = Direction.UP, Direction.DOWN, Direction.NONE
    table = {
        (up, none): PatternLabel.EMERGING_GROWTH,
        (down, none): PatternLabel.EMERGING_DECLINE,
        (up, up): PatternLabel.PERSISTENT_GROWTH,
        (down, down): PatternLabel.PERSISTENT_DECLINE,
        (none, up): PatternLabel.STABILIZING_GROWTH,
        (none, down): PatternLabel.STABILIZING_DECLINE,
        (none, none): PatternLabel.NO_CHANGE,
        (up, down): PatternLabel.MIXED,
        (down, up): PatternLabel.MIXED,
    }
    for short in Direction:
        for long in Direction:
            assert characterize(short, long) == table[(short, long)]
    elapsed = time.monotonic() - started
    _report(6, elapsed, "all nine cells reproduce the profiling table plus NO_CHANGE/MIXED")


def _ground_truth_scenario() -> dict:
    return {
        "n_enrollees": 10_000,
        "months": {"start": "2012-01", "end": "2016-12"},
        "seed": 29,
        "encounter_price": 50.0,
        "payment_lag_mean_days": 10.0,
        "conditions": [
            {
                "name": "HYPERLIPIDEMIA",
                "prevalence": 0.06,
                "treatments": [
                    {"name": "ATORVASTATIN", "claim_type": "RX", "therapeutic_class": "STATIN",
                     "participation": 0.30, "intensity": 30.0, "unit_price": 0.25},
                    {"name": "ROSUVASTATIN", "claim_type": "RX", "therapeutic_class": "STATIN",
                     "participation": 0.15, "intensity": 30.0, "unit_price": 2.40},
                ],
            },
            {
                "name": "MDD",
                "prevalence": 0.08,
                "treatments": [
                    {"name": "SERTRALINE", "claim_type": "RX", "therapeutic_class": "SSRI",
                     "participation": 0.35, "intensity": 30.0, "unit_price": 0.20},
                    {"name": "VENLAFAXINE_XR", "claim_type": "RX", "therapeutic_class": "SNRI",
                     "participation": 0.12, "intensity": 30.0, "unit_price": 2.00},
                ],
            },
            {
                "name": "T2D",
                "prevalence": 0.05,
                "treatments": [
                    {"name": "METFORMIN_HCL", "claim_type": "RX", "therapeutic_class": "BIGUANIDE",
                     "participation": 0.30, "intensity": 40.0, "unit_price": 0.04},
                    {"name": "JANUMET", "claim_type": "RX", "therapeutic_class": "BIGUANIDE",
                     "participation": 0.06, "intensity": 30.0, "unit_price": 1.40},
                    {"name": "GLUMETZA", "claim_type": "RX", "therapeutic_class": "BIGUANIDE",
                     "participation": 0.03, "intensity": 30.0, "unit_price": 2.00},
                    {"name": "TRULICITY", "claim_type": "RX", "therapeutic_class": "GLP1",
                     "participation": 0.015, "intensity": 4.0, "unit_price": 60.0},
                ],
            },
        ],
        "injections": [
            {"condition": "HYPERLIPIDEMIA", "treatment": "ROSUVASTATIN", "component": "unit_price",
             "onset": "2016-01", "shape": "STEP", "magnitude": 0.5},
            {"condition": "MDD", "treatment": "VENLAFAXINE_XR", "component": "participation",
             "onset": "2015-01", "shape": "RAMP", "magnitude": 1.0},
        ],
        "offset_scripts": [
            {"condition": "T2D", "from_treatment": "METFORMIN_HCL", "to_treatment": "JANUMET",
             "onset": "2015-10", "monthly_switch_fraction": 0.01}
        ],
    }


GT_KB = (
    "group_id,condition,basis,members,allowed_pairs\n"
    "T2D-ANTIDIABETICS,T2D,THERAPEUTIC_CLASS,METFORMIN_HCL;JANUMET;GLUMETZA;TRULICITY,\n"
    "STATINS,HYPERLIPIDEMIA,THERAPEUTIC_CLASS,ATORVASTATIN;ROSUVASTATIN,\n"
)


def test_criterion_7_end_to_end_ground_truth(tmp_path):
    started = time.monotonic()
    config_path = write_config(
        tmp_path,
        scenario=_ground_truth_scenario(),
        min_support=10,
        n_sims=3000,
        windows={
            "short": {"horizon_months": 24, "resolution_months": 3, "end_month": "2016-12"},
            "long": {"horizon_months": 60, "resolution_months": 6, "end_month": "2016-12"},
        },
    )
    (tmp_path / "kb.csv").write_text(GT_KB)
    cfg = load_pipeline_config(config_path)
    run_pipeline(cfg)

    drivers = read_rows(cfg.out_dir / "drivers.csv")
    top3 = [row["path"] for row in drivers[:3]]
    rosuva = next(r for r in drivers if r["path"].endswith("drug_name=ROSUVASTATIN"))
    venla = next(r for r in drivers if r["path"].endswith("drug_name=VENLAFAXINE_XR"))
    assert rosuva["path"] in top3, top3
    assert venla["path"] in top3, top3

    def shares(row):
        total = abs(float(row["i_total_pmpm"]))
        return {
            name: abs(float(row[f"i_{name}_pmpm"])) / total
            for name in ("price", "intensity", "participation", "prevalence")
        }

    rosuva_shares = shares(rosuva)
    assert rosuva_shares["price"] >= 0.60, rosuva_shares
    assert max(rosuva_shares, key=rosuva_shares.get) == "price"
    venla_shares = shares(venla)
    assert venla_shares["participation"] >= 0.60, venla_shares
    assert max(venla_shares, key=venla_shares.get) == "participation"

    flows = read_rows(cfg.out_dir / "offset_flows.csv")
    scripted = [
        row for row in flows
        if row["from_treatment"] == "METFORMIN_HCL" and row["to_treatment"] == "JANUMET"
    ]
    assert scripted and float(scripted[0]["flow"]) > 0
    networks = {row["network_id"]: row for row in read_rows(cfg.out_dir / "offset_networks.csv")}
    impact_pmpm = float(networks[scripted[0]["network_id"]]["pmpm_impact"])
    assert impact_pmpm > 0  # switch moved volume toward the costlier drug

    elapsed = time.monotonic() - started
    assert elapsed < 120.0
    _report(7, elapsed, f"top3={top3[:2]}..., offset flow={float(scripted[0]['flow']):.1f}, "
                        f"offset impact={impact_pmpm:+.4f} PMPM")


def test_criterion_8_pipeline_determinism(tmp_path):
    started = time.monotonic()
    config_path = write_config(tmp_path)
    for out in ("run_a", "run_b"):
        cfg = load_pipeline_config(config_path, out_override=tmp_path / out)
        run_pipeline(cfg)
    a = tree_bytes(tmp_path / "run_a")
    b = tree_bytes(tmp_path / "run_b")
    assert a.keys() == b.keys()
    assert all(a[name] == b[name] for name in a)
    elapsed = time.monotonic() - started
    _report(8, elapsed, f"{len(a)} output files byte-identical across two seeded runs")
