"""Batch pipeline: generate or ingest claims, aggregate drill-path panels,
detect changes, decompose impacts, identify offsets, and write the ranked
driver report.

Every stage is a pure function of its input files: it reads the previous
stage's serialized outputs from the output directory and writes its own, so
staged execution over the CLI is byte-identical to a fused run. All floats
serialize in shortest round-trip form and every output is written in a fixed
order, which makes whole output directories reproducible bit for bit under a
fixed seed.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import yaml

from . import plots
from .detect import (
    CusumConfig,
    CusumMode,
    Direction,
    ReportingRule,
    ThresholdSearch,
    cusum,
    fit_null,
    learn_threshold,
)
from .hierarchy import (
    ALL_KPIS,
    DrillPath,
    KpiPanel,
    NormalizedSeries,
    ViewpointSpec,
    WindowSpec,
    build_claims_frame,
    build_member_months,
    build_panels,
    yoy_normalize,
)
from .impact import ImpactConfig, ewa, impact_breakdown
from .offsets import (
    ComparabilityKB,
    TreatmentSignal,
    compute_migration,
    identify_offsets,
    load_kb,
    offset_cost_impact,
)
from .patterns import characterize
from .records import (
    ClaimType,
    EpisodeRuleTable,
    assign_episodes,
    parse_claims,
    parse_enrollment,
    serialize_claims,
    serialize_enrollment,
)
from .synthetic import generate_synthetic, load_scenario

COST_KPI = "cost_per_enrollee"
UTILIZATION_KPI = "quantity_per_enrollee"

CLAIMS_FILE = "claims.csv"
ENROLLMENT_FILE = "enrollment.csv"
GROUND_TRUTH_FILE = "ground_truth.csv"
PANELS_FILE = "panels.csv"
DETECTIONS_FILE = "detections.csv"
THRESHOLDS_FILE = "thresholds.csv"
IMPACTS_FILE = "impacts.csv"
OFFSET_NETWORKS_FILE = "offset_networks.csv"
OFFSET_FLOWS_FILE = "offset_flows.csv"
DRIVERS_FILE = "drivers.csv"


class ConfigError(ValueError):
    """Invalid pipeline configuration (CLI exit status 1)."""


class StageError(RuntimeError):
    """A stage failed; carries the stage tag (CLI exit status 2)."""

    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class DetectionSettings:
    k: float = 0.5
    target_far: float = 0.05  # two-sided; each direction is calibrated at half
    reporting_rule: ReportingRule = ReportingRule.END_OF_WINDOW
    mode: CusumMode = CusumMode.NON_RESTARTING
    n_sims: int = 5000
    trial_start: float = 0.25
    trial_stop: float = 12.0
    trial_step: float = 0.25
    kpis: tuple[str, ...] = (COST_KPI, UTILIZATION_KPI)


@dataclass(frozen=True)
class ImpactSettings:
    w: float = 0.5
    window: str = "short"


@dataclass(frozen=True)
class OffsetSettings:
    window: str = "short"
    capacity_unit: str = "quantity"  # or "claimants"


@dataclass(frozen=True)
class ReportSettings:
    top_figures: int = 6
    include_ancestors: bool = False


@dataclass
class PipelineConfig:
    seed: int
    out_dir: Path
    runout_months: int
    viewpoints: list[ViewpointSpec]
    windows: dict[str, WindowSpec]  # keys: short, long
    detection: DetectionSettings
    impact: ImpactSettings
    offsets: OffsetSettings
    report: ReportSettings
    scenario_path: Path | None = None
    claims_path: Path | None = None
    enrollment_path: Path | None = None
    kb_path: Path | None = None
    episode_rules: EpisodeRuleTable = field(
        default_factory=lambda: EpisodeRuleTable(catch_all="{condition}-{claim_type}-EPISODE")
    )


def load_pipeline_config(
    path: str | Path,
    seed_override: int | None = None,
    out_override: str | Path | None = None,
) -> PipelineConfig:
    """Load and validate the YAML pipeline configuration."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as handle:
        raw = yaml.safe_load(handle)
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    base = path.parent

    def resolve(p: Any) -> Path | None:
        if p is None:
            return None
        p = Path(str(p))
        return p if p.is_absolute() else base / p

    try:
        windows_raw = raw["windows"]
        if not {"short", "long"} <= set(windows_raw):
            raise ConfigError("windows must define both 'short' and 'long'")
        windows = {
            name: WindowSpec(
                name=name,
                horizon_months=int(spec["horizon_months"]),
                resolution_months=int(spec["resolution_months"]),
                end_month=str(spec["end_month"]),
            )
            for name, spec in windows_raw.items()
        }
        viewpoints = [
            ViewpointSpec(
                attributes=tuple(v["attributes"]),
                min_support=int(v.get("min_support", 1)),
            )
            for v in raw["viewpoints"]
        ]
        if not viewpoints:
            raise ConfigError("at least one viewpoint is required")

        det_raw = raw.get("detection", {})
        grid = det_raw.get("trial_grid", {})
        detection = DetectionSettings(
            k=float(det_raw.get("k", 0.5)),
            target_far=float(det_raw.get("target_far", 0.05)),
            reporting_rule=ReportingRule(det_raw.get("reporting_rule", "END_OF_WINDOW")),
            mode=CusumMode(det_raw.get("mode", "NON_RESTARTING")),
            n_sims=int(det_raw.get("n_sims", 5000)),
            trial_start=float(grid.get("start", 0.25)),
            trial_stop=float(grid.get("stop", 12.0)),
            trial_step=float(grid.get("step", 0.25)),
            kpis=tuple(det_raw.get("kpis", [COST_KPI, UTILIZATION_KPI])),
        )
        imp_raw = raw.get("impact", {})
        impact_settings = ImpactSettings(
            w=float(imp_raw.get("w", 0.5)), window=str(imp_raw.get("window", "short"))
        )
        off_raw = raw.get("offsets", {})
        offset_settings = OffsetSettings(
            window=str(off_raw.get("window", "short")),
            capacity_unit=str(off_raw.get("capacity_unit", "quantity")),
        )
        rep_raw = raw.get("report", {})
        report_settings = ReportSettings(
            top_figures=int(rep_raw.get("top_figures", 6)),
            include_ancestors=bool(rep_raw.get("include_ancestors", False)),
        )

        rules_raw = raw.get("episode_rules", {})
        rule_map = {
            (ClaimType(r["claim_type"]), str(r["condition"])): str(r["label"])
            for r in rules_raw.get("rules", [])
        }
        episode_rules = EpisodeRuleTable.from_mapping(
            rule_map, catch_all=str(rules_raw.get("catch_all", "{condition}-{claim_type}-EPISODE"))
        )

        inputs = raw.get("inputs", {}) or {}
        scenario_path = resolve(raw.get("scenario"))
        claims_path = resolve(inputs.get("claims"))
        enrollment_path = resolve(inputs.get("enrollment"))
        kb_path = resolve(inputs.get("knowledge_base"))

        out_dir = Path(out_override) if out_override is not None else resolve(raw.get("out_dir", "out"))
        config = PipelineConfig(
            seed=int(seed_override if seed_override is not None else raw.get("seed", 0)),
            out_dir=out_dir,
            runout_months=int(raw.get("runout_months", 3)),
            viewpoints=viewpoints,
            windows=windows,
            detection=detection,
            impact=impact_settings,
            offsets=offset_settings,
            report=report_settings,
            scenario_path=scenario_path,
            claims_path=claims_path,
            enrollment_path=enrollment_path,
            kb_path=kb_path,
            episode_rules=episode_rules,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc

    if config.scenario_path is None and (config.claims_path is None or config.enrollment_path is None):
        raise ConfigError("config needs either a scenario or both input claims and enrollment paths")
    if config.scenario_path is not None and config.claims_path is not None:
        raise ConfigError("config must not set both a scenario and input claims")
    for name in (config.impact.window, config.offsets.window):
        if name not in config.windows:
            raise ConfigError(f"window {name!r} referenced but not defined")
    if COST_KPI not in config.detection.kpis:
        raise ConfigError(f"detection kpis must include {COST_KPI}")
    unknown = [k for k in config.detection.kpis if k not in ALL_KPIS]
    if unknown:
        raise ConfigError(f"unknown detection kpis: {unknown}")
    return config


# ---------------------------------------------------------------------------
# Serialization helpers
# ---------------------------------------------------------------------------


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def _parse_float(text: str) -> float:
    return float(text) if text != "" else math.nan


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _read_csv(path: Path, stage: str) -> tuple[list[str], list[list[str]]]:
    if not path.exists():
        raise StageError(stage, f"missing upstream file: {path}")
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise StageError(stage, f"upstream file has no header: {path}")
        return header, [row for row in reader if row]


PANEL_COUNT_COLS = ("member_months", "enrollees", "claimants", "patients", "episodes")
PANELS_HEADER = (
    ["window", "path", "depth", "period", "period_start", "period_end"]
    + list(PANEL_COUNT_COLS)
    + [col for kpi in ALL_KPIS for col in (kpi, f"se_{kpi}")]
)


def _panel_rows(window_name: str, panel: KpiPanel) -> Iterable[list[Any]]:
    for per in range(panel.window.periods):
        row: list[Any] = [
            window_name,
            str(panel.path),
            panel.path.depth,
            per + 1,
            panel.window.period_start_label(per),
            panel.window.period_end_label(per),
        ]
        row.extend(float(panel.counts[c][per]) for c in PANEL_COUNT_COLS)
        for kpi in ALL_KPIS:
            values, ses = panel.kpi(kpi)
            row.append(float(values[per]))
            row.append(float(ses[per]))
        yield row


def _read_panels(cfg: PipelineConfig, stage: str) -> dict[str, dict[str, KpiPanel]]:
    """Panels from disk, keyed by window name then path string."""
    header, rows = _read_csv(cfg.out_dir / PANELS_FILE, stage)
    col = {name: idx for idx, name in enumerate(header)}
    grouped: dict[tuple[str, str], list[list[str]]] = {}
    for row in rows:
        grouped.setdefault((row[col["window"]], row[col["path"]]), []).append(row)

    out: dict[str, dict[str, KpiPanel]] = {name: {} for name in cfg.windows}
    for (window_name, path_str), path_rows in grouped.items():
        window = cfg.windows[window_name]
        path_rows.sort(key=lambda r: int(r[col["period"]]))
        if len(path_rows) != window.periods:
            raise StageError(stage, f"panel for {path_str} has {len(path_rows)} periods, expected {window.periods}")
        counts = {
            name: np.array([_parse_float(r[col[name]]) for r in path_rows])
            for name in PANEL_COUNT_COLS
        }
        values = {}
        ses = {}
        for kpi in ALL_KPIS:
            values[kpi] = np.array([_parse_float(r[col[kpi]]) for r in path_rows])
            ses[kpi] = np.array([_parse_float(r[col[f"se_{kpi}"]]) for r in path_rows])
        counts["cost"] = values["cost"].copy()
        counts["quantity"] = values["quantity"].copy()
        out[window_name][path_str] = KpiPanel(
            path=DrillPath.from_string(path_str), window=window, counts=counts, values=values, ses=ses
        )
    return out


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def stage_generate(cfg: PipelineConfig) -> None:
    """Materialize the configured synthetic scenario into claim, enrollment,
    and ground-truth files."""
    if cfg.scenario_path is None:
        raise StageError("generate", "no scenario configured; inputs are external files")
    if not cfg.scenario_path.exists():
        raise StageError("generate", f"missing scenario file: {cfg.scenario_path}")
    scenario = load_scenario(cfg.scenario_path)
    claims, enrollment, truth = generate_synthetic(scenario)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    serialize_claims(claims, cfg.out_dir / CLAIMS_FILE)
    serialize_enrollment(enrollment, cfg.out_dir / ENROLLMENT_FILE)
    rows: list[list[Any]] = []
    for inj in truth.injections:
        rows.append(
            ["INJECTION", inj.condition, inj.treatment or "", "", inj.component.value,
             inj.onset_month, inj.shape.value, inj.magnitude]
        )
    for script in truth.offset_scripts:
        rows.append(
            ["OFFSET_SCRIPT", script.condition, script.from_treatment, script.to_treatment,
             "participation", script.onset_month, "SWITCH", script.monthly_switch_fraction]
        )
    _write_csv(
        cfg.out_dir / GROUND_TRUTH_FILE,
        ["kind", "condition", "treatment", "to_treatment", "component", "onset", "shape", "magnitude"],
        rows,
    )


def _input_files(cfg: PipelineConfig, stage: str) -> tuple[Path, Path]:
    if cfg.scenario_path is not None:
        claims = cfg.out_dir / CLAIMS_FILE
        enrollment = cfg.out_dir / ENROLLMENT_FILE
    else:
        claims = cfg.claims_path  # type: ignore[assignment]
        enrollment = cfg.enrollment_path  # type: ignore[assignment]
    for p in (claims, enrollment):
        if not p.exists():
            raise StageError(stage, f"missing upstream file: {p}")
    return claims, enrollment


def stage_aggregate(cfg: PipelineConfig) -> None:
    """Label claims and build KPI panels for every supported drill path in
    every window."""
    claims_path, enrollment_path = _input_files(cfg, "aggregate")
    claims = parse_claims(claims_path)
    enrollment = parse_enrollment(enrollment_path)
    labels = assign_episodes(claims, cfg.episode_rules)
    frame = build_claims_frame(claims, labels)
    member_months = build_member_months(enrollment)

    rows: list[list[Any]] = []
    for window_name in ("short", "long"):
        window = cfg.windows[window_name]
        merged: dict[str, KpiPanel] = {}
        for viewpoint in cfg.viewpoints:
            panels = build_panels(frame, member_months, viewpoint, window, cfg.runout_months)
            for path, panel in panels.items():
                merged.setdefault(str(path), panel)
        for path_str in sorted(merged):
            rows.extend(_panel_rows(window_name, merged[path_str]))
    _write_csv(cfg.out_dir / PANELS_FILE, PANELS_HEADER, rows)


def _detect_seed(cfg: PipelineConfig, window_idx: int, kpi_idx: int, direction_idx: int) -> int:
    # Fixed strides keep the derived streams distinct and reproducible.
    return cfg.seed * 1_000_003 + window_idx * 1009 + kpi_idx * 101 + direction_idx


def stage_detect(cfg: PipelineConfig) -> None:
    """Fit null models, learn thresholds per window/KPI/direction, and run the
    CUSUM over every path's normalized series."""
    panels = _read_panels(cfg, "detect")
    det = cfg.detection
    threshold_rows: list[list[Any]] = []
    detection_rows: list[list[Any]] = []

    for window_idx, window_name in enumerate(("short", "long")):
        window = cfg.windows[window_name]
        for kpi_idx, kpi in enumerate(det.kpis):
            series: dict[str, NormalizedSeries] = {}
            for path_str in sorted(panels[window_name]):
                z = yoy_normalize(panels[window_name][path_str], kpi)
                if np.isfinite(z.values).any():
                    series[path_str] = z
            fittable = [z for z in series.values() if np.isfinite(z.values).sum() >= 3]
            if not fittable:
                continue
            null = fit_null(fittable)
            scale = null.sigma if null.sigma > 0 else 1.0
            trials = scale * np.arange(det.trial_start, det.trial_stop + det.trial_step / 2, det.trial_step)
            length = window.periods - window.periods_per_year

            searches: dict[Direction, ThresholdSearch] = {}
            for direction_idx, direction in enumerate((Direction.UP, Direction.DOWN)):
                search = learn_threshold(
                    model=null,
                    k=det.k * scale,
                    length=length,
                    target_far=det.target_far / 2.0,
                    trial_thresholds=trials,
                    n_sims=det.n_sims,
                    seed=_detect_seed(cfg, window_idx, kpi_idx, direction_idx),
                    reporting_rule=det.reporting_rule,
                    direction=direction,
                    mode=det.mode,
                )
                searches[direction] = search
                for trial, far in zip(search.trial_thresholds, search.false_alarm_rates):
                    threshold_rows.append(
                        [window_name, kpi, direction.value, float(trial), float(far),
                         search.n_sims, search.seed, trial == search.threshold,
                         null.kind.value, null.sigma, null.phi, search.target_far,
                         search.warning or ""]
                    )

            config = CusumConfig(
                h_high=searches[Direction.UP].threshold,
                h_low=searches[Direction.DOWN].threshold,
                k=det.k * scale,
                reporting_rule=det.reporting_rule,
                mode=det.mode,
            )
            for path_str, z in series.items():
                result = cusum(z, config)
                detection_rows.append(
                    [window_name, kpi, path_str, DrillPath.from_string(path_str).depth,
                     result.direction.value, result.flagged_up, result.flagged_down,
                     result.first_crossing_up, result.first_crossing_down,
                     float(result.upper[-1]), float(result.lower[-1]),
                     float(result.upper.max()), float(result.lower.min()),
                     config.h_high, config.h_low]
                )

    _write_csv(
        cfg.out_dir / THRESHOLDS_FILE,
        ["window", "kpi", "direction", "trial_threshold", "estimated_far", "n_sims", "seed",
         "chosen", "null_kind", "sigma", "phi", "target_far", "warning"],
        threshold_rows,
    )
    _write_csv(
        cfg.out_dir / DETECTIONS_FILE,
        ["window", "kpi", "path", "depth", "direction", "flagged_up", "flagged_down",
         "first_crossing_up", "first_crossing_down", "final_upper", "final_lower",
         "max_upper", "min_lower", "h_high", "h_low"],
        detection_rows,
    )


def stage_impact(cfg: PipelineConfig) -> None:
    """Impact breakdown per (window, path), in per-period and PMPM units."""
    panels = _read_panels(cfg, "impact")
    rows: list[list[Any]] = []
    for window_name in ("short", "long"):
        window = cfg.windows[window_name]
        config = ImpactConfig(w=cfg.impact.w, periods_per_year=window.periods_per_year)
        per_month = 1.0 / window.resolution_months
        for path_str in sorted(panels[window_name]):
            panel = panels[window_name][path_str]
            breakdown = impact_breakdown(
                panel.values["unit_price"],
                panel.values["intensity"],
                panel.values["participation"],
                panel.values["prevalence"],
                config,
            )
            rows.append(
                [window_name, path_str, panel.path.depth,
                 breakdown.i_total, breakdown.i_price, breakdown.i_utilization, breakdown.delta1,
                 breakdown.i_intensity, breakdown.i_participation, breakdown.i_prevalence, breakdown.delta2,
                 breakdown.i_total * per_month, breakdown.i_price * per_month,
                 breakdown.i_utilization * per_month, breakdown.i_intensity * per_month,
                 breakdown.i_participation * per_month, breakdown.i_prevalence * per_month,
                 breakdown.delta1 * per_month, breakdown.delta2 * per_month]
            )
    _write_csv(
        cfg.out_dir / IMPACTS_FILE,
        ["window", "path", "depth",
         "i_total", "i_price", "i_utilization", "delta1",
         "i_intensity", "i_participation", "i_prevalence", "delta2",
         "i_total_pmpm", "i_price_pmpm", "i_utilization_pmpm", "i_intensity_pmpm",
         "i_participation_pmpm", "i_prevalence_pmpm", "delta1_pmpm", "delta2_pmpm"],
        rows,
    )


def _treatment_paths(panels: dict[str, KpiPanel], condition: str, member: str) -> KpiPanel | None:
    """Deepest panel whose path sits under the condition and ends in the member."""
    best: KpiPanel | None = None
    for path_str in sorted(panels):
        panel = panels[path_str]
        if panel.path.value_of("condition") != condition:
            continue
        if panel.path.leaf_value != member:
            continue
        if best is None or panel.path.depth > best.path.depth:
            best = panel
    return best


def stage_offsets(cfg: PipelineConfig) -> None:
    """Build offset networks from detections and price their migration flows."""
    network_header = ["window", "network_id", "condition", "basis", "originators", "receivers",
                      "total_outflow_capacity", "total_inflow_capacity", "migrated_volume", "pmpm_impact"]
    flow_header = ["window", "network_id", "from_treatment", "to_treatment", "flow",
                   "origin_capacity", "origin_outflow", "receiver_capacity", "receiver_inflow"]
    if cfg.kb_path is None:
        _write_csv(cfg.out_dir / OFFSET_NETWORKS_FILE, network_header, [])
        _write_csv(cfg.out_dir / OFFSET_FLOWS_FILE, flow_header, [])
        return
    if not cfg.kb_path.exists():
        raise StageError("offsets", f"missing knowledge base file: {cfg.kb_path}")
    kb = load_kb(cfg.kb_path)

    window_name = cfg.offsets.window
    window = cfg.windows[window_name]
    panels = _read_panels(cfg, "offsets")[window_name]
    header, det_rows = _read_csv(cfg.out_dir / DETECTIONS_FILE, "offsets")
    col = {name: idx for idx, name in enumerate(header)}
    direction_by_path = {
        row[col["path"]]: Direction(row[col["direction"]])
        for row in det_rows
        if row[col["window"]] == window_name and row[col["kpi"]] == UTILIZATION_KPI
    }

    T = window.periods_per_year
    capacity_kpi = "quantity" if cfg.offsets.capacity_unit == "quantity" else "claimants"
    w = cfg.impact.w

    signals: dict[str, dict[str, TreatmentSignal]] = {}
    lagged_price: dict[str, dict[str, float]] = {}
    member_months = float(np.nanmean(next(iter(panels.values())).counts["member_months"])) if panels else 0.0
    for group in kb.groups:
        for member in group.members:
            panel = _treatment_paths(panels, group.condition, member)
            if panel is None:
                continue
            series = panel.values[capacity_kpi] if capacity_kpi in panel.values else panel.counts[capacity_kpi]
            delta = series[T:] - series[:-T]
            if not np.isfinite(delta).any():
                continue
            signals.setdefault(group.condition, {})[member] = TreatmentSignal(
                direction=direction_by_path.get(str(panel.path), Direction.NONE),
                yoy_quantity_ewa=ewa(delta, w),
            )
            prices = panel.values["unit_price"][:T]
            lagged = float(np.nanmean(prices)) if np.isfinite(prices).any() else math.nan
            lagged_price.setdefault(group.condition, {})[member] = lagged

    network_rows: list[list[Any]] = []
    flow_rows: list[list[Any]] = []
    for group in kb.groups:
        group_kb = ComparabilityKB(groups=[group])
        networks = identify_offsets(signals.get(group.condition, {}), group_kb, window_name)
        for net in networks:
            flows = compute_migration(net)
            prices = lagged_price.get(group.condition, {})
            for name in (*net.originators, *net.receivers):
                if not math.isfinite(prices.get(name, math.nan)):
                    raise StageError("offsets", f"no lagged-year unit price for treatment {name}")
            impact_pmpm = offset_cost_impact(flows, prices, member_months)
            network_rows.append(
                [window_name, net.network_id, net.condition, net.basis.value,
                 ";".join(net.originators), ";".join(net.receivers),
                 sum(net.outflow_capacity), sum(net.inflow_capacity),
                 flows.total_migration, impact_pmpm]
            )
            origin_capacity = dict(zip(net.originators, net.outflow_capacity))
            receiver_capacity = dict(zip(net.receivers, net.inflow_capacity))
            for (src, dst), flow in sorted(flows.flows.items()):
                flow_rows.append(
                    [window_name, net.network_id, src, dst, flow,
                     origin_capacity[src], flows.outflows[src],
                     receiver_capacity[dst], flows.inflows[dst]]
                )
    _write_csv(cfg.out_dir / OFFSET_NETWORKS_FILE, network_header, network_rows)
    _write_csv(cfg.out_dir / OFFSET_FLOWS_FILE, flow_header, flow_rows)


def _slug(rank: int, path_str: str) -> str:
    text = re.sub(r"[^A-Za-z0-9]+", "_", path_str).strip("_")
    return f"{rank:03d}_{text[:60]}"


def stage_report(cfg: PipelineConfig) -> None:
    """Rank drivers, join detections/patterns/offsets, and emit plot data plus
    rendered figures for the top paths."""
    out = cfg.out_dir
    impact_window = cfg.impact.window
    header, impact_rows = _read_csv(out / IMPACTS_FILE, "report")
    icol = {name: idx for idx, name in enumerate(header)}
    impacts = {
        row[icol["path"]]: row
        for row in impact_rows
        if row[icol["window"]] == impact_window
    }

    header, det_rows = _read_csv(out / DETECTIONS_FILE, "report")
    dcol = {name: idx for idx, name in enumerate(header)}
    directions: dict[tuple[str, str], Direction] = {}
    for row in det_rows:
        if row[dcol["kpi"]] == COST_KPI:
            directions[(row[dcol["window"]], row[dcol["path"]])] = Direction(row[dcol["direction"]])

    header, net_rows = _read_csv(out / OFFSET_NETWORKS_FILE, "report")
    ncol = {name: idx for idx, name in enumerate(header)}
    network_by_member: dict[str, list[str]] = {}
    for row in net_rows:
        for member in row[ncol["originators"]].split(";") + row[ncol["receivers"]].split(";"):
            network_by_member.setdefault(member, []).append(row[ncol["network_id"]])

    paths = [DrillPath.from_string(p) for p in impacts]
    maximal = set()
    for p in paths:
        if not any(q.extends(p) for q in paths):
            maximal.add(str(p))

    entries = []
    for path_str, row in impacts.items():
        if not cfg.report.include_ancestors and path_str not in maximal:
            continue
        path = DrillPath.from_string(path_str)
        short_dir = directions.get(("short", path_str), Direction.NONE)
        long_dir = directions.get(("long", path_str), Direction.NONE)
        pmpm = {name: _parse_float(row[icol[name]]) for name in (
            "i_total_pmpm", "i_price_pmpm", "i_utilization_pmpm", "i_intensity_pmpm",
            "i_participation_pmpm", "i_prevalence_pmpm", "delta1_pmpm", "delta2_pmpm")}
        score = abs(pmpm["i_total_pmpm"])
        entries.append(
            {
                "path": path_str,
                "depth": path.depth,
                "pattern": characterize(short_dir, long_dir).value,
                "direction_short": short_dir.value,
                "direction_long": long_dir.value,
                **pmpm,
                "offset_network": ";".join(sorted(network_by_member.get(path.leaf_value, []))),
                "rank_score": score,
            }
        )
    entries.sort(key=lambda e: (-(e["rank_score"] if math.isfinite(e["rank_score"]) else -math.inf), e["path"]))

    drivers_header = ["rank", "path", "depth", "pattern", "direction_short", "direction_long",
                      "i_total_pmpm", "i_price_pmpm", "i_utilization_pmpm", "i_intensity_pmpm",
                      "i_participation_pmpm", "i_prevalence_pmpm", "delta1_pmpm", "delta2_pmpm",
                      "offset_network", "rank_score"]
    _write_csv(
        out / DRIVERS_FILE,
        drivers_header,
        ([rank + 1] + [entry[name] for name in drivers_header[1:]] for rank, entry in enumerate(entries)),
    )

    # Plot data and rendered figures for the top-ranked paths.
    panels = _read_panels(cfg, "report")
    thr_header, thr_rows = _read_csv(out / THRESHOLDS_FILE, "report")
    tcol = {name: idx for idx, name in enumerate(thr_header)}
    chosen: dict[tuple[str, str], dict[str, float]] = {}
    for row in thr_rows:
        if row[tcol["chosen"]] == "true" and row[tcol["kpi"]] == COST_KPI:
            key = (row[tcol["window"]], row[tcol["kpi"]])
            chosen.setdefault(key, {})[row[tcol["direction"]]] = float(row[tcol["trial_threshold"]])
            chosen[key]["k_scaled"] = cfg.detection.k * (
                float(row[tcol["sigma"]]) if float(row[tcol["sigma"]]) > 0 else 1.0
            )

    plot_dir = out / "plotdata"
    figure_dir = out / "figures"
    top = [e for e in entries if math.isfinite(e["rank_score"])][: cfg.report.top_figures]
    for rank, entry in enumerate(top, start=1):
        path_str = entry["path"]
        slug = _slug(rank, path_str)
        panel = panels[impact_window].get(path_str)
        if panel is not None:
            kpi_rows = []
            for per in range(panel.window.periods):
                row = [per + 1, panel.window.period_start_label(per), panel.window.period_end_label(per)]
                for kpi in ALL_KPIS:
                    values, ses = panel.kpi(kpi)
                    row.extend([float(values[per]), float(ses[per])])
                kpi_rows.append(row)
            _write_csv(
                plot_dir / f"kpi_{slug}.csv",
                ["period", "period_start", "period_end"]
                + [c for kpi in ALL_KPIS for c in (kpi, f"se_{kpi}")],
                kpi_rows,
            )
            figure_dir.mkdir(parents=True, exist_ok=True)
            plots.render_kpi_trends(panel, figure_dir / f"kpi_{slug}.png", f"{path_str} [{impact_window}]")

        for window_name in ("short", "long"):
            levels = chosen.get((window_name, COST_KPI))
            wpanel = panels[window_name].get(path_str)
            if levels is None or wpanel is None or "UP" not in levels or "DOWN" not in levels:
                continue
            z = yoy_normalize(wpanel, COST_KPI)
            if not np.isfinite(z.values).any():
                continue
            config = CusumConfig(
                h_high=levels["UP"], h_low=levels["DOWN"], k=levels["k_scaled"],
                reporting_rule=cfg.detection.reporting_rule, mode=cfg.detection.mode,
            )
            result = cusum(z, config)
            _write_csv(
                plot_dir / f"cusum_{slug}_{window_name}.csv",
                ["t", "z", "upper", "lower", "h_high", "h_low"],
                (
                    [t + 1, float(z.values[t]), float(result.upper[t]), float(result.lower[t]),
                     levels["UP"], levels["DOWN"]]
                    for t in range(len(z.values))
                ),
            )
            figure_dir.mkdir(parents=True, exist_ok=True)
            plots.render_cusum(
                result, levels["UP"], levels["DOWN"],
                figure_dir / f"cusum_{slug}_{window_name}.png",
                f"{path_str} [{window_name}]",
            )


_STAGES = {
    "generate": stage_generate,
    "aggregate": stage_aggregate,
    "detect": stage_detect,
    "impact": stage_impact,
    "offsets": stage_offsets,
    "report": stage_report,
}


def run_stage(name: str, cfg: PipelineConfig) -> None:
    """Run one stage with stage-tagged error reporting."""
    try:
        _STAGES[name](cfg)
    except (StageError, ConfigError):
        raise
    except Exception as exc:
        raise StageError(name, str(exc)) from exc


def run_pipeline(cfg: PipelineConfig) -> None:
    """Run every stage in order; equivalent, file for file, to running the
    stage subcommands one after another."""
    stages = ["generate"] if cfg.scenario_path is not None else []
    stages += ["aggregate", "detect", "impact", "offsets", "report"]
    for name in stages:
        run_stage(name, cfg)
