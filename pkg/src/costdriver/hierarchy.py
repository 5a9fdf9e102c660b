"""Viewpoint drill paths and multi-resolution KPI aggregation.

Claims are labeled, mapped onto an ordered attribute hierarchy, and rolled up
into per-period KPI panels for every supported drill path. A panel carries the
raw counts (cost, quantity, claimants, patients, enrollees, episodes), the
derived ratio KPIs, and a standard error per ratio.

Derived KPIs and their keys:

  cost_per_enrollee      s = cost / enrollees
  unit_price             a = cost / quantity
  quantity_per_enrollee  e = quantity / enrollees
  intensity              i = quantity / claimants
  participation          p = claimants / patients
  prevalence             v = patients / enrollees

plus the raw ``cost`` and ``quantity`` sums. Standard errors use the delta
method with independent-Poisson distinct counts and compound-Poisson sums
(per-claim squared amounts/quantities); the SE routine is deliberately a
single replaceable function.

Attribute values that are empty on a claim map to the sentinel ``NA``; node
children that fail the support threshold are pooled into an ``OTHER`` sibling
so that parent/child additivity is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .months import month_index, month_label, month_of
from .records import ClaimRecord, EnrollmentRecord, EpisodeLabel

ATTRIBUTES = (
    "condition",
    "claim_type",
    "therapeutic_class",
    "drug_name",
    "procedure",
    "place_of_service",
)

NA_VALUE = "NA"
OTHER_VALUE = "OTHER"
_KEY_SEP = "\x1f"

RATIO_KPIS = (
    "cost_per_enrollee",
    "unit_price",
    "quantity_per_enrollee",
    "intensity",
    "participation",
    "prevalence",
)
ALL_KPIS = RATIO_KPIS + ("cost", "quantity")


@dataclass(frozen=True)
class ViewpointSpec:
    attributes: tuple[str, ...]
    min_support: int = 1

    def __post_init__(self) -> None:
        if not self.attributes:
            raise ValueError("viewpoint needs at least one attribute")
        if len(set(self.attributes)) != len(self.attributes):
            raise ValueError("viewpoint attributes repeat")
        unknown = [a for a in self.attributes if a not in ATTRIBUTES]
        if unknown:
            raise ValueError(f"unknown viewpoint attributes: {unknown}")
        if self.min_support < 1:
            raise ValueError("min_support must be >= 1")


@dataclass(frozen=True, order=True)
class DrillPath:
    assignments: tuple[tuple[str, str], ...]

    @property
    def values(self) -> tuple[str, ...]:
        return tuple(v for _, v in self.assignments)

    @property
    def depth(self) -> int:
        return len(self.assignments)

    @property
    def leaf_value(self) -> str:
        return self.assignments[-1][1]

    def value_of(self, attribute: str) -> str | None:
        for attr, value in self.assignments:
            if attr == attribute:
                return value
        return None

    def extends(self, other: "DrillPath") -> bool:
        return (
            other.depth < self.depth
            and self.assignments[: other.depth] == other.assignments
        )

    def __str__(self) -> str:
        return "|".join(f"{a}={v}" for a, v in self.assignments)

    @classmethod
    def from_string(cls, text: str) -> "DrillPath":
        parts = []
        for piece in text.split("|"):
            attr, sep, value = piece.partition("=")
            if not sep:
                raise ValueError(f"bad drill path segment {piece!r}")
            parts.append((attr, value))
        return cls(tuple(parts))


@dataclass(frozen=True)
class WindowSpec:
    name: str
    horizon_months: int
    resolution_months: int
    end_month: str

    def __post_init__(self) -> None:
        if self.horizon_months % self.resolution_months != 0:
            raise ValueError("horizon must be divisible by resolution")
        if self.horizon_months < 24:
            raise ValueError("horizon must cover at least two years")
        if 12 % self.resolution_months != 0:
            raise ValueError("resolution must divide 12")
        month_index(self.end_month)

    @property
    def periods(self) -> int:
        return self.horizon_months // self.resolution_months

    @property
    def periods_per_year(self) -> int:
        return 12 // self.resolution_months

    @property
    def end_index(self) -> int:
        return month_index(self.end_month)

    @property
    def start_index(self) -> int:
        return self.end_index - self.horizon_months + 1

    def period_start_label(self, period: int) -> str:
        return month_label(self.start_index + period * self.resolution_months)

    def period_end_label(self, period: int) -> str:
        return month_label(self.start_index + (period + 1) * self.resolution_months - 1)


@dataclass
class KpiPanel:
    path: DrillPath
    window: WindowSpec
    counts: dict[str, np.ndarray]  # cost, quantity, claimants, patients, enrollees, episodes, member_months
    values: dict[str, np.ndarray]  # KPI key -> per-period values (NaN = missing)
    ses: dict[str, np.ndarray]

    def kpi(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name not in self.values:
            raise KeyError(f"unknown KPI {name!r}")
        return self.values[name], self.ses[name]


@dataclass
class NormalizedSeries:
    """Year-over-year KPI changes divided by their standard errors."""

    values: np.ndarray  # length P - T, NaN marks missing periods
    periods_per_year: int


def build_claims_frame(
    claims: Sequence[ClaimRecord], labels: Sequence[EpisodeLabel]
) -> pd.DataFrame:
    """Flatten labeled claims into the columnar form the aggregator uses."""
    if len(claims) != len(labels):
        raise ValueError("one episode label per claim is required")
    data = {
        "enrollee": [c.enrollee_id for c in claims],
        "month": [month_of(c.service_date) for c in claims],
        "lag_months": [month_of(c.paid_date) - month_of(c.service_date) for c in claims],
        "quantity": np.array([c.quantity for c in claims], dtype=float),
        "amount": np.array([c.allowed_amount for c in claims], dtype=float),
        "condition": [c.condition for c in claims],
        "claim_type": [c.claim_type.value for c in claims],
        "therapeutic_class": [c.therapeutic_class for c in claims],
        "drug_name": [c.drug_name for c in claims],
        "procedure": [c.procedure for c in claims],
        "place_of_service": [c.place_of_service for c in claims],
    }
    frame = pd.DataFrame(data)
    frame["amount_sq"] = frame["amount"] ** 2
    frame["quantity_sq"] = frame["quantity"] ** 2
    frame["episode_key"] = [
        f"{c.enrollee_id}{_KEY_SEP}{lb.event_label}" for c, lb in zip(claims, labels)
    ]
    return frame


def build_member_months(enrollment: Iterable[EnrollmentRecord]) -> pd.Series:
    """Member-months per calendar month index."""
    counts: dict[int, int] = {}
    for rec in enrollment:
        if rec.enrolled:
            idx = month_index(rec.month)
            counts[idx] = counts.get(idx, 0) + 1
    return pd.Series(counts, dtype=float).sort_index()


def _window_rows(frame: pd.DataFrame, window: WindowSpec, runout_months: int | None) -> pd.DataFrame:
    mask = (frame["month"] >= window.start_index) & (frame["month"] <= window.end_index)
    if runout_months is not None:
        mask &= frame["lag_months"] <= runout_months
    rows = frame.loc[mask].copy()
    rows["period"] = (rows["month"] - window.start_index) // window.resolution_months
    return rows


def _attr_values(rows: pd.DataFrame, attribute: str) -> pd.Series:
    col = rows[attribute].astype(str)
    return col.where(col != "", NA_VALUE)


def _period_member_months(member_months: pd.Series, window: WindowSpec) -> np.ndarray:
    out = np.zeros(window.periods)
    for period in range(window.periods):
        lo = window.start_index + period * window.resolution_months
        months = range(lo, lo + window.resolution_months)
        out[period] = sum(float(member_months.get(m, 0.0)) for m in months)
    return out


def _ratio(num: np.ndarray, var_num: np.ndarray, den: np.ndarray, var_den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Delta-method ratio and SE; periods with a zero denominator are missing."""
    value = np.full(num.shape, np.nan)
    se = np.full(num.shape, np.nan)
    ok = den > 0
    value[ok] = num[ok] / den[ok]
    se[ok] = np.sqrt(var_num[ok] + value[ok] ** 2 * var_den[ok]) / den[ok]
    return value, se


def _panel_from_counts(
    path: DrillPath,
    window: WindowSpec,
    cost: np.ndarray,
    var_cost: np.ndarray,
    quantity: np.ndarray,
    var_quantity: np.ndarray,
    claimants: np.ndarray,
    patients: np.ndarray,
    episodes: np.ndarray,
    member_months: np.ndarray,
) -> KpiPanel:
    enrollees = member_months / window.resolution_months
    values: dict[str, np.ndarray] = {}
    ses: dict[str, np.ndarray] = {}
    values["cost"], ses["cost"] = cost.copy(), np.sqrt(var_cost)
    values["quantity"], ses["quantity"] = quantity.copy(), np.sqrt(var_quantity)
    values["cost_per_enrollee"], ses["cost_per_enrollee"] = _ratio(cost, var_cost, enrollees, enrollees)
    values["unit_price"], ses["unit_price"] = _ratio(cost, var_cost, quantity, var_quantity)
    values["quantity_per_enrollee"], ses["quantity_per_enrollee"] = _ratio(
        quantity, var_quantity, enrollees, enrollees
    )
    values["intensity"], ses["intensity"] = _ratio(quantity, var_quantity, claimants, claimants)
    values["participation"], ses["participation"] = _ratio(claimants, claimants, patients, patients)
    values["prevalence"], ses["prevalence"] = _ratio(patients, patients, enrollees, enrollees)
    counts = {
        "cost": cost,
        "quantity": quantity,
        "claimants": claimants,
        "patients": patients,
        "enrollees": enrollees,
        "episodes": episodes,
        "member_months": member_months,
    }
    return KpiPanel(path=path, window=window, counts=counts, values=values, ses=ses)


def _patients_by_condition(rows: pd.DataFrame) -> dict[tuple[str, int], int]:
    grouped = rows.groupby(["condition", "period"])["enrollee"].nunique()
    return {(str(cond), int(per)): int(n) for (cond, per), n in grouped.items()}


def _patients_array(
    path: DrillPath,
    claimants: np.ndarray,
    by_condition: Mapping[tuple[str, int], int],
) -> np.ndarray:
    condition = path.value_of("condition")
    if condition is None or condition in (NA_VALUE, OTHER_VALUE):
        return claimants.copy()
    return np.array(
        [float(by_condition.get((condition, per), 0)) for per in range(len(claimants))]
    )


def enumerate_paths(
    frame: pd.DataFrame,
    spec: ViewpointSpec,
    window: WindowSpec,
    runout_months: int | None = None,
) -> list[DrillPath]:
    """Every prefix path whose per-period claimant count reaches min_support in
    at least one period, in lexicographic order. Paths never include the NA or
    OTHER sentinels."""
    rows = _window_rows(frame, window, runout_months)
    paths: list[DrillPath] = []
    for depth in range(1, len(spec.attributes) + 1):
        attrs = spec.attributes[:depth]
        cols = [_attr_values(rows, a).rename(a) for a in attrs]
        grouped = pd.concat(cols + [rows["period"], rows["enrollee"]], axis=1)
        support = grouped.groupby([*attrs, "period"])["enrollee"].nunique()
        if support.empty:
            continue
        node_max = support.groupby(level=list(range(depth))).max()
        for key, value in node_max.items():
            key_tuple = (key,) if depth == 1 else tuple(key)
            if value >= spec.min_support and NA_VALUE not in key_tuple:
                paths.append(DrillPath(tuple(zip(attrs, map(str, key_tuple)))))
    return sorted(paths, key=lambda p: p.values)


def aggregate(
    frame: pd.DataFrame,
    member_months: pd.Series,
    path: DrillPath,
    window: WindowSpec,
    runout_months: int | None = None,
) -> KpiPanel:
    """KPI panel for a single concrete drill path.

    Claims are filtered by the runout window (paid-minus-service lag, in
    months) before any counting so every period is completion-consistent.
    Periods with a zero denominator are marked missing, not errors.
    """
    rows = _window_rows(frame, window, runout_months)
    mask = np.ones(len(rows), dtype=bool)
    for attr, value in path.assignments:
        mask &= (_attr_values(rows, attr) == value).to_numpy()
    node = rows.loc[mask]
    P = window.periods

    cost = np.zeros(P)
    var_cost = np.zeros(P)
    quantity = np.zeros(P)
    var_quantity = np.zeros(P)
    claimants = np.zeros(P)
    episodes = np.zeros(P)
    if len(node):
        sums = node.groupby("period")[["amount", "amount_sq", "quantity", "quantity_sq"]].sum()
        uniq = node.groupby("period").agg(
            claimants=("enrollee", "nunique"), episodes=("episode_key", "nunique")
        )
        for per in sums.index:
            cost[per] = sums.at[per, "amount"]
            var_cost[per] = sums.at[per, "amount_sq"]
            quantity[per] = sums.at[per, "quantity"]
            var_quantity[per] = sums.at[per, "quantity_sq"]
        for per in uniq.index:
            claimants[per] = uniq.at[per, "claimants"]
            episodes[per] = uniq.at[per, "episodes"]

    patients = _patients_array(path, claimants, _patients_by_condition(rows))
    mm = _period_member_months(member_months, window)
    return _panel_from_counts(
        path, window, cost, var_cost, quantity, var_quantity, claimants, patients, episodes, mm
    )


def path_attributes(path: DrillPath) -> tuple[str, ...]:
    return tuple(a for a, _ in path.assignments)


def build_panels(
    frame: pd.DataFrame,
    member_months: pd.Series,
    spec: ViewpointSpec,
    window: WindowSpec,
    runout_months: int | None = None,
) -> dict[DrillPath, KpiPanel]:
    """Panels for every supported path plus OTHER residual buckets.

    Each claim lands in exactly one child bucket of every node it belongs to,
    so a parent's additive measures equal the sum over its children exactly.
    An OTHER bucket only exists where the parent has at least one supported
    child; nodes whose only child value would be NA are left as leaves.
    """
    rows = _window_rows(frame, window, runout_months)
    P = window.periods
    mm = _period_member_months(member_months, window)
    by_condition = _patients_by_condition(rows)

    depth_count = len(spec.attributes)
    value_cols = [_attr_values(rows, a).to_numpy() for a in spec.attributes]

    # Support pass: max per-period distinct claimants for every real-valued node.
    enumerated: list[set[str]] = []
    for depth in range(depth_count):
        attrs = list(spec.attributes[: depth + 1])
        sub = pd.DataFrame({a: value_cols[j] for j, a in enumerate(attrs)})
        sub["period"] = rows["period"].to_numpy()
        sub["enrollee"] = rows["enrollee"].to_numpy()
        support = sub.groupby([*attrs, "period"])["enrollee"].nunique()
        keep: set[str] = set()
        if not support.empty:
            node_max = support.groupby(level=list(range(depth + 1))).max()
            for key, value in node_max.items():
                key_tuple = (key,) if depth == 0 else tuple(key)
                if value >= spec.min_support and NA_VALUE not in key_tuple:
                    keep.add(_KEY_SEP.join(map(str, key_tuple)))
        enumerated.append(keep)

    # Bucket pass: assign each row to one node key per depth (or none).
    node_cols: list[np.ndarray] = []
    parent_keys = np.full(len(rows), "", dtype=object)
    alive = np.ones(len(rows), dtype=bool)
    for depth in range(depth_count):
        parents_with_children = {k.rsplit(_KEY_SEP, 1)[0] if depth else "" for k in enumerated[depth]}
        keys = np.where(
            parent_keys == "", value_cols[depth], parent_keys + _KEY_SEP + value_cols[depth]
        ).astype(object)
        in_enum = pd.Series(keys).isin(enumerated[depth]).to_numpy() & alive
        has_other = alive & ~in_enum & pd.Series(parent_keys).isin(parents_with_children).to_numpy()
        col = np.full(len(rows), None, dtype=object)
        col[in_enum] = keys[in_enum]
        other_keys = np.where(
            parent_keys == "", OTHER_VALUE, parent_keys + _KEY_SEP + OTHER_VALUE
        ).astype(object)
        col[has_other] = other_keys[has_other]
        node_cols.append(col)
        parent_keys = np.where(in_enum, keys, parent_keys)
        alive = in_enum

    panels: dict[DrillPath, KpiPanel] = {}
    for depth in range(depth_count):
        attrs = spec.attributes[: depth + 1]
        col = node_cols[depth]
        present = col != None  # noqa: E711  (elementwise on object array)
        if not present.any():
            continue
        sub = rows.loc[present, ["period", "amount", "amount_sq", "quantity", "quantity_sq", "enrollee", "episode_key"]].copy()
        sub["node"] = col[present]
        sums = sub.groupby(["node", "period"])[["amount", "amount_sq", "quantity", "quantity_sq"]].sum()
        uniq = sub.groupby(["node", "period"]).agg(
            claimants=("enrollee", "nunique"), episodes=("episode_key", "nunique")
        )
        for node_key in sums.index.get_level_values(0).unique():
            values = str(node_key).split(_KEY_SEP)
            path = DrillPath(tuple(zip(attrs, values)))
            cost = np.zeros(P)
            var_cost = np.zeros(P)
            quantity = np.zeros(P)
            var_quantity = np.zeros(P)
            claimants = np.zeros(P)
            episodes = np.zeros(P)
            for per, row in sums.loc[node_key].iterrows():
                cost[per] = row["amount"]
                var_cost[per] = row["amount_sq"]
                quantity[per] = row["quantity"]
                var_quantity[per] = row["quantity_sq"]
            for per, row in uniq.loc[node_key].iterrows():
                claimants[per] = row["claimants"]
                episodes[per] = row["episodes"]
            patients = _patients_array(path, claimants, by_condition)
            panels[path] = _panel_from_counts(
                path, window, cost, var_cost, quantity, var_quantity,
                claimants, patients, episodes, mm,
            )
    return panels


def yoy_normalize(panel: KpiPanel, kpi: str) -> NormalizedSeries:
    """Year-over-year change of a KPI divided by its combined standard error.

    z(t) = [k(t) - k(t-T)] / sqrt(se(t)^2 + se(t-T)^2) for t = T+1..P, where T
    is the number of periods per year. Missing inputs (and zero combined SE)
    propagate as missing.
    """
    window = panel.window
    T, P = window.periods_per_year, window.periods
    if P <= T:
        raise ValueError(f"window has {P} periods; need more than {T} for a YoY lag")
    values, ses = panel.kpi(kpi)
    num = values[T:] - values[:-T]
    den = np.sqrt(ses[T:] ** 2 + ses[:-T] ** 2)
    z = np.full(P - T, np.nan)
    ok = np.isfinite(num) & np.isfinite(den) & (den > 0)
    z[ok] = num[ok] / den[ok]
    return NormalizedSeries(values=z, periods_per_year=T)
