"""Seeded synthetic claims scenarios with known ground truth.

A scenario scripts baseline rates per (condition, treatment) and optional
changes: component injections (STEP or RAMP multipliers on unit price,
intensity, participation, or prevalence) and treatment-switch scripts that
move a fraction of an originating treatment's participation to a receiving
treatment each month, cumulatively.

Sampling model, per month and condition:

  patients   ~ Binomial(n_enrollees, prevalence)
  claimants  ~ Binomial(patients, participation)   per treatment
  quantity   = 1 + Poisson(intensity - 1)          per claimant

The shifted Poisson keeps the scripted mean intensity while guaranteeing
every sampled claimant produces a claim row, so expected claimant counts are
exactly n_enrollees * prevalence * participation. Scripted intensities must
therefore be >= 1.

Each patient additionally receives one outpatient management visit per month
(procedure EM_VISIT) so that condition prevalence is observable from claims;
set ``emit_encounters: false`` to suppress this.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, timedelta
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .months import month_index, month_label
from .records import ClaimRecord, ClaimType, EnrollmentRecord


class InjectionShape(str, Enum):
    STEP = "STEP"
    RAMP = "RAMP"


class RateComponent(str, Enum):
    UNIT_PRICE = "unit_price"
    INTENSITY = "intensity"
    PARTICIPATION = "participation"
    PREVALENCE = "prevalence"


@dataclass(frozen=True)
class TreatmentSpec:
    name: str
    claim_type: ClaimType
    participation: float
    intensity: float
    unit_price: float
    therapeutic_class: str = ""
    procedure: str = ""
    place_of_service: str = ""


@dataclass(frozen=True)
class ConditionSpec:
    name: str
    prevalence: float
    treatments: tuple[TreatmentSpec, ...]


@dataclass(frozen=True)
class Injection:
    condition: str
    treatment: str | None  # None targets condition prevalence
    component: RateComponent
    onset_month: str
    shape: InjectionShape
    magnitude: float


@dataclass(frozen=True)
class OffsetScript:
    condition: str
    from_treatment: str
    to_treatment: str
    onset_month: str
    monthly_switch_fraction: float


@dataclass(frozen=True)
class SyntheticScenario:
    n_enrollees: int
    start_month: str
    end_month: str
    conditions: tuple[ConditionSpec, ...]
    injections: tuple[Injection, ...] = ()
    offset_scripts: tuple[OffsetScript, ...] = ()
    seed: int = 0
    encounter_price: float = 150.0
    payment_lag_mean_days: float = 10.0
    emit_encounters: bool = True

    @property
    def month_indices(self) -> range:
        return range(month_index(self.start_month), month_index(self.end_month) + 1)

    def validate(self) -> None:
        if self.n_enrollees <= 0:
            raise ValueError("n_enrollees must be positive")
        start, end = month_index(self.start_month), month_index(self.end_month)
        if start > end:
            raise ValueError("start_month after end_month")
        names = [c.name for c in self.conditions]
        if len(set(names)) != len(names):
            raise ValueError("duplicate condition names")
        by_condition = {c.name: {t.name for t in c.treatments} for c in self.conditions}
        for c in self.conditions:
            if not 0.0 <= c.prevalence <= 1.0:
                raise ValueError(f"prevalence out of [0,1] for {c.name}")
            if len({t.name for t in c.treatments}) != len(c.treatments):
                raise ValueError(f"duplicate treatment names under {c.name}")
        for inj in self.injections:
            if not start <= month_index(inj.onset_month) <= end:
                raise ValueError(f"injection onset {inj.onset_month} outside scenario months")
            if inj.condition not in by_condition:
                raise ValueError(f"injection references unknown condition {inj.condition}")
            if inj.component == RateComponent.PREVALENCE:
                if inj.treatment is not None:
                    raise ValueError("prevalence injections are condition-level; omit treatment")
            elif inj.treatment not in by_condition[inj.condition]:
                raise ValueError(f"injection references unknown treatment {inj.treatment}")
        for script in self.offset_scripts:
            if not start <= month_index(script.onset_month) <= end:
                raise ValueError(f"offset onset {script.onset_month} outside scenario months")
            if not 0.0 <= script.monthly_switch_fraction <= 1.0:
                raise ValueError("monthly_switch_fraction out of [0,1]")
            members = by_condition.get(script.condition)
            if members is None:
                raise ValueError(f"offset script references unknown condition {script.condition}")
            for name in (script.from_treatment, script.to_treatment):
                if name not in members:
                    raise ValueError(f"offset script references unknown treatment {name}")


@dataclass
class GroundTruth:
    """Everything the generator scripted, for downstream verification."""

    injections: tuple[Injection, ...]
    offset_scripts: tuple[OffsetScript, ...]
    months: list[str]
    prevalence: dict[str, np.ndarray]
    participation: dict[tuple[str, str], np.ndarray]
    intensity: dict[tuple[str, str], np.ndarray]
    unit_price: dict[tuple[str, str], np.ndarray]


def _injection_multiplier(inj: Injection, n_months: int, offset: int, last: int) -> np.ndarray:
    onset = month_index(inj.onset_month) - offset
    mult = np.ones(n_months)
    if inj.shape == InjectionShape.STEP:
        mult[onset:] = 1.0 + inj.magnitude
    else:
        span = max(last - onset, 1)
        for m in range(onset, n_months):
            mult[m] = 1.0 + inj.magnitude * min(m - onset, span) / span
    return mult


def build_rate_schedules(scenario: SyntheticScenario) -> GroundTruth:
    """Resolve baselines, injections, and switch scripts into monthly rates."""
    months = list(scenario.month_indices)
    n_months = len(months)
    offset = months[0]
    last = n_months - 1

    prevalence: dict[str, np.ndarray] = {}
    participation: dict[tuple[str, str], np.ndarray] = {}
    intensity: dict[tuple[str, str], np.ndarray] = {}
    unit_price: dict[tuple[str, str], np.ndarray] = {}

    for cond in scenario.conditions:
        prevalence[cond.name] = np.full(n_months, cond.prevalence)
        for t in cond.treatments:
            key = (cond.name, t.name)
            participation[key] = np.full(n_months, t.participation)
            intensity[key] = np.full(n_months, t.intensity)
            unit_price[key] = np.full(n_months, t.unit_price)

    for inj in scenario.injections:
        mult = _injection_multiplier(inj, n_months, offset, last)
        if inj.component == RateComponent.PREVALENCE:
            prevalence[inj.condition] = prevalence[inj.condition] * mult
        else:
            key = (inj.condition, inj.treatment or "")
            table = {
                RateComponent.UNIT_PRICE: unit_price,
                RateComponent.INTENSITY: intensity,
                RateComponent.PARTICIPATION: participation,
            }[inj.component]
            table[key] = table[key] * mult

    for script in scenario.offset_scripts:
        onset = month_index(script.onset_month) - offset
        src = (script.condition, script.from_treatment)
        dst = (script.condition, script.to_treatment)
        steps = np.maximum(np.arange(n_months) - onset + 1, 0)
        retain = (1.0 - script.monthly_switch_fraction) ** steps
        moved = participation[src] * (1.0 - retain)
        participation[dst] = participation[dst] + moved
        participation[src] = participation[src] * retain

    for cond_name, sched in prevalence.items():
        if sched.min() < 0 or sched.max() > 1:
            raise ValueError(f"scripted prevalence for {cond_name} leaves [0,1]")
    for (cond_name, treat), sched in participation.items():
        if sched.min() < 0 or sched.max() > 1:
            raise ValueError(f"scripted participation for {cond_name}/{treat} leaves [0,1]")
    for (cond_name, treat), sched in intensity.items():
        if sched.min() < 1.0:
            raise ValueError(f"scripted intensity for {cond_name}/{treat} drops below 1")
    for (cond_name, treat), sched in unit_price.items():
        if sched.min() < 0:
            raise ValueError(f"scripted unit price for {cond_name}/{treat} is negative")

    return GroundTruth(
        injections=scenario.injections,
        offset_scripts=scenario.offset_scripts,
        months=[month_label(m) for m in months],
        prevalence=prevalence,
        participation=participation,
        intensity=intensity,
        unit_price=unit_price,
    )


def generate_synthetic(
    scenario: SyntheticScenario,
) -> tuple[list[ClaimRecord], list[EnrollmentRecord], GroundTruth]:
    """Draw a full claim and enrollment history for the scenario.

    Identical scenarios (including seed) produce identical output, claim by
    claim. All enrollees are enrolled for every scenario month.
    """
    scenario.validate()
    truth = build_rate_schedules(scenario)
    rng = np.random.default_rng(scenario.seed)
    n = scenario.n_enrollees
    ids = np.array([f"E{i + 1:06d}" for i in range(n)])

    claims: list[ClaimRecord] = []
    for rel, abs_month in enumerate(scenario.month_indices):
        year, month0 = divmod(abs_month, 12)
        for cond in scenario.conditions:
            n_pat = rng.binomial(n, truth.prevalence[cond.name][rel])
            patients = np.sort(rng.choice(n, size=n_pat, replace=False))
            if scenario.emit_encounters and n_pat:
                days = rng.integers(1, 29, size=n_pat)
                lags = rng.exponential(scenario.payment_lag_mean_days, size=n_pat)
                _emit(
                    claims, ids, patients, days, lags, year, month0,
                    claim_type=ClaimType.OUTPATIENT,
                    condition=cond.name,
                    therapeutic_class="",
                    drug_name="",
                    procedure="EM_VISIT",
                    place_of_service="OFFICE",
                    quantities=np.ones(n_pat),
                    prices=np.full(n_pat, scenario.encounter_price),
                )
            for t in cond.treatments:
                key = (cond.name, t.name)
                n_cl = rng.binomial(n_pat, truth.participation[key][rel]) if n_pat else 0
                if not n_cl:
                    continue
                claimants = np.sort(rng.choice(patients, size=n_cl, replace=False))
                quantities = 1.0 + rng.poisson(truth.intensity[key][rel] - 1.0, size=n_cl)
                days = rng.integers(1, 29, size=n_cl)
                lags = rng.exponential(scenario.payment_lag_mean_days, size=n_cl)
                is_rx = t.claim_type == ClaimType.RX
                _emit(
                    claims, ids, claimants, days, lags, year, month0,
                    claim_type=t.claim_type,
                    condition=cond.name,
                    therapeutic_class=t.therapeutic_class if is_rx else "",
                    drug_name=t.name if is_rx else "",
                    procedure="" if is_rx else (t.procedure or t.name),
                    place_of_service=t.place_of_service,
                    quantities=quantities,
                    prices=np.full(n_cl, truth.unit_price[key][rel]),
                )

    enrollment = [
        EnrollmentRecord(enrollee_id=ids[i], month=month_label(m), enrolled=True)
        for m in scenario.month_indices
        for i in range(n)
    ]
    return claims, enrollment, truth


def _emit(
    claims: list[ClaimRecord],
    ids: np.ndarray,
    members: np.ndarray,
    days: np.ndarray,
    lags: np.ndarray,
    year: int,
    month0: int,
    *,
    claim_type: ClaimType,
    condition: str,
    therapeutic_class: str,
    drug_name: str,
    procedure: str,
    place_of_service: str,
    quantities: np.ndarray,
    prices: np.ndarray,
) -> None:
    for j, member in enumerate(members):
        service = date(year, month0 + 1, int(days[j]))
        paid = service + timedelta(days=min(int(lags[j]), 365))
        claims.append(
            ClaimRecord(
                enrollee_id=ids[member],
                service_date=service,
                paid_date=paid,
                claim_type=claim_type,
                condition=condition,
                therapeutic_class=therapeutic_class,
                drug_name=drug_name,
                procedure=procedure,
                place_of_service=place_of_service,
                quantity=float(quantities[j]),
                allowed_amount=float(quantities[j] * prices[j]),
            )
        )


def scenario_from_dict(raw: dict[str, Any]) -> SyntheticScenario:
    """Build a scenario from a parsed configuration tree."""
    try:
        months = raw["months"]
        conditions = tuple(
            ConditionSpec(
                name=c["name"],
                prevalence=float(c["prevalence"]),
                treatments=tuple(
                    TreatmentSpec(
                        name=t["name"],
                        claim_type=ClaimType(t["claim_type"]),
                        participation=float(t["participation"]),
                        intensity=float(t["intensity"]),
                        unit_price=float(t["unit_price"]),
                        therapeutic_class=t.get("therapeutic_class", ""),
                        procedure=t.get("procedure", ""),
                        place_of_service=t.get("place_of_service", ""),
                    )
                    for t in c.get("treatments", [])
                ),
            )
            for c in raw["conditions"]
        )
        injections = tuple(
            Injection(
                condition=i["condition"],
                treatment=i.get("treatment"),
                component=RateComponent(i["component"]),
                onset_month=i["onset"],
                shape=InjectionShape(i["shape"]),
                magnitude=float(i["magnitude"]),
            )
            for i in raw.get("injections", [])
        )
        scripts = tuple(
            OffsetScript(
                condition=s["condition"],
                from_treatment=s["from_treatment"],
                to_treatment=s["to_treatment"],
                onset_month=s["onset"],
                monthly_switch_fraction=float(s["monthly_switch_fraction"]),
            )
            for s in raw.get("offset_scripts", [])
        )
        scenario = SyntheticScenario(
            n_enrollees=int(raw["n_enrollees"]),
            start_month=months["start"],
            end_month=months["end"],
            conditions=conditions,
            injections=injections,
            offset_scripts=scripts,
            seed=int(raw.get("seed", 0)),
            encounter_price=float(raw.get("encounter_price", 150.0)),
            payment_lag_mean_days=float(raw.get("payment_lag_mean_days", 10.0)),
            emit_encounters=bool(raw.get("emit_encounters", True)),
        )
    except KeyError as exc:
        raise ValueError(f"scenario missing required key: {exc}") from None
    scenario.validate()
    return scenario


def load_scenario(path: str | Path) -> SyntheticScenario:
    with open(path) as handle:
        raw = yaml.safe_load(handle)
    if not isinstance(raw, dict):
        raise ValueError(f"scenario file {path} is not a mapping")
    return scenario_from_dict(raw)
