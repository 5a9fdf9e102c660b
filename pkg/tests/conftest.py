"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

from datetime import date, timedelta

import numpy as np
import pytest

from costdriver.hierarchy import (
    ALL_KPIS,
    DrillPath,
    KpiPanel,
    WindowSpec,
    build_claims_frame,
)
from costdriver.records import (
    ClaimRecord,
    ClaimType,
    EnrollmentRecord,
    EpisodeRuleTable,
    assign_episodes,
)


def claim(
    enrollee: str,
    service: str,
    claim_type: ClaimType = ClaimType.RX,
    condition: str = "T2D",
    therapeutic_class: str = "BIGUANIDE",
    drug_name: str = "METFORMIN_HCL",
    procedure: str = "",
    place_of_service: str = "",
    quantity: float = 30.0,
    allowed_amount: float = 12.0,
    lag_days: int = 5,
) -> ClaimRecord:
    service_date = date.fromisoformat(service)
    if claim_type != ClaimType.RX and drug_name == "METFORMIN_HCL":
        drug_name = ""
        procedure = procedure or "EM_VISIT"
        therapeutic_class = ""
    return ClaimRecord(
        enrollee_id=enrollee,
        service_date=service_date,
        paid_date=service_date + timedelta(days=lag_days),
        claim_type=claim_type,
        condition=condition,
        therapeutic_class=therapeutic_class if claim_type == ClaimType.RX else "",
        drug_name=drug_name,
        procedure=procedure,
        place_of_service=place_of_service,
        quantity=quantity,
        allowed_amount=allowed_amount,
    )


def enrollment_rows(n: int, months: list[str]) -> list[EnrollmentRecord]:
    return [
        EnrollmentRecord(f"E{i + 1:06d}", month, True)
        for month in months
        for i in range(n)
    ]


def labeled_frame(claims: list[ClaimRecord]):
    labels = assign_episodes(claims, EpisodeRuleTable())
    return build_claims_frame(claims, labels)


def make_ratio_panel(
    values,
    ses,
    kpi: str = "cost_per_enrollee",
    resolution_months: int = 3,
) -> KpiPanel:
    """Panel carrying one populated KPI, for normalization tests."""
    values = np.asarray(values, dtype=float)
    ses = np.asarray(ses, dtype=float)
    P = len(values)
    window = WindowSpec("test", P * resolution_months, resolution_months, "2016-12")
    vals = {name: np.full(P, np.nan) for name in ALL_KPIS}
    sds = {name: np.full(P, np.nan) for name in ALL_KPIS}
    vals[kpi] = values
    sds[kpi] = ses
    counts = {
        name: np.zeros(P)
        for name in ("cost", "quantity", "claimants", "patients", "enrollees", "episodes", "member_months")
    }
    return KpiPanel(DrillPath((("condition", "X"),)), window, counts, vals, sds)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20160712)
