"""Claim and enrollment records: input data model, delimited-file IO, and
episode labeling.

File formats (comma-delimited, header required):

  claims:     enrollee_id,service_date,paid_date,claim_type,condition,
              therapeutic_class,drug_name,procedure,place_of_service,
              quantity,allowed_amount
  enrollment: enrollee_id,month,enrolled

Dates are ISO-8601 (YYYY-MM-DD); months are YYYY-MM. ``allowed_amount`` may
be negative (adjustments and reversals are retained, not dropped). String
fields may be empty where the claim type makes them inapplicable: pharmacy
claims carry ``therapeutic_class``/``drug_name`` and leave ``procedure``
empty; medical claims do the reverse.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

from .months import month_index


class ParseError(ValueError):
    """Malformed input row; the message names the line and offending field."""


class ClaimType(str, Enum):
    RX = "RX"
    INPATIENT = "INPATIENT"
    OUTPATIENT = "OUTPATIENT"


CLAIMS_HEADER = [
    "enrollee_id",
    "service_date",
    "paid_date",
    "claim_type",
    "condition",
    "therapeutic_class",
    "drug_name",
    "procedure",
    "place_of_service",
    "quantity",
    "allowed_amount",
]

ENROLLMENT_HEADER = ["enrollee_id", "month", "enrolled"]


@dataclass(frozen=True, slots=True)
class ClaimRecord:
    enrollee_id: str
    service_date: date
    paid_date: date
    claim_type: ClaimType
    condition: str
    therapeutic_class: str
    drug_name: str
    procedure: str
    place_of_service: str
    quantity: float
    allowed_amount: float

    def __post_init__(self) -> None:
        if self.paid_date < self.service_date:
            raise ValueError("paid_date earlier than service_date")
        if self.quantity < 0:
            raise ValueError("quantity is negative")
        if self.claim_type == ClaimType.RX:
            if self.procedure:
                raise ValueError("procedure must be empty on RX claims")
        elif self.drug_name:
            raise ValueError("drug_name must be empty on medical claims")


@dataclass(frozen=True, slots=True)
class EnrollmentRecord:
    enrollee_id: str
    month: str  # YYYY-MM
    enrolled: bool

    def __post_init__(self) -> None:
        month_index(self.month)  # validates the label


@dataclass(frozen=True, slots=True)
class EpisodeLabel:
    claim_index: int
    event_label: str
    condition: str


def _open_rows(
    source: str | Path | IO[str], delimiter: str = ","
) -> tuple[Iterator[list[str]], IO[str] | None]:
    if isinstance(source, (str, Path)):
        handle: IO[str] = open(source, "r", newline="")
        return csv.reader(handle, delimiter=delimiter), handle
    return csv.reader(source, delimiter=delimiter), None


def _check_header(row: list[str] | None, expected: list[str], what: str) -> None:
    if row is None:
        raise ParseError(f"{what} file is empty: missing header")
    if [c.strip() for c in row] != expected:
        raise ParseError(f"{what} header mismatch: expected {','.join(expected)}")


def parse_claims(source: str | Path | IO[str], delimiter: str = ",") -> list[ClaimRecord]:
    """Parse a claims file into validated records, preserving row order.

    Args:
        source: path or open text stream.
        delimiter: field separator (the shipped files use commas).

    Raises:
        ParseError: on a missing/mismatched header, a malformed field, an
            unknown claim type, or an invariant violation; the message names
            the line number and field.
    """
    rows, handle = _open_rows(source, delimiter)
    try:
        header = next(rows, None)
        _check_header(header, CLAIMS_HEADER, "claims")
        records = []
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(CLAIMS_HEADER):
                raise ParseError(f"claims line {lineno}: expected {len(CLAIMS_HEADER)} fields, got {len(row)}")
            records.append(_claim_from_row(row, lineno))
        return records
    finally:
        if handle is not None:
            handle.close()


def _claim_from_row(row: list[str], lineno: int) -> ClaimRecord:
    def bad(field: str, detail: str) -> ParseError:
        return ParseError(f"claims line {lineno}: bad {field}: {detail}")

    try:
        service = date.fromisoformat(row[1])
    except ValueError:
        raise bad("service_date", row[1]) from None
    try:
        paid = date.fromisoformat(row[2])
    except ValueError:
        raise bad("paid_date", row[2]) from None
    try:
        claim_type = ClaimType(row[3])
    except ValueError:
        raise bad("claim_type", f"unknown value {row[3]!r}") from None
    try:
        quantity = float(row[9])
    except ValueError:
        raise bad("quantity", row[9]) from None
    try:
        amount = float(row[10])
    except ValueError:
        raise bad("allowed_amount", row[10]) from None
    try:
        return ClaimRecord(
            enrollee_id=row[0],
            service_date=service,
            paid_date=paid,
            claim_type=claim_type,
            condition=row[4],
            therapeutic_class=row[5],
            drug_name=row[6],
            procedure=row[7],
            place_of_service=row[8],
            quantity=quantity,
            allowed_amount=amount,
        )
    except ValueError as exc:
        raise ParseError(f"claims line {lineno}: {exc}") from None


def serialize_claims(records: Iterable[ClaimRecord], dest: str | Path | IO[str]) -> None:
    """Write claims as delimited text; floats use shortest round-trip form."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="") as handle:
            serialize_claims(records, handle)
        return
    writer = csv.writer(dest)
    writer.writerow(CLAIMS_HEADER)
    for r in records:
        writer.writerow(
            [
                r.enrollee_id,
                r.service_date.isoformat(),
                r.paid_date.isoformat(),
                r.claim_type.value,
                r.condition,
                r.therapeutic_class,
                r.drug_name,
                r.procedure,
                r.place_of_service,
                repr(r.quantity),
                repr(r.allowed_amount),
            ]
        )


def parse_enrollment(source: str | Path | IO[str]) -> list[EnrollmentRecord]:
    """Parse an enrollment file; rejects duplicate (enrollee, month) rows."""
    rows, handle = _open_rows(source)
    try:
        header = next(rows, None)
        _check_header(header, ENROLLMENT_HEADER, "enrollment")
        records = []
        seen: set[tuple[str, str]] = set()
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"enrollment line {lineno}: expected 3 fields, got {len(row)}")
            flag = row[2].strip().lower()
            if flag not in ("true", "false", "1", "0"):
                raise ParseError(f"enrollment line {lineno}: bad enrolled: {row[2]!r}")
            try:
                record = EnrollmentRecord(row[0], row[1], flag in ("true", "1"))
            except ValueError as exc:
                raise ParseError(f"enrollment line {lineno}: bad month: {exc}") from None
            key = (record.enrollee_id, record.month)
            if key in seen:
                raise ParseError(f"enrollment line {lineno}: duplicate record for {key}")
            seen.add(key)
            records.append(record)
        return records
    finally:
        if handle is not None:
            handle.close()


def serialize_enrollment(records: Iterable[EnrollmentRecord], dest: str | Path | IO[str]) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="") as handle:
            serialize_enrollment(records, handle)
        return
    writer = csv.writer(dest)
    writer.writerow(ENROLLMENT_HEADER)
    for r in records:
        writer.writerow([r.enrollee_id, r.month, "true" if r.enrolled else "false"])


@dataclass(frozen=True)
class EpisodeRuleTable:
    """Declarative episode grouping: exact (claim_type, condition) rules with a
    catch-all. Labels are templates that may reference {condition} and
    {claim_type}."""

    rules: tuple[tuple[tuple[ClaimType, str], str], ...] = ()
    catch_all: str = "UNGROUPED"

    @classmethod
    def from_mapping(
        cls, rules: dict[tuple[ClaimType | str, str], str], catch_all: str = "UNGROUPED"
    ) -> "EpisodeRuleTable":
        normalized = tuple(
            ((ClaimType(ct), cond), label) for (ct, cond), label in sorted(rules.items(), key=lambda kv: (str(kv[0][0]), kv[0][1]))
        )
        return cls(rules=normalized, catch_all=catch_all)

    def label_for(self, claim: ClaimRecord) -> str:
        for (claim_type, condition), template in self.rules:
            if claim.claim_type == claim_type and claim.condition == condition:
                return template.format(condition=claim.condition, claim_type=claim.claim_type.value)
        return self.catch_all.format(condition=claim.condition, claim_type=claim.claim_type.value)


def assign_episodes(claims: Sequence[ClaimRecord], rules: EpisodeRuleTable) -> list[EpisodeLabel]:
    """Assign exactly one event label per claim, deterministically."""
    return [
        EpisodeLabel(claim_index=idx, event_label=rules.label_for(claim), condition=claim.condition)
        for idx, claim in enumerate(claims)
    ]
