"""Calendar-month arithmetic on YYYY-MM labels.

Months are handled as integer indices (year * 12 + month - 1) so that
differences and ranges are plain integer arithmetic.
"""

from __future__ import annotations

from datetime import date


def month_index(label: str) -> int:
    """Convert a YYYY-MM label to a month index."""
    if len(label) != 7 or label[4] != "-":
        raise ValueError(f"bad month {label!r}: expected YYYY-MM")
    try:
        year = int(label[:4])
        month = int(label[5:])
    except ValueError:
        raise ValueError(f"bad month {label!r}: expected YYYY-MM") from None
    if not 1 <= month <= 12:
        raise ValueError(f"bad month {label!r}: month out of range")
    return year * 12 + month - 1


def month_label(index: int) -> str:
    """Convert a month index back to its YYYY-MM label."""
    year, month = divmod(index, 12)
    return f"{year:04d}-{month + 1:02d}"


def month_of(d: date) -> int:
    """Month index containing the given date."""
    return d.year * 12 + d.month - 1
