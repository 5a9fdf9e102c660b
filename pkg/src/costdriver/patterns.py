"""Rule-based change pattern labels from multi-resolution detection outcomes."""

from __future__ import annotations

from enum import Enum

from .detect import Direction


class PatternLabel(str, Enum):
    EMERGING_GROWTH = "EMERGING_GROWTH"
    EMERGING_DECLINE = "EMERGING_DECLINE"
    PERSISTENT_GROWTH = "PERSISTENT_GROWTH"
    PERSISTENT_DECLINE = "PERSISTENT_DECLINE"
    STABILIZING_GROWTH = "STABILIZING_GROWTH"
    STABILIZING_DECLINE = "STABILIZING_DECLINE"
    NO_CHANGE = "NO_CHANGE"
    MIXED = "MIXED"


_RULES: dict[tuple[Direction, Direction], PatternLabel] = {
    (Direction.UP, Direction.NONE): PatternLabel.EMERGING_GROWTH,
    (Direction.DOWN, Direction.NONE): PatternLabel.EMERGING_DECLINE,
    (Direction.UP, Direction.UP): PatternLabel.PERSISTENT_GROWTH,
    (Direction.DOWN, Direction.DOWN): PatternLabel.PERSISTENT_DECLINE,
    (Direction.NONE, Direction.UP): PatternLabel.STABILIZING_GROWTH,
    (Direction.NONE, Direction.DOWN): PatternLabel.STABILIZING_DECLINE,
    (Direction.NONE, Direction.NONE): PatternLabel.NO_CHANGE,
    # Direction reversals between resolutions get flagged for analyst review.
    (Direction.UP, Direction.DOWN): PatternLabel.MIXED,
    (Direction.DOWN, Direction.UP): PatternLabel.MIXED,
}


def characterize(short: Direction, long: Direction) -> PatternLabel:
    """Label the (short-window, long-window) detection outcome pair.

    Total over all nine direction combinations: a change only in the short,
    high-resolution window is emerging; agreement across both windows is
    persistent; a change visible only at the long, low-resolution window is
    stabilizing.
    """
    return _RULES[(Direction(short), Direction(long))]
