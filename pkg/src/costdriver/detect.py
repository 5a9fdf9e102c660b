"""Enhanced SPC detection over normalized change series.

A two-sided CUSUM accumulates standardized year-over-year changes beyond an
allowance k. The default variant never resets after a threshold crossing, so
the statistic reflects the cumulative effect of change over the whole window;
an auto-reset variant clamps the statistic back to zero after each crossing.

Detection thresholds are not fixed a priori: they are learned by simulating
series under a fitted no-change null model (Gaussian white noise or AR(1))
and picking the trial threshold whose false alarm rate is closest to a
target. Simulations share random draws across trial thresholds, which makes
the estimated false-alarm curve exactly monotone in the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .hierarchy import NormalizedSeries


class Direction(str, Enum):
    UP = "UP"
    DOWN = "DOWN"
    NONE = "NONE"


class ReportingRule(str, Enum):
    ANY_POINT = "ANY_POINT"
    END_OF_WINDOW = "END_OF_WINDOW"


class CusumMode(str, Enum):
    NON_RESTARTING = "NON_RESTARTING"
    AUTO_RESET = "AUTO_RESET"


class NullKind(str, Enum):
    WHITE_NOISE = "WHITE_NOISE"
    AR1 = "AR1"


@dataclass(frozen=True)
class CusumConfig:
    h_high: float
    h_low: float
    k: float = 0.5
    reporting_rule: ReportingRule = ReportingRule.END_OF_WINDOW
    mode: CusumMode = CusumMode.NON_RESTARTING

    def __post_init__(self) -> None:
        if self.h_high <= 0 or self.h_low <= 0:
            raise ValueError("thresholds must be positive")
        if self.k < 0:
            raise ValueError("allowance k must be non-negative")


@dataclass(frozen=True)
class NullModel:
    kind: NullKind
    sigma: float
    phi: float = 0.0

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.kind == NullKind.AR1 and not -1.0 < self.phi < 1.0:
            raise ValueError("AR(1) requires |phi| < 1")


@dataclass
class DetectionResult:
    upper: np.ndarray  # U(t) >= 0
    lower: np.ndarray  # D(t) <= 0
    first_crossing_up: int | None  # 1-based period offsets into the series
    first_crossing_down: int | None
    flagged_up: bool
    flagged_down: bool
    direction: Direction


@dataclass
class ThresholdSearch:
    threshold: float
    trial_thresholds: np.ndarray
    false_alarm_rates: np.ndarray
    target_far: float
    n_sims: int
    seed: int
    direction: Direction
    warning: str | None = None


def _as_values(series: NormalizedSeries | np.ndarray) -> np.ndarray:
    values = series.values if isinstance(series, NormalizedSeries) else np.asarray(series, dtype=float)
    if values.size == 0:
        raise ValueError("empty series")
    if not np.isfinite(values).any():
        raise ValueError("series has no observed values")
    return values


def _trajectories(values: np.ndarray, k: float, mode: CusumMode, h_high: float, h_low: float) -> tuple[np.ndarray, np.ndarray]:
    """CUSUM trajectories; missing values carry the statistic forward."""
    n = len(values)
    upper = np.zeros(n)
    lower = np.zeros(n)
    u = d = 0.0
    for t in range(n):
        z = values[t]
        if np.isfinite(z):
            u = max(0.0, u + z - k)
            d = min(0.0, d + z + k)
        upper[t] = u
        lower[t] = d
        if mode == CusumMode.AUTO_RESET:
            if u > h_high:
                u = 0.0
            if d < -h_low:
                d = 0.0
    return upper, lower


def cusum(series: NormalizedSeries | np.ndarray, config: CusumConfig) -> DetectionResult:
    """Run the two-sided CUSUM and apply the reporting rule.

    Trajectories follow U(t) = max(0, U(t-1) + z(t) - k) and
    D(t) = min(0, D(t-1) + z(t) + k) from U(0) = D(0) = 0. Under ANY_POINT the
    flag raises at the first crossing; under END_OF_WINDOW the non-restarting
    statistic must exceed its threshold at the final period (the auto-reset
    variant instead flags on any crossing in the window). When both sides
    flag, the direction with the larger decision statistic wins; exact ties
    report NONE.
    """
    values = _as_values(series)
    upper, lower = _trajectories(values, config.k, config.mode, config.h_high, config.h_low)

    up_hits = np.nonzero(upper > config.h_high)[0]
    down_hits = np.nonzero(lower < -config.h_low)[0]
    first_up = int(up_hits[0]) + 1 if up_hits.size else None
    first_down = int(down_hits[0]) + 1 if down_hits.size else None

    if config.reporting_rule == ReportingRule.ANY_POINT or config.mode == CusumMode.AUTO_RESET:
        stat_up = float(upper.max())
        stat_down = float(-lower.min())
    else:
        stat_up = float(upper[-1])
        stat_down = float(-lower[-1])
    flagged_up = stat_up > config.h_high
    flagged_down = stat_down > config.h_low

    if flagged_up and flagged_down:
        if stat_up > stat_down:
            direction = Direction.UP
        elif stat_down > stat_up:
            direction = Direction.DOWN
        else:
            direction = Direction.NONE
    elif flagged_up:
        direction = Direction.UP
    elif flagged_down:
        direction = Direction.DOWN
    else:
        direction = Direction.NONE

    return DetectionResult(
        upper=upper,
        lower=lower,
        first_crossing_up=first_up,
        first_crossing_down=first_down,
        flagged_up=flagged_up,
        flagged_down=flagged_down,
        direction=direction,
    )


def _draw_null(model: NullModel, length: int, rng: np.random.Generator) -> np.ndarray:
    if model.kind == NullKind.WHITE_NOISE:
        return rng.normal(0.0, model.sigma, size=length)
    values = np.empty(length)
    values[0] = rng.normal(0.0, model.sigma)
    innovation_sd = model.sigma * np.sqrt(1.0 - model.phi**2)
    noise = rng.normal(0.0, innovation_sd, size=length - 1) if length > 1 else np.empty(0)
    for t in range(1, length):
        values[t] = model.phi * values[t - 1] + noise[t - 1]
    return values


def simulate_null(model: NullModel, length: int, seed: int) -> NormalizedSeries:
    """One seeded no-change series; AR(1) starts from its stationary law."""
    if length < 1:
        raise ValueError("length must be at least 1")
    rng = np.random.default_rng(seed)
    return NormalizedSeries(values=_draw_null(model, length, rng), periods_per_year=1)


def fit_null(historical: list[NormalizedSeries]) -> NullModel:
    """Fit a null model from historical no-change series.

    Pools the per-series demeaned variance and the lag-1 autocorrelation;
    returns AR(1) when the pooled autocorrelation is significant at the 5%
    level under a white-noise null (|r| > 1.96 / sqrt(n_pairs)), otherwise
    white noise.
    """
    deviations: list[np.ndarray] = []
    dof = 0
    for series in historical:
        vals = series.values[np.isfinite(series.values)]
        if len(vals) >= 3:
            deviations.append(vals - vals.mean())
            dof += len(vals) - 1
    if not deviations:
        raise ValueError("need at least one series with 3 or more observed values")

    sq_sum = sum(float((d**2).sum()) for d in deviations)
    sigma = float(np.sqrt(sq_sum / dof))
    if sigma == 0.0:
        return NullModel(kind=NullKind.WHITE_NOISE, sigma=0.0)

    cross = sum(float((d[:-1] * d[1:]).sum()) for d in deviations)
    n_pairs = sum(len(d) - 1 for d in deviations)
    r = cross / sq_sum
    if abs(r) > 1.96 / np.sqrt(n_pairs):
        return NullModel(kind=NullKind.AR1, sigma=sigma, phi=float(np.clip(r, -0.99, 0.99)))
    return NullModel(kind=NullKind.WHITE_NOISE, sigma=sigma)


def _simulation_matrix(model: NullModel, length: int, n_sims: int, seed: int) -> np.ndarray:
    """n_sims independent null series with per-simulation derived seeds."""
    root = np.random.SeedSequence(seed)
    return np.stack(
        [
            _draw_null(model, length, np.random.default_rng(child))
            for child in root.spawn(n_sims)
        ]
    )


def decision_statistics(
    matrix: np.ndarray,
    k: float,
    reporting_rule: ReportingRule,
    mode: CusumMode,
    direction: Direction,
) -> np.ndarray:
    """Per-series decision statistic: the flag raises iff it exceeds h.

    END_OF_WINDOW with the non-restarting statistic compares the final value;
    ANY_POINT (and the auto-reset variant, whose crossings coincide with the
    non-restarting running extreme) compares the extreme over the window.
    """
    n_sims, length = matrix.shape
    use_extreme = reporting_rule == ReportingRule.ANY_POINT or mode == CusumMode.AUTO_RESET
    running = np.zeros(n_sims)
    extreme = np.zeros(n_sims)
    sign = 1.0 if direction == Direction.UP else -1.0
    for t in range(length):
        running = np.maximum(0.0, running + sign * matrix[:, t] - k)
        extreme = np.maximum(extreme, running)
    return extreme if use_extreme else running


def learn_threshold(
    model: NullModel,
    k: float,
    length: int,
    target_far: float,
    trial_thresholds: np.ndarray | list[float],
    n_sims: int,
    seed: int,
    reporting_rule: ReportingRule = ReportingRule.END_OF_WINDOW,
    direction: Direction = Direction.UP,
    mode: CusumMode = CusumMode.NON_RESTARTING,
) -> ThresholdSearch:
    """Pick the trial threshold whose simulated false alarm rate is closest to
    the target, breaking ties toward the larger (quieter) threshold.

    All trials are evaluated on the same simulated series (common random
    numbers), so the estimated false-alarm curve is non-increasing in the
    threshold by construction. If every trial lands on one side of the target
    the boundary trial is returned and a warning recorded.
    """
    trials = np.asarray(trial_thresholds, dtype=float)
    if trials.size == 0:
        raise ValueError("trial threshold list is empty")
    if np.any(np.diff(trials) <= 0):
        raise ValueError("trial thresholds must be strictly ascending")
    if n_sims < 100:
        raise ValueError("n_sims must be at least 100")
    if not 0.0 < target_far < 1.0:
        raise ValueError("target_far must be in (0, 1)")

    matrix = _simulation_matrix(model, length, n_sims, seed)
    stats = decision_statistics(matrix, k, reporting_rule, mode, direction)
    fars = np.array([(stats > h).mean() for h in trials])

    distance = np.abs(fars - target_far)
    best = np.nonzero(distance == distance.min())[0].max()  # ties -> larger threshold

    warning = None
    if fars.min() > target_far:
        warning = "target false alarm rate below every trial; returning the largest trial's nearest match"
    elif fars.max() < target_far:
        warning = "target false alarm rate above every trial; returning the smallest trial's nearest match"

    return ThresholdSearch(
        threshold=float(trials[best]),
        trial_thresholds=trials,
        false_alarm_rates=fars,
        target_far=target_far,
        n_sims=n_sims,
        seed=seed,
        direction=direction,
        warning=warning,
    )
