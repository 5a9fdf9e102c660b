"""Exponentially weighted impact of change and its exact decomposition.

The impact of a change in cost per enrollee is the exponential weighted
average (EWA) of its year-over-year differences. With s(t) = a(t) * e(t)
(unit price times utilization per enrollee), the one-factor difference terms

    c1(t) = e(t-T) * [a(t) - a(t-T)]        (price moves, lagged utilization)
    c2(t) = [e(t) - e(t-T)] * a(t-T)        (utilization moves, lagged price)

do not sum to the total change because of the cross term; the reconciliation
residual delta1 = [J(c1) + J(c2)] - I is redistributed in proportion to the
absolute component magnitudes so that the reported price and utilization
impacts add up to the total exactly. The utilization impact is decomposed the
same way one level down into intensity, participation, and prevalence, each
differenced with every co-factor (and the price) held at its lagged value.

Periods where any required input is missing are dropped from every term of
every level jointly, and the EWA weights renormalize over the remaining
terms; this keeps both additivity identities exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ImpactConfig:
    w: float  # EWA decay weight
    periods_per_year: int

    def __post_init__(self) -> None:
        if not 0.0 < self.w < 1.0:
            raise ValueError("EWA weight w must be in (0, 1)")
        if self.periods_per_year < 1:
            raise ValueError("periods_per_year must be at least 1")


@dataclass
class ImpactBreakdown:
    i_total: float
    i_price: float
    i_utilization: float
    delta1: float
    i_intensity: float
    i_participation: float
    i_prevalence: float
    delta2: float


def ewa(values: np.ndarray | list[float], w: float) -> float:
    """Exponential weighted average with decay w; weights sum to one.

    The last value gets weight proportional to 1, the one before it w, and so
    on. NaN entries are skipped and the weights renormalize over the
    remaining terms, preserving their positions.
    """
    if not 0.0 < w < 1.0:
        raise ValueError("EWA weight w must be in (0, 1)")
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        raise ValueError("EWA of an empty sequence")
    weights = w ** np.arange(vals.size - 1, -1, -1, dtype=float)
    mask = np.isfinite(vals)
    if not mask.any():
        raise ValueError("EWA of an all-missing sequence")
    return float((weights[mask] * vals[mask]).sum() / weights[mask].sum())


def _yoy(series: np.ndarray, periods_per_year: int) -> tuple[np.ndarray, np.ndarray]:
    """(current, lagged) pairs for t = T+1..P."""
    T = periods_per_year
    if len(series) <= T:
        raise ValueError(f"series has {len(series)} periods; need more than {T}")
    return series[T:], series[:-T]


def impact_total(s: np.ndarray | list[float], config: ImpactConfig) -> float:
    """EWA of the year-over-year differences of cost per enrollee."""
    s = np.asarray(s, dtype=float)
    cur, lag = _yoy(s, config.periods_per_year)
    return ewa(cur - lag, config.w)


def _split_residual(parts: list[float], residual: float) -> list[float]:
    """Distribute a residual in proportion to absolute part size (equal split
    when all parts vanish) so the adjusted parts sum to sum(parts) - residual."""
    total_abs = sum(abs(p) for p in parts)
    if total_abs == 0.0:
        return [p - residual / len(parts) for p in parts]
    return [p - residual * abs(p) / total_abs for p in parts]


def decompose_price_utilization(
    a: np.ndarray | list[float], e: np.ndarray | list[float], config: ImpactConfig
) -> tuple[float, float, float]:
    """Split the total impact into unit-price and utilization components.

    Returns (i_price, i_utilization, delta1) with
    i_price + i_utilization == i_total exactly.
    """
    a = np.asarray(a, dtype=float)
    e = np.asarray(e, dtype=float)
    if a.shape != e.shape:
        raise ValueError("price and utilization series lengths differ")
    a_cur, a_lag = _yoy(a, config.periods_per_year)
    e_cur, e_lag = _yoy(e, config.periods_per_year)
    mask = np.isfinite(a_cur) & np.isfinite(a_lag) & np.isfinite(e_cur) & np.isfinite(e_lag)
    c = np.where(mask, a_cur * e_cur - a_lag * e_lag, np.nan)
    c1 = np.where(mask, e_lag * (a_cur - a_lag), np.nan)
    c2 = np.where(mask, (e_cur - e_lag) * a_lag, np.nan)
    i_total = ewa(c, config.w)
    j1 = ewa(c1, config.w)
    j2 = ewa(c2, config.w)
    delta1 = (j1 + j2) - i_total
    i_price, i_utilization = _split_residual([j1, j2], delta1)
    return i_price, i_utilization, delta1


def decompose_utilization(
    i: np.ndarray | list[float],
    p: np.ndarray | list[float],
    v: np.ndarray | list[float],
    a: np.ndarray | list[float],
    config: ImpactConfig,
) -> tuple[float, float, float, float]:
    """Split the utilization impact into intensity, participation, and
    prevalence components.

    Each term differences one factor and holds the other two factors and the
    unit price at their lagged values; the residual delta2 against the
    utilization impact is distributed proportionally so the three components
    sum to it exactly. Returns (i_intensity, i_participation, i_prevalence,
    delta2).
    """
    i = np.asarray(i, dtype=float)
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    if not i.shape == p.shape == v.shape == a.shape:
        raise ValueError("factor series lengths differ")
    breakdown = impact_breakdown(a, i, p, v, config)
    return (
        breakdown.i_intensity,
        breakdown.i_participation,
        breakdown.i_prevalence,
        breakdown.delta2,
    )


def impact_breakdown(
    a: np.ndarray | list[float],
    i: np.ndarray | list[float],
    p: np.ndarray | list[float],
    v: np.ndarray | list[float],
    config: ImpactConfig,
) -> ImpactBreakdown:
    """Full two-level impact breakdown on the jointly observed periods.

    Utilization per enrollee is reconstructed as e = i * p * v, which matches
    the measured ratio exactly whenever all denominators are positive. Every
    level uses the same set of valid year-over-year pairs, so both additivity
    identities hold exactly. If no pair is jointly observed, all fields are
    NaN.
    """
    a = np.asarray(a, dtype=float)
    i = np.asarray(i, dtype=float)
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    T = config.periods_per_year
    a_cur, a_lag = _yoy(a, T)
    i_cur, i_lag = _yoy(i, T)
    p_cur, p_lag = _yoy(p, T)
    v_cur, v_lag = _yoy(v, T)
    mask = (
        np.isfinite(a_cur) & np.isfinite(a_lag)
        & np.isfinite(i_cur) & np.isfinite(i_lag)
        & np.isfinite(p_cur) & np.isfinite(p_lag)
        & np.isfinite(v_cur) & np.isfinite(v_lag)
    )
    if not mask.any():
        nan = float("nan")
        return ImpactBreakdown(nan, nan, nan, nan, nan, nan, nan, nan)

    e_cur = i_cur * p_cur * v_cur
    e_lag = i_lag * p_lag * v_lag
    c = np.where(mask, a_cur * e_cur - a_lag * e_lag, np.nan)
    c1 = np.where(mask, e_lag * (a_cur - a_lag), np.nan)
    c2 = np.where(mask, (e_cur - e_lag) * a_lag, np.nan)
    i_total = ewa(c, config.w)
    j1 = ewa(c1, config.w)
    j2 = ewa(c2, config.w)
    delta1 = (j1 + j2) - i_total
    i_price, i_utilization = _split_residual([j1, j2], delta1)

    c2i = np.where(mask, (i_cur - i_lag) * p_lag * v_lag * a_lag, np.nan)
    c2p = np.where(mask, i_lag * (p_cur - p_lag) * v_lag * a_lag, np.nan)
    c2v = np.where(mask, i_lag * p_lag * (v_cur - v_lag) * a_lag, np.nan)
    ji = ewa(c2i, config.w)
    jp = ewa(c2p, config.w)
    jv = ewa(c2v, config.w)
    delta2 = (ji + jp + jv) - i_utilization
    i_intensity, i_participation, i_prevalence = _split_residual([ji, jp, jv], delta2)

    return ImpactBreakdown(
        i_total=i_total,
        i_price=i_price,
        i_utilization=i_utilization,
        delta1=delta1,
        i_intensity=i_intensity,
        i_participation=i_participation,
        i_prevalence=i_prevalence,
        delta2=delta2,
    )
