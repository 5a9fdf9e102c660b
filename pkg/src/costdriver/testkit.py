"""Independent reference implementations and fixture construction.

Everything here exists to check the production modules from the outside, so
nothing in this module may call into them: each function is a straight-line
transcription of the defining formula (or an exhaustive search), sharing only
container types with the rest of the package. Used by the test suite.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.optimize import fsolve

from .offsets import ComparabilityBasis, OffsetNetwork


def ewa_direct(values: Sequence[float], w: float) -> float:
    """Literal evaluation of the normalized exponential weighted average."""
    n = len(values)
    norm = (1.0 - w) / (1.0 - w**n)
    return norm * sum(w ** (n - 1 - j) * values[j] for j in range(n))


def cusum_recurrence(z: Sequence[float], k: float) -> tuple[list[float], list[float]]:
    """Plain transcription of the two-sided CUSUM recursion.

    Missing entries (NaN) leave both statistics unchanged.
    """
    upper: list[float] = []
    lower: list[float] = []
    u = d = 0.0
    for value in z:
        if not math.isnan(value):
            u = max(0.0, u + value - k)
            d = min(0.0, d + value + k)
        upper.append(u)
        lower.append(d)
    return upper, lower


def price_utilization_by_definition(
    a: Sequence[float], e: Sequence[float], periods_per_year: int, w: float
) -> dict[str, float]:
    """Two-factor impact split evaluated term by term from the definitions."""
    T, P = periods_per_year, len(a)
    c = [a[t] * e[t] - a[t - T] * e[t - T] for t in range(T, P)]
    c1 = [e[t - T] * (a[t] - a[t - T]) for t in range(T, P)]
    c2 = [(e[t] - e[t - T]) * a[t - T] for t in range(T, P)]
    i_total = ewa_direct(c, w)
    j1 = ewa_direct(c1, w)
    j2 = ewa_direct(c2, w)
    delta1 = (j1 + j2) - i_total
    denom = abs(j1) + abs(j2)
    if denom == 0.0:
        i_price = j1 - delta1 / 2.0
        i_utilization = j2 - delta1 / 2.0
    else:
        i_price = j1 - delta1 * abs(j1) / denom
        i_utilization = j2 - delta1 * abs(j2) / denom
    return {
        "i_total": i_total,
        "j1": j1,
        "j2": j2,
        "delta1": delta1,
        "i_price": i_price,
        "i_utilization": i_utilization,
    }


def utilization_split_by_definition(
    i: Sequence[float],
    p: Sequence[float],
    v: Sequence[float],
    a: Sequence[float],
    periods_per_year: int,
    w: float,
) -> dict[str, float]:
    """Three-factor utilization split evaluated term by term."""
    T, P = periods_per_year, len(i)
    e = [i[t] * p[t] * v[t] for t in range(P)]
    level1 = price_utilization_by_definition(a, e, T, w)
    ci = [(i[t] - i[t - T]) * p[t - T] * v[t - T] * a[t - T] for t in range(T, P)]
    cp = [i[t - T] * (p[t] - p[t - T]) * v[t - T] * a[t - T] for t in range(T, P)]
    cv = [i[t - T] * p[t - T] * (v[t] - v[t - T]) * a[t - T] for t in range(T, P)]
    ji = ewa_direct(ci, w)
    jp = ewa_direct(cp, w)
    jv = ewa_direct(cv, w)
    delta2 = (ji + jp + jv) - level1["i_utilization"]
    denom = abs(ji) + abs(jp) + abs(jv)
    if denom == 0.0:
        parts = [ji - delta2 / 3.0, jp - delta2 / 3.0, jv - delta2 / 3.0]
    else:
        parts = [
            ji - delta2 * abs(ji) / denom,
            jp - delta2 * abs(jp) / denom,
            jv - delta2 * abs(jv) / denom,
        ]
    return {
        **level1,
        "ji": ji,
        "jp": jp,
        "jv": jv,
        "delta2": delta2,
        "i_intensity": parts[0],
        "i_participation": parts[1],
        "i_prevalence": parts[2],
    }


def brute_force_migration(net: OffsetNetwork, grid_resolution: float) -> float:
    """Largest migrated volume that keeps proportional allocation feasible.

    Scans candidate volumes over a grid and refines the boundary by bisection;
    uses only the feasibility predicate, never the closed-form solution. Meant
    for small networks.
    """
    if grid_resolution <= 0:
        raise ValueError("grid resolution must be positive")
    total_out = sum(net.outflow_capacity)
    capacity = dict(zip(net.receivers, net.inflow_capacity))
    reach = [sum(capacity[r] for r in targets) for targets in net.edges]

    def feasible(p: float) -> bool:
        if p > total_out * (1.0 + 1e-12):
            return False
        inflow = {name: 0.0 for name in net.receivers}
        for idx in range(len(net.originators)):
            o_m = p * net.outflow_capacity[idx] / total_out
            for target in net.edges[idx]:
                inflow[target] += o_m * capacity[target] / reach[idx]
        return all(
            inflow[name] <= capacity[name] * (1.0 + 1e-12) + 1e-12 for name in net.receivers
        )

    candidates = [0.0]
    p = grid_resolution
    while p < total_out:
        candidates.append(p)
        p += grid_resolution
    candidates.append(total_out)

    best = 0.0
    first_infeasible = None
    for p in candidates:
        if feasible(p):
            best = p
        else:
            first_infeasible = p
            break
    if first_infeasible is None:
        return best
    lo, hi = best, first_infeasible
    for _ in range(80):
        mid = (lo + hi) / 2.0
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def build_uptake_fixture(
    i_total: float = 0.1087,
    i_price: float = 0.0098,
    i_participation: float = 0.1044,
    i_intensity: float = 0.0073,
    i_prevalence: float = -0.0129,
    base_price: float = 55.0,
    base_cost_per_enrollee: float = 0.05,
    base_intensity: float = 2.2,
    base_prevalence: float = 0.048,
    periods_per_year: int = 12,
    w: float = 0.5,
) -> dict[str, object]:
    """Construct a two-year KPI panel whose impact breakdown hits the targets.

    Solves a small inverse problem over piecewise-constant series (one value
    per year), defaulting to the shipped type-2-diabetes drug uptake targets:
    a modest price rise, strong participation growth, slight intensity growth,
    and declining prevalence. The default component targets round to a sum
    slightly off the utilization total, so the residual is spread equally
    across the three utilization components (well inside reporting precision).

    Returns the per-period series plus the solved yearly levels.
    """
    a1 = base_price
    e1 = base_cost_per_enrollee / base_price
    i1 = base_intensity
    v1 = base_prevalence
    p1 = e1 / (i1 * v1)
    t_util = i_total - i_price

    def level1(x: np.ndarray) -> np.ndarray:
        da, de = x
        actual_total = e1 * da + a1 * de + da * de
        j1 = e1 * da
        j2 = a1 * de
        delta1 = (j1 + j2) - actual_total
        denom = abs(j1) + abs(j2)
        price = j1 - delta1 / 2.0 if denom == 0 else j1 - delta1 * abs(j1) / denom
        return np.array([actual_total - i_total, price - i_price])

    da, de = fsolve(level1, x0=[i_price / e1, t_util / a1], xtol=1e-12)
    a2, e2 = a1 + da, e1 + de

    # The exact utilization total the solved level-1 split produces.
    j1, j2 = e1 * da, a1 * de
    delta1 = (j1 + j2) - (e1 * da + a1 * de + da * de)
    util_exact = j2 - delta1 * abs(j2) / (abs(j1) + abs(j2))
    excess = util_exact - (i_participation + i_intensity + i_prevalence)
    t_int = i_intensity + excess / 3.0
    t_prev = i_prevalence + excess / 3.0

    def level2(x: np.ndarray) -> np.ndarray:
        di, dp, dv = x
        ji = di * p1 * v1 * a1
        jp = i1 * dp * v1 * a1
        jv = i1 * p1 * dv * a1
        delta2 = (ji + jp + jv) - util_exact
        denom = abs(ji) + abs(jp) + abs(jv)
        if denom == 0:
            comp_i, comp_v = ji - delta2 / 3.0, jv - delta2 / 3.0
        else:
            comp_i = ji - delta2 * abs(ji) / denom
            comp_v = jv - delta2 * abs(jv) / denom
        return np.array([
            (i1 + di) * (p1 + dp) * (v1 + dv) - e2,
            comp_i - t_int,
            comp_v - t_prev,
        ])

    start = [
        t_int / (p1 * v1 * a1),
        (util_exact - t_int - t_prev) / (i1 * v1 * a1),
        t_prev / (i1 * p1 * a1),
    ]
    di, dp, dv = fsolve(level2, x0=start, xtol=1e-12)
    i2, p2, v2 = i1 + di, p1 + dp, v1 + dv

    T = periods_per_year
    series = {
        "a": np.array([a1] * T + [a2] * T),
        "i": np.array([i1] * T + [i2] * T),
        "p": np.array([p1] * T + [p2] * T),
        "v": np.array([v1] * T + [v2] * T),
    }
    series["e"] = series["i"] * series["p"] * series["v"]
    series["s"] = series["a"] * series["e"]
    return {
        **series,
        "periods_per_year": T,
        "w": w,
        "year1": {"a": a1, "e": e1, "i": i1, "p": p1, "v": v1},
        "year2": {"a": a2, "e": e2, "i": i2, "p": p2, "v": v2},
    }


def build_switch_fixture(
    target_pmpm: float = 0.2720,
    member_months: float = 10_000.0,
) -> tuple[OffsetNetwork, dict[str, float], float]:
    """Offset network re-enacting an injectable substituting oral substitutes.

    Three originators feed one receiver; originator prices are fixed at
    plausible per-unit levels and the receiver's lagged price is solved so the
    priced migration lands exactly on the target per-member-per-month impact.

    Returns (network, lagged unit prices, member_months).
    """
    originators = ("JANUMET", "GLUMETZA", "METFORMIN_HCL")
    outflow = (400.0, 150.0, 500.0)
    origin_prices = {"JANUMET": 5.40, "GLUMETZA": 4.10, "METFORMIN_HCL": 0.35}
    receiver = "TRULICITY"
    inflow = 900.0

    total_out = sum(outflow)
    p_m = min(total_out, inflow)  # complete bipartite, single receiver
    outflow_value = sum(p_m * o / total_out * origin_prices[name] for name, o in zip(originators, outflow))
    receiver_price = (target_pmpm * member_months + outflow_value) / p_m

    net = OffsetNetwork(
        network_id="T2D-switch-fixture",
        window_id="fixture",
        condition="T2D",
        basis=ComparabilityBasis.THERAPEUTIC_CLASS,
        originators=originators,
        outflow_capacity=outflow,
        receivers=(receiver,),
        inflow_capacity=(inflow,),
        edges=((receiver,), (receiver,), (receiver,)),
    )
    prices = {**origin_prices, receiver: receiver_price}
    return net, prices, member_months
