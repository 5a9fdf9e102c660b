"""Offsetting-treatment networks and migration flow estimation.

Comparable treatments for the same condition whose utilization moves in
opposite directions within the same window form an offset network: treatments
losing volume are originators, treatments gaining volume are receivers, and
capacities are the magnitudes of their utilization changes. The migrated
volume maximizes total outflow subject to two proportionality constraints:
outflow splits across originators in proportion to their observed decreases,
and each originator's outflow splits across its reachable receivers in
proportion to the receivers' observed increases.

With Sum_R(o_i) denoting the receiver capacity reachable from originator i,
the migrated volume is

    P_m = min[ sum_i o_i,  1 / sum_i ( o_i / (Sum_R(o_i) * sum_i o_i) ) ]

which provably keeps every receiver inflow within its capacity; on complete
bipartite networks it reduces to min(total outflow, total inflow).

Pricing a network's flows at lagged-year unit prices isolates the cost effect
of pure volume migration under unchanged average cost.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Mapping

from .detect import Direction


class ComparabilityBasis(str, Enum):
    THERAPEUTIC_CLASS = "THERAPEUTIC_CLASS"
    CARE_SETTING = "CARE_SETTING"
    SEVERITY = "SEVERITY"


@dataclass(frozen=True)
class ComparableGroup:
    group_id: str
    condition: str
    basis: ComparabilityBasis
    members: tuple[str, ...]
    allowed_pairs: tuple[tuple[str, str], ...] | None = None  # (from, to) restrictions

    def __post_init__(self) -> None:
        if len(self.members) < 2:
            raise ValueError(f"group {self.group_id} needs at least two members")
        if len(set(self.members)) != len(self.members):
            raise ValueError(f"group {self.group_id} repeats members")
        if self.allowed_pairs is not None:
            for src, dst in self.allowed_pairs:
                if src not in self.members or dst not in self.members:
                    raise ValueError(f"group {self.group_id} pair ({src}, {dst}) outside members")


@dataclass
class ComparabilityKB:
    groups: list[ComparableGroup] = field(default_factory=list)


@dataclass(frozen=True)
class TreatmentSignal:
    """Detection outcome for one treatment in one window: the flag direction
    on the utilization KPI and the EWA of its year-over-year change in raw
    quantity (service units per period)."""

    direction: Direction
    yoy_quantity_ewa: float


@dataclass(frozen=True)
class OffsetNetwork:
    network_id: str
    window_id: str
    condition: str
    basis: ComparabilityBasis
    originators: tuple[str, ...]
    outflow_capacity: tuple[float, ...]
    receivers: tuple[str, ...]
    inflow_capacity: tuple[float, ...]
    edges: tuple[tuple[str, ...], ...]  # per originator: reachable receiver names

    def __post_init__(self) -> None:
        if not self.originators or not self.receivers:
            raise ValueError("network needs at least one originator and one receiver")
        if len(self.originators) != len(self.outflow_capacity) or len(self.originators) != len(self.edges):
            raise ValueError("originator arrays misaligned")
        if len(self.receivers) != len(self.inflow_capacity):
            raise ValueError("receiver arrays misaligned")
        if any(c <= 0 for c in self.outflow_capacity) or any(c <= 0 for c in self.inflow_capacity):
            raise ValueError("capacities must be positive")
        receiver_set = set(self.receivers)
        for name, targets in zip(self.originators, self.edges):
            if not targets:
                raise ValueError(f"originator {name} has no receiver edge")
            if not set(targets) <= receiver_set:
                raise ValueError(f"originator {name} has edges outside the receiver set")

    def reachable_capacity(self, originator_index: int) -> float:
        capacity = dict(zip(self.receivers, self.inflow_capacity))
        return sum(capacity[r] for r in self.edges[originator_index])


@dataclass
class MigrationFlows:
    total_migration: float  # P_m
    outflows: dict[str, float]  # per originator
    flows: dict[tuple[str, str], float]  # (originator, receiver) -> volume
    inflows: dict[str, float]  # per receiver


def identify_offsets(
    signals: Mapping[str, TreatmentSignal],
    kb: ComparabilityKB,
    window_id: str,
) -> list[OffsetNetwork]:
    """Build offset networks from per-treatment detection signals.

    For every comparable group with at least one flagged-DOWN and one
    flagged-UP member in the window, DOWN members with an observed quantity
    decrease become originators and UP members with an observed increase
    become receivers. Edges are complete bipartite within the group unless
    the group restricts (from, to) pairs; originators left without any
    allowed receiver are dropped. Groups without opposite movement yield
    nothing.
    """
    networks = []
    for group in kb.groups:
        down = []
        up = []
        for name in group.members:
            signal = signals.get(name)
            if signal is None:
                continue
            if signal.direction == Direction.DOWN and signal.yoy_quantity_ewa < 0:
                down.append((name, -signal.yoy_quantity_ewa))
            elif signal.direction == Direction.UP and signal.yoy_quantity_ewa > 0:
                up.append((name, signal.yoy_quantity_ewa))
        if not down or not up:
            continue
        receiver_names = tuple(name for name, _ in up)
        originators = []
        capacities = []
        edges = []
        for name, capacity in down:
            if group.allowed_pairs is None:
                targets = receiver_names
            else:
                allowed = {dst for src, dst in group.allowed_pairs if src == name}
                targets = tuple(r for r in receiver_names if r in allowed)
            if not targets:
                continue
            originators.append(name)
            capacities.append(capacity)
            edges.append(targets)
        if not originators:
            continue
        networks.append(
            OffsetNetwork(
                network_id=f"{group.group_id}@{window_id}",
                window_id=window_id,
                condition=group.condition,
                basis=group.basis,
                originators=tuple(originators),
                outflow_capacity=tuple(capacities),
                receivers=receiver_names,
                inflow_capacity=tuple(c for _, c in up),
                edges=tuple(edges),
            )
        )
    return networks


def compute_migration(net: OffsetNetwork) -> MigrationFlows:
    """Solve the proportional-allocation migration for one network.

    The migrated volume is capped by total outflow capacity and by the
    harmonic bound that keeps every receiver feasible; outflows split across
    originators proportionally to their capacities, and each originator's
    outflow splits across its reachable receivers proportionally to their
    capacities.
    """
    total_out = sum(net.outflow_capacity)
    reachable = [net.reachable_capacity(idx) for idx in range(len(net.originators))]
    if any(r <= 0 for r in reachable):
        bad = net.originators[reachable.index(min(reachable))]
        raise ValueError(f"degenerate network: originator {bad} reaches no receiver capacity")

    harmonic = sum(
        o / (r * total_out) for o, r in zip(net.outflow_capacity, reachable)
    )
    p_m = min(total_out, 1.0 / harmonic)

    receiver_capacity = dict(zip(net.receivers, net.inflow_capacity))
    outflows: dict[str, float] = {}
    flows: dict[tuple[str, str], float] = {}
    inflows: dict[str, float] = {name: 0.0 for name in net.receivers}
    for idx, name in enumerate(net.originators):
        o_m = p_m * net.outflow_capacity[idx] / total_out
        outflows[name] = o_m
        for target in net.edges[idx]:
            f = o_m * receiver_capacity[target] / reachable[idx]
            flows[(name, target)] = f
            inflows[target] += f
    return MigrationFlows(total_migration=p_m, outflows=outflows, flows=flows, inflows=inflows)


def offset_cost_impact(
    flows: MigrationFlows,
    lagged_prices: Mapping[str, float],
    member_months: float,
) -> float:
    """Cost impact of the migrated volume, per member per month.

    Values receiver inflows and originator outflows at lagged-year unit
    prices, so the result reflects volume migration alone; positive when
    volume moved toward costlier treatments. ``member_months`` is the
    member-month count of one analysis period.
    """
    if member_months <= 0:
        raise ValueError("member_months must be positive")
    total = 0.0
    for name, inflow in flows.inflows.items():
        if name not in lagged_prices:
            raise ValueError(f"missing lagged unit price for treatment {name}")
        total += inflow * lagged_prices[name]
    for name, outflow in flows.outflows.items():
        if name not in lagged_prices:
            raise ValueError(f"missing lagged unit price for treatment {name}")
        total -= outflow * lagged_prices[name]
    return total / member_months


KB_HEADER = ["group_id", "condition", "basis", "members", "allowed_pairs"]


def load_kb(source: str | Path | IO[str]) -> ComparabilityKB:
    """Read a comparability knowledge base.

    One row per group: members are ';'-separated; allowed_pairs is optional
    and ';'-separates 'FROM>TO' entries (empty means complete bipartite).
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="") as handle:
            return load_kb(handle)
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or [c.strip() for c in header] != KB_HEADER:
        raise ValueError(f"knowledge base header mismatch: expected {','.join(KB_HEADER)}")
    groups = []
    for row in reader:
        if not row:
            continue
        pairs = None
        if row[4].strip():
            pairs = tuple(tuple(p.split(">", 1)) for p in row[4].split(";"))  # type: ignore[misc]
        groups.append(
            ComparableGroup(
                group_id=row[0],
                condition=row[1],
                basis=ComparabilityBasis(row[2]),
                members=tuple(row[3].split(";")),
                allowed_pairs=pairs,  # type: ignore[arg-type]
            )
        )
    return ComparabilityKB(groups=groups)


def save_kb(kb: ComparabilityKB, dest: str | Path | IO[str]) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="") as handle:
            save_kb(kb, handle)
        return
    writer = csv.writer(dest)
    writer.writerow(KB_HEADER)
    for g in kb.groups:
        pairs = ";".join(f"{src}>{dst}" for src, dst in g.allowed_pairs) if g.allowed_pairs else ""
        writer.writerow([g.group_id, g.condition, g.basis.value, ";".join(g.members), pairs])
