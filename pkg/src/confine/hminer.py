"""Incremental heuristics mining over batches of complete cases.

Statistics are plain directly-follows counters, so accumulation order over
batches cannot change the result. Net construction is deterministic: every
choice falls back to lexicographic order on activity labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .eventlog import CaseView

__all__ = [
    "DfStats",
    "MinerConfig",
    "Arc",
    "HeuristicsNet",
    "accumulate",
    "dependency_measure",
    "and_split_measure",
    "and_join_measure",
    "build_net",
    "serialize_net",
    "net_from_json",
]


@dataclass
class DfStats:
    """Directly-follows counters, sufficient state for net construction."""

    df_count: dict[tuple[str, str], int] = field(default_factory=dict)
    activity_count: dict[str, int] = field(default_factory=dict)
    start_count: dict[str, int] = field(default_factory=dict)
    end_count: dict[str, int] = field(default_factory=dict)
    case_count: int = 0

    def estimate_bytes(self) -> int:
        """Deterministic size estimate used for enclave budget accounting."""
        size = 64
        for (a, b) in self.df_count:
            size += len(a) + len(b) + 24
        for counter in (self.activity_count, self.start_count, self.end_count):
            for a in counter:
                size += len(a) + 16
        return size


def accumulate(stats: DfStats, batch: list[CaseView] | tuple[CaseView, ...]) -> DfStats:
    """Fold a batch of complete cases into the counters, in place."""
    for case in batch:
        if len(case) == 0:
            raise ValueError(f"case {case.case_ref!r} has no events")
        acts = case.activities
        stats.case_count += 1
        stats.start_count[acts[0]] = stats.start_count.get(acts[0], 0) + 1
        stats.end_count[acts[-1]] = stats.end_count.get(acts[-1], 0) + 1
        for a in acts:
            stats.activity_count[a] = stats.activity_count.get(a, 0) + 1
        for a, b in zip(acts, acts[1:]):
            stats.df_count[(a, b)] = stats.df_count.get((a, b), 0) + 1
    return stats


def dependency_measure(stats: DfStats, a: str, b: str) -> float:
    """Strength of "a causes b" in (-1, 1); antisymmetric for a != b."""
    ab = stats.df_count.get((a, b), 0)
    if a == b:
        return ab / (ab + 1)
    ba = stats.df_count.get((b, a), 0)
    return (ab - ba) / (ab + ba + 1)


def and_split_measure(stats: DfStats, a: str, b: str, c: str) -> float:
    """Do successors b and c of a run concurrently rather than alternatively."""
    bc = stats.df_count.get((b, c), 0)
    cb = stats.df_count.get((c, b), 0)
    ab = stats.df_count.get((a, b), 0)
    ac = stats.df_count.get((a, c), 0)
    return (bc + cb) / (ab + ac + 1)


def and_join_measure(stats: DfStats, a: str, b: str, c: str) -> float:
    """Mirror of the split measure for predecessors b and c joining into a."""
    bc = stats.df_count.get((b, c), 0)
    cb = stats.df_count.get((c, b), 0)
    ba = stats.df_count.get((b, a), 0)
    ca = stats.df_count.get((c, a), 0)
    return (bc + cb) / (ba + ca + 1)


@dataclass(frozen=True, slots=True)
class MinerConfig:
    dependency_threshold: float = 0.9
    and_threshold: float = 0.65
    min_df_count: int = 1
    all_activities_connected: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.dependency_threshold <= 1.0:
            raise ValueError("dependency_threshold outside [0, 1]")
        if not 0.0 <= self.and_threshold <= 1.0:
            raise ValueError("and_threshold outside [0, 1]")
        if self.min_df_count < 0:
            raise ValueError("min_df_count must be >= 0")


@dataclass(frozen=True, slots=True)
class Arc:
    source: str
    target: str
    dependency: float
    frequency: int


@dataclass(frozen=True)
class HeuristicsNet:
    """Discovered dependency graph plus split/join semantics.

    splits maps an activity to the AND-groups of its successors: arcs in the
    same group are concurrent, distinct groups are alternatives. joins is
    the mirror for predecessors.
    """

    activities: tuple[str, ...]
    start_activities: tuple[str, ...]
    end_activities: tuple[str, ...]
    arcs: tuple[Arc, ...]
    splits: dict[str, tuple[tuple[str, ...], ...]]
    joins: dict[str, tuple[tuple[str, ...], ...]]

    def arc_pairs(self) -> set[tuple[str, str]]:
        return {(arc.source, arc.target) for arc in self.arcs}


def _best_neighbor(candidates: list[tuple[str, float, int]]) -> str:
    # Highest dependency wins; ties prefer higher df count, then the
    # lexicographically smallest label.
    candidates.sort(key=lambda item: (-item[1], -item[2], item[0]))
    return candidates[0][0]


def _and_groups(members: list[str], related) -> tuple[tuple[str, ...], ...]:
    """Partition members into connected components of the AND relation."""
    groups: list[list[str]] = []
    assigned: dict[str, int] = {}
    for m in sorted(members):
        linked = {assigned[o] for o in assigned if related(m, o)}
        if not linked:
            assigned[m] = len(groups)
            groups.append([m])
            continue
        keep = min(linked)
        groups[keep].append(m)
        assigned[m] = keep
        for gi in sorted(linked - {keep}, reverse=True):
            for o in groups[gi]:
                assigned[o] = keep
            groups[keep].extend(groups[gi])
            groups[gi] = []
    out = [tuple(sorted(g)) for g in groups if g]
    return tuple(sorted(out))


def build_net(stats: DfStats, config: MinerConfig = MinerConfig()) -> HeuristicsNet:
    """Threshold the dependency graph and classify splits and joins."""
    if stats.case_count < 1:
        raise ValueError("cannot build a net from empty statistics")

    activities = tuple(sorted(stats.activity_count))
    start = tuple(sorted(a for a, n in stats.start_count.items() if n > 0))
    end = tuple(sorted(a for a, n in stats.end_count.items() if n > 0))

    arcs: set[tuple[str, str]] = set()
    for (a, b), n in stats.df_count.items():
        if n >= config.min_df_count and dependency_measure(stats, a, b) >= config.dependency_threshold:
            arcs.add((a, b))

    if config.all_activities_connected:
        start_set, end_set = set(start), set(end)
        incoming: dict[str, list[tuple[str, str]]] = {a: [] for a in activities}
        outgoing: dict[str, list[tuple[str, str]]] = {a: [] for a in activities}
        for (a, b), n in stats.df_count.items():
            if a != b and n > 0:
                outgoing[a].append((a, b))
                incoming[b].append((a, b))
        for b in activities:
            if b in start_set or not incoming[b]:
                continue
            cands = [
                (a, dependency_measure(stats, a, b), stats.df_count[(a, b)])
                for (a, _b) in incoming[b]
            ]
            arcs.add((_best_neighbor(cands), b))
        for a in activities:
            if a in end_set or not outgoing[a]:
                continue
            cands = [
                (b, dependency_measure(stats, a, b), stats.df_count[(a, b)])
                for (_a, b) in outgoing[a]
            ]
            arcs.add((a, _best_neighbor(cands)))

    arc_objs = tuple(
        Arc(a, b, dependency_measure(stats, a, b), stats.df_count.get((a, b), 0))
        for a, b in sorted(arcs)
    )

    successors: dict[str, list[str]] = {}
    predecessors: dict[str, list[str]] = {}
    for a, b in arcs:
        if a != b:  # self loops carry no split/join semantics
            successors.setdefault(a, []).append(b)
            predecessors.setdefault(b, []).append(a)

    splits = {
        a: _and_groups(
            succ,
            lambda x, y, a=a: and_split_measure(stats, a, x, y) >= config.and_threshold,
        )
        for a, succ in sorted(successors.items())
    }
    joins = {
        a: _and_groups(
            pred,
            lambda x, y, a=a: and_join_measure(stats, a, x, y) >= config.and_threshold,
        )
        for a, pred in sorted(predecessors.items())
    }

    return HeuristicsNet(
        activities=activities,
        start_activities=start,
        end_activities=end,
        arcs=arc_objs,
        splits=splits,
        joins=joins,
    )


# ---------------------------------------------------------------------------
# serialization


def _net_to_dict(net: HeuristicsNet) -> dict:
    return {
        "activities": list(net.activities),
        "start_activities": list(net.start_activities),
        "end_activities": list(net.end_activities),
        "arcs": [
            {
                "source": arc.source,
                "target": arc.target,
                "dependency": arc.dependency,
                "frequency": arc.frequency,
            }
            for arc in net.arcs
        ],
        "splits": {a: [list(g) for g in groups] for a, groups in net.splits.items()},
        "joins": {a: [list(g) for g in groups] for a, groups in net.joins.items()},
    }


def serialize_net(net: HeuristicsNet, fmt: str = "json") -> str:
    """Render a net as canonical JSON or as Graphviz DOT text."""
    if fmt == "json":
        return json.dumps(_net_to_dict(net), sort_keys=True, indent=2) + "\n"
    if fmt == "dot":
        lines = ["digraph heuristics_net {", "  rankdir=LR;", '  node [shape=box];']
        start, end = set(net.start_activities), set(net.end_activities)
        for a in net.activities:
            style = ""
            if a in start:
                style = ' style=filled fillcolor="#d0e8d0"'
            elif a in end:
                style = ' style=filled fillcolor="#e8d0d0"'
            lines.append(f'  "{a}" [label="{a}"{style}];')
        for arc in net.arcs:
            lines.append(
                f'  "{arc.source}" -> "{arc.target}" '
                f'[label="{arc.dependency:.3f} ({arc.frequency})"];'
            )
        lines.append("}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown net format {fmt!r}")


def net_from_json(text: str) -> HeuristicsNet:
    raw = json.loads(text)
    return HeuristicsNet(
        activities=tuple(raw["activities"]),
        start_activities=tuple(raw["start_activities"]),
        end_activities=tuple(raw["end_activities"]),
        arcs=tuple(
            Arc(d["source"], d["target"], d["dependency"], d["frequency"])
            for d in raw["arcs"]
        ),
        splits={a: tuple(tuple(g) for g in groups) for a, groups in raw["splits"].items()},
        joins={a: tuple(tuple(g) for g in groups) for a, groups in raw["joins"].items()},
    )
