"""Uncertainty-guided shortcut insertion."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .graph import Edge, Graph, add_edge
from .uq import UncertaintyReport, divergence


class RewireMode(str, enum.Enum):
    ENTROPY_BRIDGE = "entropy_bridge"
    MAX_DIVERGENCE = "max_divergence"


class ReportMismatch(ValueError):
    pass


@dataclass(frozen=True)
class RewirePolicy:
    mode: RewireMode = RewireMode.ENTROPY_BRIDGE
    per_round_budget: int = 1
    max_total: int | None = None  # None -> ceil(n/4)
    trigger_round: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", RewireMode(self.mode))
        if self.per_round_budget < 1:
            raise ValueError("per_round_budget must be >= 1")
        if self.trigger_round < 1:
            raise ValueError("trigger_round must be >= 1")
        if self.max_total is not None and self.max_total < self.per_round_budget:
            raise ValueError("max_total must be >= per_round_budget")

    def cap(self, n: int) -> int:
        if self.max_total is not None:
            return self.max_total
        return max(self.per_round_budget, math.ceil(n / 4))

    def to_json(self) -> dict:
        return {
            "mode": self.mode.value,
            "per_round_budget": self.per_round_budget,
            "max_total": self.max_total,
            "trigger_round": self.trigger_round,
        }


def select_shortcut(g: Graph, report: UncertaintyReport, mode: RewireMode = RewireMode.ENTROPY_BRIDGE) -> Edge | None:
    """Best non-adjacent pair under ``mode``, or None if the graph is complete.

    ENTROPY_BRIDGE scores a pair by its entropy gap, MAX_DIVERGENCE by the total
    variation distance between the two answer distributions.  Equal scores go
    to the lexicographically smallest pair.
    """
    mode = RewireMode(mode)
    if len(report.per_agent) != g.n or [a.agent for a in report.per_agent] != list(range(g.n)):
        raise ReportMismatch(f"report covers {len(report.per_agent)} agents, graph has {g.n} nodes")
    ent = report.entropies
    dists = [a.distribution for a in report.per_agent]
    best = None
    best_score = -1.0
    for u in range(g.n):
        adj = g.adjacency[u]
        for v in range(u + 1, g.n):
            if v in adj:
                continue
            if mode is RewireMode.ENTROPY_BRIDGE:
                score = abs(ent[u] - ent[v])
            else:
                score = divergence(dists[u], dists[v])
            if score > best_score:
                best, best_score = (u, v), score
    return best


def apply_rewiring(
    g: Graph, report: UncertaintyReport, policy: RewirePolicy, added_so_far: int = 0
) -> tuple[Graph, list[Edge]]:
    added: list[Edge] = []
    cap = policy.cap(g.n)
    while len(added) < policy.per_round_budget and added_so_far + len(added) < cap:
        pair = select_shortcut(g, report, policy.mode)
        if pair is None:
            break
        g = add_edge(g, *pair)
        added.append(pair)
    return g, added
