"""Round-based multi-agent debate over a communication topology."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .agents import AgentFailure, AgentMessage, QARecord, plurality
from .graph import Edge, Graph, Kind, TopologySpec, build_topology
from .rewire import RewirePolicy, apply_rewiring
from .rng import derive_seed, substream
from .uq import UncertaintyReport, sample_distribution

log = logging.getLogger(__name__)

DEFAULT_ROUNDS = 4
DEFAULT_UQ_SAMPLES = 5


class ConfigError(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class DebateAborted(AgentFailure):
    def __init__(self, item_id: str, round: int, agent: int, cause: Exception):
        super().__init__(f"item {item_id}: agent {agent} failed in round {round}: {cause}")
        self.item_id = item_id
        self.round = round
        self.agent = agent
        self.cause = cause


@dataclass
class DebateConfig:
    topology: TopologySpec
    agents: Sequence  # objects with .index and .answer(item, neighbor_msgs, round, rng)
    rounds: int = DEFAULT_ROUNDS
    seed: int = 0
    rewire: RewirePolicy | None = None
    uq_samples: int = DEFAULT_UQ_SAMPLES
    concurrency: int = 1
    graph: Graph | None = None  # explicit static graph, replaces the topology's own

    def validate(self) -> "DebateConfig":
        self.topology.validate()
        if self.graph is not None and (self.graph.n != self.topology.n or self.topology.kind is Kind.RAND):
            raise ConfigError("an explicit graph needs a static topology with the same node count")
        if len(self.agents) != self.topology.n:
            raise ConfigError(f"topology has {self.topology.n} nodes but {len(self.agents)} agents were given")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.uq_samples < 1:
            raise ConfigError("uq_samples must be >= 1")
        if self.rewire is not None and self.topology.kind is Kind.RAND:
            raise ConfigError("rewiring is undefined for the Rand topology (its graph is redrawn every round)")
        return self


@dataclass(frozen=True)
class ConsensusPoint:
    agreement: float
    accuracy: float
    plurality_answer: str | None


@dataclass(frozen=True)
class RoundRecord:
    round: int
    graph_id: str
    messages: tuple[AgentMessage, ...]
    consensus: ConsensusPoint
    visible: tuple[tuple[int, ...], ...]  # senders shown to each agent this round


@dataclass
class DebateState:
    item_id: str
    gold: str
    per_round: list[RoundRecord] = field(default_factory=list)
    shortcuts: list[dict] = field(default_factory=list)
    uncertainty: list[dict] = field(default_factory=list)
    uq_probe_tokens: int = 0

    @property
    def final_answer(self) -> str | None:
        return self.per_round[-1].consensus.plurality_answer

    @property
    def tokens_total(self) -> tuple[int, int]:
        p = c = 0
        for r in self.per_round:
            for m in r.messages:
                p += m.prompt_tokens
                c += m.completion_tokens
        return (p, c)


def consensus_point(messages: Sequence[AgentMessage], gold: str) -> ConsensusPoint:
    n = len(messages)
    answers = [m.answer for m in messages]
    top = plurality(answers)
    largest = sum(1 for a in answers if a is not None and a == top) if top is not None else 0
    correct = sum(1 for a in answers if a == gold)
    return ConsensusPoint(largest / n, correct / n, top)


def static_graph(spec: TopologySpec) -> tuple[Graph, list[Edge]]:
    """Graph and rewired-edge list for the non-Rand topologies."""
    if spec.kind is Kind.RAND:
        raise ConfigError("rand has no static graph")
    return build_topology(spec, substream(spec.seed, "topology"))


def round_graph(cfg: DebateConfig, round: int, stream_key: str = "") -> Graph:
    """Communication graph for ``round``.

    Static kinds return the same graph every round.  Rand draws ``n*k/2``
    fresh edges from a sub-stream keyed by (topology seed, stream_key, round).
    """
    if not (0 <= round <= cfg.rounds):
        raise ConfigError(f"round {round} outside [0, {cfg.rounds}]")
    spec = cfg.topology
    if spec.kind is Kind.RAND:
        return build_topology(spec, substream(spec.seed, "rand", stream_key, round))[0]
    return cfg.graph if cfg.graph is not None else static_graph(spec)[0]


def _map(cfg: DebateConfig, fn, xs):
    if cfg.concurrency > 1 and len(xs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
            return list(pool.map(fn, xs))
    return [fn(x) for x in xs]


def run_debate(cfg: DebateConfig, item: QARecord) -> DebateState:
    """Run rounds 0..R on one item.

    Round 0 answers are independent.  In round t >= 1 each agent sees the
    round t-1 messages of its round-t neighbors.  With a rewire policy,
    shortcuts chosen from an uncertainty probe of round t-1 are added before
    round t is played and persist afterwards.
    """
    cfg.validate()
    spec = cfg.topology
    n = spec.n
    state = DebateState(item_id=item.id, gold=item.gold)
    if spec.kind is Kind.RAND:
        static = None
    else:
        static = cfg.graph if cfg.graph is not None else static_graph(spec)[0]
    prev: list[AgentMessage] | None = None
    prev_inputs: list[list[AgentMessage]] | None = None
    n_added = 0
    probe_key = derive_seed(cfg.seed, item.id, "uq")

    for t in range(cfg.rounds + 1):
        if static is None:
            g = round_graph(cfg, t, item.id)
        else:
            g = static
            pol = cfg.rewire
            if pol is not None and t >= pol.trigger_round and n_added < pol.cap(n):
                report, cost = _probe(cfg, item, t - 1, prev_inputs, probe_key)
                state.uq_probe_tokens += cost
                g, added = apply_rewiring(g, report, pol, n_added)
                static = g
                n_added += len(added)
                state.uncertainty.append({"round": t - 1, **report.to_json()})
                state.shortcuts.extend({"round": t, "shortcut": list(e), "mode": pol.mode.value} for e in added)

        if t == 0:
            inputs = [[] for _ in range(n)]
        else:
            inputs = [[prev[j] for j in g.neighbors(i)] for i in range(n)]

        def ask(i, t=t, inputs=inputs):
            rng = substream(cfg.seed, item.id, i, t, "answer")
            try:
                return cfg.agents[i].answer(item, inputs[i], t, rng)
            except AgentFailure as exc:
                raise DebateAborted(item.id, t, i, exc) from exc

        msgs = _map(cfg, ask, list(range(n)))
        state.per_round.append(
            RoundRecord(
                round=t,
                graph_id=g.snapshot_id(),
                messages=tuple(msgs),
                consensus=consensus_point(msgs, item.gold),
                visible=tuple(tuple(m.sender for m in inp) for inp in inputs),
            )
        )
        prev, prev_inputs = msgs, inputs
    return state


def _probe(cfg: DebateConfig, item: QARecord, round: int, inputs, key: int) -> tuple[UncertaintyReport, int]:
    """Resample every agent's round decision to estimate its answer distribution."""

    def one(i):
        try:
            return sample_distribution(
                cfg.agents[i], item, cfg.uq_samples, derive_seed(key, i, round), inputs[i], round
            )
        except AgentFailure as exc:
            raise DebateAborted(item.id, round, i, exc) from exc

    results = _map(cfg, one, list(range(cfg.topology.n)))
    cost = sum(m.prompt_tokens + m.completion_tokens for _, msgs in results for m in msgs)
    return UncertaintyReport.from_distributions([d for d, _ in results]), cost


def consensus_trace(state: DebateState) -> list[ConsensusPoint]:
    return [r.consensus for r in state.per_round]


def trace_stability(traces: Sequence[Sequence[float]]) -> dict:
    """Across-seed summary of agreement traces.

    ``per_round_std`` is the population standard deviation at each round;
    ``mean_abs_round_delta`` averages |a[t+1] - a[t]| over seeds and rounds.
    """
    if not traces:
        raise ValueError("no traces given")
    lengths = {len(t) for t in traces}
    if len(lengths) != 1:
        raise LengthMismatch(f"traces have differing lengths {sorted(lengths)}")
    arr = np.asarray(traces, dtype=float)
    deltas = np.abs(np.diff(arr, axis=1))
    return {
        "mean_curve": arr.mean(axis=0).tolist(),
        "per_round_std": arr.std(axis=0).tolist(),
        "mean_abs_round_delta": float(deltas.mean()) if deltas.size else 0.0,
    }
