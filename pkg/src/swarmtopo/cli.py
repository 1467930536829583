"""Experiment harness and command line.

Subcommands::

    swarmtopo debate          --config exp.json [--output DIR] [--seeds 0,1,2] [--backend synthetic|remote]
    swarmtopo topology-stats  --kind smallworld --n 200 --k 8 --p-grid 0,0.01,0.1,1 --seeds 0-19
    swarmtopo roles           --n 30 --k 4 --p 0.15 --seeds 0-49 --output DIR
    swarmtopo summarize       --input DIR/results.jsonl --output DIR
    swarmtopo make-dataset    --items 50 --output data.jsonl

Outputs are written in a fixed order with fixed column layouts, so identical
configurations give byte-identical files regardless of ``concurrency``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .agents import (
    AgentFailure,
    DatasetError,
    QARecord,
    RemoteAgent,
    RemoteEndpoint,
    SyntheticAgent,
    SyntheticAgentParams,
    load_dataset,
)
from .engine import ConfigError, DebateConfig, run_debate, trace_stability
from .graph import GraphError, Kind, TopologySpec, build_topology, metrics, to_edgelist
from .rewire import RewirePolicy
from .rng import substream
from .roles import OpinionConfig, simulate

log = logging.getLogger("swarmtopo")

SUMMARY_COLUMNS = [
    "topology",
    "records",
    "accuracy",
    "tokens_per_question",
    "prompt_tokens_per_question",
    "completion_tokens_per_question",
    "uq_probe_tokens_per_question",
    "tokens_per_question_with_uq",
    "mean_abs_round_delta",
    "mean_round_std",
]
TRACE_COLUMNS = ["topology", "round", "mean_agreement", "std_agreement", "mean_accuracy", "std_accuracy"]
TOPOLOGY_COLUMNS = ["topology", "p", "seed", "clustering", "avg_path_len", "connected"]
ROLE_COLUMNS = ["step", "node", "role", "belief"]
ROLE_SUMMARY_COLUMNS = ["seed", "expert", "loner", "bridge", "var_expert", "var_loner", "var_bridge"]


class EmptyInput(ValueError):
    pass


# -- configuration ---------------------------------------------------------


def topology_from_dict(d: dict) -> TopologySpec:
    return TopologySpec(
        kind=Kind(d["kind"]),
        n=int(d["n"]),
        k=int(d.get("k", 2)),
        p=float(d.get("p", 0.1)),
        seed=int(d.get("seed", 0)),
        name=d.get("name"),
    ).validate()


def topology_to_dict(spec: TopologySpec) -> dict:
    out = {"kind": spec.kind.value, "n": spec.n, "k": spec.k, "p": spec.p}
    if spec.name:
        out["name"] = spec.name
    return out


@dataclass
class ExperimentConfig:
    dataset: str
    topologies: list[TopologySpec]
    seeds: list[int]
    output: str = "results"
    rounds: int = 4
    backend: str = "synthetic"
    agent: SyntheticAgentParams = field(default_factory=SyntheticAgentParams)
    agents: list[SyntheticAgentParams] | None = None  # per-agent override
    remote: dict = field(default_factory=dict)
    rewire: RewirePolicy | None = None
    uq_samples: int = 5
    concurrency: int = 1

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        try:
            dataset = Path(d["dataset"])
            if base_dir is not None and not dataset.is_absolute():
                dataset = base_dir / dataset
            rewire = d.get("rewire")
            per_agent = d.get("agents")
            cfg = cls(
                dataset=str(dataset),
                topologies=[topology_from_dict(t) for t in d["topologies"]],
                seeds=[int(s) for s in d["seeds"]],
                output=d.get("output", "results"),
                rounds=int(d.get("rounds", 4)),
                backend=d.get("backend", "synthetic"),
                agent=SyntheticAgentParams(**d.get("agent", {})),
                agents=[SyntheticAgentParams(**a) for a in per_agent] if per_agent else None,
                remote=dict(d.get("remote", {})),
                rewire=RewirePolicy(**rewire) if rewire else None,
                uq_samples=int(d.get("uq_samples", 5)),
                concurrency=int(d.get("concurrency", 1)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc
        return cfg.validate()

    def validate(self) -> "ExperimentConfig":
        if not self.topologies:
            raise ConfigError("at least one topology is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.backend not in ("synthetic", "remote"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "remote" and not ({"base_url", "model"} <= self.remote.keys()):
            raise ConfigError("remote backend needs remote.base_url and remote.model")
        labels = [t.label for t in self.topologies]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"topology labels must be unique, got {labels}")
        if not Path(self.dataset).exists():
            raise ConfigError(f"dataset {self.dataset} does not exist")
        return self


def build_agents(cfg: ExperimentConfig, n: int, endpoint: RemoteEndpoint | None = None) -> list:
    if cfg.backend == "remote":
        return [RemoteAgent(i, endpoint) for i in range(n)]
    if cfg.agents is not None:
        if len(cfg.agents) != n:
            raise ConfigError(f"{len(cfg.agents)} per-agent parameter sets for {n} agents")
        return [SyntheticAgent(i, p) for i, p in enumerate(cfg.agents)]
    return [SyntheticAgent(i, cfg.agent) for i in range(n)]


# -- records and aggregation -------------------------------------------------


@dataclass
class ResultRecord:
    item_id: str
    topology: str
    seed: int
    final_answer: str | None
    correct: bool
    agreement: list[float]
    accuracy: list[float]
    prompt_tokens: int
    completion_tokens: int
    uq_probe_tokens: int
    shortcuts: list[dict] = field(default_factory=list)
    uncertainty: list[dict] = field(default_factory=list)

    @property
    def tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_json(self) -> dict:
        return {
            "item_id": self.item_id,
            "topology": self.topology,
            "seed": self.seed,
            "final_answer": self.final_answer,
            "correct": self.correct,
            "agreement": self.agreement,
            "accuracy": self.accuracy,
            "tokens": {
                "prompt": self.prompt_tokens,
                "completion": self.completion_tokens,
                "uq_probe": self.uq_probe_tokens,
            },
            "shortcuts": self.shortcuts,
            "uncertainty": self.uncertainty,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ResultRecord":
        t = d["tokens"]
        return cls(
            item_id=d["item_id"],
            topology=d["topology"],
            seed=int(d["seed"]),
            final_answer=d["final_answer"],
            correct=bool(d["correct"]),
            agreement=[float(x) for x in d["agreement"]],
            accuracy=[float(x) for x in d["accuracy"]],
            prompt_tokens=int(t["prompt"]),
            completion_tokens=int(t["completion"]),
            uq_probe_tokens=int(t["uq_probe"]),
            shortcuts=list(d.get("shortcuts", [])),
            uncertainty=list(d.get("uncertainty", [])),
        )


def record_from_state(state, topology: str, seed: int) -> ResultRecord:
    p, c = state.tokens_total
    return ResultRecord(
        item_id=state.item_id,
        topology=topology,
        seed=seed,
        final_answer=state.final_answer,
        correct=state.final_answer == state.gold,
        agreement=[r.consensus.agreement for r in state.per_round],
        accuracy=[r.consensus.accuracy for r in state.per_round],
        prompt_tokens=p,
        completion_tokens=c,
        uq_probe_tokens=state.uq_probe_tokens,
        shortcuts=state.shortcuts,
        uncertainty=state.uncertainty,
    )


class Aggregator:
    """Per-topology accumulation of result records.

    Stability statistics treat each item's debates across seeds as replicate
    traces and average the per-item statistics over items.
    """

    def __init__(self):
        self._by_topo: dict[str, list[ResultRecord]] = {}

    def add(self, rec: ResultRecord) -> None:
        self._by_topo.setdefault(rec.topology, []).append(rec)

    def extend(self, recs: Iterable[ResultRecord]) -> "Aggregator":
        for r in recs:
            self.add(r)
        return self

    @property
    def topologies(self) -> list[str]:
        return list(self._by_topo)

    def _per_item(self, recs: list[ResultRecord], attr: str) -> list[list[list[float]]]:
        groups: dict[str, list[tuple[int, list[float]]]] = defaultdict(list)
        for r in recs:
            groups[r.item_id].append((r.seed, getattr(r, attr)))
        return [[tr for _, tr in sorted(groups[k], key=lambda x: x[0])] for k in sorted(groups)]

    def stability(self, topology: str, attr: str = "agreement") -> dict:
        per_item = [trace_stability(traces) for traces in self._per_item(self._by_topo[topology], attr)]
        return {
            "mean_curve": np.mean([s["mean_curve"] for s in per_item], axis=0).tolist(),
            "per_round_std": np.mean([s["per_round_std"] for s in per_item], axis=0).tolist(),
            "mean_abs_round_delta": float(np.mean([s["mean_abs_round_delta"] for s in per_item])),
        }

    def summary_rows(self) -> list[dict]:
        if not self._by_topo:
            raise EmptyInput("no result records to summarize")
        rows = []
        for topo, recs in self._by_topo.items():
            st = self.stability(topo)
            n = len(recs)
            prompt = sum(r.prompt_tokens for r in recs) / n
            completion = sum(r.completion_tokens for r in recs) / n
            probe = sum(r.uq_probe_tokens for r in recs) / n
            rows.append(
                {
                    "topology": topo,
                    "records": n,
                    "accuracy": sum(r.correct for r in recs) / n,
                    "tokens_per_question": prompt + completion,
                    "prompt_tokens_per_question": prompt,
                    "completion_tokens_per_question": completion,
                    "uq_probe_tokens_per_question": probe,
                    "tokens_per_question_with_uq": prompt + completion + probe,
                    "mean_abs_round_delta": st["mean_abs_round_delta"],
                    "mean_round_std": float(np.mean(st["per_round_std"])),
                }
            )
        return rows

    def trace_rows(self) -> list[dict]:
        rows = []
        for topo in self._by_topo:
            ag = self.stability(topo, "agreement")
            ac = self.stability(topo, "accuracy")
            for t in range(len(ag["mean_curve"])):
                rows.append(
                    {
                        "topology": topo,
                        "round": t,
                        "mean_agreement": ag["mean_curve"][t],
                        "std_agreement": ag["per_round_std"][t],
                        "mean_accuracy": ac["mean_curve"][t],
                        "std_accuracy": ac["per_round_std"][t],
                    }
                )
        return rows


def summarize(records: Iterable[ResultRecord]) -> dict:
    agg = Aggregator().extend(records)
    rows = agg.summary_rows()
    return {
        "summary": rows,
        "traces": agg.trace_rows(),
        "stability": {t: agg.stability(t) for t in agg.topologies},
    }


def read_records(path: str | Path) -> list[ResultRecord]:
    with open(path, encoding="utf-8") as fh:
        return [ResultRecord.from_json(json.loads(line)) for line in fh if line.strip()]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path | None, columns: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    text = buf.getvalue()
    if path is not None:
        path.write_text(text, encoding="utf-8")
    return text


def write_summaries(agg: Aggregator, out: Path) -> None:
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, agg.summary_rows())
    write_csv(out / "traces.csv", TRACE_COLUMNS, agg.trace_rows())


# -- experiment --------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, client=None) -> dict:
    """Debate every (topology, seed, item) and write results.jsonl, summary.csv, traces.csv.

    Records are written in task order as soon as they (and all earlier tasks)
    are done; if a task fails the records before it stay on disk and the
    failure propagates.
    """
    items = load_dataset(cfg.dataset)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    endpoint = None
    if cfg.backend == "remote":
        endpoint = RemoteEndpoint(**cfg.remote)

    tasks = []
    for spec in cfg.topologies:
        for seed in cfg.seeds:
            seeded = spec.with_seed(seed)
            agents = build_agents(cfg, spec.n, endpoint)
            if client is not None and cfg.backend == "remote":
                for a in agents:
                    a.client = client
            dcfg = DebateConfig(seeded, agents, cfg.rounds, seed, cfg.rewire, cfg.uq_samples, cfg.concurrency).validate()
            for item in items:
                tasks.append((spec.label, seed, dcfg, item))

    def work(task):
        label, seed, dcfg, item = task
        return record_from_state(run_debate(dcfg, item), label, seed)

    agg = Aggregator()
    results_path = out / "results.jsonl"
    with open(results_path, "w", encoding="utf-8") as fh:
        try:
            if cfg.concurrency > 1:
                with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
                    for rec in pool.map(work, tasks):
                        _emit(fh, agg, rec)
            else:
                for task in tasks:
                    _emit(fh, agg, work(task))
        finally:
            fh.flush()
    write_summaries(agg, out)
    return {"results": results_path, "summary": out / "summary.csv", "traces": out / "traces.csv", "records": sum(1 for _ in tasks)}


def _emit(fh, agg: Aggregator, rec: ResultRecord) -> None:
    fh.write(json.dumps(rec.to_json()) + "\n")
    fh.flush()
    agg.add(rec)


# -- topology statistics -----------------------------------------------------


def topology_stats(spec: TopologySpec, seeds: Sequence[int], p_grid: Sequence[float] | None = None, graph_dir: Path | None = None) -> list[dict]:
    """Per-seed clustering/path-length rows followed by one mean row per p."""
    grid = list(p_grid) if (p_grid and spec.kind is Kind.SMALLWORLD) else [spec.p]
    rows = []
    for p in grid:
        base = TopologySpec(spec.kind, spec.n, spec.k, p, 0, spec.name)
        per_seed = []
        for s in seeds:
            seeded = base.with_seed(s)
            stream = substream(s, "rand", "", 0) if seeded.kind is Kind.RAND else substream(s, "topology")
            g, rewired = build_topology(seeded, stream)
            m = metrics(g, rewired)
            per_seed.append(m)
            rows.append({"topology": seeded.label, "p": p, "seed": s, "clustering": m.clustering, "avg_path_len": m.avg_path_len, "connected": m.connected})
            if graph_dir is not None:
                graph_dir.mkdir(parents=True, exist_ok=True)
                (graph_dir / f"{_slug(seeded.label)}_seed{s}.txt").write_text(to_edgelist(g), encoding="utf-8")
        rows.append(
            {
                "topology": base.label,
                "p": p,
                "seed": "mean",
                "clustering": float(np.mean([m.clustering for m in per_seed])),
                "avg_path_len": float(np.mean([m.avg_path_len for m in per_seed])),
                "connected": float(np.mean([m.connected for m in per_seed])),
            }
        )
    return rows


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label).strip("_")


# -- roles ---------------------------------------------------------------------


def run_roles(base: OpinionConfig, seeds: Sequence[int], out: Path | None) -> list[dict]:
    summary = []
    for s in seeds:
        spec = base.topology.with_seed(s)
        cfg = OpinionConfig(spec, base.steps, base.alpha, base.sigma, base.init, s)
        traj, roles, _ = simulate(cfg)
        var = traj.per_node_variance
        summary.append(
            {
                "seed": s,
                "expert": roles.expert,
                "loner": roles.loner,
                "bridge": roles.bridge,
                "var_expert": float(var[roles.expert]),
                "var_loner": float(var[roles.loner]),
                "var_bridge": float(var[roles.bridge]) if roles.bridge is not None else None,
            }
        )
        if out is not None:
            rows = (
                {"step": t, "node": i, "role": roles.role_of(i), "belief": float(traj.beliefs[t, i])}
                for t in range(traj.beliefs.shape[0])
                for i in range(traj.beliefs.shape[1])
            )
            write_csv(out / f"roles_seed{s}.csv", ROLE_COLUMNS, rows)
    if out is not None:
        write_csv(out / "roles_summary.csv", ROLE_SUMMARY_COLUMNS, summary)
    return summary


# -- synthetic dataset -----------------------------------------------------------


def make_arithmetic_dataset(items: int, seed: int = 0) -> list[QARecord]:
    """Short word problems with integer answers, for synthetic runs."""
    rng = substream(seed, "dataset")
    out = []
    for i in range(items):
        a, b, c = rng.randint(2, 40), rng.randint(2, 40), rng.randint(2, 9)
        q = f"A crate holds {a} apples and {b} pears. Each fruit weighs {c} units. What is the total weight?"
        out.append(QARecord(id=f"arith-{i:04d}", question=q, gold=str((a + b) * c)))
    return out


def write_dataset(items: Sequence[QARecord], path: Path) -> None:
    path.write_text("".join(json.dumps(it.to_json()) + "\n" for it in items), encoding="utf-8")


# -- argument parsing ----------------------------------------------------------


def parse_seeds(text: str) -> list[int]:
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def parse_floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _load_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swarmtopo", description="Small-world topologies for multi-agent debate")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("debate", help="run debates over topologies and seeds")
    d.add_argument("--config", required=True)
    d.add_argument("--output")
    d.add_argument("--seeds", type=parse_seeds)
    d.add_argument("--backend", choices=["synthetic", "remote"])
    d.add_argument("--base-url")
    d.add_argument("--model")
    d.add_argument("--concurrency", type=int)

    t = sub.add_parser("topology-stats", help="clustering and path length of a topology")
    t.add_argument("--config", help="JSON with a 'topology' object and optional 'seeds', 'p_grid'")
    t.add_argument("--kind", choices=[k.value for k in Kind])
    t.add_argument("--n", type=int)
    t.add_argument("--k", type=int)
    t.add_argument("--p", type=float)
    t.add_argument("--p-grid", type=parse_floats)
    t.add_argument("--seeds", type=parse_seeds)
    t.add_argument("--output")

    r = sub.add_parser("roles", help="Expert/Loner/Bridge opinion-dynamics sweep")
    r.add_argument("--config", help="JSON with keys n, k, p, alpha, sigma, steps, seeds")
    r.add_argument("--n", type=int)
    r.add_argument("--k", type=int)
    r.add_argument("--p", type=float)
    r.add_argument("--alpha", type=float)
    r.add_argument("--sigma", type=float)
    r.add_argument("--steps", type=int)
    r.add_argument("--seeds", type=parse_seeds)
    r.add_argument("--output")

    s = sub.add_parser("summarize", help="re-aggregate an existing results.jsonl")
    s.add_argument("--input", required=True)
    s.add_argument("--output")

    m = sub.add_parser("make-dataset", help="write a synthetic arithmetic dataset")
    m.add_argument("--items", type=int, default=50)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--output", required=True)
    return parser


def _cmd_debate(args) -> int:
    raw = _load_json(args.config)
    if args.output:
        raw["output"] = args.output
    if args.seeds:
        raw["seeds"] = args.seeds
    if args.backend:
        raw["backend"] = args.backend
    if args.concurrency:
        raw["concurrency"] = args.concurrency
    remote = raw.setdefault("remote", {})
    if args.base_url:
        remote["base_url"] = args.base_url
    if args.model:
        remote["model"] = args.model
    cfg = ExperimentConfig.from_dict(raw, Path(args.config).parent)
    res = run_experiment(cfg)
    print(f"wrote {res['records']} records to {res['results']}")
    print(Path(res["summary"]).read_text(), end="")
    return 0


def _cmd_topology_stats(args) -> int:
    raw = _load_json(args.config) if args.config else {}
    topo = dict(raw.get("topology", {}))
    for key in ("kind", "n", "k", "p"):
        val = getattr(args, key)
        if val is not None:
            topo[key] = val
    if "kind" not in topo or "n" not in topo:
        raise ConfigError("topology-stats needs --kind and --n (or a config 'topology')")
    spec = topology_from_dict(topo)
    seeds = args.seeds or [int(x) for x in raw.get("seeds", [0])]
    grid = args.p_grid or raw.get("p_grid")
    out = Path(args.output) if args.output else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rows = topology_stats(spec, seeds, grid, out / "graphs" if out else None)
    text = write_csv(out / "topology_stats.csv" if out else None, TOPOLOGY_COLUMNS, rows)
    print(text, end="")
    return 0


def _cmd_roles(args) -> int:
    raw = _load_json(args.config) if args.config else {}

    def pick(name, default):
        v = getattr(args, name)
        return v if v is not None else raw.get(name, default)

    spec = TopologySpec(Kind.SMALLWORLD, pick("n", 30), pick("k", 4), pick("p", 0.15)).validate()
    base = OpinionConfig(spec, pick("steps", 200), pick("alpha", 0.3), pick("sigma", 0.4))
    seeds = args.seeds or [int(x) for x in raw.get("seeds", [0])]
    out = Path(args.output) if args.output else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    summary = run_roles(base, seeds, out)
    print(write_csv(None, ROLE_SUMMARY_COLUMNS, summary), end="")
    return 0


def _cmd_summarize(args) -> int:
    recs = read_records(args.input)
    agg = Aggregator().extend(recs)
    out = Path(args.output) if args.output else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_summaries(agg, out)
    print(write_csv(None, SUMMARY_COLUMNS, agg.summary_rows()), end="")
    return 0


def _cmd_make_dataset(args) -> int:
    path = Path(args.output)
    write_dataset(make_arithmetic_dataset(args.items, args.seed), path)
    print(f"wrote {args.items} items to {path}")
    return 0


COMMANDS = {
    "debate": _cmd_debate,
    "topology-stats": _cmd_topology_stats,
    "roles": _cmd_roles,
    "summarize": _cmd_summarize,
    "make-dataset": _cmd_make_dataset,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DatasetError, GraphError, EmptyInput, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AgentFailure as exc:
        print(f"error: backend failure, partial results kept: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
