import csv
import json
from pathlib import Path

import pytest

from swarmtopo import cli
from swarmtopo.agents import SyntheticAgentParams
from swarmtopo.engine import ConfigError, trace_stability
from swarmtopo.graph import Kind, TopologySpec

import oracles


def write_config(tmp_path, **overrides):
    data = tmp_path / "data.jsonl"
    if not data.exists():
        cli.write_dataset(cli.make_arithmetic_dataset(10, seed=1), data)
    cfg = {
        "dataset": "data.jsonl",
        "topologies": [
            {"kind": "smallworld", "n": 8, "k": 2, "p": 0.1},
            {"kind": "rand", "n": 8, "k": 2},
        ],
        "seeds": [0, 1, 2],
        "rounds": 3,
        "output": str(tmp_path / "out"),
        "agent": {"q": 0.6, "beta": 0.7, "distractors": 3},
    }
    cfg.update(overrides)
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(cfg))
    return path


def load_cfg(path):
    return cli.ExperimentConfig.from_dict(json.loads(path.read_text()), path.parent)


def record(topology="ring(k=2)", seed=0, item="a", correct=True, agreement=None, prompt=60, completion=40, probe=0):
    agreement = agreement or [0.5, 1.0]
    return cli.ResultRecord(item, topology, seed, "1" if correct else "2", correct, agreement, agreement, prompt, completion, probe)


# -- run_experiment ----------------------------------------------------------


def test_record_cardinality(tmp_path):
    res = cli.run_experiment(load_cfg(write_config(tmp_path)))
    lines = Path(res["results"]).read_text().splitlines()
    assert len(lines) == 2 * 3 * 10
    keys = {(json.loads(l)["topology"], json.loads(l)["seed"], json.loads(l)["item_id"]) for l in lines}
    assert len(keys) == 60


def test_perfect_agents_are_always_right(tmp_path):
    cfg = load_cfg(write_config(tmp_path, agent={"q": 1.0, "beta": 0.0}))
    cli.run_experiment(cfg)
    with open(tmp_path / "out" / "summary.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert all(r["accuracy"] == "1.0" for r in rows)


def test_rerun_is_byte_identical(tmp_path):
    path = write_config(tmp_path)
    cli.run_experiment(load_cfg(path))
    first = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    cli.run_experiment(load_cfg(path))
    assert {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()} == first
    conc = write_config(tmp_path, concurrency=8, output=str(tmp_path / "conc"))
    cli.run_experiment(load_cfg(conc))
    assert {p.name: p.read_bytes() for p in (tmp_path / "conc").iterdir()} == first


def test_records_round_trip_and_correctness_flag(tmp_path):
    res = cli.run_experiment(load_cfg(write_config(tmp_path)))
    items = {it.id: it for it in cli.make_arithmetic_dataset(10, seed=1)}
    for line in Path(res["results"]).read_text().splitlines():
        d = json.loads(line)
        rec = cli.ResultRecord.from_json(d)
        assert rec.to_json() == d
        assert cli.ResultRecord.from_json(rec.to_json()) == rec
        assert rec.correct == (rec.final_answer == items[rec.item_id].gold)
        assert len(rec.agreement) == 4


def test_summarize_matches_incremental_aggregation(tmp_path):
    path = write_config(tmp_path)
    cli.run_experiment(load_cfg(path))
    out = tmp_path / "out"
    recs = cli.read_records(out / "results.jsonl")
    agg = cli.Aggregator().extend(reversed(recs))
    # record order only changes row order, never values
    by_topo = {r["topology"]: r for r in agg.summary_rows()}
    for row in cli.Aggregator().extend(recs).summary_rows():
        assert by_topo[row["topology"]] == pytest.approx(row)
    assert cli.write_csv(None, cli.TRACE_COLUMNS, cli.Aggregator().extend(recs).trace_rows()) == (out / "traces.csv").read_text()


def test_rewire_policy_reaches_records(tmp_path):
    path = write_config(
        tmp_path,
        topologies=[{"kind": "ring", "n": 8, "k": 2}],
        rewire={"mode": "entropy_bridge", "per_round_budget": 1},
        uq_samples=3,
    )
    res = cli.run_experiment(load_cfg(path))
    recs = cli.read_records(res["results"])
    assert all(r.uq_probe_tokens > 0 for r in recs)
    assert all(1 <= len(r.shortcuts) <= 2 for r in recs)
    assert all(set(s) == {"round", "shortcut", "mode"} for r in recs for s in r.shortcuts)


def test_per_agent_params(tmp_path):
    agents = [{"q": 1.0, "beta": 0.0}] * 8
    path = write_config(tmp_path, topologies=[{"kind": "complete", "n": 8}], agents=agents, agent={"q": 0.0, "beta": 0.0})
    cli.run_experiment(load_cfg(path))
    assert cli.read_records(tmp_path / "out" / "results.jsonl")[0].correct


# -- config validation ---------------------------------------------------------


@pytest.mark.parametrize(
    "override",
    [
        {"topologies": []},
        {"seeds": []},
        {"backend": "carrier-pigeon"},
        {"backend": "remote"},
        {"dataset": "missing.jsonl"},
        {"topologies": [{"kind": "ring", "n": 8, "k": 2}, {"kind": "ring", "n": 8, "k": 2}]},
        {"topologies": [{"kind": "ring", "n": 8, "k": 3}]},
        {"agent": {"temperature": 3}},
    ],
)
def test_invalid_configs(tmp_path, override):
    with pytest.raises((ConfigError, ValueError)):
        load_cfg(write_config(tmp_path, **override))


# -- summarize -----------------------------------------------------------------


def test_summary_example_all_correct():
    rows = cli.summarize([record(seed=s, item=i) for s in range(3) for i in "ab"])["summary"]
    assert len(rows) == 1
    assert rows[0]["accuracy"] == 1.0
    assert rows[0]["tokens_per_question"] == 100
    assert rows[0]["records"] == 6


def test_summary_disjoint_topologies():
    rows = cli.summarize([record(topology="x"), record(topology="y", correct=False)])["summary"]
    assert [(r["topology"], r["accuracy"]) for r in rows] == [("x", 1.0), ("y", 0.0)]


def test_uq_probe_tokens_reported_separately():
    row = cli.summarize([record(probe=50)])["summary"][0]
    assert row["tokens_per_question"] == 100
    assert row["uq_probe_tokens_per_question"] == 50
    assert row["tokens_per_question_with_uq"] == 150


def test_summary_stability_matches_trace_stability():
    traces = [[0.5, 0.75, 1.0], [0.25, 0.5, 0.5], [1.0, 1.0, 1.0]]
    recs = [record(seed=s, agreement=t) for s, t in enumerate(traces)]
    st = cli.summarize(recs)["stability"]["ring(k=2)"]
    ref = trace_stability(traces)
    assert st["per_round_std"] == pytest.approx(ref["per_round_std"], abs=1e-15)
    assert st["mean_abs_round_delta"] == pytest.approx((0.25 + 0.25 + 0.25 + 0.0) / 6, abs=1e-15)


def test_empty_input():
    with pytest.raises(cli.EmptyInput):
        cli.summarize([])


# -- topology stats ------------------------------------------------------------


def test_topology_stats_complete():
    rows = cli.topology_stats(TopologySpec(Kind.COMPLETE, 8), [0, 1, 2])
    assert all(r["clustering"] == 1.0 and r["avg_path_len"] == 1.0 for r in rows)
    assert rows[-1]["seed"] == "mean"


def test_topology_stats_ring():
    rows = cli.topology_stats(TopologySpec(Kind.RING, 8, 2), [0])
    assert rows[0]["clustering"] == 0.0
    assert rows[0]["avg_path_len"] == 16 / 7
    edges = [(i, (i + 1) % 8) for i in range(8)]
    assert oracles.avg_path_len(8, edges) == (pytest.approx(16 / 7), True)


def test_topology_stats_grid_writes_graphs(tmp_path):
    rows = cli.topology_stats(TopologySpec(Kind.SMALLWORLD, 20, 4), [0, 1], [0.0, 0.5], tmp_path)
    assert [r["seed"] for r in rows] == [0, 1, "mean", 0, 1, "mean"]
    assert len(list(tmp_path.glob("*.txt"))) == 4


# -- main ----------------------------------------------------------------------


def test_main_debate_and_summarize(tmp_path, capsys):
    path = write_config(tmp_path)
    assert cli.main(["debate", "--config", str(path), "--seeds", "0-1"]) == 0
    out = capsys.readouterr().out
    assert "wrote 40 records" in out
    assert cli.main(["summarize", "--input", str(tmp_path / "out" / "results.jsonl"), "--output", str(tmp_path / "re")]) == 0
    assert (tmp_path / "re" / "summary.csv").read_text() == (tmp_path / "out" / "summary.csv").read_text()


def test_main_topology_stats(tmp_path, capsys):
    assert cli.main(["topology-stats", "--kind", "ring", "--n", "8", "--k", "2", "--output", str(tmp_path)]) == 0
    text = (tmp_path / "topology_stats.csv").read_text()
    assert text.splitlines()[0] == ",".join(cli.TOPOLOGY_COLUMNS)
    assert repr(16 / 7) in text


def test_main_roles(tmp_path):
    assert cli.main(["roles", "--seeds", "0-1", "--steps", "20", "--output", str(tmp_path)]) == 0
    assert (tmp_path / "roles_seed0.csv").read_text().splitlines()[0] == "step,node,role,belief"
    assert len((tmp_path / "roles_seed1.csv").read_text().splitlines()) == 1 + 21 * 30
    assert len((tmp_path / "roles_summary.csv").read_text().splitlines()) == 3


def test_main_make_dataset(tmp_path):
    path = tmp_path / "d.jsonl"
    assert cli.main(["make-dataset", "--items", "5", "--output", str(path)]) == 0
    rows = [json.loads(l) for l in path.read_text().splitlines()]
    assert [r["id"] for r in rows] == [f"arith-{i:04d}" for i in range(5)]


def test_main_error_exit_codes(tmp_path, capsys):
    assert cli.main(["debate", "--config", str(tmp_path / "nope.json")]) == 2
    bad = write_config(tmp_path, seeds=[])
    assert cli.main(["debate", "--config", str(bad)]) == 2
    (tmp_path / "data.jsonl").write_text('{"id": "x"}\n')
    assert cli.main(["debate", "--config", str(write_config(tmp_path))]) == 2
    assert cli.main(["topology-stats", "--kind", "ring", "--n", "8", "--k", "3"]) == 2
    assert "error:" in capsys.readouterr().err


def test_parse_seeds():
    assert cli.parse_seeds("0-3,7, 9") == [0, 1, 2, 3, 7, 9]


def test_remote_backend_through_cli(tmp_path, stub_server):
    stub_server.default = (200, stub_server.reply("Adding then multiplying. Final answer: 42", 100, 20))
    path = write_config(
        tmp_path,
        topologies=[{"kind": "ring", "n": 3, "k": 2}],
        seeds=[0],
        rounds=1,
        backend="remote",
        remote={"base_url": stub_server.base_url, "model": "stub-model", "backoff": 0.0},
    )
    assert cli.main(["debate", "--config", str(path)]) == 0
    recs = cli.read_records(tmp_path / "out" / "results.jsonl")
    assert len(recs) == 10
    assert all(r.prompt_tokens == 100 * 6 and r.completion_tokens == 20 * 6 for r in recs)
    assert len(stub_server.requests) == 60


def test_remote_failure_keeps_partial_results(tmp_path, stub_server):
    calls = {"n": 0}

    def responder(body):
        calls["n"] += 1
        if calls["n"] > 6:
            return 500, {"error": "down"}
        return 200, stub_server.reply("Final answer: 1")

    stub_server.responder = responder
    path = write_config(
        tmp_path,
        topologies=[{"kind": "ring", "n": 3, "k": 2}],
        seeds=[0],
        rounds=1,
        backend="remote",
        remote={"base_url": stub_server.base_url, "model": "m", "backoff": 0.0},
    )
    assert cli.main(["debate", "--config", str(path)]) == 3
    lines = (tmp_path / "out" / "results.jsonl").read_text().splitlines()
    assert len(lines) == 1
