import json

import pytest

from dbot.anomaly import Anomaly, profile_anomaly
from dbot.bus import BROADCAST
from dbot.collab import (
    ExpertProfile,
    RunningSummary,
    assign_experts,
    generate_report,
    load_experts,
    prepare_experts,
    run_collaboration,
    summarize_record,
)
from dbot.doclearning import ChunkCluster
from dbot.fixtures import path
from dbot.gateway import Gateway
from dbot.treesearch import DiagnosisOutcome, SearchConfig, TranscriptRecord
from scenarios import fixture_anomaly, fixture_parts


def experts_for(gw, reg, kb):
    return load_experts(path("experts.json"), kb, reg, gw)


def collaborate(scenario, names=None, **kw):
    gw, reg, kb, ex = fixture_parts(scenario)
    experts = experts_for(gw, reg, kb)
    if names:
        experts = [e for e in experts if e.name in names]
    return run_collaboration(fixture_anomaly(), experts, kb, reg, gw, ex, SearchConfig(), **kw)


def test_single_cause_report():
    result = collaborate("scenario_large_data_fetch.json")
    assert [r.profile.name for r in result.runs] == ["Query Expert"]
    assert result.report.root_causes == ["large data fetch"]
    assert result.report.status == "resolved"
    assert all(r.search.turns <= 20 for r in result.runs)
    assert result.advice == []  # a lone expert has nobody to review it


def test_two_experts_union_their_causes():
    result = collaborate("scenario_two_causes.json")
    assert [r.profile.name for r in result.runs] == ["Query Expert", "Write Expert"]
    assert sorted(result.report.root_causes) == ["large data fetch", "large data insert"]
    assert "### Query Expert" in result.report.diagnosis_process and "### Write Expert" in result.report.diagnosis_process
    for name in ("Query Expert", "Write Expert"):
        alone = collaborate("scenario_two_causes.json", names=[name])
        assert len(alone.report.root_causes) <= 1


def test_findings_flow_across_experts():
    result = collaborate("scenario_two_causes.json")
    log = result.bus.log
    assert {m.publisher for m in log} == {"Query Expert", "Write Expert"}
    assert all(m.topic == BROADCAST for m in log)
    query, write = result.runs
    assert any(n.startswith("Write Expert ran") for n in query.search.notes)
    assert any(n.startswith("Query Expert ran") for n in write.search.notes)
    assert result.bus.closed


def test_cross_review_advice_is_applied():
    gw, reg, kb, ex = fixture_parts("scenario_two_causes.json")
    gw.backend.rules.insert(0, type(gw.backend.rules[0])("Please review", "Check the insert volume too."))
    experts = experts_for(gw, reg, kb)
    result = run_collaboration(fixture_anomaly(), experts, kb, reg, gw, ex, SearchConfig())
    (advice,) = result.advice
    assert advice["Query Expert"] == ["Write Expert: Check the insert volume too."]
    assert "Check the insert volume too." in result.runs[0].search.advice[0]


def test_collaboration_is_deterministic(tmp_path):
    a = collaborate("scenario_two_causes.json")
    b = collaborate("scenario_two_causes.json")
    assert a.report.to_markdown() == b.report.to_markdown()
    assert [m for m in a.bus.log] == [m for m in b.bus.log]


def test_assign_experts_by_name_and_fallback():
    gw, reg, kb, _ = fixture_parts("scenario_two_causes.json")
    experts = experts_for(gw, reg, kb)
    assert [e.name for e in assign_experts("cpu is high", experts, gw)] == ["Query Expert", "Write Expert"]
    silent = Gateway.scripted([])
    picked = assign_experts("cpu is high", experts, silent)
    assert len(picked) == 2
    with pytest.raises(ValueError):
        assign_experts("x", [], gw)


def test_assignment_ignores_partial_names():
    gw = Gateway.scripted([{"matcher": "Choose the experts", "response": "Indexing Expert"}])
    experts = [ExpertProfile("Index Expert", 0, [], [], centroid=[1.0, 0.0]), ExpertProfile("Indexing Expert", 1, [], [], centroid=[0.0, 1.0])]
    assert [e.name for e in assign_experts("x", experts, gw)] == ["Indexing Expert"]


def test_running_summary_model_and_fallback():
    rec = TranscriptRecord("t", "fetch_slow_queries", {}, " ".join(f"w{i}" for i in range(30)))
    fallback = summarize_record(RunningSummary("E"), rec, Gateway.scripted([]))
    assert fallback.lines == ["Executed fetch_slow_queries and observed " + " ".join(f"w{i}" for i in range(20))]
    gw = Gateway.scripted([{"matcher": "[New record]", "response": "- Slow query found\n- CPU is high"}])
    s = summarize_record(fallback, rec, gw)
    assert s.lines == ["Slow query found", "CPU is high"]
    assert "[Current summary]\n- Executed fetch_slow_queries" in gw.backend.prompts[0]


def test_generate_report_orders_by_votes_and_caps():
    anomaly = fixture_anomaly()
    o1 = DiagnosisOutcome(["a", "b"], [], 1, [], "resolved", votes=1, cause_solutions={"a": ["fix a"]})
    o2 = DiagnosisOutcome(["B", "c", "d", "e"], [], 1, [], "resolved", votes=3)
    report = generate_report([("x", o1, None), ("y", o2, RunningSummary("y", ["did"]))], anomaly)
    assert report.root_causes == ["b", "c", "d", "e"]
    empty = generate_report([("x", DiagnosisOutcome([], [], None, []), None)], anomaly)
    assert empty.status == "inconclusive" and empty.root_causes == []
    assert "- (no records)" in empty.diagnosis_process


def test_report_files(tmp_path):
    result = collaborate("scenario_large_data_fetch.json")
    result.report.write(tmp_path)
    md = (tmp_path / "report.md").read_text()
    assert md.startswith("# Diagnosis of Load_High\n")
    assert "**Anomaly date:** 2023-05-20" in md and "## Root causes\n\n- large data fetch" in md
    data = json.loads((tmp_path / "report.json").read_text())
    assert set(data) == {"title", "anomaly_date", "description", "root_causes", "solutions", "diagnosis_process", "status"}


def test_prepare_experts_from_clusters():
    gw, reg, kb, _ = fixture_parts("scenario_two_causes.json")
    clusters = [
        ChunkCluster(1, ["large_data_insert", "sync_commits"], (0, 0, 0)),
        ChunkCluster(-1, ["many_dead_tuples"], (0, 0, 0)),
        ChunkCluster(0, ["large_data_fetch", "missing_index"], (0, 0, 0)),
    ]
    experts = prepare_experts(clusters, kb, reg, gw, names={0: "Query Expert"}, n_tools=2)
    assert [e.name for e in experts] == ["Query Expert", "Expert 1"]
    assert all(len(e.tool_apis) == 2 and len(e.centroid) == 64 for e in experts)
    assert "large_data_fetch" in experts[0].prompt_template
    with pytest.raises(ValueError):
        prepare_experts([], kb, reg, gw)


def test_load_experts_rejects_unknown_tool(tmp_path):
    gw, reg, kb, _ = fixture_parts("scenario_two_causes.json")
    p = tmp_path / "e.json"
    p.write_text(json.dumps([{"name": "X", "chunk_ids": [], "tool_apis": ["nope"]}]))
    with pytest.raises(KeyError):
        load_experts(p, kb, reg, gw)


def test_anomaly_profile():
    a = profile_anomaly({"start_time": 1684600070, "end_time": 1684600130, "alerts": [{"name": "Load_High"}]})
    assert a.title == "Diagnosis of Load_High" and a.date == "2023-05-20"
    assert "start_time 1684600070" in a.description
    with pytest.raises(ValueError):
        Anomaly(5, 5)
