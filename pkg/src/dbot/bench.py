"""Micro-benchmark harness: load anomaly cases, run the engine, score with Acc."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

from .anomaly import Alert, Anomaly
from .collab import ExpertProfile, run_collaboration
from .gateway import Gateway, load_rules
from .knowledge import KnowledgeBase
from .retrieval import DEFAULT_KS_THRESHOLD, AbnormalQuery, detect_abnormal_metrics, load_metric_series, split_reference
from .toolkit import ScriptedExecutor, ToolRegistry
from .treesearch import MAX_CAUSES, SearchConfig

APPLICATIONS = ("IoT", "E-Commerce", "Financial", "BusinessIntel", "FileSharing", "SocialMedia")

ROOT_CAUSES = (
    "sync_commits",
    "many_inserts",
    "high_updates",
    "many_deletes",
    "index_missing",
    "redundant_indexes",
    "large_data_insert",
    "large_data_fetch",
    "poor_join",
    "correlated_subquery",
)

# case counts of the original corpus, kept as metadata only
PAPER_CASE_COUNTS = {"IoT": 83, "E-Commerce": 211, "Financial": 31, "BusinessIntel": 20, "FileSharing": 47, "SocialMedia": 147}


class EmptyLabels(ValueError):
    pass


class SchemaViolation(ValueError):
    pass


def snake(label: str) -> str:
    return "_".join(label.strip().lower().replace("-", " ").replace("_", " ").split())


@dataclass(frozen=True)
class AccParams:
    sigma: float = 0.1
    max_causes: int = MAX_CAUSES

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


class AccResult(NamedTuple):
    acc: float
    A_c: int
    A_a: int
    A_w: int


def accuracy(predicted: Sequence[str], labels: Sequence[str], params: AccParams = AccParams()) -> AccResult:
    """Precision-style score that charges ``sigma`` per wrong cause.

    Predictions are normalised, deduplicated (first occurrence wins) and then
    cut to ``max_causes``.
    """
    truth = {snake(x) for x in labels}
    if not truth:
        raise EmptyLabels("labels must be non-empty")
    preds = list(dict.fromkeys(snake(p) for p in predicted))[: params.max_causes]
    a_c = sum(1 for p in preds if p in truth)
    a_w = len(preds) - a_c
    a_a = len(truth)
    if a_a > 0 and a_c >= params.sigma * a_w:
        acc = (a_c - params.sigma * a_w) / a_a
    else:
        acc = 0.0
    return AccResult(acc, a_c, a_a, a_w)


@dataclass
class BenchmarkCase:
    case_id: str
    application: str
    description: str
    labels: list[str]
    start_time: int
    end_time: int
    alerts: list[dict] = field(default_factory=list)
    fixtures: dict[str, Path] = field(default_factory=dict)
    abnormal_metrics: list[str] = field(default_factory=list)
    heval: float | None = None


_REQUIRED = ("case_id", "application", "description", "labels", "start_time", "end_time")


def load_cases(path: str | Path) -> list[BenchmarkCase]:
    """Read and validate cases.json; fixture paths resolve relative to the file."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise SchemaViolation("cases file must hold a JSON array")
    cases, seen = [], set()
    for i, d in enumerate(raw):
        cid = d.get("case_id", f"#{i}")
        missing = [k for k in _REQUIRED if k not in d]
        if missing:
            raise SchemaViolation(f"case {cid}: missing {missing}")
        if cid in seen:
            raise SchemaViolation(f"case {cid}: duplicate case_id")
        seen.add(cid)
        if d["application"] not in APPLICATIONS:
            raise SchemaViolation(f"case {cid}: unknown application {d['application']!r}")
        labels = [snake(x) for x in d["labels"]]
        if not labels or any(x not in ROOT_CAUSES for x in labels):
            raise SchemaViolation(f"case {cid}: labels must be non-empty and drawn from {ROOT_CAUSES}")
        if not d["start_time"] < d["end_time"]:
            raise SchemaViolation(f"case {cid}: start_time must precede end_time")
        fixtures = {k: (path.parent / v) for k, v in d.get("fixtures", {}).items()}
        for k, p in fixtures.items():
            if not p.exists():
                raise SchemaViolation(f"case {cid}: fixture {k} not found at {p}")
        cases.append(
            BenchmarkCase(
                cid,
                d["application"],
                d["description"],
                labels,
                int(d["start_time"]),
                int(d["end_time"]),
                d.get("alerts", []),
                fixtures,
                d.get("abnormal_metrics", []),
                d.get("heval"),
            )
        )
    return cases


def application_counts(cases: Sequence[BenchmarkCase]) -> dict[str, int]:
    return {app: sum(1 for c in cases if c.application == app) for app in APPLICATIONS}


@dataclass
class EngineConfig:
    knowledge: KnowledgeBase
    registry: ToolRegistry
    experts: list[ExpertProfile] | None = None
    search: SearchConfig = field(default_factory=SearchConfig)
    seed: int = 0
    ks_threshold: float = DEFAULT_KS_THRESHOLD
    review_rounds: int = 1
    refine_budget: int = 5
    acc: AccParams = field(default_factory=AccParams)
    executor_path: Path | None = None
    metrics_path: Path | None = None

    def default_experts(self) -> list[ExpertProfile]:
        if self.experts:
            return self.experts
        return [ExpertProfile("DBA Expert", 0, [c.name for c in self.knowledge], [s.api_name for s in self.registry.specs()])]


@dataclass
class CaseResult:
    case_id: str
    application: str
    predicted: list[str]
    labels: list[str]
    A_c: int
    A_a: int
    A_w: int
    acc: float
    heval: float | None = None
    error: str | None = None


def case_anomaly(case: BenchmarkCase, engine: EngineConfig) -> Anomaly:
    metrics_path = case.fixtures.get("metrics", engine.metrics_path)
    window = (case.start_time, case.end_time)
    if metrics_path is not None:
        reference, current = split_reference(load_metric_series(metrics_path), *window)
        query = detect_abnormal_metrics(reference, current, engine.ks_threshold, window=window)
        if case.abnormal_metrics:
            query = AbnormalQuery(query.metrics | frozenset(case.abnormal_metrics), window)
    else:
        query = AbnormalQuery(frozenset(case.abnormal_metrics), window)
    alerts = [Alert(a["name"], a.get("severity", "warning"), a.get("summary", "")) for a in case.alerts]
    anomaly = Anomaly(case.start_time, case.end_time, alerts, query)
    anomaly.description = f"{case.description}\n{anomaly.description}"
    return anomaly


def run_case(case: BenchmarkCase, engine: EngineConfig) -> CaseResult:
    try:
        rules = load_rules(case.fixtures["rules"]) if "rules" in case.fixtures else []
        gateway = Gateway.scripted(rules, seed=engine.seed)
        executor_path = case.fixtures.get("executor", engine.executor_path)
        executor = ScriptedExecutor.load(executor_path) if executor_path else ScriptedExecutor()
        result = run_collaboration(
            case_anomaly(case, engine),
            engine.default_experts(),
            engine.knowledge,
            engine.registry,
            gateway,
            executor,
            engine.search,
            engine.review_rounds,
            engine.refine_budget,
        )
    except Exception as exc:  # one broken case must not sink the run
        return CaseResult(case.case_id, case.application, [], case.labels, 0, len(case.labels), 0, 0.0, case.heval, f"{type(exc).__name__}: {exc}")
    predicted = result.report.root_causes
    score = accuracy(predicted, case.labels, engine.acc)
    return CaseResult(case.case_id, case.application, predicted, case.labels, score.A_c, score.A_a, score.A_w, score.acc, case.heval)


@dataclass
class BenchmarkResult:
    results: list[CaseResult]

    @property
    def errors(self) -> list[CaseResult]:
        return [r for r in self.results if r.error]

    @property
    def mean_acc(self) -> float:
        return sum(r.acc for r in self.results) / len(self.results) if self.results else 0.0

    def per_application(self) -> dict[str, tuple[int, float]]:
        out = {}
        for app in APPLICATIONS:
            rows = [r for r in self.results if r.application == app]
            if rows:
                out[app] = (len(rows), sum(r.acc for r in rows) / len(rows))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["case_id", "application", "predicted", "labels", "A_c", "A_a", "A_w", "acc", "heval", "error"])
        for r in self.results:
            w.writerow(
                [r.case_id, r.application, ";".join(r.predicted), ";".join(r.labels), r.A_c, r.A_a, r.A_w, f"{r.acc:.4f}", "" if r.heval is None else r.heval, r.error or ""]
            )
        w.writerow(["mean", "", "", "", "", "", "", f"{self.mean_acc:.4f}", "", ""])
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = ["| case | application | predicted | labels | acc |", "|---|---|---|---|---|"]
        for r in self.results:
            lines.append(f"| {r.case_id} | {r.application} | {', '.join(r.predicted) or '-'} | {', '.join(r.labels)} | {r.acc:.4f} |")
        lines += ["", "| application | cases | mean Acc |", "|---|---|---|"]
        for app, (n, mean) in self.per_application().items():
            lines.append(f"| {app} | {n} | {mean:.4f} |")
        lines.append(f"| **all** | {len(self.results)} | {self.mean_acc:.4f} |")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "results.csv").write_text(self.to_csv(), encoding="utf-8")
        (out_dir / "results.md").write_text(self.to_markdown(), encoding="utf-8")


def run_benchmark(cases: Sequence[BenchmarkCase], engine: EngineConfig, workers: int = 1) -> BenchmarkResult:
    """Score every case; each case gets its own gateway and bus."""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: run_case(c, engine), cases))
    else:
        results = [run_case(c, engine) for c in cases]
    return BenchmarkResult(results)
