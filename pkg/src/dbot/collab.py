"""Multi-expert diagnosis: assignment, shared findings, running summaries, review, report."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .anomaly import Anomaly
from .bus import BROADCAST, MessageBus, Subscription
from .doclearning import ChunkCluster, chunk_text
from .gateway import Gateway, cosine
from .knowledge import KnowledgeBase
from .retrieval import CorpusStats
from .toolkit import Executor, ToolMatcher, ToolRegistry
from .treesearch import (
    MAX_CAUSES,
    DiagnosisOutcome,
    DiagnosisSearch,
    DiagnosisTreeNode,
    SearchConfig,
    TranscriptRecord,
    normalize_label,
)

DEFAULT_EXPERT_TOOLS = 5
DEFAULT_REFINE_BUDGET = 5
FALLBACK_EXPERTS = 2

ASSIGN_PROMPT = (
    "Choose the experts best suited to diagnose the anomaly above. "
    "Answer with their names, separated by commas."
)
SUMMARY_PROMPT = (
    "Fold the main idea of the new record into the current summary. "
    "Return the full updated summary, one bullet line per point."
)
REVIEW_PROMPT = (
    "Please review the above diagnosis results, and point out analysis that looks wrong "
    "or unclear together with what should be checked to fix it."
)


@dataclass
class ExpertProfile:
    name: str
    cluster_id: int
    chunk_ids: list[str]
    tool_apis: list[str]
    prompt_template: str = ""
    centroid: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.prompt_template:
            self.prompt_template = expert_template(self.name, self.chunk_ids)


def expert_template(name: str, chunk_ids: Sequence[str]) -> str:
    knows = ", ".join(chunk_ids) or "general database operations"
    return (
        f"You are the {name}, a database operations expert.\n"
        f"Your knowledge covers: {knows}.\n"
        "Task: find the root causes of the anomaly and a remedy for each.\n"
        "Steps: check the abnormal metrics first, call tools to collect evidence, apply "
        "your knowledge step by step, and stop exploring an action once it adds nothing."
    )


def prepare_experts(
    clusters: Sequence[ChunkCluster],
    knowledge: KnowledgeBase,
    registry: ToolRegistry,
    gateway: Gateway,
    names: dict[int, str] | None = None,
    n_tools: int = DEFAULT_EXPERT_TOOLS,
    max_experts: int | None = None,
) -> list[ExpertProfile]:
    """One expert per non-noise cluster, equipped with the tools closest to its knowledge."""
    if not clusters:
        raise ValueError("need at least one cluster")
    matcher = ToolMatcher(registry, gateway)
    experts = []
    for cl in sorted(clusters, key=lambda c: c.cluster_id):
        if cl.cluster_id < 0:
            continue
        chunks = [knowledge.get(n) for n in cl.member_chunk_ids]
        text = "\n".join(f"{c.name}: {c.content}" for c in chunks)
        tools = [s.api_name for s, _ in matcher.match_tools(text, n_tools)] if len(registry) else []
        centroid = np.mean([gateway.embed(chunk_text(c)) for c in chunks], axis=0)
        name = (names or {}).get(cl.cluster_id, f"Expert {cl.cluster_id}")
        experts.append(ExpertProfile(name, cl.cluster_id, list(cl.member_chunk_ids), tools, centroid=centroid.tolist()))
    return experts[:max_experts] if max_experts else experts


def load_experts(path: str | Path, knowledge: KnowledgeBase, registry: ToolRegistry, gateway: Gateway) -> list[ExpertProfile]:
    """Read explicit expert profiles, or a clusters.json to derive them from."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if data and "member_chunk_ids" in data[0]:
        return prepare_experts([ChunkCluster.from_dict(d) for d in data], knowledge, registry, gateway)
    experts = []
    for i, d in enumerate(data):
        chunk_ids = list(d.get("chunk_ids", []))
        for api in d.get("tool_apis", []):
            registry.get(api)
        centroid = d.get("centroid")
        if not centroid and chunk_ids:
            centroid = np.mean([gateway.embed(chunk_text(knowledge.get(n))) for n in chunk_ids], axis=0).tolist()
        experts.append(
            ExpertProfile(d["name"], int(d.get("cluster_id", i)), chunk_ids, list(d.get("tool_apis", [])), d.get("prompt_template", ""), centroid or [])
        )
    return experts


def _mentions(text: str, name: str) -> bool:
    return re.search(rf"(?<!\w){re.escape(name)}(?!\w)", text, re.IGNORECASE) is not None


def assign_experts(anomaly_description: str, experts: Sequence[ExpertProfile], gateway: Gateway) -> list[ExpertProfile]:
    """Let the model pick experts by name; fall back to the two closest centroids."""
    if not experts:
        raise ValueError("no experts prepared")
    if len(experts) == 1:
        return list(experts)
    roster = "\n".join(f"- {e.name}: {', '.join(e.chunk_ids) or 'general'}" for e in experts)
    reply = gateway.ask(f"[Anomaly]\n{anomaly_description}\n\n[Experts]\n{roster}\n\n{ASSIGN_PROMPT}")
    if reply.ok:
        chosen = [e for e in experts if _mentions(reply.text, e.name)]
        if chosen:
            return chosen
    target = gateway.embed(anomaly_description)
    scored = []
    for e in experts:
        sim = cosine(target, e.centroid) if e.centroid and np.linalg.norm(e.centroid) > 0 else -1.0
        scored.append((-sim, e.name, e))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [e for _, _, e in scored[:FALLBACK_EXPERTS]]


# ---------------------------------------------------------------------------
# Running summary
# ---------------------------------------------------------------------------


@dataclass
class RunningSummary:
    expert: str
    lines: list[str] = field(default_factory=list)

    def render(self) -> str:
        return "\n".join(f"- {line}" for line in self.lines)


def render_record(record: TranscriptRecord) -> str:
    return (
        f"Thought: {record.thought}\nAction: {record.action}\n"
        f"Action Input: {json.dumps(record.action_input, sort_keys=True)}\nObservation: {record.observation}"
    )


def summarize_record(s_prev: RunningSummary, record: TranscriptRecord, gateway: Gateway) -> RunningSummary:
    """Fold one transcript record into the running summary with a single model call."""
    current = s_prev.render() or "(empty)"
    reply = gateway.ask(f"[Current summary]\n{current}\n\n[New record]\n{render_record(record)}\n\n{SUMMARY_PROMPT}")
    if reply.ok:
        lines = [ln.strip().lstrip("-*").strip() for ln in reply.text.splitlines()]
        lines = [ln for ln in lines if ln]
        if lines:
            return RunningSummary(s_prev.expert, lines)
    observed = " ".join(record.observation.split()[:20])
    return RunningSummary(s_prev.expert, s_prev.lines + [f"Executed {record.action} and observed {observed}"])


# ---------------------------------------------------------------------------
# Collaboration driver
# ---------------------------------------------------------------------------


@dataclass
class ExpertRun:
    profile: ExpertProfile
    search: DiagnosisSearch
    subscription: Subscription | None
    summary: RunningSummary
    outcome: DiagnosisOutcome | None = None
    active: bool = True


def cross_review(runs: Sequence[ExpertRun], gateway: Gateway) -> dict[str, list[str]]:
    """Every expert reviews every other expert's causes and summary."""
    advice: dict[str, list[str]] = {r.profile.name: [] for r in runs}
    if len(runs) < 2:
        return advice
    for reviewer in runs:
        for other in runs:
            if other is reviewer:
                continue
            causes = ", ".join(other.outcome.root_causes) if other.outcome else ""
            reply = gateway.ask(
                f"[Diagnosis by {other.profile.name}]\nRoot causes: {causes or 'none'}\n"
                f"Process:\n{other.summary.render() or '(no summary)'}\n\n{REVIEW_PROMPT}",
                role_preamble=reviewer.profile.prompt_template,
            )
            if reply.ok and reply.text.strip():
                advice[other.profile.name].append(f"{reviewer.profile.name}: {reply.text.strip()}")
    return advice


def refine(run: ExpertRun, advice: Sequence[str], budget: int = DEFAULT_REFINE_BUDGET) -> DiagnosisOutcome:
    """Re-open the expert's tree for up to ``budget`` expansions with the advice in context."""
    search = run.search
    if not advice or budget < 1:
        return run.outcome if run.outcome is not None else search.finish()
    search.advice.extend(advice)
    cfg = search.config
    search.turn_budget = search.turns + budget * max(1, cfg.top_k_tools + cfg.top_n_knowledge)
    for _ in range(budget):
        if not search.step():
            break
    run.outcome = search.finish()
    return run.outcome


@dataclass
class DiagnosisReport:
    title: str
    anomaly_date: str
    description: str
    root_causes: list[str]
    solutions: list[str]
    diagnosis_process: str
    status: str = "inconclusive"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_markdown(self) -> str:
        causes = "\n".join(f"- {c}" for c in self.root_causes) or "- none identified"
        sols = "\n".join(f"- {s}" for s in self.solutions) or "- none"
        return (
            f"# {self.title}\n\n"
            f"**Anomaly date:** {self.anomaly_date}\n\n"
            f"**Status:** {self.status}\n\n"
            f"## Description\n\n{self.description}\n\n"
            f"## Root causes\n\n{causes}\n\n"
            f"## Solutions\n\n{sols}\n\n"
            f"## Diagnosis process\n\n{self.diagnosis_process}\n"
        )

    def write(self, out_dir: str | Path) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.md").write_text(self.to_markdown(), encoding="utf-8")
        (out_dir / "report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def generate_report(
    outcomes: Sequence[tuple[str, DiagnosisOutcome, RunningSummary | None]],
    anomaly: Anomaly,
    max_causes: int = MAX_CAUSES,
) -> DiagnosisReport:
    """Merge expert outcomes: causes deduplicated, ordered by supporting votes, capped."""
    if not outcomes:
        raise ValueError("need at least one outcome")
    support: dict[str, list] = {}  # key -> [votes, first seen, label]
    order = 0
    for _, outcome, _ in outcomes:
        for cause in outcome.root_causes:
            key = normalize_label(cause)
            if key not in support:
                support[key] = [0, order, cause]
                order += 1
            support[key][0] += outcome.votes
    ranked = sorted(support.values(), key=lambda v: (-v[0], v[1]))[:max_causes]
    causes = [v[2] for v in ranked]
    solutions = []
    for cause in causes:
        for _, outcome, _ in outcomes:
            for label, items in outcome.cause_solutions.items():
                if normalize_label(label) == normalize_label(cause):
                    solutions.extend(f"{cause}: {s}" for s in items)
    process = "\n\n".join(
        f"### {name}\n{summary.render() if summary and summary.lines else '- (no records)'}" for name, _, summary in outcomes
    )
    return DiagnosisReport(
        anomaly.title,
        anomaly.date,
        anomaly.description,
        causes,
        list(dict.fromkeys(solutions)),
        process,
        "resolved" if causes else "inconclusive",
    )


@dataclass
class CollabResult:
    report: DiagnosisReport
    runs: list[ExpertRun]
    bus: MessageBus
    advice: list[dict[str, list[str]]]


def _finding(name: str, record: TranscriptRecord, node: DiagnosisTreeNode) -> str:
    obs = " ".join(record.observation.split()[:40])
    text = f"{name} ran {record.action}: {obs}"
    if node.found_causes:
        text += " | root causes: " + ", ".join(node.found_causes)
    return text


def run_collaboration(
    anomaly: Anomaly,
    experts: Sequence[ExpertProfile],
    knowledge: KnowledgeBase,
    registry: ToolRegistry,
    gateway: Gateway,
    executor: Executor,
    config: SearchConfig | None = None,
    review_rounds: int = 1,
    refine_budget: int = DEFAULT_REFINE_BUDGET,
    stats: CorpusStats | None = None,
    assign: bool = True,
) -> CollabResult:
    """Assign experts, run their searches round-robin over a shared bus, review, refine, report.

    Each scheduler tick gives every active expert one expansion. Findings are
    published to the broadcast topic as soon as a record is produced and
    reach other experts at the start of their next expansion.
    """
    config = config or SearchConfig()
    if stats is None and len(knowledge):
        stats = CorpusStats.from_chunks(knowledge.chunks)
    selected = assign_experts(anomaly.description, experts, gateway) if assign else list(experts)
    bus = MessageBus()
    runs: list[ExpertRun] = []
    for profile in selected:
        sub = bus.subscribe(profile.name, [profile.name, BROADCAST])
        search = DiagnosisSearch(
            anomaly,
            gateway,
            ToolMatcher(registry.subset(profile.tool_apis), gateway),
            executor,
            knowledge.subset(profile.chunk_ids),
            stats,
            config,
            role_preamble=profile.prompt_template,
        )
        run = ExpertRun(profile, search, sub, RunningSummary(profile.name))

        def on_record(record, node, run=run):
            run.summary = summarize_record(run.summary, record, gateway)
            if not node.pruned:
                bus.publish(run.profile.name, BROADCAST, _finding(run.profile.name, record, node), run.search.turns)

        search.listeners.append(on_record)
        runs.append(run)

    while any(r.active for r in runs):
        for r in runs:
            if not r.active:
                continue
            r.search.notes.extend(m.payload for m in r.subscription.drain())
            r.active = r.search.step()
    for r in runs:
        r.outcome = r.search.finish()

    advice_rounds = []
    for _ in range(review_rounds if len(runs) > 1 else 0):
        advice = cross_review(runs, gateway)
        advice_rounds.append(advice)
        for r in runs:
            r.search.notes.extend(m.payload for m in r.subscription.drain())
            refine(r, advice.get(r.profile.name, []), refine_budget)
    bus.close()
    report = generate_report([(r.profile.name, r.outcome, r.summary) for r in runs], anomaly, config.max_causes)
    return CollabResult(report, runs, bus, advice_rounds)
