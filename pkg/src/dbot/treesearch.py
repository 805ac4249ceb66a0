"""UCT-guided tree search over diagnosis actions.

Each node is one action: a tool call or the application of a knowledge chunk.
A turn executes one action and asks the model to reflect on it; reflections
that find nothing useful prune the node. Every few expansions a panel of
evaluator calls votes on the current leaves, and the votes are credited to
every node on the voted paths. The outcome is read from the leaf with the
most votes.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .anomaly import Anomaly
from .gateway import Gateway
from .knowledge import KnowledgeChunk
from .retrieval import CorpusStats, rank_chunks
from .toolkit import Executor, ToolMatcher, invoke, render_tools

MAX_CAUSES = 4
NO_INFO = "NO USEFUL INFORMATION"

REFLECT_PROMPT = (
    "Reflect on the last action above: did it bring evidence that helps explain the anomaly? "
    "Your reflection is passed on to every later step below this action. "
    f"If the action added nothing, answer exactly {NO_INFO}. "
    'Report each root cause you are confident about on its own line as "ROOT CAUSE: <label>" '
    'and its remedy as "SOLUTION: <text>".'
)
TOOL_PROMPT = (
    "Prepare the call to {api}. Respond with the tool call in the form:\n"
    "Thought: <why this call helps>\nAction: {api}\nAction Input: <JSON object with the arguments>"
)
KNOWLEDGE_PROMPT = (
    "Apply the knowledge {name} to the evidence gathered so far by following its steps. "
    'State root causes as "ROOT CAUSE: <label>" and remedies as "SOLUTION: <text>".'
)
VOTE_PROMPT = (
    "You are evaluator {i} of {n}. Considering the scenario and the actions that lead to each "
    "candidate leaf, vote for the leaf whose diagnosis is most promising (number and accuracy "
    "of root causes). Answer with VOTE: <leaf id>."
)

_CAUSE = re.compile(r"^[ \t]*[-*]?[ \t]*ROOT[ _]CAUSE[ \t]*:[ \t]*(.+?)[ \t]*$", re.IGNORECASE | re.MULTILINE)
_SOLUTION = re.compile(r"^[ \t]*[-*]?[ \t]*SOLUTION[ \t]*:[ \t]*(.+?)[ \t]*$", re.IGNORECASE | re.MULTILINE)
_VOTE = re.compile(r"VOTE\s*:\s*\[?\s*(?:leaf\s*)?(\d+)", re.IGNORECASE)


class AllPruned(RuntimeError):
    pass


def normalize_label(label: str) -> str:
    return " ".join(label.strip().lower().replace("_", " ").replace("-", " ").split())


@dataclass
class Action:
    kind: str  # root | tool_call | knowledge_apply
    api: str | None = None
    args: dict = field(default_factory=dict)
    chunk: str | None = None

    @property
    def key(self) -> tuple[str, str | None]:
        return (self.kind, self.api or self.chunk)

    @property
    def name(self) -> str:
        if self.kind == "tool_call":
            return self.api
        if self.kind == "knowledge_apply":
            return f"knowledge:{self.chunk}"
        return "root"


@dataclass
class DiagnosisTreeNode:
    id: int
    parent: int | None
    action: Action
    observation: str = ""
    thought: str = ""
    reflection: str | None = None
    pruned: bool = False
    failed: bool = False
    expanded: bool = False
    W: float = 0.0
    N: int = 0
    votes: int = 0
    found_causes: list[str] = field(default_factory=list)
    solutions: dict[str, list[str]] = field(default_factory=dict)
    children: list[int] = field(default_factory=list)


class DiagnosisTree:
    def __init__(self):
        self.nodes = [DiagnosisTreeNode(0, None, Action("root"))]

    def __getitem__(self, node_id: int) -> DiagnosisTreeNode:
        return self.nodes[node_id]

    def __len__(self):
        return len(self.nodes)

    @property
    def root(self) -> DiagnosisTreeNode:
        return self.nodes[0]

    def add(self, parent: int, action: Action) -> DiagnosisTreeNode:
        node = DiagnosisTreeNode(len(self.nodes), parent, action)
        self.nodes.append(node)
        self.nodes[parent].children.append(node.id)
        return node

    def path(self, node_id: int) -> list[DiagnosisTreeNode]:
        out = []
        cur: int | None = node_id
        while cur is not None:
            out.append(self.nodes[cur])
            cur = self.nodes[cur].parent
        return out[::-1]

    def expandable(self, node: DiagnosisTreeNode) -> bool:
        return not node.pruned and not node.expanded and not node.found_causes

    def open(self, node: DiagnosisTreeNode) -> bool:
        """True if an expandable node is reachable through unpruned nodes."""
        if node.pruned:
            return False
        return self.expandable(node) or any(self.open(self.nodes[c]) for c in node.children)

    def leaves(self) -> list[DiagnosisTreeNode]:
        return [n for n in self.nodes[1:] if not n.children and not n.pruned]


def uct(node: DiagnosisTreeNode, parent_visits: int, C: float) -> float:
    if node.N == 0:
        return math.inf
    return node.W / node.N + C * math.sqrt(2.0 * math.log(max(parent_visits, 1)) / node.N)


def select(tree: DiagnosisTree, C: float) -> int:
    """Walk down from the root by highest UCT (ties to the lowest id) to an expandable node."""
    node = tree.root
    if not tree.open(node):
        raise AllPruned("no expandable node left")
    while not tree.expandable(node):
        kids = [tree[c] for c in node.children if tree.open(tree[c])]
        node = max(kids, key=lambda k: (uct(k, node.N, C), -k.id))
    return node.id


@dataclass
class SearchConfig:
    C: float = 1.4
    max_turns: int = 20
    n_evaluators: int = 3
    top_k_tools: int = 3
    top_n_knowledge: int = 2
    vote_every: int = 5
    max_causes: int = MAX_CAUSES

    def __post_init__(self):
        if self.C < 0:
            raise ValueError("C must be non-negative")
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        if self.n_evaluators < 1 or self.n_evaluators % 2 == 0:
            raise ValueError("n_evaluators must be a positive odd number")
        if self.top_k_tools < 0 or self.top_n_knowledge < 0 or self.vote_every < 1:
            raise ValueError("candidate counts must be >= 0 and vote_every >= 1")


@dataclass
class TranscriptRecord:
    thought: str
    action: str
    action_input: dict
    observation: str
    node_id: int = -1

    def to_dict(self) -> dict:
        return {"thought": self.thought, "action": self.action, "action_input": self.action_input, "observation": self.observation}


@dataclass
class DiagnosisOutcome:
    root_causes: list[str]
    solutions: list[str]
    winning_leaf: int | None
    transcript: list[TranscriptRecord]
    status: str = "inconclusive"  # resolved | inconclusive
    votes: int = 0
    cause_solutions: dict[str, list[str]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transcript"] = [r.to_dict() for r in self.transcript]
        return d


def write_transcript(records: Sequence[TranscriptRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def parse_causes(text: str) -> tuple[list[str], dict[str, list[str]]]:
    """Pull ``ROOT CAUSE:`` and ``SOLUTION:`` lines out of model text.

    A solution belongs to the nearest cause above it; solutions before any
    cause are filed under the empty label.
    """
    events = sorted(
        [(m.start(), "cause", m.group(1)) for m in _CAUSE.finditer(text)]
        + [(m.start(), "solution", m.group(1)) for m in _SOLUTION.finditer(text)]
    )
    causes: list[str] = []
    solutions: dict[str, list[str]] = {}
    current = ""
    for _, kind, value in events:
        if kind == "cause":
            if normalize_label(value) not in map(normalize_label, causes):
                causes.append(value)
            current = value
        else:
            solutions.setdefault(current, []).append(value)
    return causes, solutions


def _first_json_object(text: str) -> dict | None:
    idx = text.find("Action Input")
    start = text.find("{", idx if idx != -1 else 0)
    if start == -1:
        return None
    try:
        obj, _ = json.JSONDecoder().raw_decode(text, start)
    except json.JSONDecodeError:
        return None
    return obj if isinstance(obj, dict) else None


def _first_line(text: str, tag: str) -> str:
    m = re.search(rf"^\s*{tag}\s*:\s*(.*)$", text, re.IGNORECASE | re.MULTILINE)
    return m.group(1).strip() if m else ""


class DiagnosisSearch:
    """One expert's search tree, stepped one expansion at a time."""

    def __init__(
        self,
        anomaly: Anomaly,
        gateway: Gateway,
        matcher: ToolMatcher,
        executor: Executor,
        knowledge: Sequence[KnowledgeChunk] = (),
        stats: CorpusStats | None = None,
        config: SearchConfig | None = None,
        role_preamble: str = "",
        tool_filter: Callable[[str, list], list] | None = None,
    ):
        self.anomaly = anomaly
        self.gateway = gateway
        self.matcher = matcher
        self.executor = executor
        self.knowledge = list(knowledge)
        self.chunks_by_name = {c.name: c for c in self.knowledge}
        self.stats = stats if stats is not None else (CorpusStats.from_chunks(self.knowledge) if self.knowledge else None)
        self.config = config or SearchConfig()
        self.role_preamble = role_preamble
        self.tool_filter = tool_filter
        self.tree = DiagnosisTree()
        self.transcript: list[TranscriptRecord] = []
        self.turns = 0
        self.turn_budget = self.config.max_turns
        self.expansions = 0
        self.notes: list[str] = []  # peer findings delivered from other experts
        self.advice: list[str] = []
        self.listeners: list[Callable[[TranscriptRecord, DiagnosisTreeNode], None]] = []
        self._last_vote = 0

    # -- prompt assembly ---------------------------------------------------

    def _ask(self, text: str):
        return self.gateway.ask(text, role_preamble=self.role_preamble)

    def context(self, node_id: int) -> str:
        parts = [f"[Anomaly]\n{self.anomaly.description}"]
        history = []
        for n in self.tree.path(node_id)[1:]:
            entry = f"Action: {n.action.name}\nAction Input: {json.dumps(n.action.args, sort_keys=True)}\nObservation: {n.observation}"
            if n.reflection:
                entry += f"\nReflection: {n.reflection}"
            history.append(entry)
        if history:
            parts.append("[History]\n" + "\n\n".join(history))
        if self.notes:
            parts.append("[Findings from other experts]\n" + "\n".join(f"- {x}" for x in self.notes))
        if self.advice:
            parts.append("[Review advice]\n" + "\n".join(f"- {x}" for x in self.advice))
        return "\n\n".join(parts)

    # -- candidate generation and execution -----------------------------------

    def candidates(self, node_id: int, context: str) -> list[Action]:
        used = {n.action.key for n in self.tree.path(node_id)}
        out: list[Action] = []
        if self.config.top_k_tools and len(self.matcher.registry):
            matches = self.matcher.match_tools(context, self.config.top_k_tools)
            if self.tool_filter is not None:
                matches = self.tool_filter(context, matches)
            out += [Action("tool_call", api=spec.api_name) for spec, _ in matches]
        if self.config.top_n_knowledge and self.knowledge and self.anomaly.query.metrics:
            ranked = rank_chunks(self.anomaly.query, self.knowledge, self.stats, self.config.top_n_knowledge)
            out += [Action("knowledge_apply", chunk=name) for name, _ in ranked]
        return [a for a in out if a.key not in used]

    def _default_args(self, api: str) -> dict:
        names = {a.name for a in self.matcher.registry.get(api).args}
        defaults = {"start_time": self.anomaly.start_time, "end_time": self.anomaly.end_time}
        return {k: v for k, v in defaults.items() if k in names}

    def execute(self, node: DiagnosisTreeNode, context: str) -> None:
        action = node.action
        if action.kind == "tool_call":
            spec = self.matcher.registry.get(action.api)
            reply = self._ask(f"{context}\n\n[Tool]\n{render_tools([spec])}\n\n{TOOL_PROMPT.format(api=action.api)}")
            if not reply.ok:
                node.failed = True
                node.observation = f"Could not prepare the request to {action.api}: {reply.text}"
                return
            node.thought = _first_line(reply.text, "Thought")
            action.args = {**self._default_args(action.api), **(_first_json_object(reply.text) or {})}
            result = invoke(self.matcher.registry, action.api, action.args, self.executor)
            node.failed = not result.ok
            node.observation = result.observation
        else:
            chunk = self.chunks_by_name[action.chunk]
            action.args = {"chunk": chunk.name}
            node.thought = f"Check whether {chunk.name} explains the abnormal metrics."
            reply = self._ask(
                f"{context}\n\n[Knowledge: {chunk.name}]\n{chunk.content}\nMetrics: {', '.join(chunk.metrics)}\n"
                f"Steps: {chunk.steps}\n\n{KNOWLEDGE_PROMPT.format(name=chunk.name)}"
            )
            node.failed = not reply.ok
            node.observation = reply.text if reply.ok else f"Analysis with {chunk.name} failed: {reply.text}"
            if reply.ok:
                self._absorb(node, reply.text)

    def _absorb(self, node: DiagnosisTreeNode, text: str) -> None:
        causes, sols = parse_causes(text)
        known = {normalize_label(c) for c in node.found_causes}
        for c in causes:
            if normalize_label(c) not in known:
                node.found_causes.append(c)
                known.add(normalize_label(c))
        for cause, items in sols.items():
            node.solutions.setdefault(cause, []).extend(items)

    def reflect(self, node: DiagnosisTreeNode) -> DiagnosisTreeNode:
        reply = self._ask(f"{self.context(node.id)}\n\n{REFLECT_PROMPT}")
        if not reply.ok:
            return node
        node.reflection = reply.text.strip()
        if NO_INFO.lower() in reply.text.lower():
            node.pruned = True
            return node
        self._absorb(node, reply.text)
        return node

    def expand(self, node_id: int) -> list[DiagnosisTreeNode]:
        parent = self.tree[node_id]
        parent.expanded = True
        context = self.context(node_id)
        children = []
        for action in self.candidates(node_id, context):
            if self.turns >= self.turn_budget:
                break
            child = self.tree.add(node_id, action)
            self.execute(child, context)
            if child.observation:
                self.reflect(child)
            self.turns += 1
            record = TranscriptRecord(child.thought, action.name, dict(action.args), child.observation, child.id)
            self.transcript.append(record)
            for listener in self.listeners:
                listener(record, child)
            children.append(child)
        return children

    # -- voting ---------------------------------------------------------------

    def _path_causes(self, leaf_id: int) -> list[str]:
        seen, out = set(), []
        for n in self.tree.path(leaf_id):
            for c in n.found_causes:
                if normalize_label(c) not in seen:
                    seen.add(normalize_label(c))
                    out.append(c)
        return out

    def ballot(self, leaves: Sequence[DiagnosisTreeNode]) -> str:
        lines = []
        for leaf in leaves:
            path = " -> ".join(n.action.name for n in self.tree.path(leaf.id)[1:])
            causes = "; ".join(self._path_causes(leaf.id)) or "none"
            obs = " ".join(leaf.observation.split()[:30])
            lines.append(f"[leaf {leaf.id}] path: {path} | causes: {causes} | last observation: {obs}")
        return f"[Anomaly]\n{self.anomaly.description}\n\n[Candidate leaves]\n" + "\n".join(lines)

    def vote(self) -> dict[int, int]:
        leaves = self.tree.leaves()
        self._last_vote = self.expansions
        if not leaves:
            return {}
        tally = vote_leaves(self, leaves, self.config.n_evaluators)
        return tally

    # -- driver ---------------------------------------------------------------

    def step(self) -> bool:
        """Run one select/expand round. False when the budget or the tree is exhausted."""
        if self.turns >= self.turn_budget:
            return False
        try:
            node_id = select(self.tree, self.config.C)
        except AllPruned:
            return False
        self.expand(node_id)
        self.expansions += 1
        if self.expansions % self.config.vote_every == 0:
            self.vote()
        return True

    def run(self) -> DiagnosisOutcome:
        while self.step():
            pass
        return self.finish()

    def finish(self) -> DiagnosisOutcome:
        if self._last_vote != self.expansions:
            self.vote()
        return self.outcome()

    def outcome(self) -> DiagnosisOutcome:
        leaves = self.tree.leaves()
        if not leaves:
            return DiagnosisOutcome([], [], None, list(self.transcript))
        best = max(leaves, key=lambda n: (n.votes, bool(self._path_causes(n.id)), -n.id))
        causes = self._path_causes(best.id)[: self.config.max_causes]
        per_cause: dict[str, list[str]] = {}
        for n in self.tree.path(best.id):
            for cause, items in n.solutions.items():
                for c in causes:
                    if normalize_label(c) == normalize_label(cause):
                        per_cause.setdefault(c, []).extend(items)
        solutions = [s for c in causes for s in per_cause.get(c, [])]
        status = "resolved" if causes else "inconclusive"
        return DiagnosisOutcome(causes, solutions, best.id, list(self.transcript), status, best.votes, per_cause)


def vote_leaves(search: DiagnosisSearch, leaves: Sequence[DiagnosisTreeNode], n_evaluators: int) -> dict[int, int]:
    """Ask ``n_evaluators`` evaluators for one leaf each and back-propagate the tally.

    Every node on a balloted path gets N += n_evaluators once per round and
    W += the votes cast for leaves below it. Unparseable answers abstain.
    """
    tree = search.tree
    ids = {leaf.id for leaf in leaves}
    text = search.ballot(leaves)
    tally = {leaf.id: 0 for leaf in leaves}
    for i in range(1, n_evaluators + 1):
        reply = search.gateway.ask(f"{text}\n\n{VOTE_PROMPT.format(i=i, n=n_evaluators)}")
        if not reply.ok:
            continue
        m = _VOTE.search(reply.text)
        if m and int(m.group(1)) in ids:
            tally[int(m.group(1))] += 1
    credit: dict[int, int] = {}
    for leaf in leaves:
        leaf.votes += tally[leaf.id]
        for n in tree.path(leaf.id):
            credit[n.id] = credit.get(n.id, 0) + tally[leaf.id]
    for node_id, won in credit.items():
        tree[node_id].N += n_evaluators
        tree[node_id].W += won
    return tally


def run_diagnosis(
    anomaly: Anomaly,
    config: SearchConfig,
    gateway: Gateway,
    matcher: ToolMatcher,
    executor: Executor,
    knowledge: Sequence[KnowledgeChunk] = (),
    stats: CorpusStats | None = None,
    role_preamble: str = "",
) -> DiagnosisOutcome:
    search = DiagnosisSearch(anomaly, gateway, matcher, executor, knowledge, stats, config, role_preamble)
    return search.run()
