"""Shared builders for randomized scripted scenarios and random search trees."""

from __future__ import annotations

import math
import random

from dbot.anomaly import Alert, Anomaly
from dbot.fixtures import path
from dbot.gateway import Gateway, load_rules
from dbot.knowledge import KnowledgeChunk, load_knowledge
from dbot.retrieval import AbnormalQuery
from dbot.toolkit import ScriptedExecutor, ToolMatcher, register_tools
from dbot.treesearch import Action, DiagnosisTree, uct

START, END = 1684600070, 1684600130
METRIC_POOL = ["cpu_usage", "rows_fetched", "tuples_inserted", "disk_write", "io_wait", "commits", "seq_scan", "dead_tuples"]
WORDS = "cpu memory disk index query insert lock commit vacuum scan rows table wal latency join fetch".split()


def fixture_anomaly(metrics=("cpu_usage", "rows_fetched", "tuples_inserted")) -> Anomaly:
    alert = Alert("Load_High", "critical", "CPU load stayed above 90% for one minute")
    return Anomaly(START, END, [alert], AbnormalQuery(frozenset(metrics), (START, END)))


def fixture_parts(scenario: str, seed: int = 0):
    gateway = Gateway.scripted(load_rules(path(scenario)), seed=seed)
    registry = register_tools(path("tools.json"))
    knowledge = load_knowledge(path("knowledge.json"))
    executor = ScriptedExecutor.load(path("executor.json"))
    return gateway, registry, knowledge, executor


def random_scenario(seed: int):
    """A random registry, knowledge base, rule set and anomaly drawn from ``seed``."""
    rng = random.Random(seed)
    n_tools = rng.randint(1, 8)
    manifest, executor = [], []
    for i in range(n_tools):
        api = f"tool_{i}"
        desc = " ".join(rng.choices(WORDS, k=rng.randint(3, 8)))
        args = [{"name": "start_time", "type": "int"}, {"name": "end_time", "type": "int"}]
        manifest.append({"category": rng.choice(["monitoring", "optimization"]), "tool": f"t{i % 3}", "api": api, "description": desc, "args": args})
        executor.append({"api": api, "args": None, "observation": f"{api} reports {' '.join(rng.choices(WORDS, k=5))}"})
    chunks = []
    for j in range(rng.randint(0, 4)):
        chunks.append(KnowledgeChunk(f"chunk_{j}", "content " + " ".join(rng.choices(WORDS, k=6)), rng.sample(METRIC_POOL, rng.randint(1, 3)), "steps"))
    replies = ["NO USEFUL INFORMATION", "Looks relevant, keep going.", None]
    rules = [{"matcher": r"Prepare the call to (\w+)", "regex": True, "response": "Thought: call \\1\nAction: \\1\nAction Input: {}"}]
    for name in [m["api"] for m in manifest] + [f"knowledge:{c.name}" for c in chunks]:
        reply = rng.choice(replies)
        if reply is None:
            k = rng.randint(0, 5)
            reply = f"ROOT CAUSE: cause {k}\nSOLUTION: fix {k}"
        rule = {"matcher": rf"Action: {name}\n(?:(?!\nAction: ).)*Reflect on the last action", "regex": True, "response": reply}
        if rng.random() < 0.3:
            rule["max_uses"] = rng.randint(1, 3)
        rules.append(rule)
    rules.append({"matcher": "Reflect on the last action", "response": rng.choice(replies[:2])})
    rules.append({"matcher": "Apply the knowledge", "response": rng.choice(["Not applicable.", "ROOT CAUSE: cause 9"])})
    vote = rng.choice(["first", "last", "bogus", "missing"])
    if vote == "first":
        rules.append({"matcher": r"\[leaf (\d+)\]", "regex": True, "response": "VOTE: \\1"})
    elif vote == "last":
        rules.append({"matcher": r".*\[leaf (\d+)\]", "regex": True, "response": "VOTE: \\1"})
    elif vote == "bogus":
        rules.append({"matcher": "VOTE", "response": "VOTE: 100000"})
    anomaly = fixture_anomaly(rng.sample(METRIC_POOL, rng.randint(0, 3)))
    return {
        "manifest": manifest,
        "executor": executor,
        "chunks": chunks,
        "rules": rules,
        "anomaly": anomaly,
        "max_turns": rng.randint(1, 20),
        "C": rng.choice([0.0, 0.5, 1.4, 3.0]),
        "n_evaluators": rng.choice([1, 3, 5]),
        "top_k_tools": rng.randint(1, 4),
        "seed": seed,
    }


def build_random_run(sc: dict):
    """Fresh (gateway, matcher, executor) for one run of a random scenario."""
    gateway = Gateway.scripted(load_rules(sc["rules"]), seed=sc["seed"])
    registry = register_tools(sc["manifest"])
    return gateway, ToolMatcher(registry, gateway), ScriptedExecutor(sc["executor"])


def random_tree(rng: random.Random, max_nodes: int = 100) -> DiagnosisTree:
    tree = DiagnosisTree()
    for _ in range(rng.randint(0, max_nodes - 1)):
        tree.add(rng.randrange(len(tree)), Action("tool_call", api="x"))
    for node in tree.nodes:
        node.N = rng.choice([0, 0, 1, 2, 3, 5, 8, 13])
        node.W = rng.randint(0, 2 * node.N) if node.N else 0
        node.pruned = node.id != 0 and rng.random() < 0.15
        node.expanded = bool(node.children) or rng.random() < 0.3
        if rng.random() < 0.1:
            node.found_causes = ["x"]
    return tree


def brute_force_select(tree: DiagnosisTree, C: float) -> int | None:
    """Lexicographically best (uct, -id) key sequence over every root-to-expandable path."""
    best = None

    def walk(node, keys):
        nonlocal best
        if node.pruned:
            return
        if tree.expandable(node):
            if best is None or keys > best[0]:
                best = (keys, node.id)
            return
        for c in node.children:
            child = tree[c]
            walk(child, keys + [(uct(child, node.N, C), -child.id)])

    walk(tree.root, [])
    return None if best is None else best[1]


def uct_by_hand(W: float, N: int, Np: int, C: float) -> float:
    return math.inf if N == 0 else W / N + C * math.sqrt(2 * math.log(max(Np, 1)) / N)
