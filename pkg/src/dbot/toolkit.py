"""Tool registry organised as categories -> tools -> APIs, plus embedding-based matching."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .gateway import EmptyText, Gateway, cosine


TIE_DECIMALS = 12


class DuplicateApi(ValueError):
    pass


class MalformedManifest(ValueError):
    pass


class UnknownApi(KeyError):
    pass


class EmptyRegistry(ValueError):
    pass


@dataclass(frozen=True)
class ArgSpec:
    name: str
    type: str = "str"
    required: bool = True


@dataclass(frozen=True)
class ToolSpec:
    category: str
    tool: str
    api_name: str
    description: str
    args: tuple[ArgSpec, ...] = ()

    def __post_init__(self):
        if not self.description or not self.description.strip():
            raise MalformedManifest(f"{self.api_name}: utilization specification must be non-empty")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.category, self.tool, self.api_name)

    def signature(self) -> str:
        args = ", ".join(f"{a.name}: {a.type}{'' if a.required else ' (optional)'}" for a in self.args)
        return f"{self.api_name}({args})"

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "tool": self.tool,
            "api": self.api_name,
            "description": self.description,
            "args": [{"name": a.name, "type": a.type, "required": a.required} for a in self.args],
        }


class ToolRegistry:
    def __init__(self, specs: Iterable[ToolSpec] = ()):
        self._specs: dict[str, ToolSpec] = {}
        for s in specs:
            self.register(s)

    def register(self, spec: ToolSpec) -> None:
        # APIs are invoked by name, so the name must be unique across tools too
        other = self._specs.get(spec.api_name)
        if other is not None:
            where = " / ".join(other.key)
            raise DuplicateApi(f"API name {spec.api_name!r} is already registered as {where}")
        self._specs[spec.api_name] = spec

    def __len__(self):
        return len(self._specs)

    def __contains__(self, api_name: str) -> bool:
        return api_name in self._specs

    def __iter__(self):
        return iter(self.specs())

    def get(self, api_name: str) -> ToolSpec:
        try:
            return self._specs[api_name]
        except KeyError:
            raise UnknownApi(api_name) from None

    def specs(self) -> list[ToolSpec]:
        return sorted(self._specs.values(), key=lambda s: s.key)

    def subset(self, api_names: Iterable[str]) -> ToolRegistry:
        return ToolRegistry(self.get(a) for a in api_names)

    def hierarchy(self) -> dict[str, dict[str, list[str]]]:
        tree: dict[str, dict[str, list[str]]] = {}
        for s in self.specs():
            tree.setdefault(s.category, {}).setdefault(s.tool, []).append(s.api_name)
        return tree

    def listing(self) -> list[str]:
        return [" / ".join(s.key) for s in self.specs()]


def register_tools(manifest: str | Path | Sequence[Mapping]) -> ToolRegistry:
    """Build a registry from a manifest list or a path to its JSON file."""
    if isinstance(manifest, (str, Path)):
        try:
            with open(manifest, encoding="utf-8") as fh:
                manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedManifest(f"{manifest}: {exc}") from exc
    if not isinstance(manifest, list):
        raise MalformedManifest("manifest must be a JSON array")
    registry = ToolRegistry()
    for i, entry in enumerate(manifest):
        try:
            args = tuple(
                ArgSpec(a["name"], a.get("type", "str"), bool(a.get("required", True)))
                for a in entry.get("args", [])
            )
            spec = ToolSpec(entry["category"], entry["tool"], entry["api"], entry["description"], args)
        except (KeyError, TypeError, AttributeError) as exc:
            raise MalformedManifest(f"manifest entry {i} is malformed: {exc!r}") from exc
        registry.register(spec)
    return registry


# ---------------------------------------------------------------------------
# Invocation
# ---------------------------------------------------------------------------

_TYPE_CHECKS: dict[str, Callable[[object], bool]] = {
    "str": lambda v: isinstance(v, str),
    "string": lambda v: isinstance(v, str),
    "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "float": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "timestamp": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "bool": lambda v: isinstance(v, bool),
    "list": lambda v: isinstance(v, list),
}


@dataclass
class ToolCallResult:
    api_name: str
    request_args: dict
    observation: str
    status: str = "ok"  # ok | failed

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def validate_args(spec: ToolSpec, args: Mapping) -> list[str]:
    problems = []
    known = {a.name: a for a in spec.args}
    for a in spec.args:
        if a.required and a.name not in args:
            problems.append(f"missing required argument {a.name!r}")
    for name, value in args.items():
        if name not in known:
            problems.append(f"unexpected argument {name!r}")
            continue
        check = _TYPE_CHECKS.get(known[name].type.lower())
        if check is not None and not check(value):
            problems.append(f"argument {name!r} should be {known[name].type}, got {value!r}")
    return problems


Executor = Callable[[str, dict], str]


def invoke(registry: ToolRegistry, api_name: str, args: Mapping, executor: Executor) -> ToolCallResult:
    """Validate ``args`` and run ``executor``; failures come back as status='failed'."""
    spec = registry.get(api_name)
    args = dict(args)
    problems = validate_args(spec, args)
    if problems:
        return ToolCallResult(api_name, args, f"Invalid request to {api_name}: " + "; ".join(problems), "failed")
    try:
        observation = executor(api_name, args)
    except Exception as exc:  # executors are user code; any failure becomes an observation
        return ToolCallResult(api_name, args, f"{api_name} failed: {exc}", "failed")
    return ToolCallResult(api_name, args, str(observation))


def canonical_args(args: Mapping) -> str:
    return json.dumps(args, sort_keys=True, separators=(",", ":"))


class ScriptedExecutor:
    """Answers tool calls from fixtures keyed by (api, canonical args).

    An entry without ``args`` matches any call to its API.
    """

    def __init__(self, entries: Iterable[Mapping] = ()):
        self.exact: dict[tuple[str, str], str] = {}
        self.any: dict[str, str] = {}
        self.calls: list[tuple[str, dict]] = []
        self._lock = threading.Lock()
        for e in entries:
            if e.get("args") is None:
                self.any[e["api"]] = e["observation"]
            else:
                self.exact[(e["api"], canonical_args(e["args"]))] = e["observation"]

    @classmethod
    def load(cls, path: str | Path) -> ScriptedExecutor:
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def __call__(self, api_name: str, args: dict) -> str:
        with self._lock:
            self.calls.append((api_name, dict(args)))
        hit = self.exact.get((api_name, canonical_args(args)))
        if hit is None:
            hit = self.any.get(api_name)
        if hit is None:
            raise LookupError(f"no fixture for {api_name} with {canonical_args(args)}")
        return hit


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------


@dataclass
class ToolMatcher:
    registry: ToolRegistry
    gateway: Gateway
    _cache: dict = field(default_factory=dict, repr=False)

    def sim(self, context: str, tool: ToolSpec) -> float:
        if not context or not context.strip():
            raise EmptyText("context is empty")
        return cosine(self.gateway.embed(context), self.gateway.embed(tool.description))

    def match_tools(self, context: str, k: int) -> list[tuple[ToolSpec, float]]:
        """The ``k`` tools most similar to ``context``, best first, ties by API name."""
        if len(self.registry) == 0:
            raise EmptyRegistry("no tools registered")
        if k < 1:
            raise ValueError("k must be >= 1")
        scored = [(spec, self.sim(context, spec)) for spec in self.registry.specs()]
        # equal cosines can differ in the last ulp; round so the name tie-break applies
        scored.sort(key=lambda t: (-round(t[1], TIE_DECIMALS), t[0].api_name))
        return scored[:k]


def render_tools(matches: Sequence[tuple[ToolSpec, float]] | Sequence[ToolSpec]) -> str:
    """Prompt section listing tool names, descriptions and argument lists."""
    lines = []
    for m in matches:
        spec = m[0] if isinstance(m, tuple) else m
        lines.append(f"- {spec.signature()}: {spec.description}")
    return "\n".join(lines)
