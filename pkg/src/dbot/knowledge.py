from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

CHUNK_FIELDS = ("name", "content", "metrics", "steps")


def normalize_metric(name: str) -> str:
    return name.strip().lower()


class ChunkFormatError(ValueError):
    pass


@dataclass
class KnowledgeChunk:
    """One unit of diagnosis experience: name, content, metrics, steps."""

    name: str
    content: str
    metrics: list[str]
    steps: str
    source_block: int | None = None
    kept_by: str = "llm"  # llm | manual

    def __post_init__(self):
        if not self.name or not str(self.name).strip():
            raise ChunkFormatError("chunk name must be non-empty")
        if not isinstance(self.metrics, (list, tuple)) or not self.metrics:
            raise ChunkFormatError(f"chunk {self.name!r} needs a non-empty metrics list")
        if not all(isinstance(m, str) and m.strip() for m in self.metrics):
            raise ChunkFormatError(f"chunk {self.name!r} has a blank or non-string metric")
        self.metrics = list(self.metrics)
        if self.kept_by not in ("llm", "manual"):
            raise ChunkFormatError(f"kept_by must be 'llm' or 'manual', got {self.kept_by!r}")

    @property
    def metric_terms(self) -> list[str]:
        return [normalize_metric(m) for m in self.metrics]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> KnowledgeChunk:
        missing = [k for k in CHUNK_FIELDS if k not in d]
        if missing:
            raise ChunkFormatError(f"chunk is missing fields {missing}")
        return cls(
            name=str(d["name"]),
            content=str(d["content"]),
            metrics=d["metrics"],
            steps=str(d["steps"]),
            source_block=d.get("source_block"),
            kept_by=d.get("kept_by", "llm"),
        )


@dataclass
class KnowledgeBase:
    chunks: list[KnowledgeChunk] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for c in self.chunks:
            if c.name in seen:
                raise ChunkFormatError(f"duplicate chunk name {c.name!r}")
            seen.add(c.name)

    def __len__(self):
        return len(self.chunks)

    def __iter__(self):
        return iter(self.chunks)

    def get(self, name: str) -> KnowledgeChunk:
        for c in self.chunks:
            if c.name == name:
                return c
        raise KeyError(name)

    def subset(self, names: Iterable[str]) -> list[KnowledgeChunk]:
        wanted = set(names)
        return [c for c in self.chunks if c.name in wanted]


def load_knowledge(path: str | Path) -> KnowledgeBase:
    with open(path, encoding="utf-8") as fh:
        return KnowledgeBase([KnowledgeChunk.from_dict(d) for d in json.load(fh)])


def save_knowledge(chunks: Iterable[KnowledgeChunk], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([c.to_dict() for c in chunks], fh, indent=2, sort_keys=True)
        fh.write("\n")
