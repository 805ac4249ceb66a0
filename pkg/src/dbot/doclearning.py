"""Offline document learning: chapter splitting, summary tree, knowledge extraction.

The pipeline turns maintenance documents into :class:`KnowledgeChunk` objects
and groups them by embedding similarity so each group can seed an expert.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .clustering import dbscan, pca_project
from .gateway import Gateway, cosine
from .knowledge import ChunkFormatError, KnowledgeChunk, save_knowledge

log = logging.getLogger(__name__)

DEFAULT_MAX_BLOCK = 4096
DEFAULT_K_SIM = 3

SUMMARIZE_PROMPT = (
    "Summarize the provided chunk briefly. The summary is used as an index when "
    "looking up database maintenance details, so keep concrete examples."
)
EXTRACT_PROMPT = (
    "Given a chunk summary, extract diagnosis experience from the chunk. "
    "Consult the child chunks and the chunks with similar summaries when the "
    "chunk alone is unclear.\n"
    "On the first line answer KEEP if the experience is new compared with the "
    "existing knowledge, or REDUNDANT if it probably duplicates it. Then give "
    'one JSON object per experience with exactly the keys "name", "content", '
    '"metrics" (list of metric names) and "steps".'
)

_HEADING = re.compile(r"^(#{1,6})[ \t]+(.+?)[ \t#]*$")


class EmptyDocument(ValueError):
    pass


class ParseFailure(ValueError):
    pass


@dataclass
class DocumentBlock:
    id: int
    title: str
    content: str
    parent: int | None = None
    children: list[int] = field(default_factory=list)


@dataclass
class DocumentTree:
    blocks: list[DocumentBlock]

    @property
    def root(self) -> DocumentBlock:
        return self.blocks[0]

    def __getitem__(self, block_id: int) -> DocumentBlock:
        return self.blocks[block_id]

    def preorder(self) -> list[DocumentBlock]:
        out, stack = [], [0]
        while stack:
            b = self.blocks[stack.pop()]
            out.append(b)
            stack.extend(reversed(b.children))
        return out

    def leaves(self) -> list[DocumentBlock]:
        return [b for b in self.preorder() if not b.children]

    def text(self) -> str:
        """Concatenated block contents in document order; equals the source."""
        return "".join(b.content for b in self.preorder())

    def depth(self, block_id: int) -> int:
        d = 0
        while self.blocks[block_id].parent is not None:
            block_id = self.blocks[block_id].parent
            d += 1
        return d


def word_count(text: str) -> int:
    return len(text.split())


def _paragraphs(text: str) -> list[str]:
    pieces = re.split(r"(\n[ \t]*\n)", text)
    paras = []
    for i in range(0, len(pieces), 2):
        paras.append(pieces[i] + (pieces[i + 1] if i + 1 < len(pieces) else ""))
    return [p for p in paras if p]


def _split_words(text: str, limit: int) -> list[str]:
    lead = text[: len(text) - len(text.lstrip())]
    tokens = re.findall(r"\S+\s*", text.lstrip())
    if not tokens:
        return [text]
    tokens[0] = lead + tokens[0]
    return ["".join(tokens[i : i + limit]) for i in range(0, len(tokens), limit)]


def split_text(text: str, limit: int) -> list[str]:
    """Cut ``text`` into pieces of at most ``limit`` words, preferring paragraph breaks.

    ``"".join(split_text(t, n)) == t`` always holds.
    """
    if word_count(text) <= limit:
        return [text]
    pieces, current, size = [], "", 0
    for para in _paragraphs(text):
        n = word_count(para)
        if n > limit:
            if current:
                pieces.append(current)
                current, size = "", 0
            *full, tail = _split_words(para, limit)
            pieces.extend(full)
            current, size = tail, word_count(tail)
        elif size + n > limit:
            pieces.append(current)
            current, size = para, n
        else:
            current += para
            size += n
    if current:
        pieces.append(current)
    return pieces


def split_chapters(document: str, max_block_size: int = DEFAULT_MAX_BLOCK, title: str = "document") -> DocumentTree:
    """Split a markdown or plain-text document into a block tree following its headings.

    Each heading opens a block (heading line included) nested under the
    closest preceding heading of a higher level. Blocks over
    ``max_block_size`` words are emptied and their text moved into ordered
    part-children. Text before the first heading hangs directly off the root.
    """
    if not document.strip():
        raise EmptyDocument("document has no text")
    if max_block_size < 1:
        raise ValueError("max_block_size must be >= 1")

    sections: list[tuple[int, str, str]] = []
    preamble = []
    for line in document.splitlines(keepends=True):
        m = _HEADING.match(line.rstrip("\r\n"))
        if m:
            sections.append((len(m.group(1)), m.group(2).strip(), line))
        elif sections:
            lvl, head, body = sections[-1]
            sections[-1] = (lvl, head, body + line)
        else:
            preamble.append(line)

    blocks = [DocumentBlock(0, title, "")]

    def add(parent: int, head: str, text: str) -> int:
        block = DocumentBlock(len(blocks), head, text, parent)
        blocks.append(block)
        blocks[parent].children.append(block.id)
        if word_count(text) > max_block_size:
            block.content = ""
            for i, piece in enumerate(split_text(text, max_block_size), 1):
                add(block.id, f"{head} (part {i})", piece)
        return block.id

    pre = "".join(preamble)
    if pre.strip():
        for i, piece in enumerate(split_text(pre, max_block_size), 1):
            add(0, f"{title} (part {i})", piece)
    else:
        blocks[0].content = pre

    stack: list[tuple[int, int]] = [(0, 0)]  # (heading level, block id)
    for level, head, text in sections:
        while stack[-1][0] >= level:
            stack.pop()
        stack.append((level, add(stack[-1][1], head, text)))
    return DocumentTree(blocks)


@dataclass
class SummaryNode:
    block_id: int
    summary: str
    missing: bool = False


def build_summary_tree(tree: DocumentTree, gateway: Gateway) -> list[SummaryNode]:
    """One summary per non-root block; failed calls leave the summary missing."""
    out = []
    for block in tree.preorder()[1:]:
        body = block.content or "\n".join(tree[c].content for c in block.children)
        reply = gateway.ask(f"{SUMMARIZE_PROMPT}\n\n[Chunk: {block.title}]\n{body}")
        if reply.ok and reply.text.strip():
            out.append(SummaryNode(block.id, reply.text.strip()))
        else:
            log.warning("summary missing for block %d (%s): %s", block.id, block.title, reply.text)
            out.append(SummaryNode(block.id, "", missing=True))
    return out


@dataclass
class ManualReview:
    block_id: int
    response: str
    chunks: list[KnowledgeChunk] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"block_id": self.block_id, "response": self.response, "chunks": [c.to_dict() for c in self.chunks]}


@dataclass
class ExtractionResult:
    kept: list[KnowledgeChunk] = field(default_factory=list)
    manual: list[ManualReview] = field(default_factory=list)


def parse_extraction(text: str, block_id: int | None = None) -> tuple[str, list[KnowledgeChunk]]:
    """Split a model answer into (verdict, chunks).

    The verdict is KEEP or REDUNDANT; an answer without one but with chunk
    payloads counts as KEEP. Raises ParseFailure for anything else.
    """
    m = re.match(r"\s*\W*(KEEP|REDUNDANT)\b", text, re.IGNORECASE)
    verdict = m.group(1).upper() if m else None
    decoder = json.JSONDecoder()
    chunks, pos = [], 0
    while True:
        starts = [i for i in (text.find("{", pos), text.find("[", pos)) if i != -1]
        if not starts:
            break
        start = min(starts)
        try:
            obj, end = decoder.raw_decode(text, start)
        except json.JSONDecodeError as exc:
            raise ParseFailure(f"malformed chunk JSON: {exc}") from exc
        for item in obj if isinstance(obj, list) else [obj]:
            if not isinstance(item, dict) or set(item) != {"name", "content", "metrics", "steps"}:
                raise ParseFailure(f"chunk must have exactly name/content/metrics/steps: {item!r}")
            try:
                chunks.append(KnowledgeChunk.from_dict({**item, "source_block": block_id}))
            except ChunkFormatError as exc:
                raise ParseFailure(str(exc)) from exc
        pos = end
    if verdict is None:
        if not chunks:
            raise ParseFailure("answer has neither a KEEP/REDUNDANT verdict nor chunk payloads")
        verdict = "KEEP"
    return verdict, chunks


def similar_blocks(summaries: Sequence[SummaryNode], block_id: int, gateway: Gateway, k: int) -> list[SummaryNode]:
    by_id = {s.block_id: s for s in summaries}
    own = by_id.get(block_id)
    if own is None or own.missing or k < 1:
        return []
    target = gateway.embed(own.summary)
    scored = [
        (cosine(target, gateway.embed(s.summary)), s.block_id, s)
        for s in summaries
        if s.block_id != block_id and not s.missing
    ]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [s for _, _, s in scored[:k]]


def extraction_prompt(tree: DocumentTree, summaries: Sequence[SummaryNode], block: DocumentBlock, gateway: Gateway, k_sim: int, existing: Sequence[str]) -> str:
    by_id = {s.block_id: s for s in summaries}
    own = by_id.get(block.id)
    parts = [
        EXTRACT_PROMPT,
        f"[Chunk summary]\n{own.summary if own and not own.missing else '(missing)'}",
        f"[Chunk: {block.title}]\n{block.content}",
    ]
    kids = [tree[c] for c in block.children]
    if kids:
        parts.append("[Child chunks]\n" + "\n".join(f"## {c.title}\n{c.content}" for c in kids))
    sims = similar_blocks(summaries, block.id, gateway, k_sim)
    if sims:
        parts.append("[Chunks with similar summaries]\n" + "\n".join(f"- {tree[s.block_id].title}: {s.summary}" for s in sims))
    if existing:
        parts.append("[Existing knowledge]\n" + ", ".join(existing))
    return "\n\n".join(parts)


def extract_knowledge(
    tree: DocumentTree,
    summaries: Sequence[SummaryNode],
    gateway: Gateway,
    k_sim: int = DEFAULT_K_SIM,
    existing: Sequence[KnowledgeChunk] = (),
) -> ExtractionResult:
    result = ExtractionResult()
    names = {c.name for c in existing}
    for block in tree.preorder()[1:]:
        prompt = extraction_prompt(tree, summaries, block, gateway, k_sim, sorted(names))
        reply = gateway.ask(prompt)
        if not reply.ok:
            log.warning("extraction skipped for block %d: %s", block.id, reply.text)
            continue
        try:
            verdict, chunks = parse_extraction(reply.text, block.id)
        except ParseFailure as exc:
            log.warning("extraction skipped for block %d: %s", block.id, exc)
            continue
        if verdict == "REDUNDANT":
            for c in chunks:
                c.kept_by = "manual"
            result.manual.append(ManualReview(block.id, reply.text, chunks))
            continue
        for c in chunks:
            if c.name in names:
                c.kept_by = "manual"
                result.manual.append(ManualReview(block.id, f"duplicate name {c.name!r}", [c]))
            else:
                names.add(c.name)
                result.kept.append(c)
    return result


@dataclass
class ChunkCluster:
    cluster_id: int
    member_chunk_ids: list[str]
    centroid_coords_3d: tuple[float, float, float]
    member_coords: dict[str, tuple[float, float, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ChunkCluster:
        return cls(
            int(d["cluster_id"]),
            list(d["member_chunk_ids"]),
            tuple(d["centroid_coords_3d"]),
            {k: tuple(v) for k, v in d.get("member_coords", {}).items()},
        )


def chunk_text(chunk: KnowledgeChunk) -> str:
    return f"{chunk.name}\n{chunk.content}"


def cluster_chunks(
    chunks: Sequence[KnowledgeChunk],
    gateway: Gateway,
    eps: float = 0.4,
    min_pts: int = 3,
    metric: str = "cosine",
) -> list[ChunkCluster]:
    """Embed each chunk (name + content), run DBSCAN and attach 3-D PCA coordinates."""
    if not chunks:
        raise ValueError("no chunks to cluster")
    X = np.vstack([gateway.embed(chunk_text(c)) for c in chunks])
    labels = dbscan(X, eps, min_pts, metric=metric)
    k = min(3, len(chunks))
    coords, _ = pca_project(X, k)
    if k < 3:
        coords = np.hstack([coords, np.zeros((len(chunks), 3 - k))])
    clusters = []
    for cid in sorted(set(labels)):
        idx = [i for i, lab in enumerate(labels) if lab == cid]
        centroid = coords[idx].mean(axis=0)
        clusters.append(
            ChunkCluster(
                cid,
                [chunks[i].name for i in idx],
                tuple(round(float(x), 12) for x in centroid),
                {chunks[i].name: tuple(round(float(x), 12) for x in coords[i]) for i in idx},
            )
        )
    return clusters


def save_clusters(clusters: Sequence[ChunkCluster], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([c.to_dict() for c in clusters], fh, indent=2)
        fh.write("\n")


def load_clusters(path: str | Path) -> list[ChunkCluster]:
    with open(path, encoding="utf-8") as fh:
        return [ChunkCluster.from_dict(d) for d in json.load(fh)]


@dataclass
class LearningOutput:
    kept: list[KnowledgeChunk]
    manual: list[ManualReview]
    clusters: list[ChunkCluster]


def learn_documents(
    docs_dir: str | Path,
    gateway: Gateway,
    max_block_size: int = DEFAULT_MAX_BLOCK,
    k_sim: int = DEFAULT_K_SIM,
    eps: float = 0.4,
    min_pts: int = 3,
) -> LearningOutput:
    """Run split, summarize, extract and cluster over every .md/.txt file in a directory."""
    paths = sorted(p for p in Path(docs_dir).iterdir() if p.suffix in (".md", ".txt", ".markdown"))
    kept: list[KnowledgeChunk] = []
    manual: list[ManualReview] = []
    for path in paths:
        text = path.read_text(encoding="utf-8")
        if not text.strip():
            log.warning("skipping empty document %s", path.name)
            continue
        tree = split_chapters(text, max_block_size, title=path.stem)
        summaries = build_summary_tree(tree, gateway)
        res = extract_knowledge(tree, summaries, gateway, k_sim, existing=kept)
        kept.extend(res.kept)
        manual.extend(res.manual)
    clusters = cluster_chunks(kept, gateway, eps, min_pts) if kept else []
    return LearningOutput(kept, manual, clusters)


def write_learning_output(out: LearningOutput, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_knowledge(out.kept, out_dir / "knowledge.json")
    save_clusters(out.clusters, out_dir / "clusters.json")
    with open(out_dir / "manual_queue.json", "w", encoding="utf-8") as fh:
        json.dump([m.to_dict() for m in out.manual], fh, indent=2, sort_keys=True)
        fh.write("\n")
