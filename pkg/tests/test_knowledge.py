import json

import pytest

from dbot.fixtures import path
from dbot.knowledge import ChunkFormatError, KnowledgeBase, KnowledgeChunk, load_knowledge, save_knowledge


def test_chunk_requires_metrics_and_name():
    with pytest.raises(ChunkFormatError):
        KnowledgeChunk("a", "c", [], "s")
    with pytest.raises(ChunkFormatError):
        KnowledgeChunk(" ", "c", ["m"], "s")
    with pytest.raises(ChunkFormatError):
        KnowledgeChunk("a", "c", ["m"], "s", kept_by="robot")


def test_from_dict_reports_missing_fields():
    with pytest.raises(ChunkFormatError, match="steps"):
        KnowledgeChunk.from_dict({"name": "a", "content": "c", "metrics": ["m"]})


def test_metric_terms_are_normalised():
    assert KnowledgeChunk("a", "c", [" CPU_Usage "], "s").metric_terms == ["cpu_usage"]


def test_knowledge_base_rejects_duplicates():
    c = KnowledgeChunk("a", "c", ["m"], "s")
    with pytest.raises(ChunkFormatError):
        KnowledgeBase([c, c])


def test_roundtrip(tmp_path):
    kb = load_knowledge(path("knowledge.json"))
    out = tmp_path / "k.json"
    save_knowledge(kb, out)
    again = load_knowledge(out)
    assert [c.to_dict() for c in again] == [c.to_dict() for c in kb]
    assert json.loads(out.read_text())[0]["name"] == "large_data_fetch"
    assert [c.name for c in kb.subset(["missing_index", "large_data_fetch"])] == ["large_data_fetch", "missing_index"]
    with pytest.raises(KeyError):
        kb.get("nope")
