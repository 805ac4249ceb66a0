"""LLM-driven database anomaly diagnosis.

Offline, documents are turned into knowledge chunks and tools are registered
with their utilization specifications. Online, abnormal metrics select
knowledge through BM25, context selects tools through embedding similarity,
and one or more experts search for root causes with a UCT-guided tree search
whose model calls all pass through :class:`dbot.gateway.Gateway`.
"""

from .anomaly import Alert, Anomaly, profile_anomaly
from .bench import AccParams, accuracy, load_cases, run_benchmark
from .bus import BusMessage, MessageBus
from .clustering import dbscan, pca_project
from .collab import (
    DiagnosisReport,
    ExpertProfile,
    RunningSummary,
    assign_experts,
    cross_review,
    generate_report,
    prepare_experts,
    refine,
    run_collaboration,
    summarize_record,
)
from .doclearning import build_summary_tree, cluster_chunks, extract_knowledge, split_chapters
from .gateway import Completion, Gateway, PromptRequest, ScriptedBackend, ScriptedRule
from .knowledge import KnowledgeBase, KnowledgeChunk
from .matcher import LabeledPair, MatcherModel, predict_relevance, train_matcher
from .retrieval import AbnormalQuery, CorpusStats, MetricSeries, bm25_score, detect_abnormal_metrics, idf, ks_statistic, rank_chunks
from .toolkit import ToolMatcher, ToolRegistry, ToolSpec, invoke, register_tools
from .treesearch import DiagnosisOutcome, DiagnosisSearch, SearchConfig, run_diagnosis, select, uct

__version__ = "0.1.0"

__all__ = [
    "AbnormalQuery",
    "AccParams",
    "Alert",
    "Anomaly",
    "BusMessage",
    "Completion",
    "CorpusStats",
    "DiagnosisOutcome",
    "DiagnosisReport",
    "DiagnosisSearch",
    "ExpertProfile",
    "Gateway",
    "KnowledgeBase",
    "KnowledgeChunk",
    "LabeledPair",
    "MatcherModel",
    "MessageBus",
    "MetricSeries",
    "PromptRequest",
    "RunningSummary",
    "ScriptedBackend",
    "ScriptedRule",
    "SearchConfig",
    "ToolMatcher",
    "ToolRegistry",
    "ToolSpec",
    "accuracy",
    "assign_experts",
    "bm25_score",
    "build_summary_tree",
    "cluster_chunks",
    "cross_review",
    "dbscan",
    "detect_abnormal_metrics",
    "extract_knowledge",
    "generate_report",
    "idf",
    "invoke",
    "ks_statistic",
    "load_cases",
    "pca_project",
    "predict_relevance",
    "prepare_experts",
    "profile_anomaly",
    "rank_chunks",
    "refine",
    "register_tools",
    "run_benchmark",
    "run_collaboration",
    "run_diagnosis",
    "select",
    "split_chapters",
    "summarize_record",
    "train_matcher",
    "uct",
]
