# %% [markdown]
# # From metric series to relevant knowledge
# An alert fires for a one-minute window. We compare each metric inside the
# window with the minute before it, keep the metrics whose distribution
# shifted, and rank knowledge chunks by how well their metrics match.

# %%
from dbot.fixtures import path
from dbot.knowledge import load_knowledge
from dbot.retrieval import CorpusStats, detect_abnormal_metrics, ks_statistic, load_metric_series, rank_chunks, split_reference

START, END = 1684600070, 1684600130
series = load_metric_series(path("metrics.jsonl"))
reference, window = split_reference(series, START, END)
for ref, cur in zip(reference, window):
    print(f"{cur.metric_name:16s} KS = {ks_statistic(ref.values, cur.values):.2f}")

# %% [markdown]
# With the default threshold of 0.3 only the shifted metrics survive.

# %%
query = detect_abnormal_metrics(reference, window, 0.3, window=(START, END))
print(sorted(query.metrics))

# %%
chunks = load_knowledge(path("knowledge.json")).chunks
stats = CorpusStats.from_chunks(chunks)
for name, score in rank_chunks(query, chunks, stats, top_n=3):
    print(f"{score:6.3f}  {name}")
