# %% [markdown]
# # Scoring diagnoses
# Each case carries ground-truth labels. A prediction earns one point per
# correct cause and loses 0.1 per wrong one, normalised by the number of true
# causes.

# %%
from dbot.bench import EngineConfig, accuracy, load_cases, run_benchmark
from dbot.collab import load_experts
from dbot.fixtures import path
from dbot.gateway import Gateway
from dbot.knowledge import load_knowledge
from dbot.toolkit import register_tools

print(accuracy(["large data fetch", "index missing", "poor join"], ["large_data_fetch", "index_missing"]))

# %%
kb = load_knowledge(path("knowledge.json"))
registry = register_tools(path("tools.json"))
experts = load_experts(path("experts.json"), kb, registry, Gateway.scripted())
result = run_benchmark(load_cases(path("bench/cases.json")), EngineConfig(kb, registry, experts))
print(result.to_markdown())
