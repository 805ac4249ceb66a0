# %% [markdown]
# # Registering tools and matching them to a diagnosis context
# Tools live in a category / tool / API hierarchy. Candidate APIs for a step
# are the ones whose description is closest to the current context; a small
# logistic model can then drop the ones it deems irrelevant.

# %%
import random

import numpy as np

from dbot.fixtures import path
from dbot.gateway import Gateway
from dbot.matcher import LabeledPair, filter_relevant, train_matcher
from dbot.toolkit import ToolMatcher, register_tools

gateway = Gateway.scripted()
registry = register_tools(path("tools.json"))
print("\n".join(registry.listing()))

# %%
matcher = ToolMatcher(registry, gateway)
context = "CPU usage is high and slow queries return millions of rows"
for spec, score in matcher.match_tools(context, 3):
    print(f"{score:.3f}  {spec.signature()}")

# %% [markdown]
# Train the relevance head on synthetic labels: a pair counts as relevant when
# the context shares a word with the tool's API name.

# %%
rng = random.Random(0)
words = "cpu rows slow queries insert volume lock waits index metric abnormal".split()
pairs = []
for _ in range(80):
    ctx = " ".join(rng.sample(words, 4))
    api = rng.choice([s.api_name for s in registry.specs()])
    pairs.append(LabeledPair(ctx, api, int(any(w in api for w in ctx.split()))))
model = train_matcher(pairs, registry, gateway, epochs=300, learning_rate=0.05)
print(f"loss {model.losses[0]:.2f} -> {min(model.losses):.2f}")
print([s.api_name for s, _ in filter_relevant(model, context, matcher.match_tools(context, 5), gateway)])
print("weights norm", np.linalg.norm(model.weights).round(3))
