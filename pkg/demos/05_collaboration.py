# %% [markdown]
# # Two experts, two causes
# The query expert can only see slow queries and the write expert only insert
# volume. Alone each finds one cause; together, sharing findings over the bus
# and reviewing each other, the report lists both.

# %%
from dbot.anomaly import Alert, Anomaly
from dbot.collab import load_experts, run_collaboration
from dbot.fixtures import path
from dbot.gateway import Gateway
from dbot.knowledge import load_knowledge
from dbot.retrieval import AbnormalQuery
from dbot.toolkit import ScriptedExecutor, register_tools

START, END = 1684600070, 1684600130


def diagnose(names=None):
    gateway = Gateway.scripted(path("scenario_two_causes.json"))
    registry = register_tools(path("tools.json"))
    kb = load_knowledge(path("knowledge.json"))
    experts = [e for e in load_experts(path("experts.json"), kb, registry, gateway) if not names or e.name in names]
    anomaly = Anomaly(START, END, [Alert("Load_High", "critical", "CPU load stayed above 90% for one minute")],
                      AbnormalQuery(frozenset({"cpu_usage", "rows_fetched", "tuples_inserted"}), (START, END)))
    return run_collaboration(anomaly, experts, kb, registry, gateway, ScriptedExecutor.load(path("executor.json")))


for name in ("Query Expert", "Write Expert"):
    print(name, "alone:", diagnose([name]).report.root_causes)

# %%
result = diagnose()
print("together:", result.report.root_causes)
print(f"{len(result.bus.log)} findings exchanged")
print(result.report.to_markdown())
