# %% [markdown]
# # One expert's tree search
# Each expansion picks a node by UCT, tries the candidate tool calls and
# knowledge chunks below it, and asks the model to reflect on the result.
# Useless actions are pruned; evaluators vote on the leaves every few
# expansions and the votes flow back up as W and N.

# %%
from dbot.anomaly import Alert, Anomaly
from dbot.fixtures import path
from dbot.gateway import Gateway
from dbot.knowledge import load_knowledge
from dbot.retrieval import AbnormalQuery, CorpusStats
from dbot.toolkit import ScriptedExecutor, ToolMatcher, register_tools
from dbot.treesearch import DiagnosisSearch, SearchConfig

START, END = 1684600070, 1684600130
anomaly = Anomaly(START, END, [Alert("Load_High", "critical", "CPU load stayed above 90% for one minute")],
                  AbnormalQuery(frozenset({"cpu_usage", "rows_fetched"}), (START, END)))
gateway = Gateway.scripted(path("scenario_large_data_fetch.json"))
tools = register_tools(path("tools.json")).subset(["is_abnormal_metric", "fetch_slow_queries", "heuristic_index_selection"])
kb = load_knowledge(path("knowledge.json"))
search = DiagnosisSearch(anomaly, gateway, ToolMatcher(tools, gateway), ScriptedExecutor.load(path("executor.json")),
                         kb.subset(["large_data_fetch", "missing_index"]), CorpusStats.from_chunks(kb.chunks), SearchConfig(max_turns=20))
outcome = search.run()

# %%
def show(node_id, depth=0):
    n = search.tree[node_id]
    flags = "pruned" if n.pruned else ", ".join(n.found_causes)
    print(f"{'  ' * depth}[{n.id}] {n.action.name}  W={n.W:g} N={n.N} {flags}")
    for c in n.children:
        show(c, depth + 1)

show(0)
print("\nturns:", search.turns, "| root causes:", outcome.root_causes, "| winning leaf:", outcome.winning_leaf)
