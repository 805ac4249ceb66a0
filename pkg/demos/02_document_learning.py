# %% [markdown]
# # Turning a maintenance guide into knowledge chunks
# The guide is split along its headings, each block is summarised, and every
# block is then mined for chunks with its own summary, its children and the
# blocks whose summaries look most alike. A scripted model stands in for the
# real one so the run is reproducible.

# %%
from dbot.doclearning import build_summary_tree, cluster_chunks, extract_knowledge, similar_blocks, split_chapters
from dbot.fixtures import path
from dbot.gateway import Gateway

gateway = Gateway.scripted(path("doc_rules.json"))
text = (path("docs") / "maintenance_guide.md").read_text()
tree = split_chapters(text, max_block_size=4096, title="guide")
for block in tree.preorder():
    print("  " * tree.depth(block.id) + block.title)
assert tree.text() == text  # splitting loses nothing

# %%
summaries = build_summary_tree(tree, gateway)
target = next(b for b in tree.preorder() if b.title.startswith("2.1"))
print("closest to", target.title, "->", [tree[s.block_id].title for s in similar_blocks(summaries, target.id, gateway, 2)])

# %% [markdown]
# The block about dead tuples uses the term "bloat-table" without defining it;
# the definition rides along because its summary ranks first.

# %%
result = extract_knowledge(tree, summaries, gateway)
for chunk in result.kept:
    print(chunk.name, chunk.metrics, "from block", chunk.source_block)

# %%
for cluster in cluster_chunks(result.kept, gateway, eps=0.4, min_pts=1):
    print(cluster.cluster_id, cluster.member_chunk_ids, cluster.centroid_coords_3d)
