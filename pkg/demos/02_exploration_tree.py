"""Iterative classification and introspection: building an exploration tree.

Each node is classified; the class maps of its top-k classes propose k child
windows; the process repeats for T iterations (T counts the root).

Run:  python3 demos/02_exploration_tree.py
"""
# %% Train a small stack: one classifier per depth plus early-fusion classifiers
import json
import tempfile
from pathlib import Path

from introspect import explorer as ex
from introspect.featurizer import filter_bank_spec
from introspect.synthetic import SynthConfig, generate_synthetic
from introspect.trainkit import StackConfig, load_image, load_manifest, train_stack

root = Path(tempfile.mkdtemp(prefix="explore_demo_"))
man = load_manifest(generate_synthetic(root, SynthConfig(images_per_class=100, seed=2,
                                                         patch_contrast=1.0)))
bank = filter_bank_spec()
stack = train_stack(man, bank, StackConfig(iterations=3, seed=2))
print("per-depth training accuracy:", stack.training["accuracies"]["per_iteration"])

# %% Greedy exploration (beam width 1): a chain root -> depth 1 -> depth 2
img = load_image(man.split("test")[0])
tree = ex.explore(img, stack, bank, stack.config.explore_config())
for n in tree.nodes:
    print(f"depth {n.depth}: window {n.window}  predicted {stack.classes[n.scores.predicted]}")

# %% Beam width 2: up to 1 + 2 + 4 nodes; the greedy route follows the top class
cfg = stack.config.explore_config()
cfg.beam_width = 2
wide = ex.explore(img, stack, bank, cfg)
print("nodes with beam 2:", len(wide.nodes), " routes:", len(ex.all_routes(wide)))
route = ex.select_route(wide)
print("greedy route ids:", [n.id for n in route.nodes])

# %% Fusing evidence along the route
print("baseline   ", stack.classes[route.nodes[0].scores.predicted])
print("late       ", stack.classes[ex.fuse_late(route).predicted])
print("early      ", stack.classes[ex.fuse_early(route, stack.early[len(route) - 1]).predicted])
print("early-accum", stack.classes[ex.fuse_early_accum(route, stack.early).predicted])

# %% Trees serialise to JSON with a fixed key order and reload exactly
text = ex.serialize_tree(wide)
assert ex.serialize_tree(ex.load_tree(text)) == text
print(json.dumps(json.loads(text)["nodes"][1]["window"]))
