"""Class activation maps: where a linear classifier on pooled features "looks".

Run:  python3 demos/01_class_activation_maps.py [out_dir]
"""
# %% Imports and a small training set
import sys
import tempfile
from pathlib import Path

import numpy as np

from introspect import cam
from introspect.classifier import SVMConfig, train_svm
from introspect.featurizer import extract, filter_bank_spec, gap
from introspect.raster import Window, write_pgm, write_ppm
from introspect.synthetic import SynthConfig, generate_synthetic
from introspect.trainkit import load_groundtruth, load_image, load_manifest

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="cam_demo_"))
manifest = generate_synthetic(out / "data", SynthConfig(images_per_class=40, image_side=96, seed=1))
man = load_manifest(manifest)
truth = load_groundtruth(manifest.parent / "groundtruth.jsonl")
bank = filter_bank_spec()   # 32 channels, stride 8, receptive field 12
print("classes:", man.classes)

# %% Pooled features -> one-vs-rest linear SVM
train = man.split("train")
maps = [extract(bank, load_image(e)) for e in train]
x = np.array([gap(fm) for fm in maps])
y = np.array([man.label_index(e) for e in train])
clf = train_svm(x, y, SVMConfig(epochs=100, normalize_input=False))
print("weights:", clf.weights.shape, "biases:", np.round(clf.biases, 3))

# %% The map of class c is the weighted sum of channels: M_c = sum_k w_ck f_k.
# Its mean is exactly the class score minus the bias.
e = man.split("test")[0]
img = load_image(e)
fm = extract(bank, img)
c = man.label_index(e)
m = cam.compute_cam(fm, clf.weights[c], c, Window.full(img))
score = clf.weights[c] @ gap(fm)
print(f"mean(M) = {m.values.mean():+.12f}   w.gap = {score:+.12f}")
print("relative residual:", cam.check_decomposition(fm, m, clf.weights[c]))

# %% The peak of the true class's map sits near the planted patch
peak = cam.find_peak(m)
g = truth[e.key]
print(f"peak at ({peak.image_x}, {peak.image_y}); patch centre at ({g['cx']:.0f}, {g['cy']:.0f})")

# %% Next window: a square of side zoom * sqrt(w h) centred on the peak
child = cam.propose_subwindow(Window.full(img), peak, cam.DEFAULT_ZOOM, img.shape[1], img.shape[0])
print("proposed child window:", child)

# %% Render heatmap and overlay
write_pgm(out / "heatmap.pgm", cam.render_heatmap(m))
write_ppm(out / "overlay.ppm", cam.render_overlay(m, img))
print("wrote", out / "heatmap.pgm", "and", out / "overlay.ppm")
