"""Datasets, per-iteration classifier training and model persistence."""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .classifier import LinearClassifier, SVMConfig, accuracy, l2_normalize, score, train_svm
from .errors import DataError, FormatError, ModelLoadError, TrainingError
from .explorer import (ExploreConfig, child_window, guidance_peaks, node_rng,
                       view_window)
from .featurizer import ExtractorSpec, load_weights, weights_bytes
from .raster import Window, _atomic_write, read_ppm

FORMAT_VERSION = 1


# --- datasets ----------------------------------------------------------------------

@dataclass(frozen=True)
class Entry:
    path: Path
    label: str
    split: str

    @property
    def key(self) -> str:
        return self.path.name


@dataclass
class DatasetManifest:
    entries: list[Entry]
    classes: list[str]

    def split(self, name: str) -> list[Entry]:
        return [e for e in self.entries if e.split == name]

    def label_index(self, e: Entry) -> int:
        return self.classes.index(e.label)


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: {exc.msg} at column {exc.colno}") from None
    return rows


def load_manifest(path) -> DatasetManifest:
    """Read a JSONL manifest; relative paths resolve against its directory."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest {path} not found")
    entries = []
    for i, row in enumerate(_read_jsonl(path), 1):
        try:
            p, label, split = row["path"], str(row["label"]), row["split"]
        except KeyError as exc:
            raise DataError(f"{path}:{i}: missing field {exc}") from None
        if split not in ("train", "test"):
            raise DataError(f"{path}:{i}: split must be train or test, got {split!r}")
        p = Path(p)
        entries.append(Entry(p if p.is_absolute() else path.parent / p, label, split))
    classes = sorted({e.label for e in entries})
    return DatasetManifest(entries, classes)


def load_groundtruth(path) -> dict[str, dict]:
    """Sidecar rows keyed by image file name."""
    return {Path(r["path"]).name: r for r in _read_jsonl(Path(path))}


def load_image(entry_or_path) -> np.ndarray:
    p = entry_or_path.path if isinstance(entry_or_path, Entry) else Path(entry_or_path)
    try:
        return read_ppm(p)
    except FileNotFoundError:
        raise DataError(f"image {p} not found") from None
    except FormatError as exc:
        raise DataError(f"image {p}: {exc}") from None


def worker_count() -> int:
    n = int(os.environ.get("INTROSPECT_THREADS", "0") or 0)
    return n if n > 0 else (os.cpu_count() or 1)


def parallel_map(fn, items) -> list:
    """Order-preserving map over ``items`` using up to INTROSPECT_THREADS workers."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# --- stacks ------------------------------------------------------------------------

@dataclass
class StackConfig:
    iterations: int = 4
    beam_width: int = 1
    zoom: float = ExploreConfig.zoom
    input_side: int = 128
    preserve_aspect: bool = True
    policy: str = "cam"
    seed: int = 0
    lam: float = 1e-4
    epochs: int = 50

    def explore_config(self, **overrides) -> ExploreConfig:
        cfg = ExploreConfig(self.iterations, self.beam_width, self.zoom, self.input_side,
                            self.preserve_aspect, self.policy, self.seed)
        return replace(cfg, **overrides)

    def svm_config(self, classes, normalize_input=True) -> SVMConfig:
        return SVMConfig(lam=self.lam, epochs=self.epochs, seed=self.seed,
                         normalize_input=normalize_input, class_names=tuple(classes))


@dataclass
class ClassifierStack:
    classifiers: list[LinearClassifier]   # E_0 .. E_{T-1}
    early: list[LinearClassifier]         # early fusion for route lengths 1..T
    classes: list[str]
    extractor: ExtractorSpec
    config: StackConfig
    training: dict = field(default_factory=dict)

    def same_classifier(self) -> "ClassifierStack":
        """Ablation view that scores every depth with E_0."""
        return replace(self, classifiers=[self.classifiers[0]] * len(self.classifiers))


def train_stack(manifest: DatasetManifest, extractor: ExtractorSpec,
                config: StackConfig | None = None, log=None) -> ClassifierStack:
    """Train E_0..E_{T-1} along greedy training routes, then early fusion.

    E_0 sees whole images.  Each later E_t sees, per training image, the
    window proposed from the previous window by E_{t-1}'s top class under
    the configured guidance policy; labels stay image-level.
    """
    cfg = config or StackConfig()
    train = manifest.split("train")
    if not train:
        raise TrainingError("manifest has no training entries")
    labels = np.array([manifest.label_index(e) for e in train])
    missing = [c for i, c in enumerate(manifest.classes) if not np.any(labels == i)]
    if missing:
        raise TrainingError(f"classes with no training image: {missing}")
    n_cls = len(manifest.classes)
    images = parallel_map(load_image, train)
    ecfg = cfg.explore_config()
    min_side = extractor.receptive_field

    views = parallel_map(lambda im: view_window(im, Window.full(im), extractor,
                                                cfg.input_side, cfg.preserve_aspect), images)
    routes_feats = [[v.feature] for v in views]
    windows = [[v.window] for v in views]
    classifiers: list[LinearClassifier] = []
    accs = {"per_iteration": [], "early_fusion": []}
    for t in range(cfg.iterations):
        feats = np.array([v.feature for v in views])
        clf = train_svm(feats, labels, cfg.svm_config(manifest.classes), num_classes=n_cls)
        classifiers.append(clf)
        accs["per_iteration"].append(accuracy(clf, feats, labels))
        if log:
            log(f"E_{t}: train accuracy {accs['per_iteration'][-1]:.4f}")
        if t == cfg.iterations - 1:
            break

        def advance(i, clf=clf):
            view = views[i]
            rng = node_rng(cfg.seed, i, t) if ecfg.policy == "random" else None
            sv = score(clf, view.feature)
            (_, peak), = guidance_peaks(view, clf, sv, 1, ecfg.policy, rng)
            win = child_window(view.window, peak, images[i].shape, cfg.zoom, min_side)
            return view_window(images[i], win, extractor, cfg.input_side, cfg.preserve_aspect)

        views = parallel_map(advance, range(len(images)))
        for i, v in enumerate(views):
            routes_feats[i].append(v.feature)
            windows[i].append(v.window)

    early = []
    for length in range(1, cfg.iterations + 1):
        feats = np.array([np.mean([l2_normalize(f) for f in r[:length]], axis=0)
                          for r in routes_feats])
        clf = train_svm(feats, labels, cfg.svm_config(manifest.classes, normalize_input=False),
                        num_classes=n_cls)
        early.append(clf)
        accs["early_fusion"].append(accuracy(clf, feats, labels))
    training = {
        "accuracies": accs,
        "windows": {e.key: [[w.x0, w.y0, w.w, w.h] for w in ws] for e, ws in zip(train, windows)},
    }
    return ClassifierStack(classifiers, early, list(manifest.classes), extractor, cfg, training)


# --- persistence ---------------------------------------------------------------------

def _clf_to_dict(clf: LinearClassifier) -> dict:
    return {"normalize_input": clf.normalize_input, "lambda": clf.lam,
            "weights": clf.weights.tolist(), "biases": clf.biases.tolist()}


def _clf_from_dict(d: dict, classes, k: int, where: str) -> LinearClassifier:
    try:
        w = np.asarray(d["weights"], dtype=np.float64)
        b = np.asarray(d["biases"], dtype=np.float64)
    except (TypeError, ValueError):
        raise ModelLoadError(f"{where}: weights are not a numeric C x K array") from None
    if w.shape != (len(classes), k) or b.shape != (len(classes),):
        raise ModelLoadError(f"{where}: weight shape {w.shape}/{b.shape} does not match "
                             f"{len(classes)} classes x K={k}")
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
        raise ModelLoadError(f"{where}: non-finite weights")
    return LinearClassifier(w, b, bool(d["normalize_input"]), tuple(classes), float(d["lambda"]))


def save_model(stack: ClassifierStack, path, weights_path=None) -> None:
    """Write the model JSON (and the extractor container) atomically.

    The container goes to ``weights_path`` (default: ``<model>.weights``)
    and is referenced relative to the model file with its sha256.
    """
    path = Path(path)
    wpath = Path(weights_path) if weights_path else path.with_name(path.name + ".weights")
    blob = weights_bytes(stack.extractor)
    _atomic_write(wpath, blob)
    try:
        ref = os.path.relpath(wpath, path.parent)
    except ValueError:
        ref = str(wpath.resolve())
    cfg = stack.config
    doc = {
        "format_version": FORMAT_VERSION,
        "config": {"iterations": cfg.iterations, "beam_width": cfg.beam_width, "zoom": cfg.zoom,
                   "input_side": cfg.input_side, "preserve_aspect": cfg.preserve_aspect,
                   "policy": cfg.policy, "seed": cfg.seed, "lambda": cfg.lam,
                   "epochs": cfg.epochs},
        "classes": list(stack.classes),
        "extractor": {"kind": stack.extractor.kind, "path": ref,
                      "sha256": hashlib.sha256(blob).hexdigest()},
        "classifiers": [_clf_to_dict(c) for c in stack.classifiers],
        "early_fusion": [_clf_to_dict(c) for c in stack.early],
        "training": stack.training,
    }
    _atomic_write(path, (json.dumps(doc, indent=1) + "\n").encode())


def load_model(path) -> ClassifierStack:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"model {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ModelLoadError(f"{path}: JSON error at byte offset {exc.pos}: {exc.msg}") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelLoadError(f"{path}: format version {doc.get('format_version')!r}, "
                             f"expected {FORMAT_VERSION}")
    try:
        ext = doc["extractor"]
        wpath = Path(ext["path"])
        if not wpath.is_absolute():
            wpath = path.parent / wpath
        try:
            blob = wpath.read_bytes()
        except FileNotFoundError:
            raise ModelLoadError(f"{path}: extractor weights {wpath} not found") from None
        if hashlib.sha256(blob).hexdigest() != ext["sha256"]:
            raise ModelLoadError(f"{path}: hash mismatch for extractor weights {wpath}")
        extractor = load_weights(wpath)
        classes = list(doc["classes"])
        c = doc["config"]
        cfg = StackConfig(c["iterations"], c["beam_width"], c["zoom"], c["input_side"],
                          c["preserve_aspect"], c["policy"], c["seed"], c["lambda"], c["epochs"])
        k = extractor.k
        clfs = [_clf_from_dict(d, classes, k, f"classifier E_{i}")
                for i, d in enumerate(doc["classifiers"])]
        early = [_clf_from_dict(d, classes, k, f"early-fusion classifier {i + 1}")
                 for i, d in enumerate(doc["early_fusion"])]
    except KeyError as exc:
        raise ModelLoadError(f"{path}: missing field {exc}") from None
    if not clfs:
        raise ModelLoadError(f"{path}: model has no E_0 classifier")
    if len(clfs) < cfg.iterations or len(early) < cfg.iterations:
        raise ModelLoadError(f"{path}: {len(clfs)} iteration / {len(early)} early-fusion "
                             f"classifiers for {cfg.iterations} iterations")
    return ClassifierStack(clfs, early, classes, extractor, cfg, doc.get("training", {}))
