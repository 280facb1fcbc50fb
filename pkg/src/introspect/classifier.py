"""Linear one-vs-rest SVMs on GAP features, scoring and softmax."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingError

EPS = 1e-12


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    return v / n if n > EPS else v.copy()


def l2_normalize_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(n > EPS, x / np.where(n > EPS, n, 1.0), x)


def concat_normalized(a, b) -> np.ndarray:
    """Normalise each block separately, then concatenate."""
    return np.concatenate([l2_normalize(a), l2_normalize(b)])


def softmax(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    e = np.exp(s - s.max())
    return e / e.sum()


@dataclass(frozen=True, eq=False)
class ScoreVector:
    scores: np.ndarray
    probabilities: np.ndarray
    predicted: int

    @classmethod
    def from_scores(cls, scores) -> "ScoreVector":
        s = np.asarray(scores, dtype=np.float64)
        # np.argmax returns the first maximum: lowest class index wins ties
        return cls(s, softmax(s), int(np.argmax(s)))

    def top(self, k: int) -> list[int]:
        """Indices of the ``k`` best classes, best first, ties by lower index."""
        order = np.argsort(-self.scores, kind="stable")
        return [int(c) for c in order[:k]]


@dataclass(frozen=True, eq=False)
class LinearClassifier:
    weights: np.ndarray  # (C, K)
    biases: np.ndarray   # (C,)
    normalize_input: bool = True
    class_names: tuple = ()
    lam: float = 1e-4

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def prepare(self, feat) -> np.ndarray:
        feat = np.asarray(feat, dtype=np.float64)
        if feat.shape[-1] != self.feature_dim:
            raise ShapeError(f"feature length {feat.shape[-1]} != classifier K {self.feature_dim}")
        if not self.normalize_input:
            return feat
        return l2_normalize(feat) if feat.ndim == 1 else l2_normalize_rows(feat)

    def decision(self, feats) -> np.ndarray:
        """Raw scores for an (N, K) batch."""
        return self.prepare(feats) @ self.weights.T + self.biases


def score(clf: LinearClassifier, feat) -> ScoreVector:
    f = clf.prepare(feat)
    if f.ndim != 1:
        raise ShapeError("score() takes a single feature vector")
    return ScoreVector.from_scores(clf.weights @ f + clf.biases)


@dataclass
class SVMConfig:
    """Hyper-parameters of :func:`train_svm`.

    ``schedule`` is ``"pegasos"`` (step ``1/(lam*t)``) or ``"constant"``
    (step ``lr``).
    """

    lam: float = 1e-4
    epochs: int = 50
    seed: int = 0
    schedule: str = "pegasos"
    lr: float = 0.1
    normalize_input: bool = True
    class_names: tuple = field(default_factory=tuple)


def hinge_objective(w, b, x, y, lam) -> float:
    """(lam/2)|w|^2 + mean(max(0, 1 - y (w.x + b))) for one binary problem."""
    margins = y * (x @ w + b)
    return 0.5 * lam * float(w @ w) + float(np.maximum(0.0, 1.0 - margins).mean())


def train_svm(features, labels, config: SVMConfig | None = None,
              num_classes: int | None = None) -> LinearClassifier:
    """One-vs-rest linear SVMs by stochastic subgradient descent.

    All C binary problems are stepped together over one seeded shuffle per
    epoch.  The bias is handled as an extra constant-1 input (regularised
    with the weights, as liblinear does).  The returned solution is the
    average of the second half of the iterates; a class whose averaged or
    last iterate does not improve on w = 0, b = 0 falls back to whichever of
    the three has the lowest objective.
    """
    cfg = config or SVMConfig()
    x = np.asarray(features, dtype=np.float64)
    y_idx = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(y_idx) or len(x) == 0:
        raise TrainingError(f"need N x K features with N labels, got {x.shape} / {y_idx.shape}")
    if not np.all(np.isfinite(x)):
        bad = int(np.argwhere(~np.isfinite(x))[0, 0])
        raise TrainingError(f"non-finite feature in sample {bad}")
    n_cls = int(num_classes if num_classes is not None else y_idx.max() + 1)
    present = np.bincount(y_idx.astype(np.intp), minlength=n_cls)
    if len(present) > n_cls or np.any(present[:n_cls] == 0):
        missing = [c for c in range(n_cls) if c >= len(present) or present[c] == 0]
        raise TrainingError(f"classes without training samples: {missing}")
    if cfg.normalize_input:
        x = l2_normalize_rows(x)

    lam = cfg.lam
    n, k = x.shape
    xa = np.hstack([x, np.ones((n, 1))])
    y = np.where(y_idx[:, None] == np.arange(n_cls)[None, :], 1.0, -1.0)  # (N, C)
    rng = np.random.default_rng(cfg.seed)
    if cfg.schedule not in ("pegasos", "constant"):
        raise TrainingError(f"unknown step schedule {cfg.schedule!r}")
    avg, last = _averaged_sgd(xa, y, cfg, rng)

    weights = np.empty((n_cls, k))
    biases = np.empty(n_cls)
    for c in range(n_cls):
        candidates = [avg[c], last[c], np.zeros(k + 1)]
        objs = [hinge_objective(cand[:k], cand[k], x, y[:, c], lam) for cand in candidates]
        best = candidates[int(np.argmin(objs))]
        weights[c], biases[c] = best[:k], best[k]
    return LinearClassifier(weights, biases, cfg.normalize_input, tuple(cfg.class_names), lam)


def _averaged_sgd(xa, y, cfg: SVMConfig, rng):
    n = len(xa)
    lam = cfg.lam
    radius = 1.0 / np.sqrt(lam)
    w = np.zeros((y.shape[1], xa.shape[1]))
    avg = np.zeros_like(w)
    n_avg = 0
    start_avg = cfg.epochs * n // 2
    t = 0
    for _ in range(cfg.epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t) if cfg.schedule == "pegasos" else cfg.lr
            xi, yi = xa[i], y[i]
            active = yi * (w @ xi) < 1.0
            w *= max(0.0, 1.0 - eta * lam)
            if active.any():
                w[active] += eta * yi[active, None] * xi[None, :]
            norms = np.linalg.norm(w, axis=1)
            over = norms > radius
            if over.any():
                w[over] *= (radius / norms[over])[:, None]
            if t > start_avg:
                n_avg += 1
                avg += (w - avg) / n_avg
    return (avg if n_avg else w.copy()), w


def objectives(clf: LinearClassifier, features, labels) -> np.ndarray:
    """Per-class training objective of ``clf`` on the given data."""
    x = clf.prepare(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels)
    out = np.empty(clf.num_classes)
    for c in range(clf.num_classes):
        y = np.where(labels == c, 1.0, -1.0)
        out[c] = hinge_objective(clf.weights[c], clf.biases[c], x, y, clf.lam)
    return out


def accuracy(clf: LinearClassifier, features, labels) -> float:
    pred = np.argmax(clf.decision(features), axis=1)
    return float(np.mean(pred == np.asarray(labels)))
