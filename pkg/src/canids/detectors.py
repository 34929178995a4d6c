"""Classical detectors sharing one train/predict interface.

Four model kinds: a CART decision tree split on Gini impurity, a
bootstrap forest of such trees, softmax gradient-boosted regression
trees with Newton leaf weights, and a per-id inter-arrival frequency
baseline.  The tree learners are written directly on numpy so split
tie-breaking (lowest feature index, then lowest threshold) and
per-tree seeding are fully specified; given identical inputs the
fitted models are identical.

All score outputs are probability vectors over the fitted class list.
Models serialize to self-describing JSON documents with a format
version.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import IO, Any, Iterable, Iterator, Sequence

import numpy as np

from .core import CanFrame, LabeledFrame, TrafficLog

MODEL_FORMAT_VERSION = 1

DEFAULT_FOREST_TREES = 100
DEFAULT_FOREST_DEPTH = 12
DEFAULT_GBDT_ROUNDS = 200
DEFAULT_GBDT_RATE = 0.1
DEFAULT_GBDT_DEPTH = 6
DEFAULT_K_SIGMA = 4.0


class NotFittedError(RuntimeError):
    pass


@dataclass(frozen=True)
class Prediction:
    """A predicted class with its probability vector."""

    name: str
    confidence: float
    scores: np.ndarray

    def __post_init__(self) -> None:
        if abs(float(self.scores.sum()) - 1.0) > 1e-9:
            raise ValueError("per-class scores must sum to 1")
        if abs(self.confidence - float(self.scores.max())) > 1e-12:
            raise ValueError("confidence must equal the largest score")


def _predictions_from_scores(scores: np.ndarray, classes: Sequence[str]) -> list[Prediction]:
    out = []
    for row in scores:
        j = int(np.argmax(row))
        out.append(Prediction(name=classes[j], confidence=float(row[j]), scores=row))
    return out


def _default_classes(y: np.ndarray) -> tuple[str, ...]:
    return tuple(str(c) for c in range(int(y.max()) + 1))


class _TreeArrays:
    """Flat binary-tree storage: node i splits on feature[i] (or is a
    leaf when feature[i] < 0) at threshold[i]; value[i] is the leaf
    payload (class distribution or regression weight)."""

    def __init__(self, value_width: int) -> None:
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[np.ndarray] = []
        self.value_width = value_width

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(np.zeros(self.value_width))
        return len(self.feature) - 1

    def finalize(self) -> None:
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.vstack(self.value) if len(self.value) else np.zeros((0, self.value_width))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for every row; walks one level per iteration."""
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            feat = self.feature[node]
            active = np.flatnonzero(feat >= 0)
            if len(active) == 0:
                return node
            f = feat[active]
            go_left = X[active, f] <= self.threshold[node[active]]
            nxt = np.where(go_left, self.left[node[active]], self.right[node[active]])
            node[active] = nxt

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "feature": np.asarray(self.feature).tolist(),
            "threshold": np.asarray(self.threshold).tolist(),
            "left": np.asarray(self.left).tolist(),
            "right": np.asarray(self.right).tolist(),
            "value": np.asarray(self.value).tolist(),
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "_TreeArrays":
        value = np.asarray(obj["value"], dtype=np.float64)
        tree = cls(value.shape[1] if value.ndim == 2 else 1)
        tree.feature = np.asarray(obj["feature"], dtype=np.int64)
        tree.threshold = np.asarray(obj["threshold"], dtype=np.float64)
        tree.left = np.asarray(obj["left"], dtype=np.int64)
        tree.right = np.asarray(obj["right"], dtype=np.int64)
        tree.value = value.reshape(len(tree.feature), -1)
        return tree


def _split_candidates(sv: np.ndarray, m: int, min_leaf: int) -> np.ndarray:
    """Positions i where the sorted feature changes value and both sides
    keep at least min_leaf samples; left side = first i samples."""
    pos = np.arange(1, m)
    ok = (sv[1:] > sv[:-1]) & (pos >= min_leaf) & (pos <= m - min_leaf)
    return pos[ok]


def _safe_threshold(lo: float, hi: float) -> float:
    """Midpoint, pulled back to the left value if rounding reaches hi,
    so `x <= threshold` always reproduces the fit-time partition."""
    mid = lo + (hi - lo) / 2.0
    return lo if mid >= hi else mid


def _grow_gini_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    max_depth: int | None,
    min_leaf: int,
) -> _TreeArrays:
    tree = _TreeArrays(value_width=n_classes)
    eye = np.eye(n_classes, dtype=np.float64)

    def grow(idx: np.ndarray, depth: int) -> int:
        node = tree.add_node()
        counts = np.bincount(y[idx], minlength=n_classes).astype(np.float64)
        tree.value[node] = counts / len(idx)
        if (
            (max_depth is not None and depth >= max_depth)
            or len(idx) < 2 * min_leaf
            or counts.max() == len(idx)
        ):
            return node
        m = len(idx)
        best_score = -np.inf
        best: tuple[int, float, np.ndarray, np.ndarray] | None = None
        for f in range(X.shape[1]):
            v = X[idx, f]
            order = np.argsort(v, kind="stable")
            sv = v[order]
            cand = _split_candidates(sv, m, min_leaf)
            if len(cand) == 0:
                continue
            cum = np.cumsum(eye[y[idx[order]]], axis=0)
            lc = cum[cand - 1]
            rc = cum[-1] - lc
            ln = cand.astype(np.float64)
            rn = m - ln
            # Minimizing weighted Gini is maximizing the sum of squared
            # class counts over each side's size.
            score = (lc * lc).sum(axis=1) / ln + (rc * rc).sum(axis=1) / rn
            j = int(np.argmax(score))
            if score[j] > best_score:
                i = int(cand[j])
                best_score = float(score[j])
                best = (f, _safe_threshold(float(sv[i - 1]), float(sv[i])), idx[order[:i]], idx[order[i:]])
        if best is None:
            return node
        f, thresh, left_idx, right_idx = best
        tree.feature[node] = f
        tree.threshold[node] = thresh
        tree.left[node] = grow(left_idx, depth + 1)
        tree.right[node] = grow(right_idx, depth + 1)
        return node

    grow(np.arange(len(X), dtype=np.int64), 0)
    tree.finalize()
    return tree


def _grow_newton_tree(
    X: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    max_depth: int,
    min_leaf: int,
    reg_lambda: float,
) -> _TreeArrays:
    """Regression tree on gradient/hessian pairs; leaves hold the Newton
    step -G/(H + lambda) and splits maximize the usual gain."""
    tree = _TreeArrays(value_width=1)

    def leaf_weight(idx: np.ndarray) -> float:
        return float(-g[idx].sum() / (h[idx].sum() + reg_lambda))

    def grow(idx: np.ndarray, depth: int) -> int:
        node = tree.add_node()
        tree.value[node][0] = leaf_weight(idx)
        if depth >= max_depth or len(idx) < 2 * min_leaf:
            return node
        m = len(idx)
        G = g[idx].sum()
        H = h[idx].sum()
        parent_term = G * G / (H + reg_lambda)
        best_gain = 1e-12
        best: tuple[int, float, np.ndarray, np.ndarray] | None = None
        for f in range(X.shape[1]):
            v = X[idx, f]
            order = np.argsort(v, kind="stable")
            sv = v[order]
            cand = _split_candidates(sv, m, min_leaf)
            if len(cand) == 0:
                continue
            sg = np.cumsum(g[idx[order]])
            sh = np.cumsum(h[idx[order]])
            gl = sg[cand - 1]
            hl = sh[cand - 1]
            gr = G - gl
            hr = H - hl
            gain = gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent_term
            j = int(np.argmax(gain))
            if gain[j] > best_gain:
                i = int(cand[j])
                best_gain = float(gain[j])
                best = (f, _safe_threshold(float(sv[i - 1]), float(sv[i])), idx[order[:i]], idx[order[i:]])
        if best is None:
            return node
        f, thresh, left_idx, right_idx = best
        tree.feature[node] = f
        tree.threshold[node] = thresh
        tree.left[node] = grow(left_idx, depth + 1)
        tree.right[node] = grow(right_idx, depth + 1)
        return node

    grow(np.arange(len(X), dtype=np.int64), 0)
    tree.finalize()
    return tree


class Detector:
    """Shared surface: fit once, then predict probability vectors."""

    kind = "base"

    def __init__(self) -> None:
        self.classes: tuple[str, ...] = ()
        self.latency_us: float | None = None
        self._fitted = False

    def _check_fitted(self) -> None:
        if not self._fitted:
            raise NotFittedError(f"{self.kind} model is not fitted")

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_labels(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_scores(X), axis=1)

    def predict(self, X: np.ndarray) -> list[Prediction]:
        return _predictions_from_scores(self.predict_scores(X), self.classes)

    def descriptor(self) -> dict[str, Any]:
        return {"kind": self.kind, "classes": list(self.classes)}


class DecisionTree(Detector):
    """CART classifier: greedy Gini splits, deterministic tie-breaks."""

    kind = "tree"

    def __init__(self, max_depth: int | None = None, min_leaf: int = 1) -> None:
        super().__init__()
        if min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self._tree: _TreeArrays | None = None

    def fit(self, X: np.ndarray, y: np.ndarray, classes: Sequence[str] | None = None) -> "DecisionTree":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if len(X) == 0:
            raise ValueError("cannot fit on an empty set")
        self.classes = tuple(classes) if classes is not None else _default_classes(y)
        self._tree = _grow_gini_tree(X, y, len(self.classes), self.max_depth, self.min_leaf)
        self._fitted = True
        return self

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        self._check_fitted()
        return self._tree.leaf_values(np.asarray(X, dtype=np.float64))

    @property
    def n_nodes(self) -> int:
        self._check_fitted()
        return len(self._tree.feature)

    @property
    def depth(self) -> int:
        self._check_fitted()

        def walk(node: int) -> int:
            if self._tree.feature[node] < 0:
                return 0
            return 1 + max(walk(int(self._tree.left[node])), walk(int(self._tree.right[node])))

        return walk(0)

    def descriptor(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "classes": list(self.classes),
        }

    def to_json_obj(self) -> dict[str, Any]:
        self._check_fitted()
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "classes": list(self.classes),
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "latency_us": self.latency_us,
            "tree": self._tree.to_json_obj(),
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "DecisionTree":
        model = cls(max_depth=obj["max_depth"], min_leaf=obj["min_leaf"])
        model.classes = tuple(obj["classes"])
        model._tree = _TreeArrays.from_json_obj(obj["tree"])
        model.latency_us = obj.get("latency_us")
        model._fitted = True
        return model


class RandomForest(Detector):
    """Bagged CART trees; every tree sees a bootstrap sample and a fixed
    random feature subset, and the forest averages leaf distributions."""

    kind = "forest"

    def __init__(
        self,
        n_trees: int = DEFAULT_FOREST_TREES,
        max_depth: int | None = DEFAULT_FOREST_DEPTH,
        min_leaf: int = 1,
        bootstrap: bool = True,
        feature_frac: float = 1.0,
        seed: int = 0,
    ) -> None:
        super().__init__()
        if n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0.0 < feature_frac <= 1.0:
            raise ValueError("feature_frac must be in (0, 1]")
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.bootstrap = bootstrap
        self.feature_frac = feature_frac
        self.seed = seed
        self._trees: list[_TreeArrays] = []
        self._feats: list[np.ndarray] = []

    def fit(self, X: np.ndarray, y: np.ndarray, classes: Sequence[str] | None = None) -> "RandomForest":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if len(X) == 0:
            raise ValueError("cannot fit on an empty set")
        self.classes = tuple(classes) if classes is not None else _default_classes(y)
        n, d = X.shape
        n_feats = max(1, int(round(self.feature_frac * d)))
        self._trees = []
        self._feats = []
        for t in range(self.n_trees):
            rng = np.random.default_rng([self.seed, t])
            rows = rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            cols = np.sort(rng.permutation(d)[:n_feats])
            tree = _grow_gini_tree(
                X[rows][:, cols], y[rows], len(self.classes), self.max_depth, self.min_leaf
            )
            self._trees.append(tree)
            self._feats.append(cols)
        self._fitted = True
        return self

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        total = np.zeros((len(X), len(self.classes)))
        for tree, cols in zip(self._trees, self._feats):
            total += tree.leaf_values(X[:, cols])
        return total / len(self._trees)

    def descriptor(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "bootstrap": self.bootstrap,
            "feature_frac": self.feature_frac,
            "seed": self.seed,
            "classes": list(self.classes),
        }

    def to_json_obj(self) -> dict[str, Any]:
        self._check_fitted()
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "classes": list(self.classes),
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "bootstrap": self.bootstrap,
            "feature_frac": self.feature_frac,
            "seed": self.seed,
            "latency_us": self.latency_us,
            "trees": [t.to_json_obj() for t in self._trees],
            "tree_features": [f.tolist() for f in self._feats],
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "RandomForest":
        model = cls(
            n_trees=obj["n_trees"],
            max_depth=obj["max_depth"],
            min_leaf=obj["min_leaf"],
            bootstrap=obj["bootstrap"],
            feature_frac=obj["feature_frac"],
            seed=obj["seed"],
        )
        model.classes = tuple(obj["classes"])
        model._trees = [_TreeArrays.from_json_obj(t) for t in obj["trees"]]
        model._feats = [np.asarray(f, dtype=np.int64) for f in obj["tree_features"]]
        model.latency_us = obj.get("latency_us")
        model._fitted = True
        return model


def _softmax(raw: np.ndarray) -> np.ndarray:
    shifted = raw - raw.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class GradientBoosting(Detector):
    """Additive regression trees on softmax cross-entropy gradients,
    one tree per class per round, Newton leaf weights."""

    kind = "gbdt"

    def __init__(
        self,
        n_rounds: int = DEFAULT_GBDT_ROUNDS,
        learning_rate: float = DEFAULT_GBDT_RATE,
        max_depth: int = DEFAULT_GBDT_DEPTH,
        min_leaf: int = 1,
        reg_lambda: float = 1.0,
        subsample: float = 1.0,
        seed: int = 0,
    ) -> None:
        super().__init__()
        if n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if not 0.0 < learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if not 0.0 < subsample <= 1.0:
            raise ValueError("subsample must be in (0, 1]")
        self.n_rounds = n_rounds
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.reg_lambda = reg_lambda
        self.subsample = subsample
        self.seed = seed
        self._rounds: list[list[_TreeArrays]] = []

    def fit(self, X: np.ndarray, y: np.ndarray, classes: Sequence[str] | None = None) -> "GradientBoosting":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if len(X) == 0:
            raise ValueError("cannot fit on an empty set")
        self.classes = tuple(classes) if classes is not None else _default_classes(y)
        n = len(X)
        n_classes = len(self.classes)
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y] = 1.0
        raw = np.zeros((n, n_classes))
        self._rounds = []
        for r in range(self.n_rounds):
            p = _softmax(raw)
            if self.subsample < 1.0:
                rng = np.random.default_rng([self.seed, r])
                size = max(1, int(self.subsample * n))
                rows = np.sort(rng.permutation(n)[:size])
            else:
                rows = np.arange(n)
            round_trees: list[_TreeArrays] = []
            for c in range(n_classes):
                g = p[rows, c] - onehot[rows, c]
                h = np.maximum(p[rows, c] * (1.0 - p[rows, c]), 1e-12)
                tree = _grow_newton_tree(
                    X[rows], g, h, self.max_depth, self.min_leaf, self.reg_lambda
                )
                round_trees.append(tree)
                raw[:, c] += self.learning_rate * tree.leaf_values(X)[:, 0]
            self._rounds.append(round_trees)
        self._fitted = True
        return self

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        raw = np.zeros((len(X), len(self.classes)))
        for round_trees in self._rounds:
            for c, tree in enumerate(round_trees):
                raw[:, c] += self.learning_rate * tree.leaf_values(X)[:, 0]
        return raw

    def staged_raw_scores(self, X: np.ndarray) -> Iterator[np.ndarray]:
        """Raw scores after each boosting round, for loss diagnostics."""
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        raw = np.zeros((len(X), len(self.classes)))
        for round_trees in self._rounds:
            for c, tree in enumerate(round_trees):
                raw[:, c] += self.learning_rate * tree.leaf_values(X)[:, 0]
            yield raw.copy()

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        return _softmax(self.raw_scores(X))

    def descriptor(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "n_rounds": self.n_rounds,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "reg_lambda": self.reg_lambda,
            "subsample": self.subsample,
            "seed": self.seed,
            "classes": list(self.classes),
        }

    def to_json_obj(self) -> dict[str, Any]:
        self._check_fitted()
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "classes": list(self.classes),
            "n_rounds": self.n_rounds,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "reg_lambda": self.reg_lambda,
            "subsample": self.subsample,
            "seed": self.seed,
            "latency_us": self.latency_us,
            "rounds": [[t.to_json_obj() for t in rt] for rt in self._rounds],
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "GradientBoosting":
        model = cls(
            n_rounds=obj["n_rounds"],
            learning_rate=obj["learning_rate"],
            max_depth=obj["max_depth"],
            min_leaf=obj["min_leaf"],
            reg_lambda=obj["reg_lambda"],
            subsample=obj["subsample"],
            seed=obj["seed"],
        )
        model.classes = tuple(obj["classes"])
        model._rounds = [[_TreeArrays.from_json_obj(t) for t in rt] for rt in obj["rounds"]]
        model.latency_us = obj.get("latency_us")
        model._fitted = True
        return model


def softmax_cross_entropy(raw: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood of the true class under softmax."""
    p = _softmax(raw)
    return float(-np.log(np.maximum(p[np.arange(len(y)), y], 1e-300)).mean())


def _iter_frames(frames: TrafficLog | Iterable[CanFrame | LabeledFrame]) -> Iterator[CanFrame]:
    for f in frames:
        yield f.frame if isinstance(f, LabeledFrame) else f


class FrequencyDetector(Detector):
    """Per-id inter-arrival baseline.

    Learns the mean and sample standard deviation of same-id gaps from
    attack-free traffic.  A frame is flagged when its gap to the
    previous frame of the same id falls below mean - k_sigma * std, or
    when its id has no usable ambient statistics.  Attacks that insert
    extra frames compress gaps and are caught; attacks that replace
    frames in place keep the ambient gap distribution and are not.
    """

    kind = "frequency"

    def __init__(self, k_sigma: float = DEFAULT_K_SIGMA) -> None:
        super().__init__()
        if k_sigma < 0:
            raise ValueError("k_sigma must be nonnegative")
        self.k_sigma = k_sigma
        self.classes = ("Normal", "Attack")
        self.stats: dict[int, dict[str, float]] = {}

    def fit(self, ambient: TrafficLog | Iterable[CanFrame | LabeledFrame]) -> "FrequencyDetector":
        arrivals: dict[int, list[int]] = {}
        for frame in _iter_frames(ambient):
            arrivals.setdefault(frame.can_id, []).append(frame.timestamp_us)
        self.stats = {}
        for can_id, times in arrivals.items():
            if len(times) < 3:
                continue
            gaps = np.diff(np.asarray(times, dtype=np.int64)).astype(np.float64)
            mean = float(gaps.mean())
            std = float(gaps.std(ddof=1))
            self.stats[can_id] = {
                "mean_us": mean,
                "std_us": std,
                "threshold_us": mean - self.k_sigma * std,
                "count": len(times),
            }
        if not self.stats:
            raise ValueError("no id with at least 3 ambient observations")
        self._fitted = True
        return self

    def predict_frames(self, frames: TrafficLog | Iterable[CanFrame | LabeledFrame]) -> np.ndarray:
        """1 per frame flagged as attack, 0 otherwise, in frame order."""
        self._check_fitted()
        flags: list[int] = []
        last_seen: dict[int, int] = {}
        for frame in _iter_frames(frames):
            stat = self.stats.get(frame.can_id)
            if stat is None:
                flags.append(1)
                continue
            prev = last_seen.get(frame.can_id)
            last_seen[frame.can_id] = frame.timestamp_us
            if prev is None:
                flags.append(0)
                continue
            gap = frame.timestamp_us - prev
            flags.append(1 if gap < stat["threshold_us"] else 0)
        return np.asarray(flags, dtype=np.int64)

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError(
            "the frequency baseline scores traffic logs, not feature matrices; "
            "use predict_frames"
        )

    def descriptor(self) -> dict[str, Any]:
        return {"kind": self.kind, "k_sigma": self.k_sigma, "n_ids": len(self.stats)}

    def to_json_obj(self) -> dict[str, Any]:
        self._check_fitted()
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "k_sigma": self.k_sigma,
            "latency_us": self.latency_us,
            "ids": {f"{can_id:X}": dict(stat) for can_id, stat in sorted(self.stats.items())},
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "FrequencyDetector":
        model = cls(k_sigma=obj["k_sigma"])
        model.stats = {int(k, 16): dict(v) for k, v in obj["ids"].items()}
        model.latency_us = obj.get("latency_us")
        model._fitted = True
        return model


def fit_decision_tree(
    X: np.ndarray,
    y: np.ndarray,
    classes: Sequence[str] | None = None,
    max_depth: int | None = None,
    min_leaf: int = 1,
) -> DecisionTree:
    return DecisionTree(max_depth=max_depth, min_leaf=min_leaf).fit(X, y, classes)


def fit_random_forest(
    X: np.ndarray,
    y: np.ndarray,
    classes: Sequence[str] | None = None,
    n_trees: int = DEFAULT_FOREST_TREES,
    max_depth: int | None = DEFAULT_FOREST_DEPTH,
    min_leaf: int = 1,
    bootstrap: bool = True,
    feature_frac: float = 1.0,
    seed: int = 0,
) -> RandomForest:
    return RandomForest(
        n_trees=n_trees,
        max_depth=max_depth,
        min_leaf=min_leaf,
        bootstrap=bootstrap,
        feature_frac=feature_frac,
        seed=seed,
    ).fit(X, y, classes)


def fit_gbdt(
    X: np.ndarray,
    y: np.ndarray,
    classes: Sequence[str] | None = None,
    n_rounds: int = DEFAULT_GBDT_ROUNDS,
    learning_rate: float = DEFAULT_GBDT_RATE,
    max_depth: int = DEFAULT_GBDT_DEPTH,
    min_leaf: int = 1,
    reg_lambda: float = 1.0,
    subsample: float = 1.0,
    seed: int = 0,
) -> GradientBoosting:
    return GradientBoosting(
        n_rounds=n_rounds,
        learning_rate=learning_rate,
        max_depth=max_depth,
        min_leaf=min_leaf,
        reg_lambda=reg_lambda,
        subsample=subsample,
        seed=seed,
    ).fit(X, y, classes)


def fit_frequency_detector(
    ambient: TrafficLog | Iterable[CanFrame | LabeledFrame], k_sigma: float = DEFAULT_K_SIGMA
) -> FrequencyDetector:
    return FrequencyDetector(k_sigma=k_sigma).fit(ambient)


def measure_latency(model: Detector, X: np.ndarray, repeats: int = 3) -> float:
    """Median per-sample predict wall time in microseconds; stored on
    the model for speed tie-breaks."""
    if len(X) == 0:
        raise ValueError("need at least one sample to time")
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        model.predict_scores(X)
        times.append((time.perf_counter() - start) / len(X))
    model.latency_us = float(np.median(times) * 1e6)
    return model.latency_us


_MODEL_KINDS = {
    "tree": DecisionTree,
    "forest": RandomForest,
    "gbdt": GradientBoosting,
    "frequency": FrequencyDetector,
}


def register_model_kind(kind: str, cls: type) -> None:
    """Hook for model classes defined outside this module so that
    load_model can dispatch on their documents."""
    _MODEL_KINDS[kind] = cls


def model_from_json_obj(obj: dict[str, Any]) -> Detector:
    version = obj.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version!r}")
    kind = obj.get("kind")
    if kind not in _MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    return _MODEL_KINDS[kind].from_json_obj(obj)


def save_model(model: Detector, stream: IO[str]) -> None:
    json.dump(model.to_json_obj(), stream)
    stream.write("\n")


def load_model(stream: IO[str]) -> Detector:
    return model_from_json_obj(json.load(stream))
