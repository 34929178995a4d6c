"""Leader-based arbitration over three base classifiers.

At fit time each class gets a leader: the base model with the best
validation F1 for that class, ties broken by lower measured latency and
then by model index.  At predict time the three base predictions are
arbitrated:

  unanimous      -> the shared class
  two agree      -> the majority class's leader model makes the call
                    (literal reading: its own prediction, even when it
                    is the dissenter; alternate reading: the majority
                    class itself)
  all distinct   -> base models whose predicted class they lead are
                    candidates; one candidate wins outright, several
                    resolve by confidence, none falls back to the most
                    confident base prediction
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .detectors import (
    Detector,
    GradientBoosting,
    Prediction,
    _predictions_from_scores,
    measure_latency,
    register_model_kind,
)
from .evaluate import compute_metrics
from .features import SplitSpec, TabularDataset, split_train_test

logger = logging.getLogger(__name__)

N_BASE_MODELS = 3

CASE_UNANIMOUS = "unanimous"
CASE_MAJORITY = "majority"
CASE_SPLIT = "split"


def arbitration_case(labels: Sequence[int]) -> str:
    """Which of the three disagreement cases a prediction triple is in."""
    distinct = len(set(labels))
    if distinct == 1:
        return CASE_UNANIMOUS
    if distinct == 2:
        return CASE_MAJORITY
    return CASE_SPLIT


@dataclass(frozen=True)
class LeaderMap:
    """Per-class leader assignment with the evidence used to pick it."""

    classes: tuple[str, ...]
    leader: tuple[int, ...]
    f1_matrix: np.ndarray
    latencies_us: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.leader) != len(self.classes):
            raise ValueError("one leader per class required")
        if any(not 0 <= m < N_BASE_MODELS for m in self.leader):
            raise ValueError("leader index out of range")

    def leader_of(self, class_index: int) -> int:
        return self.leader[class_index]

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "classes": list(self.classes),
            "leader": list(self.leader),
            "f1_matrix": self.f1_matrix.tolist(),
            "latencies_us": list(self.latencies_us),
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "LeaderMap":
        return cls(
            classes=tuple(obj["classes"]),
            leader=tuple(int(v) for v in obj["leader"]),
            f1_matrix=np.asarray(obj["f1_matrix"], dtype=np.float64),
            latencies_us=tuple(float(v) for v in obj["latencies_us"]),
        )


def select_leaders(
    models: Sequence[Detector],
    val_X: np.ndarray,
    val_y: np.ndarray,
    latencies_us: Sequence[float] | None = None,
) -> LeaderMap:
    """Pick a leader model for every class from validation F1.

    Ties go to the faster model, then to the lower model index.  A
    class with no validation presence has no meaningful F1, so its
    leader falls back to the models' overall macro F1 with a warning.
    """
    if len(models) != N_BASE_MODELS:
        raise ValueError(f"exactly {N_BASE_MODELS} base models required, got {len(models)}")
    classes = models[0].classes
    for m in models[1:]:
        if m.classes != classes:
            raise ValueError("base models disagree on the class list")
    val_y = np.asarray(val_y, dtype=np.int64)
    if latencies_us is None:
        lat = []
        for m in models:
            lat.append(m.latency_us if m.latency_us is not None else measure_latency(m, val_X))
        latencies_us = tuple(lat)
    else:
        latencies_us = tuple(float(v) for v in latencies_us)
        if len(latencies_us) != len(models):
            raise ValueError("one latency per model required")

    reports = [compute_metrics(val_y, m.predict_labels(val_X), classes) for m in models]
    f1_matrix = np.array(
        [[r.per_class[c].f1 for r in reports] for c in range(len(classes))], dtype=np.float64
    )
    support = np.bincount(val_y, minlength=len(classes))
    macro = np.array([r.macro_f1 for r in reports])

    leader = []
    for c, name in enumerate(classes):
        if support[c] == 0:
            logger.warning(
                "class %r absent from validation; leader picked by macro F1", name
            )
            row = macro
        else:
            row = f1_matrix[c]
        ranked = sorted(
            range(len(models)), key=lambda i: (-row[i], latencies_us[i], i)
        )
        leader.append(ranked[0])
    return LeaderMap(
        classes=classes,
        leader=tuple(leader),
        f1_matrix=f1_matrix,
        latencies_us=latencies_us,
    )


def arbitrate_one(
    labels: Sequence[int],
    confidences: Sequence[float],
    leaders: Sequence[int],
    majority_literal: bool = True,
) -> tuple[int, int]:
    """Resolve one prediction triple; returns (class index, model index).

    The returned model is the base learner whose prediction carried the
    decision, so its score vector is a faithful confidence readout for
    the final class.
    """
    if len(labels) != N_BASE_MODELS or len(confidences) != N_BASE_MODELS:
        raise ValueError(f"expected {N_BASE_MODELS} predictions")
    case = arbitration_case(labels)
    if case == CASE_UNANIMOUS:
        winner = int(np.argmax(confidences))
        return labels[winner], winner
    if case == CASE_MAJORITY:
        if labels[0] == labels[1]:
            majority, pair = labels[0], (0, 1)
        elif labels[0] == labels[2]:
            majority, pair = labels[0], (0, 2)
        else:
            majority, pair = labels[1], (1, 2)
        if majority_literal:
            model = leaders[majority]
            return labels[model], model
        model = pair[0] if confidences[pair[0]] >= confidences[pair[1]] else pair[1]
        return majority, model
    aligned = [i for i in range(N_BASE_MODELS) if leaders[labels[i]] == i]
    if len(aligned) == 1:
        return labels[aligned[0]], aligned[0]
    if aligned:
        best = max(aligned, key=lambda i: (confidences[i], -i))
        return labels[best], best
    winner = int(np.argmax(confidences))
    return labels[winner], winner


def lccde_predict(
    models: Sequence[Detector],
    leaders: LeaderMap,
    X: np.ndarray,
    majority_literal: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Arbitrated class indices and deciding-model indices for a batch."""
    if len(models) != N_BASE_MODELS:
        raise ValueError(f"exactly {N_BASE_MODELS} base models required")
    scores = [m.predict_scores(X) for m in models]
    labels = np.stack([s.argmax(axis=1) for s in scores], axis=1)
    confs = np.stack([s.max(axis=1) for s in scores], axis=1)
    out = np.zeros(len(X), dtype=np.int64)
    picked = np.zeros(len(X), dtype=np.int64)
    for i in range(len(X)):
        out[i], picked[i] = arbitrate_one(
            labels[i].tolist(), confs[i].tolist(), leaders.leader, majority_literal
        )
    return out, picked


DEFAULT_BASE_CONFIGS = (
    {"n_rounds": 30, "learning_rate": 0.2, "max_depth": 3, "subsample": 0.8},
    {"n_rounds": 40, "learning_rate": 0.1, "max_depth": 5, "subsample": 0.8},
    {"n_rounds": 25, "learning_rate": 0.3, "max_depth": 2, "subsample": 0.8},
)


class LccdeEnsemble(Detector):
    """Three boosted-tree base learners plus leader arbitration.

    A quarter of the training data (by default) is held out to measure
    per-class F1 and per-model latency for leader selection.
    """

    kind = "lccde"

    def __init__(
        self,
        base_configs: Sequence[dict[str, Any]] | None = None,
        val_frac: float = 0.25,
        majority_literal: bool = True,
        seed: int = 0,
    ) -> None:
        super().__init__()
        if base_configs is None:
            base_configs = [dict(cfg) for cfg in DEFAULT_BASE_CONFIGS]
        if len(base_configs) != N_BASE_MODELS:
            raise ValueError(f"exactly {N_BASE_MODELS} base configs required")
        if not 0.0 < val_frac < 1.0:
            raise ValueError("val_frac must be in (0, 1)")
        self.base_configs = [dict(cfg) for cfg in base_configs]
        self.val_frac = val_frac
        self.majority_literal = majority_literal
        self.seed = seed
        self.models: list[GradientBoosting] = []
        self.leaders: LeaderMap | None = None

    def fit(self, X: np.ndarray, y: np.ndarray, classes: Sequence[str] | None = None) -> "LccdeEnsemble":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if classes is None:
            classes = tuple(str(c) for c in range(int(y.max()) + 1))
        self.classes = tuple(classes)
        data = TabularDataset(X=X, y=y, classes=self.classes)
        train, val = split_train_test(
            data, SplitSpec(ratio=1.0 - self.val_frac, mode="stratified_random", seed=self.seed)
        )
        self.models = []
        for i, cfg in enumerate(self.base_configs):
            params = dict(cfg)
            params.setdefault("seed", self.seed + 1 + i)
            model = GradientBoosting(**params)
            model.fit(train.X, train.y, self.classes)
            measure_latency(model, val.X)
            self.models.append(model)
        self.leaders = select_leaders(self.models, val.X, val.y)
        self._fitted = True
        return self

    def predict_labels(self, X: np.ndarray) -> np.ndarray:
        self._check_fitted()
        labels, _ = lccde_predict(self.models, self.leaders, X, self.majority_literal)
        return labels

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        """Score rows of whichever base model carried each decision."""
        self._check_fitted()
        scores = [m.predict_scores(X) for m in self.models]
        _, picked = lccde_predict(self.models, self.leaders, X, self.majority_literal)
        stacked = np.stack(scores, axis=0)
        return stacked[picked, np.arange(len(X))]

    def predict(self, X: np.ndarray) -> list[Prediction]:
        return _predictions_from_scores(self.predict_scores(X), self.classes)

    def descriptor(self) -> dict[str, Any]:
        desc = {
            "kind": self.kind,
            "val_frac": self.val_frac,
            "majority_literal": self.majority_literal,
            "seed": self.seed,
            "base_configs": [dict(cfg) for cfg in self.base_configs],
            "classes": list(self.classes),
        }
        if self.leaders is not None:
            desc["leaders"] = list(self.leaders.leader)
        return desc

    def to_json_obj(self) -> dict[str, Any]:
        self._check_fitted()
        return {
            "format_version": 1,
            "kind": self.kind,
            "classes": list(self.classes),
            "val_frac": self.val_frac,
            "majority_literal": self.majority_literal,
            "seed": self.seed,
            "base_configs": [dict(cfg) for cfg in self.base_configs],
            "latency_us": self.latency_us,
            "leaders": self.leaders.to_json_obj(),
            "models": [m.to_json_obj() for m in self.models],
        }

    @classmethod
    def from_json_obj(cls, obj: dict[str, Any]) -> "LccdeEnsemble":
        ensemble = cls(
            base_configs=obj["base_configs"],
            val_frac=obj["val_frac"],
            majority_literal=obj["majority_literal"],
            seed=obj["seed"],
        )
        ensemble.classes = tuple(obj["classes"])
        ensemble.models = [GradientBoosting.from_json_obj(m) for m in obj["models"]]
        ensemble.leaders = LeaderMap.from_json_obj(obj["leaders"])
        ensemble.latency_us = obj.get("latency_us")
        ensemble._fitted = True
        return ensemble

    def save(self, stream) -> None:
        json.dump(self.to_json_obj(), stream)
        stream.write("\n")


register_model_kind("lccde", LccdeEnsemble)
