import io
import itertools
import json
import logging

import numpy as np
import pytest

from canids.detectors import fit_gbdt, load_model
from canids.lccde import (
    CASE_MAJORITY,
    CASE_SPLIT,
    CASE_UNANIMOUS,
    LccdeEnsemble,
    LeaderMap,
    arbitrate_one,
    arbitration_case,
    lccde_predict,
    select_leaders,
)


def oracle_arbitrate(labels, confidences, leaders, majority_literal):
    """Independent transcription of the arbitration rules, written as
    plain branches over explicit sub-cases."""
    l1, l2, l3 = labels
    # Case: all three agree.
    if l1 == l2 and l2 == l3:
        return l1
    # Case: exactly two agree.
    counts = {v: [i for i in range(3) if labels[i] == v] for v in set(labels)}
    majorities = [v for v, members in counts.items() if len(members) == 2]
    if majorities:
        m = majorities[0]
        leader_model = leaders[m]
        if majority_literal:
            return labels[leader_model]
        voters = counts[m]
        if confidences[voters[0]] >= confidences[voters[1]]:
            return m
        return m
    # Case: all three distinct.
    aligned = []
    for i in range(3):
        if leaders[labels[i]] == i:
            aligned.append(i)
    if len(aligned) == 1:
        return labels[aligned[0]]
    if len(aligned) >= 2:
        best = aligned[0]
        for i in aligned[1:]:
            if confidences[i] > confidences[best]:
                best = i
        return labels[best]
    best = 0
    for i in (1, 2):
        if confidences[i] > confidences[best]:
            best = i
    return labels[best]


CONFIDENCE_PATTERNS = [
    (0.9, 0.6, 0.8),
    (0.2, 0.95, 0.5),
    (0.4, 0.4, 0.9),
    (0.7, 0.7, 0.7),
]


class TestArbitrationExhaustive:
    def test_all_triples_all_leader_maps_both_readings(self):
        checked = 0
        for triple in itertools.product(range(3), repeat=3):
            for leaders in itertools.product(range(3), repeat=3):
                for confs in CONFIDENCE_PATTERNS:
                    for literal in (True, False):
                        got, model = arbitrate_one(list(triple), list(confs), leaders, literal)
                        want = oracle_arbitrate(list(triple), list(confs), leaders, literal)
                        assert got == want, (triple, leaders, confs, literal)
                        assert triple[model] == got or (
                            not literal and arbitration_case(triple) == CASE_MAJORITY
                        )
                        checked += 1
        assert checked == 27 * 27 * len(CONFIDENCE_PATTERNS) * 2

    def test_case_classification_total_and_exclusive(self):
        seen = {CASE_UNANIMOUS: 0, CASE_MAJORITY: 0, CASE_SPLIT: 0}
        for triple in itertools.product(range(3), repeat=3):
            seen[arbitration_case(triple)] += 1
        assert seen == {CASE_UNANIMOUS: 3, CASE_MAJORITY: 18, CASE_SPLIT: 6}

    def test_unanimity_ignores_leaders(self):
        for leaders in itertools.product(range(3), repeat=3):
            got, _ = arbitrate_one([2, 2, 2], [0.5, 0.6, 0.7], leaders)
            assert got == 2

    def test_majority_literal_dissenter_can_win(self):
        # Models 0 and 1 say class A(=0); the leader of A is model 2,
        # which predicted B(=1).  Literal reading returns B.
        labels = [0, 0, 1]
        leaders = (2, 0, 0)
        got, model = arbitrate_one(labels, [0.9, 0.9, 0.4], leaders, majority_literal=True)
        assert (got, model) == (1, 2)
        got_alt, _ = arbitrate_one(labels, [0.9, 0.9, 0.4], leaders, majority_literal=False)
        assert got_alt == 0

    def test_split_single_aligned_pair(self):
        # Predictions (A, B, C) = (0, 1, 2); only model 0 leads its own
        # predicted class.
        leaders = (0, 2, 1)
        got, model = arbitrate_one([0, 1, 2], [0.1, 0.9, 0.9], leaders)
        assert (got, model) == (0, 0)

    def test_split_multiple_aligned_pairs_confidence(self):
        leaders = (0, 1, 0)
        got, _ = arbitrate_one([0, 1, 2], [0.5, 0.8, 0.9], leaders)
        assert got == 1

    def test_split_no_aligned_pair_falls_back(self):
        leaders = (1, 2, 0)
        got, _ = arbitrate_one([0, 1, 2], [0.5, 0.95, 0.6], leaders)
        assert got == 1

    def test_wrong_arity(self):
        with pytest.raises(ValueError):
            arbitrate_one([0, 1], [0.5, 0.5], (0, 0, 0))


class _Canned:
    """Stub detector returning fixed score matrices."""

    def __init__(self, scores, classes, latency_us=None):
        self.scores = np.asarray(scores, dtype=np.float64)
        self.classes = tuple(classes)
        self.latency_us = latency_us

    def predict_scores(self, X):
        return self.scores[: len(X)]

    def predict_labels(self, X):
        return self.predict_scores(X).argmax(axis=1)


CLASSES3 = ("Normal", "Attack A", "Attack B")


def onehotish(label, n=3, conf=0.9):
    row = np.full(n, (1.0 - conf) / (n - 1))
    row[label] = conf
    return row


class TestSelectLeaders:
    def make_val(self):
        # Truth: 0,0,1,1,2,2
        val_y = np.array([0, 0, 1, 1, 2, 2])
        val_X = np.zeros((6, 2))
        return val_X, val_y

    def test_strict_argmax(self):
        val_X, val_y = self.make_val()
        # Model 0 perfect; model 1 ruins class 2; model 2 ruins 1 and 2.
        m0 = _Canned([onehotish(v) for v in [0, 0, 1, 1, 2, 2]], CLASSES3, 1.0)
        m1 = _Canned([onehotish(v) for v in [0, 0, 1, 1, 0, 0]], CLASSES3, 1.0)
        m2 = _Canned([onehotish(v) for v in [0, 0, 0, 0, 0, 0]], CLASSES3, 1.0)
        leaders = select_leaders([m0, m1, m2], val_X, val_y)
        assert leaders.leader == (0, 0, 0)
        assert leaders.f1_matrix[2].tolist() == pytest.approx([1.0, 0.0, 0.0])

    def test_latency_breaks_ties(self):
        val_X, val_y = self.make_val()
        preds = [onehotish(v) for v in [0, 0, 1, 1, 2, 2]]
        m0 = _Canned(preds, CLASSES3, latency_us=2.0)
        m1 = _Canned(preds, CLASSES3, latency_us=1.0)
        m2 = _Canned(preds, CLASSES3, latency_us=3.0)
        leaders = select_leaders([m0, m1, m2], val_X, val_y)
        assert leaders.leader == (1, 1, 1)

    def test_model_index_breaks_residual_ties(self):
        val_X, val_y = self.make_val()
        preds = [onehotish(v) for v in [0, 0, 1, 1, 2, 2]]
        models = [_Canned(preds, CLASSES3, latency_us=1.0) for _ in range(3)]
        leaders = select_leaders(models, val_X, val_y)
        assert leaders.leader == (0, 0, 0)

    def test_all_zero_f1_resolved_by_speed(self):
        val_X, val_y = self.make_val()
        # Nobody ever predicts class 2.
        preds = [onehotish(v) for v in [0, 0, 1, 1, 0, 1]]
        m0 = _Canned(preds, CLASSES3, latency_us=5.0)
        m1 = _Canned(preds, CLASSES3, latency_us=1.0)
        m2 = _Canned(preds, CLASSES3, latency_us=3.0)
        leaders = select_leaders([m0, m1, m2], val_X, val_y)
        assert leaders.f1_matrix[2].tolist() == [0.0, 0.0, 0.0]
        assert leaders.leader[2] == 1

    def test_absent_class_uses_macro(self, caplog):
        val_y = np.array([0, 0, 1, 1])  # class 2 absent
        val_X = np.zeros((4, 2))
        good = _Canned([onehotish(v) for v in [0, 0, 1, 1]], CLASSES3, 1.0)
        bad = _Canned([onehotish(v) for v in [1, 1, 0, 0]], CLASSES3, 0.5)
        worse = _Canned([onehotish(v) for v in [1, 1, 1, 1]], CLASSES3, 0.1)
        with caplog.at_level(logging.WARNING):
            leaders = select_leaders([good, bad, worse], val_X, val_y)
        assert leaders.leader[2] == 0
        assert any("absent from validation" in r.message for r in caplog.records)

    def test_injected_latencies(self):
        val_X, val_y = self.make_val()
        preds = [onehotish(v) for v in [0, 0, 1, 1, 2, 2]]
        models = [_Canned(preds, CLASSES3) for _ in range(3)]
        leaders = select_leaders(models, val_X, val_y, latencies_us=(9.0, 2.0, 4.0))
        assert leaders.leader == (1, 1, 1)
        assert leaders.latencies_us == (9.0, 2.0, 4.0)

    def test_wrong_model_count(self):
        val_X, val_y = self.make_val()
        m = _Canned([onehotish(0)] * 6, CLASSES3, 1.0)
        with pytest.raises(ValueError, match="exactly 3"):
            select_leaders([m, m], val_X, val_y)

    def test_class_list_mismatch(self):
        val_X, val_y = self.make_val()
        a = _Canned([onehotish(0)] * 6, CLASSES3, 1.0)
        b = _Canned([onehotish(0)] * 6, ("Normal", "X", "Y"), 1.0)
        with pytest.raises(ValueError, match="class list"):
            select_leaders([a, b, a], val_X, val_y)


def blobs3(n=90, seed=0):
    rng = np.random.default_rng(seed)
    X = np.vstack(
        [
            rng.normal(0, 1, (n, 4)),
            rng.normal(6, 1, (n, 4)),
            rng.normal(-6, 1, (n, 4)),
        ]
    )
    y = np.repeat(np.arange(3), n)
    return X, y


class TestEnsemble:
    def test_fit_predict_accuracy(self):
        X, y = blobs3()
        model = LccdeEnsemble(seed=1).fit(X, y, CLASSES3)
        assert (model.predict_labels(X) == y).mean() >= 0.99
        assert model.leaders is not None

    def test_identical_bases_match_base(self):
        X, y = blobs3(seed=2)
        cfg = {"n_rounds": 8, "learning_rate": 0.2, "max_depth": 3, "seed": 7}
        ensemble = LccdeEnsemble(base_configs=[dict(cfg)] * 3, seed=3).fit(X, y, CLASSES3)
        base = fit_gbdt(
            *_train_part(X, y, ensemble), classes=CLASSES3, **cfg
        )
        assert np.array_equal(ensemble.predict_labels(X), base.predict_labels(X))

    def test_batch_predict_matches_scalar(self):
        X, y = blobs3(seed=4)
        model = LccdeEnsemble(seed=5).fit(X, y, CLASSES3)
        labels, picked = lccde_predict(model.models, model.leaders, X[:40])
        for i in range(40):
            scores = [m.predict_scores(X[i : i + 1])[0] for m in model.models]
            want, _ = arbitrate_one(
                [int(s.argmax()) for s in scores],
                [float(s.max()) for s in scores],
                model.leaders.leader,
            )
            assert labels[i] == want

    def test_prediction_objects_consistent(self):
        X, y = blobs3(seed=6)
        model = LccdeEnsemble(seed=7).fit(X, y, CLASSES3)
        preds = model.predict(X[:20])
        labels = model.predict_labels(X[:20])
        for p, lab in zip(preds, labels):
            assert p.name == CLASSES3[lab]
            assert p.confidence == p.scores.max()

    def test_roundtrip(self):
        X, y = blobs3(seed=8)
        model = LccdeEnsemble(seed=9).fit(X, y, CLASSES3)
        buf = io.StringIO()
        model.save(buf)
        back = load_model(io.StringIO(buf.getvalue()))
        assert isinstance(back, LccdeEnsemble)
        assert np.array_equal(back.predict_labels(X), model.predict_labels(X))
        assert back.leaders.leader == model.leaders.leader

    def test_config_validation(self):
        with pytest.raises(ValueError, match="base configs"):
            LccdeEnsemble(base_configs=[{}, {}])
        with pytest.raises(ValueError, match="val_frac"):
            LccdeEnsemble(val_frac=0.0)

    def test_leader_map_json(self):
        lm = LeaderMap(
            classes=CLASSES3,
            leader=(0, 1, 2),
            f1_matrix=np.eye(3),
            latencies_us=(1.0, 2.0, 3.0),
        )
        back = LeaderMap.from_json_obj(json.loads(json.dumps(lm.to_json_obj())))
        assert back.leader == lm.leader
        assert np.array_equal(back.f1_matrix, lm.f1_matrix)


def _train_part(X, y, ensemble):
    """Reproduce the ensemble's internal train split for comparison."""
    from canids.features import SplitSpec, TabularDataset, split_train_test

    data = TabularDataset(X=X, y=y, classes=ensemble.classes)
    train, _ = split_train_test(
        data,
        SplitSpec(ratio=1.0 - ensemble.val_frac, mode="stratified_random", seed=ensemble.seed),
    )
    return train.X, train.y
