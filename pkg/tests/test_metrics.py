import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import average_precision_score, f1_score

from emollama import metrics as mt
from emollama.annotate import DescriberClient, DescriberEndpoint
from emollama.prompts import ACTUAL_SLOT, PREDICTED_SLOT


def ref_waf(pred, truth, labels):
    n = len(labels)
    ix = {c: i for i, c in enumerate(labels)}
    cm = np.zeros((n, n))
    for p, t in zip(pred, truth):
        cm[ix[t], ix[p]] += 1
    support = cm.sum(axis=1)
    total = 0.0
    for c in range(n):
        prec = cm[c, c] / cm[:, c].sum() if cm[:, c].sum() else 0.0
        rec = cm[c, c] / support[c] if support[c] else 0.0
        total += support[c] * (2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return total / support.sum()


def ref_ap(scores, truth):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits, acc = 0, []
    for rank, i in enumerate(order, 1):
        if truth[i]:
            hits += 1
            acc.append(hits / rank)
    return sum(acc) / len(acc)


def test_hit_rate_examples():
    assert mt.hit_rate([("a", "a"), ("b", "b")]) == 1.0
    assert mt.hit_rate([("a", "a"), ("b", "b"), ("a", "b"), ("c", "d")]) == 0.5
    assert mt.hit_rate([("Angry ", "angry")]) == 1.0
    with pytest.raises(mt.MetricError):
        mt.hit_rate([])


def test_waf_examples():
    assert mt.weighted_f1([("a", "a"), ("b", "b")], ["a", "b"]) == 1.0
    assert mt.weighted_f1([("a", "a"), ("b", "a"), ("b", "b")], ["a", "b"]) == pytest.approx(2 / 3, abs=1e-15)
    assert mt.weighted_f1([("c", "a"), ("c", "b")], ["a", "b", "c"]) == 0.0
    with pytest.raises(mt.MetricError):
        mt.weighted_f1([("zebra", "a")], ["a", "b"])


def test_ap_examples():
    assert mt.average_precision([0.9, 0.8, 0.1], [1, 0, 1]) == pytest.approx(5 / 6, abs=1e-15)
    for n in (2, 5, 9):
        truth = [0] * (n - 1) + [1]
        assert mt.average_precision(np.arange(n, 0, -1), truth) == pytest.approx(1 / n, abs=1e-15)
    assert mt.mean_ap(np.eye(4), np.eye(4)) == 1.0


def test_ap_ties_keep_sample_order():
    assert mt.average_precision([0.5, 0.5], [0, 1]) == 0.5
    assert mt.average_precision([0.5, 0.5], [1, 0]) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_waf_matches_sklearn(seed):
    rng = np.random.default_rng(seed)
    labels = ["a", "b", "c", "d"]
    n = int(rng.integers(1, 40))
    truth = list(rng.choice(labels, n))
    pred = list(rng.choice(labels, n))
    got = mt.weighted_f1(zip(pred, truth), labels)
    expect = f1_score(truth, pred, labels=labels, average="weighted", zero_division=0)
    assert got == pytest.approx(expect, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_ap_matches_sklearn_without_ties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 50))
    truth = rng.integers(0, 2, n)
    truth[0] = 1
    scores = rng.permutation(n) / n
    assert mt.average_precision(scores, truth) == pytest.approx(average_precision_score(truth, scores), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_metric_ranges(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 30))
    truth = rng.integers(0, 2, (n, 3))
    truth[0] = 1
    value = mt.mean_ap(rng.normal(size=(n, 3)), truth)
    assert 0.0 < value <= 1.0
    labels = ["x", "y"]
    pairs = list(zip(rng.choice(labels, n), rng.choice(labels, n)))
    assert 0.0 <= mt.weighted_f1(pairs, labels) <= 1.0
    assert 0.0 <= mt.hit_rate(pairs) <= 1.0


def test_set_f_score():
    assert mt.set_f_score({"a", "b"}, {"a", "b"}) == 1.0
    assert mt.set_f_score({"a"}, {"a", "b"}) == pytest.approx(2 / 3)
    assert mt.set_f_score({"c"}, {"a", "b"}) == 0.0
    assert mt.set_f_score({"Joyful"}, {"happy"}, {"joyful": "happy"}) == 1.0


def test_judge_prompt():
    prompt = mt.build_judge_prompt("calm and “content”", "he seems 'happy'")
    assert ACTUAL_SLOT not in prompt and PREDICTED_SLOT not in prompt
    assert "calm and “content”" in prompt and "he seems 'happy'" in prompt
    assert prompt == mt.build_judge_prompt("calm and “content”", "he seems 'happy'")
    # a description that happens to contain a slot marker is passed through untouched
    tricky = mt.build_judge_prompt(PREDICTED_SLOT, "x")
    assert tricky.count(PREDICTED_SLOT) == 1
    with pytest.raises(mt.MetricError):
        mt.build_judge_prompt("", "x")


def test_parse_judge_response():
    assert mt.parse_judge_response("'Predicted Score': 7; 'Reason': good overlap") == (7.0, "good overlap")
    assert mt.parse_judge_response("Predicted Score: 7.5 because")[0] == 7.5
    assert mt.parse_judge_response("’Predicted Score’: 3; ’Reason’: weak")[0] == 3.0
    for bad in ("no score here", "Predicted Score: 11", "Predicted Score: 0"):
        with pytest.raises(mt.MalformedJudgment):
            mt.parse_judge_response(bad)


def test_judge_overlap_with_mock():
    client = DescriberClient({"judge": DescriberEndpoint("judge")})
    out = mt.judge_overlap([("calm", "calm person"), ("angry", "furious")], client)
    assert all(1 <= s <= 10 for s, _ in out)
    assert out == mt.judge_overlap([("calm", "calm person"), ("angry", "furious")], client)


def test_aggregate():
    values = {f"d{i}": {"waf": 0.5 + 0.2 * (i == 1)} for i in range(9)}
    values["d0"] = {"waf": 0.5}
    rep = mt.aggregate({"x": {"hr": 0.5}, "y": {"hr": 0.7}}, {"avg": ["x", "y"], "one": ["x"]})
    assert rep.averages["avg"] == pytest.approx(0.6)
    assert rep.averages["one"] == 0.5
    eq = mt.aggregate({f"d{i}": {"waf": 0.42} for i in range(9)}, {"avg9": [f"d{i}" for i in range(9)]})
    assert eq.averages["avg9"] == pytest.approx(0.42)
    with pytest.raises(mt.MetricError, match="d9"):
        mt.aggregate(values, {"avg": ["d0", "d9"]})
    doc = json.loads(rep.to_json())
    assert doc["averages"]["avg"] == pytest.approx(0.6)
    assert "0.60" in rep.table()
