"""Emotion recognition and reasoning metrics plus benchmark aggregation."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .prompts import ACTUAL_SLOT, JUDGE_TEMPLATE, PREDICTED_SLOT


class MetricError(ValueError):
    pass


class MalformedJudgment(MetricError):
    pass


def normalize_label(label: str) -> str:
    return label.strip().lower()


def _pairs(pairs) -> list[tuple]:
    pairs = list(pairs)
    if not pairs:
        raise MetricError("empty input")
    return pairs


def hit_rate(pairs: Iterable[tuple[str, str]]) -> float:
    """Fraction of ``(prediction, truth)`` pairs matching after trim + lowercase."""
    pairs = _pairs(pairs)
    return sum(normalize_label(p) == normalize_label(t) for p, t in pairs) / len(pairs)


def accuracy(pairs: Iterable[tuple[str, str]]) -> float:
    pairs = _pairs(pairs)
    return sum(p == t for p, t in pairs) / len(pairs)


def weighted_f1(pairs: Iterable[tuple[str, str]], labels: Sequence[str]) -> float:
    """Support-weighted mean of per-class F1 (WAF).

    A class with no predictions has precision 0; one with no support gets
    weight 0.  F1 is 0 when precision and recall are both 0.
    """
    pairs = _pairs(pairs)
    labels = [normalize_label(x) for x in labels]
    known = set(labels)
    pred = [normalize_label(p) for p, _ in pairs]
    truth = [normalize_label(t) for _, t in pairs]
    stray = (set(pred) | set(truth)) - known
    if stray:
        raise MetricError(f"labels outside the label set: {sorted(stray)}")
    # counts are integers, so exact rationals give correctly rounded results
    total, weighted = 0, Fraction(0)
    for c in labels:
        tp = sum(p == c and t == c for p, t in zip(pred, truth))
        n_pred = pred.count(c)
        support = truth.count(c)
        if tp:
            weighted += Fraction(2 * tp * support, n_pred + support)
        total += support
    return float(weighted / total)


def average_precision(scores: Sequence[float], truth: Sequence[int]) -> float:
    """Mean precision@k over the ranks of the positives; ties keep sample order."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    if not truth.any():
        raise MetricError("no positive samples")
    order = np.argsort(-scores, kind="stable")
    rel = truth[order]
    ranks = np.flatnonzero(rel) + 1
    return float(sum(Fraction(k + 1, int(r)) for k, r in enumerate(ranks)) / len(ranks))


def mean_ap(scores, truth) -> float:
    """mAP over classes (columns) that have at least one positive.

    ``scores`` and ``truth`` are ``[n_samples, n_classes]``.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth))
    if scores.shape != truth.shape:
        raise MetricError(f"score shape {scores.shape} != truth shape {truth.shape}")
    aps = [average_precision(scores[:, c], truth[:, c])
           for c in range(scores.shape[1]) if truth[:, c].any()]
    if not aps:
        raise MetricError("no class has a positive sample")
    return float(np.mean(aps))


def set_f_score(pred: Iterable[str], truth: Iterable[str], synonyms: Mapping[str, str] | None = None) -> float:
    """F-score between label sets after optional synonym normalization."""
    synonyms = {normalize_label(k): normalize_label(v) for k, v in (synonyms or {}).items()}

    def canon(labels):
        return {synonyms.get(normalize_label(x), normalize_label(x)) for x in labels}

    p, t = canon(pred), canon(truth)
    if not t:
        raise MetricError("empty truth set")
    common = len(p & t)
    precision = common / len(p) if p else 0.0
    recall = common / len(t)
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


# -- description overlap judging -------------------------------------------


def build_judge_prompt(actual: str, predicted: str) -> str:
    if not actual.strip() or not predicted.strip():
        raise MetricError("empty description")
    # single pass so text inside the descriptions is never re-substituted
    slots = {ACTUAL_SLOT: actual, PREDICTED_SLOT: predicted}
    pattern = re.compile("|".join(re.escape(s) for s in slots))
    return pattern.sub(lambda m: slots[m.group(0)], JUDGE_TEMPLATE)


_QUOTES = "'\"‘’“”`"
_SCORE = re.compile(rf"predicted\s+score[{_QUOTES}\s]*[:：=]?[{_QUOTES}\s]*(-?\d+(?:\.\d+)?)", re.I)
_REASON = re.compile(rf"reason[{_QUOTES}\s]*[:：=][{_QUOTES}\s]*(.*)", re.I | re.S)


def parse_judge_response(text: str) -> tuple[float, str]:
    m = _SCORE.search(text)
    if not m:
        raise MalformedJudgment(f"no predicted score in {text[:80]!r}")
    score = float(m.group(1))
    if not 1.0 <= score <= 10.0:
        raise MalformedJudgment(f"score {score} outside [1, 10]")
    r = _REASON.search(text, m.end())
    reason = r.group(1).strip().strip(_QUOTES).strip() if r else ""
    return score, reason


def judge_overlap(pairs: Sequence[tuple[str, str]], client) -> list[tuple[float, str]]:
    """Score ``(actual, predicted)`` description pairs through a judge endpoint.

    ``client`` follows :class:`emollama.annotate.DescriberClient`.
    """
    out = []
    for i, (actual, predicted) in enumerate(pairs):
        text = client.request("judge", str(i), build_judge_prompt(actual, predicted))
        out.append(parse_judge_response(text))
    return out


# -- aggregation ----------------------------------------------------------


@dataclass
class BenchmarkReport:
    values: dict[str, dict[str, float]]  # dataset -> metric -> value
    averages: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"datasets": self.values, "averages": self.averages}, indent=1, sort_keys=True)

    def table(self) -> str:
        rows = [("dataset", "metric", "value")]
        for ds in sorted(self.values):
            for metric, v in sorted(self.values[ds].items()):
                rows.append((ds, metric, f"{v:.2f}"))
        for name, v in self.averages.items():
            rows.append((name, "average", f"{v:.2f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def aggregate(values: Mapping[str, Mapping[str, float]], groups: Mapping[str, Sequence[str]]) -> BenchmarkReport:
    """Macro averages of each dataset's headline (first) metric per group."""
    report = BenchmarkReport({k: dict(v) for k, v in values.items()})
    for name, members in groups.items():
        if not members:
            raise MetricError(f"group {name!r} is empty")
        picked = []
        for m in members:
            if m not in values or not values[m]:
                raise MetricError(f"missing group member {m!r} in {name!r}")
            picked.append(next(iter(values[m].values())))
        report.averages[name] = float(sum(picked) / len(picked))
    return report
