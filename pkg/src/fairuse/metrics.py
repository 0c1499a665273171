"""Group-conditional performance metrics and the pairwise gain measure.

All risks are reported in their natural units (error rate, AUC, expected
calibration error). Gains always use a lower-is-better orientation: AUC is
internally flipped to 1 - AUC when differencing, so a positive gain always
means the first model is preferred by the group.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .groups import TRUTHFUL

ERROR_RATE_TAG = "error_rate"
AUC_TAG = "auc"
ECE_TAG = "ece"
_LOWER_IS_BETTER = {ERROR_RATE_TAG: True, AUC_TAG: False, ECE_TAG: True}


@dataclass(frozen=True)
class MetricKind:
    """A metric tag plus its orientation and (for ECE) its bin count."""

    tag: str
    lower_is_better: bool
    ece_bins: int = 10

    def __post_init__(self):
        if self.tag not in _LOWER_IS_BETTER:
            raise ValueError(f"unknown metric tag {self.tag!r}")
        if self.lower_is_better != _LOWER_IS_BETTER[self.tag]:
            raise ValueError(
                f"metric {self.tag!r} must have lower_is_better="
                f"{_LOWER_IS_BETTER[self.tag]}")
        if self.ece_bins < 1:
            raise ValueError("ece_bins must be >= 1")


ERROR_RATE = MetricKind(ERROR_RATE_TAG, True)
AUC = MetricKind(AUC_TAG, False)
ECE = MetricKind(ECE_TAG, True)

_NAMES = {
    "error": ERROR_RATE, "error_rate": ERROR_RATE,
    "auc": AUC,
    "ece": ECE,
}


def metric_from_name(name, ece_bins=10):
    """Resolve a CLI-style metric name ("error", "auc", "ece")."""
    key = str(name).lower()
    if key not in _NAMES:
        raise ValueError(f"unknown metric {name!r}; expected one of "
                         f"{sorted(set(_NAMES))}")
    base = _NAMES[key]
    if base.tag == ECE_TAG and ece_bins != base.ece_bins:
        return MetricKind(ECE_TAG, True, ece_bins)
    return base


@dataclass(frozen=True)
class RiskEstimate:
    """A group-conditional risk value for one (group, reported) pairing.

    value is NaN and defined is False when the metric is undefined on the
    rows (AUC on a single-class group, or an empty group); undefined risks
    propagate to "not testable" downstream, never to a silent number.
    """

    value: float
    n_effective: int
    metric: MetricKind
    group: object
    reported: object
    defined: bool = True

    def __post_init__(self):
        if self.defined:
            if not (-1e-9 <= self.value <= 1 + 1e-9):
                raise ValueError(
                    f"{self.metric.tag} value {self.value} outside [0,1]")
            object.__setattr__(self, "value",
                               min(1.0, max(0.0, float(self.value))))
        else:
            object.__setattr__(self, "value", float("nan"))


def oriented(estimate):
    """Risk in lower-is-better orientation (AUC becomes 1 - AUC)."""
    if not estimate.defined:
        return float("nan")
    if estimate.metric.lower_is_better:
        return estimate.value
    return 1.0 - estimate.value


def error_rate_value(margins, labels):
    preds = np.where(margins >= 0.0, 1, -1)
    return float(np.mean(preds != labels))


def auc_value(scores, labels):
    """Mann-Whitney AUC with ties counted one half; NaN if single-class."""
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ece_value(scores, margins, labels, bins=10):
    """Expected calibration error over equal-width right-closed bins.

    Confidence is max(score, 1-score); accuracy is the fraction of rows in
    the bin whose hard label matches. Bin k covers ((k-1)/B, k/B], with the
    first bin closed at 0. Empty bins contribute nothing.
    """
    n = labels.size
    if n == 0:
        return float("nan")
    conf = np.maximum(scores, 1.0 - scores)
    correct = (np.where(margins >= 0.0, 1, -1) == labels)
    total = 0.0
    for k in range(1, bins + 1):
        lo = (k - 1) / bins
        hi = k / bins
        if k == 1:
            mask = (conf >= 0.0) & (conf <= hi)
        else:
            mask = (conf > lo) & (conf <= hi)
        cnt = int(mask.sum())
        if cnt == 0:
            continue
        acc = float(correct[mask].mean())
        avg_conf = float(conf[mask].mean())
        total += (cnt / n) * abs(acc - avg_conf)
    return float(total)


def metric_value(metric, scores, margins, labels):
    """Dispatch a metric over aligned scores, margins, and labels."""
    if metric.tag == ERROR_RATE_TAG:
        return error_rate_value(margins, labels)
    if metric.tag == AUC_TAG:
        return auc_value(scores, labels)
    return ece_value(scores, margins, labels, metric.ece_bins)


def group_risk(model, data, g, reported, metric):
    """Empirical risk of `model` on group g's rows under a reported group.

    reported may be a GroupId (possibly a misreport), WITHHELD (paired
    generic model), or TRUTHFUL (each row reports its own group). g may be
    the ALL sentinel for a population-level estimate.
    """
    rows = data.rows_for(g)
    if rows.size == 0:
        return RiskEstimate(float("nan"), 0, metric, g, reported,
                            defined=False)
    x = data.features[rows]
    y = data.labels[rows]
    if reported is TRUTHFUL:
        margins = model.margins_truthful(x, data.cell_indices[rows])
    else:
        margins = model.margins(x, reported)
    scores = expit(margins)
    value = metric_value(metric, scores, margins, y)
    if math.isnan(value):
        return RiskEstimate(value, int(rows.size), metric, g, reported,
                            defined=False)
    return RiskEstimate(value, int(rows.size), metric, g, reported)


def gain(g, h, h_prime, data, metric):
    """Gain of h over h_prime for group g: oriented risk difference.

    h and h_prime are (model, reported) pairs. Positive means group g
    prefers h. Returns NaN when either risk is undefined.
    """
    model_a, rep_a = h
    model_b, rep_b = h_prime
    r_a = group_risk(model_a, data, g, rep_a, metric)
    r_b = group_risk(model_b, data, g, rep_b, metric)
    if not (r_a.defined and r_b.defined):
        return float("nan")
    return oriented(r_b) - oriented(r_a)
