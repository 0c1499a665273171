"""Fair-use auditing of a personalized classifier at the group level.

The audit trains a paired (generic, personalized) model, evaluates every
(true group, reported group) risk into a misreport matrix, checks the two
fair-use conditions on point estimates, and attaches one-sided significance
tests with a per-family Bonferroni correction:

- rationality: each group's truthful personalized risk should not exceed
  its generic risk (gain = generic risk - truthful risk, oriented so that
  positive always favors the personalized model);
- envy-freeness: no group should fare better by misreporting as another
  group (gain = misreported risk - truthful risk, per ordered pair).

Two test routes are provided: a recentered percentile bootstrap (any
metric) and an exact McNemar-style sign test on disagreeing predictions
(error rate only). Every randomized step derives from one master seed via
counter-based seed splitting, so reports are byte-identical across runs
and worker counts.
"""

import dataclasses
import json
import math
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy.special import expit

from . import theory
from .dataset import tally
from .groups import ALL, TRUTHFUL, WITHHELD, GroupId, GroupSpace
from .metrics import (ERROR_RATE, ERROR_RATE_TAG, MetricKind, RiskEstimate,
                      group_risk, metric_value)
from .models import Strategy, TrainConfig, as_strategy, build_feature_map, \
    train_personalized

__all__ = [
    "RATIONALITY", "ENVY", "BOOTSTRAP", "MCNEMAR",
    "SIGNIFICANT_GAIN", "SIGNIFICANT_VIOLATION", "INCONCLUSIVE",
    "NOT_TESTABLE",
    "MisreportMatrix", "misreport_matrix", "PointGains", "PointSummary",
    "check_fair_use_point", "HypothesisResult", "bootstrap_test",
    "mcnemar_test", "bonferroni", "AuditConfig", "PopulationRow",
    "GeneralizationRow", "FairUseReport", "audit",
    "identical_prediction_pairs",
]

RATIONALITY = "rationality"
ENVY = "envy"
BOOTSTRAP = "bootstrap"
MCNEMAR = "mcnemar"

SIGNIFICANT_GAIN = "SignificantGain"
SIGNIFICANT_VIOLATION = "SignificantViolation"
INCONCLUSIVE = "Inconclusive"
NOT_TESTABLE = "NotTestable"

_MIN_BOOTSTRAP_REPS = 100
_MAX_UNDEFINED_FRACTION = 0.10
_IDENTICAL_ATOL = 1e-9


def _orient(metric, value):
    """Raw metric value in lower-is-better orientation."""
    if metric.lower_is_better:
        return value
    return 1.0 - value


def _f(value):
    """Float for JSON output; NaN becomes None."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return float(value)


@dataclass(frozen=True)
class MisreportMatrix:
    """All (true group, reported group) risks for one model and metric.

    Rows are true groups; columns are every reportable cell plus the
    paired generic model (reported = WITHHELD). Entries for empty groups
    or undefined metrics carry defined=False and never silently compare.
    """

    metric: MetricKind
    space: GroupSpace
    entries: dict

    def entry(self, g, reported):
        """RiskEstimate for true group g under a reported group."""
        return self.entries[(g, reported)]

    def row(self, g):
        """Mapping reported -> RiskEstimate for one true group."""
        cols = (WITHHELD,) + self.space.cells()
        return {r: self.entries[(g, r)] for r in cols}

    def to_jsonable(self):
        rows = []
        for g in self.space.cells():
            row = {
                "group": str(g),
                "n": self.entry(g, g).n_effective,
                "generic": _f(self.entry(g, WITHHELD).value),
                "reported": {str(r): _f(self.entry(g, r).value)
                             for r in self.space.cells()},
            }
            rows.append(row)
        return {"metric": self.metric.tag, "rows": rows}


def misreport_matrix(model, data, metric):
    """Evaluate every (true group, reported) risk of `model` on `data`."""
    space = data.space
    entries = {}
    for g in space.cells():
        for reported in (WITHHELD,) + space.cells():
            entries[(g, reported)] = group_risk(model, data, g, reported,
                                                metric)
    return MisreportMatrix(metric, space, entries)


@dataclass(frozen=True)
class PointGains:
    """Point-estimate gains for one true group.

    rationality_gain > 0 means the group prefers its personalized model to
    the generic one; envy gains > 0 mean truthful reporting beats
    misreporting as the keyed group. NaN marks a non-evaluable comparison.
    """

    group: GroupId
    n: int
    rationality_gain: float
    envy_gains: dict
    envy_min_gain: float
    envy_argmin: Optional[GroupId]

    def to_jsonable(self):
        def count(value):
            return _f(value * self.n)

        return {
            "group": str(self.group),
            "n": self.n,
            "rationality_gain": _f(self.rationality_gain),
            "rationality_gain_count": count(self.rationality_gain),
            "envy_gains": {str(g): _f(v)
                           for g, v in self.envy_gains.items()},
            "envy_min_gain": _f(self.envy_min_gain),
            "envy_min_gain_count": count(self.envy_min_gain),
            "envy_argmin": (None if self.envy_argmin is None
                            else str(self.envy_argmin)),
        }


@dataclass(frozen=True)
class PointSummary:
    """Point-estimate fair-use verdicts derived from one misreport matrix."""

    metric: MetricKind
    gains: dict
    rationality_violations: tuple
    envy_violations: tuple

    @property
    def fair(self):
        """True when no point-estimate condition is violated."""
        return not self.rationality_violations and not self.envy_violations

    def to_jsonable(self):
        return {
            "metric": self.metric.tag,
            "gains": [self.gains[g].to_jsonable() for g in sorted(
                self.gains, key=str)],
            "rationality_violations": [str(g) for g in
                                       self.rationality_violations],
            "envy_violations": [[str(g), str(r)] for g, r in
                                self.envy_violations],
            "fair": self.fair,
        }


def check_fair_use_point(matrix):
    """Evaluate rationality and envy-freeness on matrix point estimates.

    A violation is a strictly negative gain; comparisons involving an
    undefined risk are skipped (they surface later as NotTestable).
    """
    gains = {}
    rat_viol = []
    envy_viol = []
    for g in matrix.space.cells():
        own = matrix.entry(g, g)
        n = own.n_effective
        own_val = _orient(matrix.metric, own.value) if own.defined else None
        generic = matrix.entry(g, WITHHELD)
        if own_val is not None and generic.defined:
            rat = _orient(matrix.metric, generic.value) - own_val
        else:
            rat = float("nan")
        envy = {}
        for other in matrix.space.cells():
            if other == g:
                continue
            mis = matrix.entry(g, other)
            if own_val is not None and mis.defined:
                envy[other] = _orient(matrix.metric, mis.value) - own_val
            else:
                envy[other] = float("nan")
        finite = {o: v for o, v in envy.items() if not math.isnan(v)}
        if finite:
            argmin = min(finite, key=lambda o: (finite[o], str(o)))
            min_gain = finite[argmin]
        else:
            argmin, min_gain = None, float("nan")
        gains[g] = PointGains(g, n, rat, envy, min_gain, argmin)
        if not math.isnan(rat) and rat < 0:
            rat_viol.append(g)
        for other, v in envy.items():
            if not math.isnan(v) and v < 0:
                envy_viol.append((g, other))
    return PointSummary(matrix.metric, gains, tuple(rat_viol),
                        tuple(envy_viol))


@dataclass(frozen=True)
class HypothesisResult:
    """One one-sided fair-use test for a (group, comparator) pair.

    estimate is the observed gain (positive favors truthful personalized
    use). p_violation and p_gain are the two one-sided p-values; p_raw is
    the one matching the observed sign and is what Bonferroni adjusts.
    Verdicts depend only on the estimate's sign and p_adjusted vs alpha.
    """

    kind: str
    test: str
    metric: str
    group: GroupId
    comparator: object
    n: int
    estimate: float
    p_violation: Optional[float]
    p_gain: Optional[float]
    p_raw: Optional[float]
    alpha: float = 0.10
    p_adjusted: Optional[float] = None
    family_size: int = 0
    verdict: str = INCONCLUSIVE
    detail: dict = field(default_factory=dict)

    @property
    def testable(self):
        return self.p_raw is not None

    @property
    def comparator_label(self):
        return "generic" if self.comparator is WITHHELD \
            else str(self.comparator)

    def to_jsonable(self):
        return {
            "kind": self.kind,
            "test": self.test,
            "metric": self.metric,
            "group": str(self.group),
            "comparator": self.comparator_label,
            "n": self.n,
            "estimate": _f(self.estimate),
            "p_violation": _f(self.p_violation),
            "p_gain": _f(self.p_gain),
            "p_raw": _f(self.p_raw),
            "p_adjusted": _f(self.p_adjusted),
            "family_size": self.family_size,
            "alpha": self.alpha,
            "verdict": self.verdict,
            "detail": {k: self.detail[k] for k in sorted(self.detail)},
        }


def _not_testable(kind, test, metric_tag, g, comparator, n, alpha, reason):
    return HypothesisResult(
        kind=kind, test=test, metric=metric_tag, group=g,
        comparator=comparator, n=n, estimate=float("nan"),
        p_violation=None, p_gain=None, p_raw=None, alpha=alpha,
        verdict=NOT_TESTABLE, detail={"reason": reason})


def bootstrap_test(model, g, comparator, data, metric, *, reps=2000,
                   alpha=0.10, seed=0):
    """Recentered percentile bootstrap of group g's gain over a comparator.

    comparator WITHHELD tests rationality against the paired generic
    model; a GroupId tests envy against misreporting as that group. Only
    group g's rows are resampled; both models stay fixed. Replicate gains
    are shifted by the observed gain to simulate the zero-gain null, and
    each one-sided p is (1 + #{null draws at least as extreme as the
    observed gain}) / (#valid draws + 1).

    Args:
        model: trained PersonalizedModel.
        g: true group under test.
        comparator: WITHHELD or a GroupId to misreport as.
        data: evaluation Dataset.
        metric: MetricKind to difference.
        reps: bootstrap replicates (at least 100).
        alpha: significance level echoed into the result.
        seed: int or numpy SeedSequence for the replicate index draw.

    Returns:
        HypothesisResult with p_adjusted unset (see bonferroni).
    """
    if reps < _MIN_BOOTSTRAP_REPS:
        raise ValueError(f"bootstrap needs >= {_MIN_BOOTSTRAP_REPS} "
                         f"replicates, got {reps}")
    kind = RATIONALITY if comparator is WITHHELD else ENVY
    rows = data.rows_for(g)
    n = int(rows.size)
    if n < 2:
        return _not_testable(kind, BOOTSTRAP, metric.tag, g, comparator, n,
                             alpha, "fewer than 2 rows in the group")
    x = data.features[rows]
    y = data.labels[rows]
    self_m = model.margins(x, g)
    comp_m = model.margins(x, comparator)
    self_s = expit(self_m)
    comp_s = expit(comp_m)
    obs_self = metric_value(metric, self_s, self_m, y)
    obs_comp = metric_value(metric, comp_s, comp_m, y)
    if math.isnan(obs_self) or math.isnan(obs_comp):
        return _not_testable(kind, BOOTSTRAP, metric.tag, g, comparator, n,
                             alpha, "metric undefined on the observed rows")
    est = _orient(metric, obs_comp) - _orient(metric, obs_self)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(reps, n))
    if metric.tag == ERROR_RATE_TAG:
        wrong_self = (np.where(self_m >= 0.0, 1, -1) != y).astype(float)
        wrong_comp = (np.where(comp_m >= 0.0, 1, -1) != y).astype(float)
        diffs = wrong_comp - wrong_self
        gains = diffs[idx].mean(axis=1)
    else:
        gains = np.empty(reps)
        for b in range(reps):
            take = idx[b]
            yb = y[take]
            v_self = metric_value(metric, self_s[take], self_m[take], yb)
            v_comp = metric_value(metric, comp_s[take], comp_m[take], yb)
            if math.isnan(v_self) or math.isnan(v_comp):
                gains[b] = float("nan")
            else:
                gains[b] = _orient(metric, v_comp) - _orient(metric, v_self)
    valid = gains[~np.isnan(gains)]
    n_undefined = reps - valid.size
    if n_undefined > _MAX_UNDEFINED_FRACTION * reps:
        return _not_testable(
            kind, BOOTSTRAP, metric.tag, g, comparator, n, alpha,
            f"{n_undefined} of {reps} replicates left the metric undefined")
    shifted = valid - est
    denom = valid.size + 1
    p_violation = (1 + int(np.count_nonzero(shifted <= est))) / denom
    p_gain = (1 + int(np.count_nonzero(shifted >= est))) / denom
    if est < 0:
        p_raw = p_violation
    elif est > 0:
        p_raw = p_gain
    else:
        p_raw = 1.0
    return HypothesisResult(
        kind=kind, test=BOOTSTRAP, metric=metric.tag, group=g,
        comparator=comparator, n=n, estimate=est, p_violation=p_violation,
        p_gain=p_gain, p_raw=p_raw, alpha=alpha,
        detail={"reps": int(reps), "undefined_reps": int(n_undefined)})


def _binom_tail_at_least(n, k):
    """Exact Pr[Binomial(n, 1/2) >= k] by integer summation."""
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    total = sum(math.comb(n, j) for j in range(k, n + 1))
    return float(Fraction(total, 2 ** n))


def mcnemar_test(model, g, comparator, data, *, alpha=0.10):
    """Exact sign test on rows where the two predictions disagree.

    Counts b = rows group g's truthful model gets wrong while the
    comparator gets right, c = the converse; under the null of equal error
    rates the b-vs-c split is Binomial(b + c, 1/2). Applies to the error
    rate only; the estimate is (c - b) / n, matching the bootstrap's gain
    orientation. b + c = 0 gives p = 1 (no evidence either way).
    """
    kind = RATIONALITY if comparator is WITHHELD else ENVY
    rows = data.rows_for(g)
    n = int(rows.size)
    if n < 2:
        return _not_testable(kind, MCNEMAR, ERROR_RATE_TAG, g, comparator,
                             n, alpha, "fewer than 2 rows in the group")
    x = data.features[rows]
    y = data.labels[rows]
    wrong_self = np.where(model.margins(x, g) >= 0.0, 1, -1) != y
    wrong_comp = np.where(model.margins(x, comparator) >= 0.0, 1, -1) != y
    b = int(np.count_nonzero(wrong_self & ~wrong_comp))
    c = int(np.count_nonzero(~wrong_self & wrong_comp))
    est = (c - b) / n
    if b + c == 0:
        p_violation = p_gain = p_raw = 1.0
    else:
        p_violation = _binom_tail_at_least(b + c, b)
        p_gain = _binom_tail_at_least(b + c, c)
        p_raw = p_violation if b >= c else p_gain
    return HypothesisResult(
        kind=kind, test=MCNEMAR, metric=ERROR_RATE_TAG, group=g,
        comparator=comparator, n=n, estimate=est, p_violation=p_violation,
        p_gain=p_gain, p_raw=p_raw, alpha=alpha,
        detail={"b": b, "c": c})


def bonferroni(results, alpha=None):
    """Fill p_adjusted, family sizes, and verdicts on a batch of results.

    Results are grouped into families by (metric, test, kind), so each
    metric and test route corrects its rationality tests (nominally m) and
    envy tests (nominally m(m-1)) separately. family_size counts the
    testable results actually in the family; NotTestable entries keep
    p_adjusted = None and do not inflate the correction.
    """
    sizes = Counter((r.metric, r.test, r.kind)
                    for r in results if r.testable)
    out = []
    for r in results:
        a = r.alpha if alpha is None else alpha
        key = (r.metric, r.test, r.kind)
        fs = sizes.get(key, 0)
        if not r.testable:
            out.append(dataclasses.replace(
                r, alpha=a, family_size=fs, verdict=NOT_TESTABLE))
            continue
        p_adj = min(1.0, fs * r.p_raw)
        if r.estimate == 0 or p_adj > a:
            verdict = INCONCLUSIVE
        elif r.estimate < 0:
            verdict = SIGNIFICANT_VIOLATION
        else:
            verdict = SIGNIFICANT_GAIN
        out.append(dataclasses.replace(
            r, alpha=a, p_adjusted=p_adj, family_size=fs, verdict=verdict))
    return out


def _default_train_config():
    return TrainConfig(l2_penalty=1e-4)


@dataclass(frozen=True)
class AuditConfig:
    """Knobs for a full audit; every field is echoed into the report.

    The default training config carries a small ridge penalty so the
    logistic fit is strictly convex and the audited model is unique.
    """

    alpha: float = 0.10
    bootstrap_reps: int = 2000
    seed: int = 0
    delta: float = 0.10
    run_bootstrap: bool = True
    run_mcnemar: bool = True
    vc_override: Optional[int] = None
    train_config: TrainConfig = field(default_factory=_default_train_config)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.bootstrap_reps < _MIN_BOOTSTRAP_REPS:
            raise ValueError(f"bootstrap_reps must be >= "
                             f"{_MIN_BOOTSTRAP_REPS}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        if self.vc_override is not None and self.vc_override < 1:
            raise ValueError("vc_override must be >= 1")

    def to_jsonable(self):
        return {
            "alpha": self.alpha,
            "bootstrap_reps": self.bootstrap_reps,
            "seed": self.seed,
            "delta": self.delta,
            "run_bootstrap": self.run_bootstrap,
            "run_mcnemar": self.run_mcnemar,
            "vc_override": self.vc_override,
            "train_config": self.train_config.to_jsonable(),
        }


@dataclass(frozen=True)
class PopulationRow:
    """Population-level summary line for one metric.

    Mirrors the summary-table anatomy: personalized risk, overall gain,
    best and worst per-group gains, then gain/violation counts at the
    point estimates and at significance.
    """

    metric: MetricKind
    generic_risk: RiskEstimate
    personalized_risk: RiskEstimate
    overall_gain: float
    best_gain: Optional[tuple]
    worst_gain: Optional[tuple]
    point_rationality_gains: int
    point_rationality_violations: int
    point_envy_gains: int
    point_envy_violations: int
    significant_rationality_gains: int
    significant_rationality_violations: int
    significant_envy_gains: int
    significant_envy_violations: int

    def to_jsonable(self):
        def pair(p):
            return None if p is None else [str(p[0]), _f(p[1])]
        return {
            "metric": self.metric.tag,
            "generic_risk": _f(self.generic_risk.value),
            "personalized_risk": _f(self.personalized_risk.value),
            "overall_gain": _f(self.overall_gain),
            "best_gain": pair(self.best_gain),
            "worst_gain": pair(self.worst_gain),
            "point_rationality_gains": self.point_rationality_gains,
            "point_rationality_violations":
                self.point_rationality_violations,
            "point_envy_gains": self.point_envy_gains,
            "point_envy_violations": self.point_envy_violations,
            "significant_rationality_gains":
                self.significant_rationality_gains,
            "significant_rationality_violations":
                self.significant_rationality_violations,
            "significant_envy_gains": self.significant_envy_gains,
            "significant_envy_violations":
                self.significant_envy_violations,
        }


@dataclass(frozen=True)
class GeneralizationRow:
    """Sample-size bound verdicts for one group's training-split gains."""

    group: GroupId
    n_train: int
    vc: int
    delta: float
    rationality_gain: float
    rationality: Optional[object]
    envy_min_gain: float
    envy: Optional[object]

    def to_jsonable(self):
        def verdict(v):
            return None if v is None else v.to_jsonable()
        return {
            "group": str(self.group),
            "n_train": self.n_train,
            "vc": self.vc,
            "delta": self.delta,
            "rationality_gain": _f(self.rationality_gain),
            "rationality": verdict(self.rationality),
            "envy_min_gain": _f(self.envy_min_gain),
            "envy": verdict(self.envy),
        }


def identical_prediction_pairs(model, data, atol=_IDENTICAL_ATOL):
    """Ordered pairs of cells whose reported predictions always agree.

    Compares the margin functions over all rows of `data` for every pair
    of reportable groups; agreeing pairs signal that personalization
    distinguishes the two groups in name only.
    """
    cells = model.space.cells()
    margins = [model.margins(data.features, r) for r in cells]
    pairs = []
    for i in range(len(cells)):
        for j in range(i + 1, len(cells)):
            if np.allclose(margins[i], margins[j], rtol=0.0, atol=atol):
                pairs.append((cells[i], cells[j]))
    return tuple(pairs)


@dataclass
class FairUseReport:
    """Everything an audit produced, serializable to JSON and markdown."""

    strategy: Strategy
    space: GroupSpace
    config: AuditConfig
    metrics: tuple
    model: object
    train_tally: object
    test_tally: object
    train_equals_test: bool
    matrices: dict
    points: dict
    populations: dict
    results: tuple
    generalization: tuple
    identical_pairs: tuple
    suggestions: tuple = ()

    @property
    def has_significant_violation(self):
        return any(r.verdict == SIGNIFICANT_VIOLATION for r in self.results)

    @property
    def has_point_violation(self):
        return any(not p.fair for p in self.points.values())

    def significant_violations(self):
        return tuple(r for r in self.results
                     if r.verdict == SIGNIFICANT_VIOLATION)

    def to_jsonable(self):
        return {
            "strategy": self.strategy.value,
            "attributes": [[name, list(dom)]
                           for name, dom in self.space.attributes],
            "config": self.config.to_jsonable(),
            "metrics": [{"tag": mk.tag, "ece_bins": mk.ece_bins}
                        for mk in self.metrics],
            "model": self.model.to_jsonable(),
            "train_tally": self.train_tally.to_jsonable(),
            "test_tally": self.test_tally.to_jsonable(),
            "train_equals_test": self.train_equals_test,
            "matrices": {t: m.to_jsonable()
                         for t, m in self.matrices.items()},
            "points": {t: p.to_jsonable() for t, p in self.points.items()},
            "populations": {t: p.to_jsonable()
                            for t, p in self.populations.items()},
            "results": [r.to_jsonable() for r in self.results],
            "generalization": [g.to_jsonable()
                               for g in self.generalization],
            "identical_prediction_pairs": [[str(a), str(b)] for a, b in
                                           self.identical_pairs],
            "suggestions": [s.to_jsonable() for s in self.suggestions],
            "has_significant_violation": self.has_significant_violation,
            "has_point_violation": self.has_point_violation,
        }

    def to_json_str(self):
        """Canonical JSON text; identical inputs give identical bytes."""
        return json.dumps(self.to_jsonable(), sort_keys=True, indent=2)

    def to_markdown(self):
        return render_markdown(self)

    def to_csv(self):
        """Hypothesis results as CSV rows (one line per test)."""
        lines = ["metric,test,kind,group,comparator,n,estimate,p_raw,"
                 "p_adjusted,family_size,verdict"]
        for r in self.results:
            lines.append(",".join([
                r.metric, r.test, r.kind, f'"{r.group}"',
                f'"{r.comparator_label}"', str(r.n),
                _csv_num(r.estimate), _csv_num(r.p_raw),
                _csv_num(r.p_adjusted), str(r.family_size), r.verdict]))
        return "\n".join(lines) + "\n"


def _csv_num(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.10g}"


def _fmt(v, signed=False):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "-"
    return f"{v:+.4f}" if signed else f"{v:.4f}"


def render_markdown(report):
    """Render a FairUseReport as a deterministic markdown document."""
    cfg = report.config
    tc = cfg.train_config
    cells = report.space.cells()
    lines = ["# Fair use audit", ""]
    lines.append(f"- strategy: {report.strategy.value}")
    lines.append(f"- alpha: {cfg.alpha}, bootstrap_reps: "
                 f"{cfg.bootstrap_reps}, seed: {cfg.seed}, delta: "
                 f"{cfg.delta}")
    lines.append(f"- loss: {tc.loss}, l2_penalty: {tc.l2_penalty}, "
                 f"gradient_tolerance: {tc.gradient_tolerance}")
    bins = {mk.ece_bins for mk in report.metrics if mk.tag == "ece"}
    if bins:
        lines.append(f"- ece_bins: {sorted(bins)[0]}")
    lines.append(f"- train rows: {report.train_tally.total}, test rows: "
                 f"{report.test_tally.total}, groups: {len(cells)}")
    if report.train_equals_test:
        lines.append("- note: train and test are the same sample "
                     "(in-sample audit)")
    flags = report.model.all_flags()
    if flags:
        lines.append(f"- training flags: {'; '.join(flags)}")
    for mk in report.metrics:
        tag = mk.tag
        pop = report.populations[tag]
        point = report.points[tag]
        matrix = report.matrices[tag]
        lines += ["", f"## Metric: {tag}", ""]
        lines.append("| Row | Generic | Personalized | Gain | Best Gain | "
                     "Worst Gain | Rat. Gains/Viols | EF Gains/Viols |")
        lines.append("|---|---|---|---|---|---|---|---|")

        def pair(p):
            return "-" if p is None else f"{_fmt(p[1], True)} ({p[0]})"

        lines.append(
            f"| Population | {_fmt(pop.generic_risk.value)} | "
            f"{_fmt(pop.personalized_risk.value)} | "
            f"{_fmt(pop.overall_gain, True)} | {pair(pop.best_gain)} | "
            f"{pair(pop.worst_gain)} | "
            f"{pop.point_rationality_gains}/"
            f"{pop.point_rationality_violations} | "
            f"{pop.point_envy_gains}/{pop.point_envy_violations} |")
        lines.append(
            f"| Significant | | | | | | "
            f"{pop.significant_rationality_gains}/"
            f"{pop.significant_rationality_violations} | "
            f"{pop.significant_envy_gains}/"
            f"{pop.significant_envy_violations} |")
        lines += ["", f"### Misreport matrix ({tag})", ""]
        header = "| true group | n | generic |" + "".join(
            f" {c} |" for c in cells)
        lines.append(header)
        lines.append("|---" * (3 + len(cells)) + "|")
        for g in cells:
            row = matrix.row(g)
            vals = "".join(f" {_fmt(row[c].value)} |" for c in cells)
            lines.append(f"| {g} | {matrix.entry(g, g).n_effective} | "
                         f"{_fmt(row[WITHHELD].value)} |{vals}")
        lines += ["", f"### Point gains ({tag})", ""]
        lines.append("| group | n | rationality gain | min envy gain | "
                     "envied group |")
        lines.append("|---|---|---|---|---|")
        for g in cells:
            pg = point.gains[g]
            envied = "-" if pg.envy_argmin is None else str(pg.envy_argmin)
            lines.append(f"| {g} | {pg.n} | "
                         f"{_fmt(pg.rationality_gain, True)} | "
                         f"{_fmt(pg.envy_min_gain, True)} | {envied} |")
    tested = [r for r in report.results]
    if tested:
        lines += ["", "## Hypothesis tests", ""]
        lines.append("| metric | test | kind | group | comparator | n | "
                     "estimate | p_raw | p_adjusted | family | verdict |")
        lines.append("|---" * 11 + "|")
        for r in tested:
            lines.append(
                f"| {r.metric} | {r.test} | {r.kind} | {r.group} | "
                f"{r.comparator_label} | {r.n} | {_fmt(r.estimate, True)} |"
                f" {_fmt(r.p_raw)} | {_fmt(r.p_adjusted)} | "
                f"{r.family_size} | {r.verdict} |")
    if report.generalization:
        lines += ["", "## Generalization bounds", ""]
        lines.append("| group | n_train | vc | rationality gain | "
                     "required n | holds | min envy gain | required n | "
                     "holds |")
        lines.append("|---" * 9 + "|")
        for row in report.generalization:
            def bound_cols(gain_value, verdict):
                if verdict is None or not verdict.applicable:
                    return f"{_fmt(gain_value, True)} | - | - "
                holds = "yes" if verdict.satisfied else "no"
                return (f"{_fmt(gain_value, True)} | "
                        f"{verdict.required_n} | {holds} ")
            lines.append(
                f"| {row.group} | {row.n_train} | {row.vc} | "
                f"{bound_cols(row.rationality_gain, row.rationality)}| "
                f"{bound_cols(row.envy_min_gain, row.envy)}|")
    if report.identical_pairs:
        lines += ["", "## Identical prediction pairs", ""]
        for a, b in report.identical_pairs:
            lines.append(f"- {a} and {b} receive identical predictions")
    if report.suggestions:
        lines += ["", "## Data-minimization advice", ""]
        for s in report.suggestions:
            lines.append(f"- [{s.kind}] {s.subject}: {s.rationale}")
    return "\n".join(lines) + "\n"


def _worker_count():
    raw = os.environ.get("FAIRUSE_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _datasets_equal(a, b):
    if a is b:
        return True
    return (a.n == b.n
            and a.space.attributes == b.space.attributes
            and np.array_equal(a.features, b.features)
            and np.array_equal(a.labels, b.labels)
            and np.array_equal(a.cell_indices, b.cell_indices))


def _population_row(metric, matrix, point, results, model, data):
    generic = group_risk(model, data, ALL, WITHHELD, metric)
    personal = group_risk(model, data, ALL, TRUTHFUL, metric)
    if generic.defined and personal.defined:
        overall = _orient(metric, generic.value) - _orient(metric,
                                                           personal.value)
    else:
        overall = float("nan")
    rat = {g: pg.rationality_gain for g, pg in point.gains.items()
           if not math.isnan(pg.rationality_gain)}
    if rat:
        best = max(rat, key=lambda g: (rat[g], str(g)))
        worst = min(rat, key=lambda g: (rat[g], str(g)))
        best_pair = (best, rat[best])
        worst_pair = (worst, rat[worst])
    else:
        best_pair = worst_pair = None
    point_rat_gain = sum(1 for v in rat.values() if v > 0)
    point_rat_viol = sum(1 for v in rat.values() if v < 0)
    envy_vals = [v for pg in point.gains.values()
                 for v in pg.envy_gains.values() if not math.isnan(v)]
    point_envy_gain = sum(1 for v in envy_vals if v > 0)
    point_envy_viol = sum(1 for v in envy_vals if v < 0)

    def subjects(kind, verdict):
        return len({(r.group, r.comparator_label) for r in results
                    if r.metric == metric.tag and r.kind == kind
                    and r.verdict == verdict})

    return PopulationRow(
        metric=metric, generic_risk=generic, personalized_risk=personal,
        overall_gain=overall, best_gain=best_pair, worst_gain=worst_pair,
        point_rationality_gains=point_rat_gain,
        point_rationality_violations=point_rat_viol,
        point_envy_gains=point_envy_gain,
        point_envy_violations=point_envy_viol,
        significant_rationality_gains=subjects(RATIONALITY,
                                               SIGNIFICANT_GAIN),
        significant_rationality_violations=subjects(RATIONALITY,
                                                    SIGNIFICANT_VIOLATION),
        significant_envy_gains=subjects(ENVY, SIGNIFICANT_GAIN),
        significant_envy_violations=subjects(ENVY, SIGNIFICANT_VIOLATION))


def _generalization_rows(model, train, cfg):
    """Bound verdicts from the training-split error-rate gains."""
    space = train.space
    fmap = build_feature_map(model.strategy, space,
                             train.feature_names)
    if cfg.vc_override is not None:
        vc = cfg.vc_override
    else:
        vc = theory.vc_linear(max(1, len(fmap.encoded_features)))
    matrix = misreport_matrix(model, train, ERROR_RATE)
    point = check_fair_use_point(matrix)
    m = space.m
    rows = []
    for g in space.cells():
        pg = point.gains[g]
        n_g = pg.n
        rat_verdict = None
        if not math.isnan(pg.rationality_gain):
            rat_verdict = theory.rationality_bound(theory.BoundInputs(
                n_g=n_g, vc=vc, delta=cfg.delta,
                gain=pg.rationality_gain))
        envy_verdict = None
        if not math.isnan(pg.envy_min_gain):
            envy_verdict = theory.envy_bound(theory.BoundInputs(
                n_g=n_g, vc=vc, delta=cfg.delta, gain=pg.envy_min_gain,
                m=m))
        rows.append(GeneralizationRow(
            group=g, n_train=n_g, vc=vc, delta=cfg.delta,
            rationality_gain=pg.rationality_gain, rationality=rat_verdict,
            envy_min_gain=pg.envy_min_gain, envy=envy_verdict))
    return tuple(rows)


def audit(train, test, strategy=Strategy.ONEHOT, metrics=(ERROR_RATE,),
          cfg=None):
    """Train on `train`, evaluate fair use on `test`, return the report.

    Args:
        train: Dataset used to fit the paired (generic, personalized)
            models.
        test: Dataset used for risks and significance tests; pass the
            training set itself for an in-sample audit (flagged in the
            report).
        strategy: encoding strategy for the personalized model.
        metrics: tuple of MetricKind values to audit.
        cfg: AuditConfig; defaults apply when omitted.

    Returns:
        FairUseReport with point checks, adjusted hypothesis tests,
        generalization-bound rows, and data-minimization advice.
    """
    cfg = cfg if cfg is not None else AuditConfig()
    strategy = as_strategy(strategy)
    if train.space.attributes != test.space.attributes:
        raise ValueError("train and test use different group spaces")
    if not metrics:
        raise ValueError("audit needs at least one metric")
    model = train_personalized(train, strategy, cfg.train_config)
    cells = train.space.cells()
    m = len(cells)
    matrices = {}
    points = {}
    specs = []
    for mi, metric in enumerate(metrics):
        matrix = misreport_matrix(model, test, metric)
        matrices[metric.tag] = matrix
        points[metric.tag] = check_fair_use_point(matrix)
        routes = []
        if cfg.run_bootstrap:
            routes.append(BOOTSTRAP)
        if cfg.run_mcnemar and metric.tag == ERROR_RATE_TAG:
            routes.append(MCNEMAR)
        for route in routes:
            for gi, g in enumerate(cells):
                specs.append((mi, metric, route, 0, gi, m, g, WITHHELD))
            for gi, g in enumerate(cells):
                for ci, comp in enumerate(cells):
                    if ci != gi:
                        specs.append((mi, metric, route, 1, gi, ci, g,
                                      comp))

    def run(spec):
        mi, metric, route, kind_code, gi, ci, g, comp = spec
        if route == MCNEMAR:
            return mcnemar_test(model, g, comp, test, alpha=cfg.alpha)
        seed = np.random.SeedSequence([cfg.seed, mi, kind_code, gi, ci])
        return bootstrap_test(model, g, comp, test, metric,
                              reps=cfg.bootstrap_reps, alpha=cfg.alpha,
                              seed=seed)

    workers = _worker_count()
    if workers > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw_results = list(pool.map(run, specs))
    else:
        raw_results = [run(s) for s in specs]
    results = tuple(bonferroni(raw_results, cfg.alpha))
    populations = {}
    for metric in metrics:
        populations[metric.tag] = _population_row(
            metric, matrices[metric.tag], points[metric.tag], results,
            model, test)
    report = FairUseReport(
        strategy=strategy, space=train.space, config=cfg,
        metrics=tuple(metrics), model=model, train_tally=tally(train),
        test_tally=tally(test),
        train_equals_test=_datasets_equal(train, test),
        matrices=matrices, points=points, populations=populations,
        results=results,
        generalization=_generalization_rows(model, train, cfg),
        identical_pairs=identical_prediction_pairs(model, test))
    from .interventions import data_minimization
    report.suggestions = tuple(data_minimization(report))
    return report
