"""Exact minimization of training 0-1 loss for linear classifiers.

The trainer collapses rows to distinct encoded points, then follows one of
three routes:

  * one encoded feature: enumerate every threshold labeling (exact);
  * at most 14 distinct points: enumerate all labelings in ascending cost
    order and keep the cheapest linearly realizable one (exact);
  * otherwise: search a documented candidate set (constant rules, single
    coordinate thresholds, and thresholds along difference directions
    between pairs of distinct points). This route is exact over that
    candidate set, not over all linear rules.

Realizability uses the prediction convention margin >= 0 -> +1: a labeling
is realizable when some (w, b) gives margin >= 1 on its positive points and
margin <= -1 on its negative points. Requiring unit rather than zero margin
on positives does not change which labelings are realizable (shift the
intercept up slightly, then rescale), and it keeps the returned weights a
full unit away from the decision boundary, so evaluating them in floating
point reproduces the labeling exactly.
Ties are broken by training cost, then by the minimal L1 norm of the
canonical weights (within 1e-9), then by preferring -1 labels on
lexicographically earlier points.
"""

import numpy as np
from scipy.optimize import linprog

_EXACT_POINT_LIMIT = 14
_PAIR_POINT_LIMIT = 80
_NORM_TIE_TOL = 1e-9


class ExhaustiveSizeError(ValueError):
    """Raised when a dataset exceeds the exhaustive trainer's size limits."""


def _collapse(x_enc, y):
    """Distinct encoded points with per-point label counts.

    Returns (points, neg_counts, pos_counts) with points in ascending
    lexicographic order (first coordinate most significant).
    """
    points, inverse = np.unique(x_enc, axis=0, return_inverse=True)
    d = points.shape[0]
    neg = np.zeros(d)
    pos = np.zeros(d)
    np.add.at(neg, inverse[y == -1], 1.0)
    np.add.at(pos, inverse[y == 1], 1.0)
    return points, neg, pos


def _canonical_lp(points, labeling):
    """Minimal-L1 (w, b) realizing the labeling, or None if unrealizable."""
    d, p = points.shape
    n_var = 2 * p + 2
    rows = np.hstack([points, -points, np.ones((d, 1)), -np.ones((d, 1))])
    sign = np.where(labeling, -1.0, 1.0)[:, None]
    a_ub = rows * sign
    b_ub = -np.ones(d)
    c = np.ones(n_var)
    res = linprog(c, A_ub=a_ub, b_ub=b_ub,
                  bounds=[(0, None)] * n_var, method="highs")
    if not res.success:
        return None
    sol = res.x
    w = sol[:p] - sol[p:2 * p]
    b = sol[2 * p] - sol[2 * p + 1]
    return np.append(w, b), float(res.fun)


def _pick(points, candidates):
    """Tie-break realizable equal-cost labelings; candidates are bool arrays.

    Iterates in ascending labeling code (-1 on earlier points first) and
    keeps the candidate whose canonical L1 norm is smaller by more than the
    tolerance, so the winner has near-minimal norm and, within tolerance,
    the lowest code.
    """
    ordered = sorted({c.tobytes(): c for c in candidates}.items())
    best = None
    for _, labeling in ordered:
        fit = _canonical_lp(points, labeling)
        if fit is None:
            continue
        if best is None or fit[1] < best[1] - _NORM_TIE_TOL:
            best = fit
    return best


def _labeling_cost(labeling, neg, pos):
    return float(np.where(labeling, neg, pos).sum())


def _threshold_route(points, neg, pos):
    """All labelings realizable in one dimension: upsets and downsets."""
    d = points.shape[0]
    candidates = []
    base = np.zeros(d, dtype=bool)
    for j in range(d + 1):
        up = base.copy()
        up[d - j:] = True
        candidates.append(up)
        down = base.copy()
        down[:j] = True
        candidates.append(down)
    return _best_of_labelings(points, neg, pos, candidates)


def _best_of_labelings(points, neg, pos, candidates):
    costs = [_labeling_cost(c, neg, pos) for c in candidates]
    best_cost = min(costs)
    at_best = [c for c, cost in zip(candidates, costs)
               if cost == best_cost]
    fit = _pick(points, at_best)
    if fit is None:
        raise RuntimeError("no candidate labeling was realizable")
    return fit[0], best_cost


def _exact_route(points, neg, pos):
    """Enumerate all 2^d labelings of the distinct points by cost."""
    d = points.shape[0]
    codes = np.arange(2 ** d, dtype=np.int64)
    shifts = (d - 1 - np.arange(d)).astype(np.int64)
    bits = ((codes[:, None] >> shifts[None, :]) & 1).astype(float)
    costs = bits @ neg + (1.0 - bits) @ pos
    order = np.argsort(costs, kind="stable")
    i = 0
    while i < order.size:
        level = costs[order[i]]
        j = i
        while j < order.size and costs[order[j]] == level:
            j += 1
        group = [bits[order[k]].astype(bool) for k in range(i, j)]
        fit = _pick(points, group)
        if fit is not None:
            return fit[0], float(level)
        i = j
    raise RuntimeError("no labeling was realizable")


def _direction_labelings(z, neg, pos, best_cost, winners):
    """Threshold labelings along projection z; updates (best_cost, winners).

    For each cutoff t over the distinct projected values, considers the
    rule +1 iff z >= t and its complement-direction rule +1 iff z <= t.
    """
    order = np.argsort(z, kind="stable")
    zs = z[order]
    distinct = np.nonzero(np.diff(zs) > 0)[0]
    # Group boundaries: labelings constant on equal projections.
    cuts = [0] + [int(k) + 1 for k in distinct] + [zs.size]
    d = z.size
    for c in cuts:
        for flipped in (False, True):
            lab_sorted = np.zeros(d, dtype=bool)
            if flipped:
                lab_sorted[:c] = True
            else:
                lab_sorted[c:] = True
            lab = np.zeros(d, dtype=bool)
            lab[order] = lab_sorted
            cost = _labeling_cost(lab, neg, pos)
            if best_cost is None or cost < best_cost:
                best_cost = cost
                winners = [lab]
            elif cost == best_cost:
                winners.append(lab)
    return best_cost, winners


def _candidate_route(points, neg, pos):
    """Candidate search for large point sets; exact over the candidate set."""
    d, p = points.shape
    best_cost = None
    winners = []
    for j in range(p):
        best_cost, winners = _direction_labelings(
            points[:, j], neg, pos, best_cost, winners)
    if d <= _PAIR_POINT_LIMIT:
        pool = np.arange(d)
    else:
        pool = np.arange(_PAIR_POINT_LIMIT)
    for a_i in range(pool.size):
        for b_i in range(a_i + 1, pool.size):
            w = points[pool[a_i]] - points[pool[b_i]]
            if not np.any(w != 0.0):
                continue
            z = points @ w
            best_cost, winners = _direction_labelings(
                z, neg, pos, best_cost, winners)
    fit = _pick(points, winners)
    if fit is None:
        raise RuntimeError("no candidate labeling was realizable")
    return fit[0], best_cost


def train_zero_one(x_enc, y):
    """Minimize the count of training misclassifications over linear rules.

    Args:
        x_enc: (n, p) encoded design matrix, no intercept column.
        y: (n,) labels in {-1, +1}.

    Returns:
        (weights, errors): weights of length p + 1 with the intercept last,
        and the achieved number of misclassified training rows. Exact when
        there is one encoded feature or at most 14 distinct encoded points;
        otherwise minimal over the documented candidate set.
    """
    x_enc = np.asarray(x_enc, dtype=float)
    y = np.asarray(y)
    if x_enc.ndim != 2 or x_enc.shape[0] != y.shape[0]:
        raise ValueError("design matrix and labels are misaligned")
    if x_enc.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    points, neg, pos = _collapse(x_enc, y)
    if x_enc.shape[1] == 1:
        w, cost = _threshold_route(points, neg, pos)
    elif points.shape[0] <= _EXACT_POINT_LIMIT:
        w, cost = _exact_route(points, neg, pos)
    else:
        w, cost = _candidate_route(points, neg, pos)
    return w, int(round(cost))
