"""Pre-registered Monte-Carlo power target for the planted-violation audit.

This script is deliberately independent of the fairuse package: it re-derives
the planted construction's population behavior from closed-form cell label
rates and simulates the exact test conventions (recentered percentile
bootstrap and exact McNemar, each with a one-sided direction and a
family-of-4 Bonferroni correction) on idealized constant predictors.

It writes assets/power_target.json, which the acceptance suite treats as a
frozen target: the full audit pipeline's detection rate on the planted
violation must meet target_detection_rate. The buffer below the oracle rate
allows for trained-model score noise around the population predictor and for
the smaller seed count used in the acceptance run.

Run from the repository root:

    python scripts/power_oracle.py
"""

import json
import math
import os

import numpy as np

MASTER_SEED = 20260825
N_SEEDS = 500
GAP = -0.15
N_PER_GROUP = 500
BOOTSTRAP_REPS = 2000
ALPHA = 0.10
FAMILY_SIZE = 4  # rationality family for a 2x2 group space
TARGET_BUFFER = 0.10

# Cell label rates for the planted construction on a 2x2 group space with
# pure-noise features. Cells in (a1, a2) order: (0,0), (1,0), (0,1), (1,1);
# the designated cell is (1,1).
REFERENCE_RATE = 0.1


def adjacent_rate(gap):
    return 0.7 if gap < 0 else 0.3


def designated_rate(gap):
    return (1.0 + gap) / 2.0


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def fit_additive_logit(gap):
    """Population MLE of score = sigmoid(b + u1*a1 + u2*a2) on the four cells.

    Equal cell masses; targets are the cell label rates. Returns fitted
    per-cell probabilities in cell order ((0,0), (1,0), (0,1), (1,1)).
    """
    q = adjacent_rate(gap)
    rates = np.array([REFERENCE_RATE, q, q, designated_rate(gap)])
    design = np.array(
        [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0]]
    )
    theta = np.zeros(3)
    for _ in range(200):
        pred = sigmoid(design @ theta)
        grad = design.T @ ((pred - rates) / 4.0)
        hess = (design * (pred * (1 - pred) / 4.0)[:, None]).T @ design
        hess += 1e-12 * np.eye(3)
        step = np.linalg.solve(hess, grad)
        theta -= step
        if np.max(np.abs(grad)) < 1e-14:
            break
    return sigmoid(design @ theta)


def verify_population_pattern():
    """The additive fit must predict + only on the designated cell, and the
    generic base rate must stay below 1/2, for every supported gap sign."""
    for gap in (-0.45, -0.30, -0.15, -0.05, 0.05, 0.15, 0.45):
        q = adjacent_rate(gap)
        p_des = designated_rate(gap)
        overall = (REFERENCE_RATE + 2 * q + p_des) / 4.0
        assert overall < 0.5, (gap, overall)
        fitted = fit_additive_logit(gap)
        assert fitted[0] < 0.5 and fitted[1] < 0.5 and fitted[2] < 0.5, (gap, fitted)
        assert fitted[3] > 0.5, (gap, fitted)
    print("population check: generic predicts -, additive fit predicts + only on"
          " the designated cell, for gaps in [-0.45, 0.45]")


def binom_tail_at_least(k, n):
    """Pr[Binomial(n, 1/2) >= k] by exact integer summation."""
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    total = sum(math.comb(n, i) for i in range(k, n + 1))
    return total / 2 ** n


def simulate():
    """Detection rates for the designated group's rationality violation.

    The designated group's labels are +1 with probability (1+GAP)/2. The
    population personalized model predicts +1 on the group, the generic model
    predicts -1, so the per-row loss difference (generic minus personalized)
    is +1 on positive rows and -1 on negative rows. The rationality gain
    estimate is the mean of that difference; the violation direction is
    estimate < 0.
    """
    p_pos = designated_rate(GAP)
    boot_hits = 0
    mcnemar_hits = 0
    for s in range(N_SEEDS):
        rng = np.random.default_rng([MASTER_SEED, s])
        y_pos = rng.random(N_PER_GROUP) < p_pos
        diff = np.where(y_pos, 1.0, -1.0)
        est = diff.mean()

        idx = rng.integers(0, N_PER_GROUP, size=(BOOTSTRAP_REPS, N_PER_GROUP))
        boot = diff[idx].mean(axis=1)
        null = boot - est
        if est < 0:
            p_raw = (1 + np.sum(null <= est)) / (BOOTSTRAP_REPS + 1)
            if min(1.0, FAMILY_SIZE * p_raw) <= ALPHA:
                boot_hits += 1

        b = int(np.sum(~y_pos))  # personalized wrong, generic right
        c = int(np.sum(y_pos))
        if b > c:
            p_raw = binom_tail_at_least(b, b + c)
            if min(1.0, FAMILY_SIZE * p_raw) <= ALPHA:
                mcnemar_hits += 1
    return boot_hits / N_SEEDS, mcnemar_hits / N_SEEDS


def main():
    verify_population_pattern()
    boot_rate, mcnemar_rate = simulate()
    target = max(0.5, round(boot_rate - TARGET_BUFFER, 3))
    payload = {
        "gap": GAP,
        "n_per_group": N_PER_GROUP,
        "bootstrap_reps": BOOTSTRAP_REPS,
        "alpha": ALPHA,
        "family_size": FAMILY_SIZE,
        "oracle_seeds": N_SEEDS,
        "master_seed": MASTER_SEED,
        "bootstrap_detection_rate": boot_rate,
        "mcnemar_detection_rate": mcnemar_rate,
        "target_buffer": TARGET_BUFFER,
        "target_detection_rate": target,
        "construction": {
            "reference_cell_rate": REFERENCE_RATE,
            "adjacent_cell_rate_negative_gap": 0.7,
            "adjacent_cell_rate_positive_gap": 0.3,
            "designated_cell_rate": "(1 + gap) / 2",
        },
    }
    out_dir = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                           "assets")
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "power_target.json")
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"bootstrap detection rate: {boot_rate:.3f}")
    print(f"mcnemar detection rate:   {mcnemar_rate:.3f}")
    print(f"target (frozen):          {target:.3f}")
    print(f"wrote {out_path}")


if __name__ == "__main__":
    main()
