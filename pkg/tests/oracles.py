"""Independent reference implementations used to check the package.

Nothing here imports from ``emorisk``; each oracle is written the slow,
obvious way so it cannot share a bug with the code under test.
"""

from __future__ import annotations

import math

# Written out by hand, in the order the index formula lists its terms.
ORACLE_WEIGHTS = {
    "anger": 1,
    "cognitive_dysfunction": 1,
    "emptiness": 1,
    "hopelessness": 2,
    "loneliness": 1,
    "sadness": 1,
    "suicide_intent": 3,
    "worthlessness": 2,
}

NAMES = sorted(ORACLE_WEIGHTS)


def weight_sum(present: dict[str, bool]) -> int:
    total = 0
    for name, weight in ORACLE_WEIGHTS.items():
        if present[name]:
            total += weight
    return total


def brute_force_metrics(gold: list[list[bool]], pred: list[list[bool]]) -> dict[str, float]:
    """Micro/macro P/R/F1 by walking every (post, class) decision."""
    n_classes = len(gold[0]) if gold else 0
    per_class = []
    all_tp = all_fp = all_fn = 0
    for c in range(n_classes):
        tp = fp = fn = 0
        for g_row, p_row in zip(gold, pred):
            g, p = g_row[c], p_row[c]
            if g and p:
                tp += 1
            elif p and not g:
                fp += 1
            elif g and not p:
                fn += 1
        all_tp, all_fp, all_fn = all_tp + tp, all_fp + fp, all_fn + fn
        prec = tp / (tp + fp) if (tp + fp) > 0 else 0.0
        rec = tp / (tp + fn) if (tp + fn) > 0 else 0.0
        f1 = 2 * prec * rec / (prec + rec) if (prec + rec) > 0 else 0.0
        per_class.append((prec, rec, f1))
    micro_p = all_tp / (all_tp + all_fp) if (all_tp + all_fp) > 0 else 0.0
    micro_r = all_tp / (all_tp + all_fn) if (all_tp + all_fn) > 0 else 0.0
    micro_f = 2 * micro_p * micro_r / (micro_p + micro_r) if (micro_p + micro_r) > 0 else 0.0
    k = len(per_class)
    return {
        "micro_p": micro_p,
        "micro_r": micro_r,
        "micro_f1": micro_f,
        "macro_p": sum(x[0] for x in per_class) / k,
        "macro_r": sum(x[1] for x in per_class) / k,
        "macro_f1": sum(x[2] for x in per_class) / k,
    }


def average_ranks(values: list[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def pearson(x: list[float], y: list[float]) -> float | None:
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return None
    return sxy / math.sqrt(sxx * syy)


def spearman(x: list[float], y: list[float]) -> float | None:
    return pearson(average_ranks(x), average_ranks(y))
