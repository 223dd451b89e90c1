"""Independent brute-force implementations used only to check the package.

Everything here deliberately avoids the library's code paths: disagreement
comes from enumerating joint Bernoulli outcomes, metrics from nested loops
over every (document, pair, relation), selection from a full sort.
"""

from __future__ import annotations

import itertools
import math


def bf_relation_disagreement(probs) -> float:
    """Sum the probability of every non-unanimous joint outcome."""
    n = len(probs)
    total = 0.0
    for outcome in itertools.product((0, 1), repeat=n):
        if all(o == 1 for o in outcome) or all(o == 0 for o in outcome):
            continue
        weight = 1.0
        for o, p in zip(outcome, probs):
            weight *= p if o == 1 else (1.0 - p)
        total += weight
    return total


def bf_pair_values(prob_rows: dict[str, list[float]], relations, delta: float):
    """(per-relation phi, product, log score) for one pair.

    prob_rows maps relation -> per-model probabilities (missing relations
    mean every model scored 0).
    """
    n_models = len(next(iter(prob_rows.values()))) if prob_rows else 2
    phi = {}
    for rel in relations:
        probs = prob_rows.get(rel, [0.0] * n_models)
        phi[rel] = bf_relation_disagreement(probs)
    product = 1.0
    for rel in relations:
        product *= phi[rel]
    log_score = sum(math.log(phi[rel] + delta) for rel in relations)
    return phi, product, log_score


def bf_ppm(prob_rows, relations) -> float:
    n_models = len(next(iter(prob_rows.values()))) if prob_rows else 2
    total = 0.0
    for rel in relations:
        probs = prob_rows.get(rel, [0.0] * n_models)
        prod = 1.0
        for p in probs:
            prod *= p
        total += 1.0 - prod
    return total / len(relations)


def bf_ppd(prob_rows, relations, delta: float) -> float:
    n_models = len(next(iter(prob_rows.values()))) if prob_rows else 2
    total = 0.0
    for rel in relations:
        probs = prob_rows.get(rel, [0.0] * n_models)
        prod = 1.0
        for p in probs:
            prod *= p
        total += math.log((1.0 - prod) + delta)
    return total


def bf_entropy(prob_rows, relations) -> float:
    n_models = len(next(iter(prob_rows.values()))) if prob_rows else 2
    total = 0.0
    for rel in relations:
        probs = prob_rows.get(rel, [0.0] * n_models)
        mean = sum(probs) / len(probs)
        if 0.0 < mean < 1.0:
            total += -mean * math.log(mean) - (1.0 - mean) * math.log(1.0 - mean)
    return total


def bf_top_k(scores: dict, k: int, excluded=frozenset()):
    """Full sort selection: descending score, ascending key on ties."""
    eligible = [(key, s) for key, s in scores.items() if key not in excluded]
    eligible.sort(key=lambda item: (-item[1], item[0]))
    return eligible[:k]


def bf_micro(pred: set, gold: set):
    tp = fp = fn = 0
    for item in pred:
        if item in gold:
            tp += 1
        else:
            fp += 1
    for item in gold:
        if item not in pred:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def bf_macro(pred: set, gold: set):
    relations = sorted({r for _, r in pred} | {r for _, r in gold})
    if not relations:
        return 0.0, 0.0, 0.0
    ps, rs, fs = [], [], []
    for rel in relations:
        p, r, f = bf_micro(
            {x for x in pred if x[1] == rel}, {x for x in gold if x[1] == rel}
        )
        ps.append(p)
        rs.append(r)
        fs.append(f)
    return sum(ps) / len(ps), sum(rs) / len(rs), sum(fs) / len(fs)


def bf_aggregate(matrices, tau: float) -> set:
    """Exhaustive max scan over every stored (pair, relation, model) score."""
    cells = {}
    for matrix in matrices:
        for pair, scores in matrix.items():
            for rel, score in scores.items():
                key = (pair, rel)
                cells[key] = max(cells.get(key, 0.0), score)
    return {key for key, best in cells.items() if best > tau}
