"""Numpy fallback for the compiled scoring kernels.

Mirrors the compiled reduction order: models are folded sequentially inside
each relation, relations sequentially per pair.  Multiplicative reductions
are therefore bit-identical to the compiled kernels; paths through ``log``
may differ from libm in the last ulp.
"""

from __future__ import annotations

import numpy as np


def _products(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n_pairs, n_models, n_rels = probs.shape
    prod_yes = np.ones((n_pairs, n_rels))
    prod_no = np.ones((n_pairs, n_rels))
    for m in range(n_models):
        prod_yes *= probs[:, m, :]
        prod_no *= 1.0 - probs[:, m, :]
    return prod_yes, prod_no


def relation_disagreements(probs: np.ndarray) -> np.ndarray:
    prod_yes, prod_no = _products(probs)
    phi = 1.0 - (prod_yes + prod_no)
    np.maximum(phi, 0.0, out=phi)
    return phi


def _sum_over_relations(values: np.ndarray) -> np.ndarray:
    # Explicit column loop keeps per-pair accumulation sequential.
    acc = np.zeros(values.shape[0])
    for r in range(values.shape[1]):
        acc += values[:, r]
    return acc


def committee_log_scores(probs: np.ndarray, delta: float) -> np.ndarray:
    phi = relation_disagreements(probs)
    return _sum_over_relations(np.log(phi + delta))


def pair_products(probs: np.ndarray) -> np.ndarray:
    phi = relation_disagreements(probs)
    with np.errstate(divide="ignore"):
        log_phi = np.log(phi)
    total = _sum_over_relations(log_phi)
    out = np.exp(total)
    out[np.isneginf(total)] = 0.0
    return out


def ppm_scores(probs: np.ndarray) -> np.ndarray:
    prod_yes, _ = _products(probs)
    return _sum_over_relations(1.0 - prod_yes) / probs.shape[2]


def ppd_scores(probs: np.ndarray, delta: float) -> np.ndarray:
    prod_yes, _ = _products(probs)
    return _sum_over_relations(np.log((1.0 - prod_yes) + delta))


def entropy_scores(probs: np.ndarray) -> np.ndarray:
    n_pairs, n_models, n_rels = probs.shape
    mean = np.zeros((n_pairs, n_rels))
    for m in range(n_models):
        mean += probs[:, m, :]
    mean /= n_models
    interior = (mean > 0.0) & (mean < 1.0)
    h = np.zeros_like(mean)
    mi = mean[interior]
    h[interior] = -mi * np.log(mi) - (1.0 - mi) * np.log(1.0 - mi)
    return _sum_over_relations(h)
