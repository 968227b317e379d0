"""Dynamic time warping score used as an alignment diagnostic."""

import numpy as np

from .. import kernels

COS_EPS = 1e-12


def cosine_cost(a, b):
    """``1 - cosine(a_i, b_j)`` for every frame pair; zero frames have cosine 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    an = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), COS_EPS)
    bn = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), COS_EPS)
    return 1.0 - an @ bn.T


def dtw_score(a, b):
    """Minimal boundary-anchored DTW path cost over the cosine cost matrix, divided by path length."""
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dtw_score: feature dims differ ({a.shape} vs {b.shape})")
    total, steps = kernels.dtw_path_cost(cosine_cost(a, b))
    return total / steps
