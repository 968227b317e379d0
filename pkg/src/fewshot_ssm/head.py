"""Prototype classification with the symmetric cross distance.

For prototype ``P`` and query ``Q`` (both ``F x D``) with time reversals
``rP``, ``rQ``::

    d1 = |P - Q|,  d2 = |rP - rQ|,  d3 = 1 / (|P - rQ| + eps),  d4 = 1 / (|rP - Q| + eps)
    d  = (d1 + d2 + d3 + d4) / 4

All norms are Frobenius.  Leading batch axes broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

DIST_EPS = 1e-6


def build_prototype(support_feats):
    """Mean over the shot axis: ``(K, F, D) -> (F, D)`` or ``(N, K, F, D) -> (N, F, D)``."""
    support_feats = ad.as_tensor(support_feats)
    if support_feats.ndim < 3 or support_feats.shape[-3] == 0:
        raise ValueError(f"build_prototype: need at least one support feature, got shape {support_feats.shape}")
    return ad.mean(support_feats, axis=support_feats.ndim - 3)


def time_reverse(x):
    x = ad.as_tensor(x)
    return ad.reverse(x, axis=x.ndim - 2)


@dataclass
class DistanceBundle:
    d1: ad.Tensor
    d2: ad.Tensor
    d3: ad.Tensor
    d4: ad.Tensor
    d: ad.Tensor


def cross_distance(proto, query, eps=DIST_EPS):
    proto, query = ad.as_tensor(proto), ad.as_tensor(query)
    if proto.shape[-2:] != query.shape[-2:]:
        raise ad.ShapeError(f"cross_distance: prototype shape {proto.shape} and query shape {query.shape} differ")
    rp, rq = time_reverse(proto), time_reverse(query)
    axes = (-2, -1)
    d1 = ad.frobenius_norm(proto - query, axis=axes)
    d2 = ad.frobenius_norm(rp - rq, axis=axes)
    d3 = ad.reciprocal(ad.frobenius_norm(proto - rq, axis=axes) + eps)
    d4 = ad.reciprocal(ad.frobenius_norm(rp - query, axis=axes) + eps)
    # pairing (d1 + d2) + (d3 + d4) keeps simultaneous reversal bit-exact
    d = ad.scale((d1 + d2) + (d3 + d4), 0.25)
    return DistanceBundle(d1, d2, d3, d4, d)


def distance_matrix(protos, queries, eps=DIST_EPS):
    """``(N, F, D)`` prototypes and ``(M, F, D)`` queries -> ``(M, N)`` distances."""
    protos, queries = ad.as_tensor(protos), ad.as_tensor(queries)
    n, f, dim = protos.shape
    m = queries.shape[0]
    p = ad.reshape(protos, (1, n, f, dim))
    q = ad.reshape(queries, (m, 1, f, dim))
    return cross_distance(p, q, eps).d


def classify(distances):
    """Argmin over the class axis; ties go to the lowest class index.

    Accepts a vector of per-class distances or a ``(queries, classes)`` matrix.
    """
    d = np.asarray(distances.data if isinstance(distances, ad.Tensor) else distances, dtype=np.float64)
    if d.shape[-1] == 0:
        raise ValueError("classify: no prototypes")
    return np.argmin(d, axis=-1)


def classification_loss(distances, true_class):
    """Mean cross-entropy of ``softmax(-d)`` against the true classes.

    ``distances`` is ``(classes,)`` with an integer label or ``(queries, classes)``
    with an integer array of labels.
    """
    distances = ad.as_tensor(distances)
    logp = ad.log_softmax(-distances, axis=-1)
    n_cls = distances.shape[-1]
    if distances.ndim == 1:
        if not 0 <= int(true_class) < n_cls:
            raise ValueError(f"true class {true_class} out of range for {n_cls} classes")
        return -logp[int(true_class)]
    labels = np.asarray(true_class, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= n_cls:
        raise ValueError(f"labels out of range for {n_cls} classes")
    onehot = np.zeros(distances.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return ad.scale(ad.sum_(logp * onehot), -1.0 / len(labels))
