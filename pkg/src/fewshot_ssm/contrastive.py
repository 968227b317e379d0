"""Hybrid contrastive objective built from an InfoNCE core.

Each anchor contrasts every same-group member (positives) against all
other-group members (negatives); the per-positive InfoNCE terms are averaged,
then averaged over anchors.  Anchors without positives are skipped, and a term
with no usable anchor contributes zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .layers import Linear, init_linear

NORM_EPS = 1e-12


@dataclass
class ContrastiveConfig:
    tau: float = 0.07
    dim: int = 64
    use_support: bool = True
    use_query: bool = True
    use_joint: bool = True
    single_random_anchor: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")


def init_projection(rng, width, dim=64):
    return init_linear(rng, width, dim)


def _unit(v):
    norm = ad.frobenius_norm(v, axis=-1, keepdims=True)
    guard = np.maximum(NORM_EPS - norm.data, 0.0)
    return v / (norm + guard)


def embed(features, proj: Linear):
    """Temporal mean, projection, unit normalisation: ``(..., F, D) -> (..., D_e)``."""
    features = ad.as_tensor(features)
    pooled = ad.mean(features, axis=features.ndim - 2)
    return _unit(proj(pooled))


def info_nce(anchor, positives, negatives, tau):
    """Mean over positives of ``-log(e^{s_p/tau} / (e^{s_p/tau} + sum_r e^{s_r/tau}))``.

    ``positives`` is ``(P, D_e)`` with ``P >= 1``; ``negatives`` is ``(R, D_e)``, possibly empty.
    """
    anchor, positives = ad.as_tensor(anchor), ad.as_tensor(positives)
    if positives.ndim != 2 or positives.shape[0] == 0:
        raise ValueError("info_nce: at least one positive is required")
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    pos_logit = ad.scale(ad.cosine_similarity(anchor, positives), 1.0 / tau)  # (P,)
    denom = ad.exp(pos_logit)
    negatives = None if negatives is None else ad.as_tensor(negatives)
    if negatives is not None and negatives.size:
        neg_logit = ad.scale(ad.cosine_similarity(anchor, negatives), 1.0 / tau)
        denom = denom + ad.sum_(ad.exp(neg_logit))
    return ad.mean(ad.log(denom) - pos_logit)


def grouped_info_nce(embeddings, groups, tau, anchors=None):
    """Average InfoNCE over anchors, grouping positives by ``groups``.

    ``anchors`` optionally restricts which rows serve as anchors.  Returns a
    scalar Tensor (zero when no anchor has a positive) and the anchor count used.
    """
    embeddings = ad.as_tensor(embeddings)
    groups = np.asarray(groups)
    m = embeddings.shape[0]
    same = groups[:, None] == groups[None, :]
    pos_mask = same & ~np.eye(m, dtype=bool)
    neg_mask = ~same
    n_pos = pos_mask.sum(axis=1)
    usable = n_pos > 0
    if anchors is not None:
        keep = np.zeros(m, dtype=bool)
        keep[np.asarray(anchors, dtype=np.int64)] = True
        usable &= keep
    if not usable.any():
        return ad.Tensor(0.0), 0
    rows = np.flatnonzero(usable)
    z = embeddings
    sims = ad.cosine_similarity(ad.reshape(z, (m, 1, -1)), ad.reshape(z, (1, m, -1)))  # (m, m)
    logits = ad.scale(sims, 1.0 / tau)
    e = ad.exp(logits)
    negsum = ad.sum_(e * neg_mask.astype(np.float64), axis=1, keepdims=True)  # (m, 1)
    per_pair = ad.log(e + negsum) - logits  # (m, m)
    weights = np.zeros((m, m))
    weights[rows] = pos_mask[rows] / n_pos[rows, None]
    weights /= len(rows)
    return ad.sum_(per_pair * weights), len(rows)


def _anchor_choice(groups, rng):
    if rng is None:
        return None
    groups = np.asarray(groups)
    counts = np.array([(groups == g).sum() for g in groups])
    cand = np.flatnonzero(counts > 1)
    if cand.size == 0:
        return None
    return [int(rng.choice(cand))]


def support_contrastive(emb, labels, tau, rng=None):
    return grouped_info_nce(emb, labels, tau, _anchor_choice(labels, rng))[0]


def query_contrastive(emb, labels, tau, rng=None):
    return grouped_info_nce(emb, labels, tau, _anchor_choice(labels, rng))[0]


def joint_contrastive(support_emb, support_labels, query_emb, query_labels, tau, rng=None):
    emb = ad.concat([support_emb, query_emb], axis=0)
    labels = np.concatenate([np.asarray(support_labels), np.asarray(query_labels)])
    return grouped_info_nce(emb, labels, tau, _anchor_choice(labels, rng))[0]


@dataclass
class HybridTerms:
    support: ad.Tensor
    query: ad.Tensor
    joint: ad.Tensor
    total: ad.Tensor


def hybrid_loss(support_emb, support_labels, query_emb, query_labels, config=None, rng=None):
    """Sum of the support, query and joint terms enabled in ``config``.

    ``rng`` is consulted only when ``config.single_random_anchor`` is set.
    """
    config = config or ContrastiveConfig()
    anchor_rng = rng if config.single_random_anchor else None
    if anchor_rng is None and config.single_random_anchor:
        anchor_rng = np.random.default_rng(0)
    zero = ad.Tensor(0.0)
    ls = support_contrastive(support_emb, support_labels, config.tau, anchor_rng) if config.use_support else zero
    lq = query_contrastive(query_emb, query_labels, config.tau, anchor_rng) if config.use_query else zero
    lj = (joint_contrastive(support_emb, support_labels, query_emb, query_labels, config.tau, anchor_rng)
          if config.use_joint else zero)
    return HybridTerms(ls, lq, lj, ls + lq + lj)
