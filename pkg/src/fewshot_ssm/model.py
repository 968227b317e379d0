"""Full episodic model: nested SSM branch for classification, contrastive branch on raw features."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .contrastive import ContrastiveConfig, embed, hybrid_loss, init_projection
from .head import build_prototype, classification_loss, classify, distance_matrix
from .layers import Linear
from .matryoshka import BlockOptions, MatryoshkaParams, init_matryoshka, matryoshka_forward, update_running_stats


@dataclass
class ModelConfig:
    feat_dim: int = 16
    scales: tuple = (1, 2, 4)
    n_state: int = 16
    conv_channels: int = 4
    proj_dim: int = 64
    tau: float = 0.07
    lam: float = 4.0
    selective: bool = False
    disable_inner: bool = False
    disable_outer: bool = False
    disable_hc: bool = False
    fragmenting: str = "nonoverlap"
    learnable_weights: bool = True
    share_inner: bool = False
    share_outer: bool = True
    contrastive_terms: tuple = (True, True, True)  # support, query, joint
    single_random_anchor: bool = False
    inner_gate: bool = True

    def block_options(self):
        return BlockOptions(self.disable_inner, self.disable_outer, self.learnable_weights, self.fragmenting)

    def contrastive(self):
        s, q, j = self.contrastive_terms
        return ContrastiveConfig(self.tau, self.proj_dim, s, q, j, self.single_random_anchor)


@dataclass
class ModelParams:
    block: MatryoshkaParams
    proj: Linear

    def named(self):
        out = dict(self.block.named())
        out.update(self.proj.named("proj."))
        return out

    def buffers(self):
        """Non-trainable state saved alongside parameters."""
        c = self.block.conv
        return {"conv.running_mean": np.array([c.running_mean]), "conv.running_var": np.array([c.running_var])}

    def load_buffers(self, buffers):
        self.block.conv.running_mean = float(buffers["conv.running_mean"][0])
        self.block.conv.running_var = float(buffers["conv.running_var"][0])


def init_model(config, seed):
    rng = np.random.default_rng(seed)
    block = init_matryoshka(rng, config.feat_dim, config.scales, config.n_state, config.conv_channels,
                            config.selective, config.share_inner, config.share_outer, config.inner_gate)
    return ModelParams(block, init_projection(rng, config.feat_dim, config.proj_dim))


@dataclass
class EpisodeResult:
    distances: ad.Tensor  # (queries, classes)
    predictions: np.ndarray
    accuracy: float
    l_ce: ad.Tensor
    l_hc: ad.Tensor
    l_total: ad.Tensor
    hc_terms: tuple = ()
    bn_stats: list = field(default_factory=list)
    per_scale: dict = field(default_factory=dict)
    support_feats: ad.Tensor | None = None
    query_feats: ad.Tensor | None = None


def episode_forward(params, batch, config, training=True, rng=None):
    """Forward both branches on one episode and form ``lam * L_ce + L_hc``."""
    n, k, frames, dim = batch.support.shape
    if dim != config.feat_dim:
        raise ad.ShapeError(f"episode feature dim {dim} does not match model feature dim {config.feat_dim}")
    support = batch.support.reshape(n * k, frames, dim)
    x = ad.Tensor(np.concatenate([support, batch.query], axis=0))
    block = matryoshka_forward(x, params.block, config.block_options(), training)
    feats = block.out
    s_feats = feats[: n * k]
    q_feats = feats[n * k:]
    protos = build_prototype(ad.reshape(s_feats, (n, k, frames, dim)))
    dist = distance_matrix(protos, q_feats)
    l_ce = classification_loss(dist, batch.query_labels)
    preds = classify(dist)
    acc = float(np.mean(preds == batch.query_labels))
    if config.disable_hc:
        l_hc = ad.Tensor(0.0)
        terms = ()
    else:
        emb = embed(x, params.proj)
        hc = hybrid_loss(emb[: n * k], batch.support_labels.reshape(-1), emb[n * k:], batch.query_labels,
                         config.contrastive(), rng)
        l_hc = hc.total
        terms = (hc.support, hc.query, hc.joint)
    l_total = ad.scale(l_ce, config.lam) + l_hc
    return EpisodeResult(dist, preds, acc, l_ce, l_hc, l_total, terms, block.bn_stats, block.per_scale,
                         s_feats, q_feats)


def commit_bn_stats(params, stats):
    if stats:
        mu = float(np.mean([s[0] for s in stats]))
        var = float(np.mean([s[1] for s in stats]))
        update_running_stats(params.block.conv, (mu, var))
