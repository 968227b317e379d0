"""Training, evaluation, alignment probes and the gradient-check report."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from .. import autodiff as ad
from ..matryoshka import matryoshka_forward
from ..model import commit_bn_stats, episode_forward, init_model
from ..tasks import apply_perturbations, derive_seed, gen_episode
from . import checkpoint as ckpt_io
from .config import RunConfig
from .dtw import dtw_score

# stream salts keep training, evaluation, probe and perturbation draws disjoint
TRAIN_STREAM = 0
EVAL_STREAM = 0x5EED_0001
PROBE_STREAM = 0x5EED_0002
PERTURB_STREAM = 0x5EED_0003

PROBE_EPISODES = 8
BOOKKEEPING_TOL = 1e-9
GRADCHECK_TOL = 1e-4


class NonFiniteLossError(RuntimeError):
    def __init__(self, episode, seed, values):
        super().__init__(f"non-finite loss at episode {episode} (episode seed {seed}): {values}")
        self.episode = episode
        self.seed = seed


class BookkeepingError(AssertionError):
    pass


@dataclass
class MetricRecord:
    episode: int
    l_ce: float
    l_hc: float
    l_total: float
    accuracy: float
    dtw: dict | None  # scale -> mean probe DTW score, on probe episodes only
    wall_ms: float

    def check(self, lam):
        expected = lam * self.l_ce + self.l_hc
        if abs(self.l_total - expected) > BOOKKEEPING_TOL:
            raise BookkeepingError(f"episode {self.episode}: L_total {self.l_total!r} != "
                                   f"lambda * L_ce + L_hc = {expected!r}")

    def to_json(self):
        d = asdict(self)
        if self.dtw is not None:
            d["dtw"] = {str(k): v for k, v in self.dtw.items()}
        return json.dumps(d, sort_keys=True)


def episode_seed(seed, index, stream=TRAIN_STREAM):
    return derive_seed(int(seed) ^ stream, index)


def make_episode(config, seed, apply_noise=True, task=None):
    """``task`` holds extra generator fields (e.g. ``shared_frames``) that have no config key."""
    spec = config.episode_spec(seed)
    if task:
        spec = dataclasses.replace(spec, **task)
    batch = gen_episode(spec)
    noise = config.noise()
    if apply_noise and not noise.is_identity:
        batch = apply_perturbations(batch, noise, np.random.default_rng(derive_seed(seed, PERTURB_STREAM)))
    return batch


def probe_set(config, count=PROBE_EPISODES, task=None):
    """Fixed clean episodes for the alignment diagnostic."""
    return [make_episode(config, episode_seed(config.seed, i, PROBE_STREAM), apply_noise=False, task=task)
            for i in range(count)]


def probe_dtw(params, config, probes):
    """Mean DTW score between each query's per-scale output and its true-class prototype."""
    mc = config.model_config()
    sums = {o: 0.0 for o in params.block.scales}
    count = 0
    with ad.no_grad():
        for batch in probes:
            n, k, frames, dim = batch.support.shape
            x = np.concatenate([batch.support_flat, batch.query], axis=0)
            block = matryoshka_forward(x, params.block, mc.block_options(), training=False)
            for o, feats in block.per_scale.items():
                f = feats.data
                protos = f[: n * k].reshape(n, k, frames, dim).mean(axis=1)
                for qi, label in enumerate(batch.query_labels):
                    sums[o] += dtw_score(f[n * k + qi], protos[label])
            count += len(batch.query_labels)
    return {o: s / count for o, s in sums.items()}


@dataclass
class TrainResult:
    params: object
    records: list
    dtw_rows: list  # (updates applied, scale, score)
    config: RunConfig


def sgd_step(named, lr):
    for p in named:
        if p.grad is not None:
            p.data -= lr * p.grad


def train(config, out_dir=None, params=None, progress=None, task=None):
    """Episodic SGD on ``lambda * L_ce + L_hc``; one record per episode."""
    mc = config.model_config()
    params = params if params is not None else init_model(mc, config.seed)
    named = list(params.named().values())
    probes = probe_set(config, task=task)
    dtw_rows = [(0, o, s) for o, s in probe_dtw(params, config, probes).items()]
    records = []
    for ep in range(config.episodes):
        t0 = time.perf_counter()
        seed = episode_seed(config.seed, ep)
        batch = make_episode(config, seed, task=task)
        res = episode_forward(params, batch, mc, training=True)
        l_ce, l_hc, l_total = res.l_ce.item(), res.l_hc.item(), res.l_total.item()
        if not all(math.isfinite(v) for v in (l_ce, l_hc, l_total)):
            raise NonFiniteLossError(ep, seed, {"l_ce": l_ce, "l_hc": l_hc, "l_total": l_total})
        ad.zero_grad(named)
        res.l_total.backward()
        sgd_step(named, config.lr)
        if not all(np.all(np.isfinite(p.data)) for p in named):
            raise NonFiniteLossError(ep, seed, "parameters became non-finite after the update")
        commit_bn_stats(params, res.bn_stats)
        dtw = None
        done = ep + 1
        if (config.eval_every and done % config.eval_every == 0) or done == config.episodes:
            dtw = probe_dtw(params, config, probes)
            dtw_rows.extend((done, o, s) for o, s in dtw.items())
        rec = MetricRecord(ep, l_ce, l_hc, l_total, res.accuracy, dtw, 1000.0 * (time.perf_counter() - t0))
        rec.check(config.lam)
        records.append(rec)
        if progress is not None:
            progress(rec)
    result = TrainResult(params, records, dtw_rows, config)
    if out_dir is not None:
        write_train_outputs(result, out_dir)
    return result


def write_train_outputs(result, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.jsonl"), "w") as fh:
        for rec in result.records:
            fh.write(rec.to_json() + "\n")
    write_dtw_csv(os.path.join(out_dir, "dtw.csv"), result.dtw_rows)
    ckpt_io.save_checkpoint(os.path.join(out_dir, "checkpoint.bin"),
                            ckpt_io.from_model(result.params, result.config.to_text()))


def write_dtw_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "scale", "dtw_score"])
        for ep, o, s in rows:
            w.writerow([ep, o, repr(float(s))])


# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    mean: float
    ci95: float
    confusion: np.ndarray  # rows truth, columns prediction
    accuracies: np.ndarray


def check_dims(params, config):
    """Reject a checkpoint whose parameter shapes do not fit ``config``."""
    expected = init_model(config.model_config(), 0).named()
    got = params.named()
    for name, t in expected.items():
        if name not in got or got[name].shape != t.shape:
            shape = got[name].shape if name in got else None
            raise ValueError(f"checkpoint parameter {name!r} has shape {shape}, config expects {t.shape}")


def evaluate(params, config, episodes=1000, out_dir=None, task=None):
    """Mean accuracy with a normal-approximation 95% interval and the confusion matrix."""
    check_dims(params, config)
    mc = config.model_config()
    mc.disable_hc = True  # the contrastive branch does not affect predictions
    n = config.n_way
    confusion = np.zeros((n, n), dtype=np.int64)
    accs = np.empty(episodes)
    with ad.no_grad():
        for i in range(episodes):
            batch = make_episode(config, episode_seed(config.seed, i, EVAL_STREAM), task=task)
            res = episode_forward(params, batch, mc, training=False)
            np.add.at(confusion, (batch.query_labels, res.predictions), 1)
            accs[i] = res.accuracy
    mean = float(accs.mean()) if episodes else float("nan")
    ci = float(1.96 * accs.std(ddof=1) / np.sqrt(episodes)) if episodes > 1 else float("nan")
    result = EvalResult(mean, ci, confusion, accs)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_confusion_csv(os.path.join(out_dir, "confusion.csv"), confusion)
        with open(os.path.join(out_dir, "eval.json"), "w") as fh:
            json.dump({"mean_accuracy": mean, "ci95": ci, "episodes": episodes}, fh, indent=1)
    return result


def write_confusion_csv(path, confusion):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["truth"] + [f"pred_{j}" for j in range(confusion.shape[1])])
        for i, row in enumerate(confusion):
            w.writerow([i] + [int(v) for v in row])


# ---------------------------------------------------------------------------


GRADCHECK_DEFAULT = RunConfig(n_way=3, k_shot=2, q_per_class=2, frames=8, feat_dim=4, motif_len=2,
                              scales=(1, 2, 4), episodes=0)


def gradcheck_report(config=GRADCHECK_DEFAULT, eps=1e-5, max_coords=None):
    """Finite-difference check of L_total against every parameter group on one episode."""
    if config.frames > 8 or config.feat_dim > 4:
        raise ValueError(f"gradcheck needs a small config (frames <= 8, feat_dim <= 4), "
                         f"got frames={config.frames}, feat_dim={config.feat_dim}")
    mc = config.model_config()
    params = init_model(mc, config.seed)
    batch = make_episode(config, episode_seed(config.seed, 0))
    return ad.grad_check_params(lambda: episode_forward(params, batch, mc, training=True).l_total,
                                params.named(), eps=eps, max_coords=max_coords)


def format_report(results, tol=GRADCHECK_TOL):
    lines = []
    for name, r in results.items():
        status = "ok" if r.finite and r.max_error < tol else "FAIL"
        lines.append(f"{name:32s} {r.max_error:.3e} {status}")
    return "\n".join(lines)


def report_passes(results, tol=GRADCHECK_TOL):
    return all(r.finite and r.max_error < tol for r in results.values())
