"""Synthetic N-way K-shot episodes of long sequences with planted class motifs.

Every class in an episode owns a random motif of ``motif_len`` frames.  A sample
is Gaussian background noise with that class's motif (amplitude-jittered)
added at a uniformly random temporal offset, so same-class samples differ in
alignment as well as in noise.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field

import numpy as np

MAX_MOTIF_REDRAWS = 100
MIN_MOTIF_COS_DISTANCE = 0.5
BACKGROUND_FRACTION = 0.25


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int = 5
    k_shot: int = 1
    q_per_class: int = 1
    frames: int = 32
    feat_dim: int = 16
    motif_len: int = 6
    noise_std: float = 0.8
    jitter: tuple | None = (0.75, 1.25)  # amplitude factor range; None disables
    motif_scale: float = 2.0  # motif entries ~ N(0, motif_scale^2)
    fixed_offset: int | None = None  # plant every motif at this frame when set
    # every class motif permutes one shared pool of frames: classes differ only in temporal order
    shared_frames: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_way < 2:
            raise ValueError(f"n_way must be >= 2, got {self.n_way}")
        if self.k_shot < 1 or self.q_per_class < 1:
            raise ValueError("k_shot and q_per_class must be >= 1")
        if self.frames < 2 or self.frames % 2:
            raise ValueError(f"frames must be even, got {self.frames}")
        if not 1 <= self.motif_len <= self.frames // 4:
            raise ValueError(f"motif_len must lie in [1, frames/4], got {self.motif_len}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.fixed_offset is not None and not 0 <= self.fixed_offset <= self.frames - self.motif_len:
            raise ValueError(f"fixed_offset {self.fixed_offset} does not fit a motif in {self.frames} frames")


@dataclass(frozen=True)
class NoiseConfig:
    frame_noise: int = 0
    sample_noise_ratio: float = 0.0
    gaussian_bg_std: float = 0.0
    reverse_support: bool = False

    def validate(self, frames):
        if not 0 <= self.frame_noise <= frames:
            raise ValueError(f"frame_noise must lie in [0, {frames}], got {self.frame_noise}")
        if not 0.0 <= self.sample_noise_ratio <= 1.0:
            raise ValueError(f"sample_noise_ratio must lie in [0, 1], got {self.sample_noise_ratio}")
        if self.gaussian_bg_std < 0:
            raise ValueError("gaussian_bg_std must be non-negative")

    @property
    def is_identity(self):
        return (self.frame_noise == 0 and self.sample_noise_ratio == 0
                and self.gaussian_bg_std == 0 and not self.reverse_support)


@dataclass
class EpisodeBatch:
    spec: EpisodeSpec
    support: np.ndarray  # (N, K, F, D)
    query: np.ndarray  # (N * Q, F, D)
    support_labels: np.ndarray  # (N, K)
    query_labels: np.ndarray  # (N * Q,)
    motifs: np.ndarray  # (N, m, D)
    # per-sample generation records and injected perturbations
    manifest: dict = field(default_factory=dict)

    def copy(self):
        return copy.deepcopy(self)

    @property
    def support_flat(self):
        n, k = self.support.shape[:2]
        return self.support.reshape(n * k, *self.support.shape[2:])


class MotifSeparationError(RuntimeError):
    pass


def derive_seed(seed, index):
    """Independent per-episode seed (``seed`` xor ``index``, spread by SeedSequence)."""
    return int(np.random.SeedSequence([int(seed) ^ int(index), int(index)]).generate_state(1, np.uint64)[0])


def draw_motifs(spec, rng):
    for _ in range(MAX_MOTIF_REDRAWS):
        if spec.shared_frames:
            pool = rng.normal(0.0, spec.motif_scale, (spec.motif_len, spec.feat_dim))
            motifs = np.stack([pool[rng.permutation(spec.motif_len)] for _ in range(spec.n_way)])
        else:
            motifs = rng.normal(0.0, spec.motif_scale, (spec.n_way, spec.motif_len, spec.feat_dim))
        flat = motifs.reshape(spec.n_way, -1)
        unit = flat / np.linalg.norm(flat, axis=1, keepdims=True)
        cos = unit @ unit.T
        off = cos[~np.eye(spec.n_way, dtype=bool)]
        if off.size == 0 or (1.0 - off).min() >= MIN_MOTIF_COS_DISTANCE:
            return motifs
    raise MotifSeparationError(
        f"could not draw {spec.n_way} motifs with cosine distance >= {MIN_MOTIF_COS_DISTANCE} "
        f"in {MAX_MOTIF_REDRAWS} attempts (seed={spec.seed}, motif_len={spec.motif_len}, feat_dim={spec.feat_dim})"
    )


def _plant(spec, motif, rng):
    x = rng.normal(0.0, 1.0, (spec.frames, spec.feat_dim)) * spec.noise_std
    if spec.fixed_offset is None:
        offset = int(rng.integers(0, spec.frames - spec.motif_len + 1))
    else:
        offset = spec.fixed_offset
    amp = 1.0 if spec.jitter is None else float(rng.uniform(*spec.jitter))
    x[offset:offset + spec.motif_len] += amp * motif
    return x, {"offset": offset, "amplitude": amp}


def gen_episode(spec, rng=None):
    """Generate one episode; ``rng`` defaults to a generator seeded with ``spec.seed``."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    motifs = draw_motifs(spec, rng)
    n, k, q = spec.n_way, spec.k_shot, spec.q_per_class
    support = np.empty((n, k, spec.frames, spec.feat_dim))
    query = np.empty((n * q, spec.frames, spec.feat_dim))
    s_records, q_records = [], []
    for c in range(n):
        for j in range(k):
            support[c, j], rec = _plant(spec, motifs[c], rng)
            s_records.append({"class": c, **rec})
    for c in range(n):
        for j in range(q):
            query[c * q + j], rec = _plant(spec, motifs[c], rng)
            q_records.append({"class": c, **rec})
    return EpisodeBatch(
        spec=spec,
        support=support,
        query=query,
        support_labels=np.repeat(np.arange(n), k).reshape(n, k),
        query_labels=np.repeat(np.arange(n), q),
        motifs=motifs,
        manifest={"support": s_records, "query": q_records},
    )


def _noise_frame_std(spec):
    return spec.motif_scale


def inject_frame_noise(batch, count, rng):
    """Replace ``count`` distinct frames of every sample with irrelevant random frames.

    Replacement frames are drawn at motif amplitude so they compete with the
    planted evidence.
    """
    spec = batch.spec
    if not 0 <= count <= spec.frames:
        raise ValueError(f"frame noise count must lie in [0, {spec.frames}], got {count}")
    out = batch.copy()
    std = _noise_frame_std(spec)
    records = {"support": [], "query": []}
    if count == 0:
        out.manifest["frame_noise"] = records
        return out
    for c in range(out.support.shape[0]):
        for j in range(out.support.shape[1]):
            idx = np.sort(rng.choice(spec.frames, size=count, replace=False))
            out.support[c, j, idx] = rng.normal(0.0, std, (count, spec.feat_dim))
            records["support"].append(idx.tolist())
    for i in range(out.query.shape[0]):
        idx = np.sort(rng.choice(spec.frames, size=count, replace=False))
        out.query[i, idx] = rng.normal(0.0, std, (count, spec.feat_dim))
        records["query"].append(idx.tolist())
    out.manifest["frame_noise"] = records
    return out


def inject_sample_noise(batch, ratio, rng):
    """Swap ``floor(ratio * K)`` supports per class for samples of another class, keeping labels."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"sample noise ratio must lie in [0, 1], got {ratio}")
    spec = batch.spec
    out = batch.copy()
    n, k = out.support.shape[:2]
    per_class = int(np.floor(ratio * k + 1e-9))
    swaps = []
    for c in range(n):
        if per_class == 0:
            break
        slots = rng.choice(k, size=per_class, replace=False)
        for j in slots:
            src = int(rng.choice([x for x in range(n) if x != c]))
            out.support[c, j], rec = _plant(spec, out.motifs[src], rng)
            swaps.append({"class": c, "shot": int(j), "generator_class": src, **rec})
    out.manifest["sample_noise"] = swaps
    return out


def reverse_support(batch):
    out = batch.copy()
    out.support = out.support[:, :, ::-1].copy()
    out.manifest["reversed_support"] = True
    return out


def add_background_noise(batch, std, rng, fraction=BACKGROUND_FRACTION):
    """Add N(0, std^2) to a fixed fraction of all samples (support and query)."""
    out = batch.copy()
    support = out.support_flat
    total = support.shape[0] + out.query.shape[0]
    count = int(round(fraction * total))
    chosen = np.sort(rng.choice(total, size=count, replace=False)) if count else np.array([], dtype=int)
    for i in chosen:
        noise = rng.normal(0.0, std, support.shape[1:])
        if i < support.shape[0]:
            support[i] += noise
        else:
            out.query[i - support.shape[0]] += noise
    out.support = support.reshape(out.support.shape)
    out.manifest["background"] = [int(i) for i in chosen]
    return out


def apply_perturbations(batch, noise, rng):
    """Support reversal, background noise, frame noise, sample noise (in that order)."""
    noise.validate(batch.spec.frames)
    out = batch
    if noise.reverse_support:
        out = reverse_support(out)
    if noise.gaussian_bg_std > 0:
        out = add_background_noise(out, noise.gaussian_bg_std, rng)
    if noise.frame_noise > 0:
        out = inject_frame_noise(out, noise.frame_noise, rng)
    if noise.sample_noise_ratio > 0:
        out = inject_sample_noise(out, noise.sample_noise_ratio, rng)
    return out


# ---------------------------------------------------------------------------
# Fixture files

FIXTURE_MAGIC = b"MEPB"
FIXTURE_VERSION = 1
_HEADER = struct.Struct("<4sH6I4dQ")


class FixtureFormatError(ValueError):
    pass


def save_episode(path, batch):
    """Write an episode as header + row-major little-endian f64 arrays.

    Arrays, in order: support, query, support labels, query labels, motifs.
    """
    s = batch.spec
    jitter = s.jitter if s.jitter is not None else (1.0, 1.0)
    header = _HEADER.pack(FIXTURE_MAGIC, FIXTURE_VERSION, s.n_way, s.k_shot, s.q_per_class, s.frames,
                          s.feat_dim, s.motif_len, s.noise_std, jitter[0], jitter[1], s.motif_scale,
                          s.seed & 0xFFFFFFFFFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in (batch.support, batch.query, batch.support_labels, batch.query_labels, batch.motifs):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_episode(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FixtureFormatError(f"fixture truncated at byte {len(raw)}: header needs {_HEADER.size} bytes")
    magic, version, n, k, q, f, d, m, sigma, jlo, jhi, mscale, seed = _HEADER.unpack_from(raw)
    if magic != FIXTURE_MAGIC:
        raise FixtureFormatError(f"bad magic {magic!r} at byte 0, expected {FIXTURE_MAGIC!r}")
    if version != FIXTURE_VERSION:
        raise FixtureFormatError(f"unsupported fixture version {version} at byte 4")
    spec = EpisodeSpec(n_way=n, k_shot=k, q_per_class=q, frames=f, feat_dim=d, motif_len=m, noise_std=sigma,
                       jitter=None if jlo == jhi == 1.0 else (jlo, jhi), motif_scale=mscale, seed=seed)
    shapes = [(n, k, f, d), (n * q, f, d), (n, k), (n * q,), (n, m, d)]
    need = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) != need:
        raise FixtureFormatError(f"fixture length {len(raw)} bytes, expected {need}")
    arrays, off = [], _HEADER.size
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64))
        off += 8 * count
    support, query, sl, ql, motifs = arrays
    return EpisodeBatch(spec, support, query, sl.astype(np.int64), ql.astype(np.int64), motifs, {})
