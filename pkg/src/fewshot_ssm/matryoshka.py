"""Nested bidirectional SSM block: Inner Modules on fragments inside an Outer Module.

For each scale ``o`` the sequence is split into fragments of ``o`` frames, each
fragment is enhanced by a bidirectional scan with independent directions plus a
residual, the enhanced sequence is scanned in both directions by one shared
Outer scan, and the result is gated elementwise by
``sigmoid(conv_block(enhanced) + input)``.  Scale outputs are averaged.

All functions accept a single sequence ``(F, D)`` or a batch ``(B, F, D)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Linear, init_linear
from .ssm import SsmParams, bidirectional_scan, init_ssm

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def validate_scales(scales, frames):
    """Return the scales sorted; raise ValueError if any is unusable for ``frames``."""
    scales = sorted(int(o) for o in scales)
    if not scales:
        raise ValueError("scale set is empty")
    if len(set(scales)) != len(scales):
        raise ValueError(f"scale set {scales} has duplicates")
    for o in scales:
        if o < 1 or o & (o - 1):
            raise ValueError(f"scale {o} is not a power of two")
        if o >= frames:
            raise ValueError(f"scale {o} must be smaller than the frame count {frames}")
        if frames % o:
            raise ValueError(f"scale {o} does not divide the frame count {frames}")
    return scales


@dataclass
class InnerParams:
    fw: SsmParams
    bw: SsmParams
    fuse: Linear
    # per-direction SiLU output gates; None gives a purely linear module
    gate_fw: Linear | None = None
    gate_bw: Linear | None = None


@dataclass
class ConvBlockParams:
    k1: Tensor  # (c, 1, 3, 3)
    k2: Tensor  # (c, c, 3, 3)
    k3: Tensor  # (1, c, 3, 3)
    gamma: Tensor  # (1,)
    beta: Tensor  # (1,)
    running_mean: float = 0.0
    running_var: float = 1.0

    def named(self, prefix):
        return {f"{prefix}{k}": getattr(self, k) for k in ("k1", "k2", "k3", "gamma", "beta")}


def init_conv_block(rng, channels=4):
    def kern(cout, cin):
        bound = 1.0 / np.sqrt(cin * 9)
        return Tensor(rng.uniform(-bound, bound, (cout, cin, 3, 3)), requires_grad=True)

    return ConvBlockParams(
        k1=kern(channels, 1),
        k2=kern(channels, channels),
        k3=kern(1, channels),
        gamma=Tensor(np.ones(1), requires_grad=True),
        beta=Tensor(np.zeros(1), requires_grad=True),
    )


@dataclass
class MatryoshkaParams:
    scales: list
    inner: dict  # scale -> InnerParams
    outer: SsmParams
    outer_fuse: Linear
    conv: ConvBlockParams
    # set only when the outer directions are not shared (ablation)
    outer_bw: SsmParams | None = None

    def named(self):
        out = {}
        for o in self.scales:
            p = self.inner[o]
            out.update(p.fw.named(f"inner{o}.fw."))
            if p.bw is not p.fw:
                out.update(p.bw.named(f"inner{o}.bw."))
            out.update(p.fuse.named(f"inner{o}.fuse."))
            if p.gate_fw is not None:
                out.update(p.gate_fw.named(f"inner{o}.gate_fw."))
                if p.gate_bw is not p.gate_fw:
                    out.update(p.gate_bw.named(f"inner{o}.gate_bw."))
        out.update(self.outer.named("outer."))
        if self.outer_bw is not None:
            out.update(self.outer_bw.named("outer_bw."))
        out.update(self.outer_fuse.named("outer_fuse."))
        out.update(self.conv.named("conv."))
        return out


def init_matryoshka(rng, width, scales, n_state=16, conv_channels=4, selective=False,
                    share_inner=False, share_outer=True, inner_gate=True):
    inner = {}
    for o in scales:
        fw = init_ssm(rng, width, n_state, selective)
        bw = fw if share_inner else init_ssm(rng, width, n_state, selective)
        inner[o] = InnerParams(fw, bw, init_linear(rng, 2 * width, width))
        if inner_gate:
            inner[o].gate_fw = init_linear(rng, width, width)
            inner[o].gate_bw = inner[o].gate_fw if share_inner else init_linear(rng, width, width)
    outer = init_ssm(rng, width, n_state, selective)
    return MatryoshkaParams(
        scales=list(scales),
        inner=inner,
        outer=outer,
        outer_fuse=init_linear(rng, 2 * width, width),
        conv=init_conv_block(rng, conv_channels),
        outer_bw=None if share_outer else init_ssm(rng, width, n_state, selective),
    )


@dataclass
class BlockOptions:
    disable_inner: bool = False
    disable_outer: bool = False
    learnable_weights: bool = True
    fragmenting: str = "nonoverlap"  # or "sliding"


# ---------------------------------------------------------------------------


def _batched(x):
    x = ad.as_tensor(x)
    if x.ndim == 2:
        return ad.reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise ad.ShapeError(f"expected (F, D) or (B, F, D), got {x.shape}")
    return x, False


def _unbatch(y, squeeze):
    return ad.reshape(y, y.shape[1:]) if squeeze else y


def inner_module(fragment, params):
    """``fuse(concat(forward scan, backward scan))`` over the fragment's time axis.

    With gates present each direction is multiplied by ``silu(gate(fragment))``.
    """
    y_fw, y_bw = bidirectional_scan(params.fw, params.bw, fragment)
    if params.gate_fw is not None:
        y_fw = y_fw * ad.silu(params.gate_fw(fragment))
        y_bw = y_bw * ad.silu(params.gate_bw(fragment))
    return params.fuse(ad.concat([y_fw, y_bw], axis=-1))


def _check_fragment(x, o):
    if x.shape[-2] != o:
        raise ad.ShapeError(f"inner_module: fragment has {x.shape[-2]} frames, scale requires {o}")


def inner_module_checked(fragment, params, o):
    fragment = ad.as_tensor(fragment)
    _check_fragment(fragment, o)
    return inner_module(fragment, params)


def _sliding_average_matrix(frames, o):
    windows = frames - o + 1
    scatter = np.zeros((frames, windows * o))
    for i in range(windows):
        for j in range(o):
            scatter[i + j, i * o + j] = 1.0
    scatter /= scatter.sum(axis=1, keepdims=True)
    return scatter


def fragment_and_enhance(x, o, params, fragmenting="nonoverlap"):
    """Enhance every fragment with the scale-``o`` Inner Module and add the residual.

    ``nonoverlap`` splits into ``F / o`` consecutive fragments.  ``sliding``
    enhances every stride-1 window and averages the overlapping outputs per frame.
    """
    x, squeeze = _batched(x)
    nb, frames, width = x.shape
    if o >= frames:
        raise ValueError(f"scale {o} must be smaller than the frame count {frames}")
    if frames % o:
        raise ValueError(f"scale {o} does not divide the frame count {frames}")
    if fragmenting == "nonoverlap":
        frags = ad.reshape(x, (nb * frames // o, o, width))
        enhanced = ad.reshape(inner_module(frags, params), (nb, frames, width))
    elif fragmenting == "sliding":
        windows = frames - o + 1
        stacked = ad.concat([x[:, i:i + o] for i in range(windows)], axis=1)  # (B, W*o, D)
        frags = ad.reshape(stacked, (nb * windows, o, width))
        out = ad.reshape(inner_module(frags, params), (nb, windows * o, width))
        enhanced = Tensor._wrap(_sliding_average_matrix(frames, o)) @ out
    else:
        raise ValueError(f"unknown fragmenting mode {fragmenting!r}")
    return _unbatch(enhanced + x, squeeze)


def conv_block(x, params, training=True):
    """Three same-padded 3x3 convolutions (1 -> c -> c -> 1) and batch normalisation.

    Returns ``(output, (batch_mean, batch_var))``.  In training mode the
    statistics are taken over the whole batch map; otherwise the running
    statistics stored on ``params`` are used and the returned stats are None.
    """
    x, squeeze = _batched(x)
    nb, frames, width = x.shape
    z = ad.reshape(x, (nb, 1, frames, width))
    z = ad.conv2d(z, params.k1)
    z = ad.conv2d(z, params.k2)
    z = ad.conv2d(z, params.k3)
    z = ad.reshape(z, (nb, frames, width))
    if training:
        mu = ad.mean(z)
        centred = z - mu
        var = ad.mean(ad.square(centred))
        normed = centred / ad.sqrt(var + BN_EPS)
        stats = (float(mu.data), float(var.data))
    else:
        normed = (z - params.running_mean) * (1.0 / np.sqrt(params.running_var + BN_EPS))
        stats = None
    out = normed * params.gamma + params.beta
    return _unbatch(out, squeeze), stats


def update_running_stats(params, stats, momentum=BN_MOMENTUM):
    mu, var = stats
    params.running_mean = (1 - momentum) * params.running_mean + momentum * mu
    params.running_var = (1 - momentum) * params.running_var + momentum * var


def scale_weight(enhanced, x, params, training=True):
    """Gate ``sigmoid(conv_block(enhanced) + x)``; returns ``(gate, bn_stats)``."""
    enhanced, x = ad.as_tensor(enhanced), ad.as_tensor(x)
    if enhanced.shape != x.shape:
        raise ad.ShapeError(f"scale_weight: enhanced shape {enhanced.shape} differs from input shape {x.shape}")
    cb, stats = conv_block(enhanced, params, training)
    return ad.sigmoid(cb + x), stats


def outer_module(x, params):
    bw = params.outer_bw if params.outer_bw is not None else params.outer
    y_fw, y_bw = bidirectional_scan(params.outer, bw, x)
    return params.outer_fuse(ad.concat([y_fw, y_bw], axis=-1))


@dataclass
class BlockOutput:
    out: Tensor
    per_scale: dict = field(default_factory=dict)  # scale -> gated output
    gates: dict = field(default_factory=dict)  # scale -> gate
    bn_stats: list = field(default_factory=list)


def matryoshka_forward(x, params, options=None, training=True):
    """Average over scales of ``gate_o * OM(enhanced_o)``.

    Returns a :class:`BlockOutput`; ``out`` has the input's shape.
    """
    options = options or BlockOptions()
    x = ad.as_tensor(x)
    frames = x.shape[-2]
    scales = validate_scales(params.scales, frames)
    result = BlockOutput(out=None)
    total = None
    for o in scales:
        if options.disable_inner:
            enhanced = x
        else:
            enhanced = fragment_and_enhance(x, o, params.inner[o], options.fragmenting)
        om = enhanced if options.disable_outer else outer_module(enhanced, params)
        if options.learnable_weights:
            gate, stats = scale_weight(enhanced, x, params.conv, training)
            if stats is not None:
                result.bn_stats.append(stats)
            gated = gate * om
            result.gates[o] = gate
        else:
            gated = om
        result.per_scale[o] = gated
        total = gated if total is None else total + gated
    result.out = ad.scale(total, 1.0 / len(scales))
    return result
