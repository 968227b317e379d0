"""Run configuration: a line-oriented ``key = value`` file plus ``--key value`` overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from ..matryoshka import validate_scales
from ..model import ModelConfig
from ..tasks import EpisodeSpec, NoiseConfig

FRAGMENTING_MODES = ("nonoverlap", "sliding")
CONV_CHANNELS = 4
PROJ_DIM = 64


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    n_way: int = 5
    k_shot: int = 1
    q_per_class: int = 1
    frames: int = 32
    feat_dim: int = 16
    motif_len: int = 6
    noise_std: float = 0.8
    scales: tuple = (1, 2, 4)
    n_state: int = 16
    tau: float = 0.07
    lam: float = 4.0
    lr: float = 1e-3
    episodes: int = 3000
    eval_every: int = 250
    seed: int = 0
    frame_noise: int = 0
    sample_noise_ratio: float = 0.0
    gaussian_bg_std: float = 0.0
    reverse_support: bool = False
    disable_inner: bool = False
    disable_outer: bool = False
    disable_hc: bool = False
    fragmenting: str = "nonoverlap"
    selective: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.lam <= 0:
            raise ConfigError(f"lambda must be > 0, got {self.lam}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.episodes < 0 or self.eval_every < 0:
            raise ConfigError("episodes and eval_every must be non-negative")
        if self.n_state < 1:
            raise ConfigError(f"n_state must be >= 1, got {self.n_state}")
        if self.fragmenting not in FRAGMENTING_MODES:
            raise ConfigError(f"fragmenting must be one of {FRAGMENTING_MODES}, got {self.fragmenting!r}")
        try:
            self.episode_spec()
            self.noise().validate(self.frames)
            validate_scales(self.scales, self.frames)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def episode_spec(self, seed=None):
        return EpisodeSpec(n_way=self.n_way, k_shot=self.k_shot, q_per_class=self.q_per_class,
                           frames=self.frames, feat_dim=self.feat_dim, motif_len=self.motif_len,
                           noise_std=self.noise_std, seed=self.seed if seed is None else seed)

    def noise(self):
        return NoiseConfig(self.frame_noise, self.sample_noise_ratio, self.gaussian_bg_std, self.reverse_support)

    def model_config(self):
        return ModelConfig(feat_dim=self.feat_dim, scales=tuple(self.scales), n_state=self.n_state,
                           conv_channels=CONV_CHANNELS, proj_dim=PROJ_DIM, tau=self.tau, lam=self.lam,
                           selective=self.selective, disable_inner=self.disable_inner,
                           disable_outer=self.disable_outer, disable_hc=self.disable_hc,
                           fragmenting=self.fragmenting)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        lines = []
        for f in fields(self):
            lines.append(f"{_FILE_KEY.get(f.name, f.name)} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


# file key -> field name; "lambda" is a Python keyword
_FIELD = {f.name: f.name for f in fields(RunConfig)}
_FIELD["lambda"] = _FIELD.pop("lam")
_FILE_KEY = {v: k for k, v in _FIELD.items()}
CONFIG_KEYS = tuple(_FIELD)
_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_value(key, text):
    """Convert the textual value of file key ``key`` to its field type."""
    if key not in _FIELD:
        raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(CONFIG_KEYS)}")
    name = _FIELD[key]
    kind = _TYPES[name]
    text = text.strip()
    try:
        if kind is bool:
            return _parse_bool(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            return tuple(int(v) for v in text.split(",") if v.strip())
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines into ``{field name: value}``. ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = parse_value(key, value)
    return {_FIELD[k]: v for k, v in values.items()}


def parse_overrides(argv):
    """Turn ``['--key', 'value', ...]`` into ``{field name: value}``; unknown keys are errors."""
    out = {}
    i = 0
    while i < len(argv):
        tok = argv[i]
        if not tok.startswith("--"):
            raise ConfigError(f"expected --key, got {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(argv):
                raise ConfigError(f"missing value for {tok}")
            value = argv[i + 1]
            i += 2
        parsed = parse_value(key, value)
        out[_FIELD[key]] = parsed
    return out


def load_config(path=None, overrides=None, base=None):
    values = {}
    if path is not None:
        with open(path) as fh:
            values.update(parse_config_text(fh.read(), str(path)))
    values.update(overrides or {})
    try:
        return dataclasses.replace(base or RunConfig(), **values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
