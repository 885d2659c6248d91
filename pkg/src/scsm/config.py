"""Flat ``key = value`` run configuration.

One small text file drives every command-line run.  It parses into a
RunConfig, re-serializes in a canonical form, and hashes; the hash is embedded
in every ledger row so a row can always be traced back to the exact
configuration that produced it (the serialized file is dropped next to the
ledger under ``configs/``).

Format rules: one ``key = value`` pair per line, ``#`` starts a full-line
comment, blank lines are ignored.  Unknown keys, duplicate keys, and malformed
lines are hard errors — a typo must never silently fall back to a default.
"""

import hashlib
import os
from dataclasses import dataclass, fields, replace

from .backbone import ModelConfig
from .harness import TrainConfig
from .shapes import EpisodeSet, default_roster

ENV_OUTPUT_ROOT = "SCSM_OUTPUT_ROOT"

_STAGES = ("novel", "gfsod")
_VARIANTS = ("baseline", "sfm", "csm", "sfm_csm")
_DT_READINGS = ("spectral_radius", "min_magnitude")
_SCANS = ("sequential", "parallel")

_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # run identity
    stage: str = "novel"          # fine-tune flavour / eval split: novel | gfsod
    variant: str = "sfm_csm"
    seeds: tuple = (0, 1, 2, 3, 4)
    ks: tuple = (1, 2, 5, 10)
    seed: int = 0                 # master seed: data streams + base training
    # model
    c_e_ratio: int = 4
    heads: int = 2
    p: int = 8
    d: int = 0                    # ssm state width; 0 = twice the pooled length
    conv_k: int = 4
    scale_scores: bool = True
    square_input: bool = False
    dt_reading: str = "spectral_radius"
    a_trainable: bool = False
    scan_variant: str = "sequential"
    # training
    base_steps: int = 2400
    novel_steps: int = 800
    batch_size: int = 16
    base_lr: float = 0.01
    novel_lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 1e-4
    # data
    n_base: int = 200
    n_eval: int = 100
    k_shots: int = 10
    # probe / retention
    probe_stage: int = -1
    probe_steps: int = 300
    probe_lr: float = 0.01
    qs: tuple = (100, 80, 70, 60, 50)
    top_k: int = 8
    # orchestration
    workers: int = 0              # 0 = one worker per ablation variant
    out_dir: str = "runs"

    def __post_init__(self):
        _enum("stage", self.stage, _STAGES)
        _enum("variant", self.variant, _VARIANTS)
        _enum("dt_reading", self.dt_reading, _DT_READINGS)
        _enum("scan_variant", self.scan_variant, _SCANS)
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if not self.ks or any(k < 1 for k in self.ks):
            raise ConfigError(f"ks must be positive shot counts, got {self.ks}")
        if not self.qs:
            raise ConfigError("qs must not be empty")


def _enum(key, value, allowed):
    if value not in allowed:
        raise ConfigError(f"{key} must be one of {', '.join(allowed)}; got {value!r}")


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(key, text, default):
    text = text.strip()
    if isinstance(default, bool):           # bool is an int subtype: check first
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    if isinstance(default, tuple):
        if not text:
            raise ConfigError(f"{key}: expected a comma-separated integer list")
        try:
            return tuple(int(part.strip()) for part in text.split(","))
        except ValueError:
            raise ConfigError(f"{key}: expected a comma-separated integer list, got {text!r}") from None
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {text!r}") from None
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    return text


def parse_config(text):
    """Parse flat key = value text into a RunConfig."""
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        field = _FIELDS.get(key)
        if field is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen[key] = _parse_value(key, value, field.default)
    return RunConfig(**seen)


def serialize_config(cfg):
    """Canonical text form: every field, declaration order, one per line."""
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, tuple):
            s = ",".join(str(x) for x in v)
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        lines.append(f"{f.name} = {s}")
    return "\n".join(lines) + "\n"


def config_hash(cfg):
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:12]


def override(cfg, **raw):
    """Apply raw string overrides (config-file value syntax); None is skipped."""
    vals = {}
    for key, text in raw.items():
        if text is None:
            continue
        field = _FIELDS.get(key)
        if field is None:
            raise ConfigError(f"unknown config key {key!r}")
        vals[key] = _parse_value(key, text, field.default)
    return replace(cfg, **vals) if vals else cfg


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None


def save_config(path, cfg):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))


def output_root(cfg):
    """Declared output directory; the environment variable wins if set."""
    return os.environ.get(ENV_OUTPUT_ROOT) or cfg.out_dir


# ------------------------------------------------- bridges to module configs

def model_config(cfg, n_classes=12):
    return ModelConfig(variant=cfg.variant, n_classes=n_classes, heads=cfg.heads,
                       c_e_ratio=cfg.c_e_ratio, p=cfg.p, d=cfg.d,
                       conv_k=cfg.conv_k, scale_scores=cfg.scale_scores,
                       square_input=cfg.square_input, dt_reading=cfg.dt_reading,
                       a_trainable=cfg.a_trainable)


def train_config(cfg):
    return TrainConfig(base_steps=cfg.base_steps, novel_steps=cfg.novel_steps,
                       batch_size=cfg.batch_size, base_lr=cfg.base_lr,
                       novel_lr=cfg.novel_lr, momentum=cfg.momentum,
                       weight_decay=cfg.weight_decay, scan_variant=cfg.scan_variant)


def episode_spec(cfg):
    base, novel = default_roster()
    return EpisodeSet(base_classes=base, novel_classes=novel, n_base=cfg.n_base,
                      k_shots=cfg.k_shots, n_eval=cfg.n_eval, seed=cfg.seed)
