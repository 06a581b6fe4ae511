"""Flat ``section.key = value`` experiment configuration.

Every key, its type and default:

========================== ======= =========================================
key                        type    default
========================== ======= =========================================
seed                       int     0 (overridden by ``FEDTAB_SEED``)
data.path                  str     "" (series file, or ``.csv`` tabular file)
data.synth                 str     "blobs" (used when ``data.path`` is empty)
split.train                float   0.10
split.pool                 float   0.60
split.val                  float   0.10
split.test                 float   0.20
split.stratified           bool    true
federation.n_clients       int     2
federation.clients_per_round int   n_clients
federation.rounds          int     100
federation.instances_per_round int 10
federation.local_epochs    int     5
federation.batch_size      int     32
federation.parallel        bool    false
model.n_d                  int     5
model.n_a                  int     5
model.n_steps              int     3
model.gamma                float   1.3
model.lambda_sparse        float   0.001
model.bn_momentum          float   0.1
model.epsilon              float   1e-15
model.lr                   float   0.02
output.history_path        str     "history.jsonl"
output.checkpoint_every    int     0 (no checkpoints)
output.checkpoint_dir      str     "checkpoints"
========================== ======= =========================================
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .data import ROAD_DATASETS, SplitSpec
from .federation import RoundConfig
from .model import TabNetConfig

SYNTH_PRESETS = ("blobs", "series", *ROAD_DATASETS)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class DataSection:
    path: str = ""
    synth: str = "blobs"


@dataclass(frozen=True)
class SplitSection:
    train: float = 0.10
    pool: float = 0.60
    val: float = 0.10
    test: float = 0.20
    stratified: bool = True


@dataclass(frozen=True)
class FederationSection:
    n_clients: int = 2
    clients_per_round: int | None = None
    rounds: int = 100
    instances_per_round: int = 10
    local_epochs: int = 5
    batch_size: int = 32
    parallel: bool = False


@dataclass(frozen=True)
class ModelSection:
    n_d: int = 5
    n_a: int = 5
    n_steps: int = 3
    gamma: float = 1.3
    lambda_sparse: float = 1e-3
    bn_momentum: float = 0.1
    epsilon: float = 1e-15
    lr: float = 0.02


@dataclass(frozen=True)
class OutputSection:
    history_path: str = "history.jsonl"
    checkpoint_every: int = 0
    checkpoint_dir: str = "checkpoints"


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    data: DataSection = DataSection()
    split: SplitSection = SplitSection()
    federation: FederationSection = FederationSection()
    model: ModelSection = ModelSection()
    output: OutputSection = OutputSection()

    def split_spec(self) -> SplitSpec:
        s = self.split
        return SplitSpec(s.train, s.pool, s.val, s.test)

    def round_config(self) -> RoundConfig:
        f = self.federation
        return RoundConfig(
            n_clients=f.n_clients,
            clients_per_round=f.clients_per_round,
            instances_per_round=f.instances_per_round,
            local_epochs=f.local_epochs,
            batch_size=f.batch_size,
            total_rounds=f.rounds,
            lr=self.model.lr,
            parallel=f.parallel,
        )

    def model_config(self, input_dim: int, n_classes: int) -> TabNetConfig:
        m = self.model
        return TabNetConfig(
            input_dim, n_classes, m.n_d, m.n_a, m.n_steps, m.gamma, m.lambda_sparse, m.bn_momentum, m.epsilon
        )

    def to_text(self) -> str:
        """Normalized form listing every key; parses back to an equal config."""
        lines = [f"seed = {self.seed}"]
        for section in ("data", "split", "federation", "model", "output"):
            obj = getattr(self, section)
            for f in fields(obj):
                value = getattr(obj, f.name)
                if value is None:
                    continue
                if isinstance(value, bool):
                    value = "true" if value else "false"
                lines.append(f"{section}.{f.name} = {value}")
        return "\n".join(lines) + "\n"


_SECTIONS = {f.name: f for f in fields(ExperimentConfig) if f.name != "seed"}


def _coerce(key: str, raw: str, kind: str):
    try:
        if kind in ("bool",):
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if kind in ("int", "int | None"):
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.split()[0]}") from None


def parse_config_text(text: str) -> ExperimentConfig:
    values: dict[str, dict[str, object]] = {name: {} for name in _SECTIONS}
    seed = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key == "seed":
            seed = _coerce(key, value, "int")
            continue
        section, _, name = key.partition(".")
        if section not in _SECTIONS:
            raise ConfigError(f"{key}: unknown key")
        section_fields = {f.name: f for f in fields(_SECTIONS[section].default)}
        if name not in section_fields:
            raise ConfigError(f"{key}: unknown key")
        values[section][name] = _coerce(key, value, str(section_fields[name].type))

    env_seed = os.environ.get("FEDTAB_SEED")
    if env_seed:
        seed = _coerce("FEDTAB_SEED", env_seed, "int")
    cfg = ExperimentConfig(
        seed=seed, **{name: replace(_SECTIONS[name].default, **vals) for name, vals in values.items()}
    )
    validate(cfg)
    return cfg


def parse_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text)


def validate(cfg: ExperimentConfig) -> None:
    """Check every module precondition that does not need the data itself."""
    if cfg.seed < 0:
        raise ConfigError("seed: must be non-negative")
    if not cfg.data.path and cfg.data.synth not in SYNTH_PRESETS:
        raise ConfigError(f"data.synth: unknown preset {cfg.data.synth!r} (choose from {', '.join(SYNTH_PRESETS)})")
    if cfg.data.path and not Path(cfg.data.path).is_file():
        raise ConfigError(f"data.path: file not found: {cfg.data.path}")
    try:
        cfg.split_spec()
    except ValueError as exc:
        raise ConfigError(f"split: {exc}") from None
    f = cfg.federation
    checks = [
        ("federation.n_clients", f.n_clients >= 1, "must be >= 1"),
        ("federation.clients_per_round",
         f.clients_per_round is None or 1 <= f.clients_per_round <= f.n_clients,
         f"must be in 1..n_clients ({f.n_clients})"),
        ("federation.rounds", f.rounds >= 1, "must be >= 1"),
        ("federation.instances_per_round", f.instances_per_round >= 0, "must be >= 0"),
        ("federation.local_epochs", f.local_epochs >= 0, "must be >= 0"),
        ("federation.batch_size", f.batch_size >= 1, "must be >= 1"),
        ("model.n_d", cfg.model.n_d >= 1, "must be >= 1"),
        ("model.n_a", cfg.model.n_a >= 1, "must be >= 1"),
        ("model.n_steps", cfg.model.n_steps >= 1, "must be >= 1"),
        ("model.gamma", cfg.model.gamma >= 1.0, "must be >= 1"),
        ("model.lambda_sparse", cfg.model.lambda_sparse >= 0.0, "must be >= 0"),
        ("model.bn_momentum", 0.0 < cfg.model.bn_momentum <= 1.0, "must be in (0, 1]"),
        ("model.epsilon", cfg.model.epsilon > 0.0, "must be > 0"),
        ("model.lr", cfg.model.lr > 0.0, "must be > 0"),
        ("output.checkpoint_every", cfg.output.checkpoint_every >= 0, "must be >= 0"),
        ("output.history_path", bool(cfg.output.history_path), "must not be empty"),
    ]
    for key, ok, message in checks:
        if not ok:
            raise ConfigError(f"{key}: {message}")
