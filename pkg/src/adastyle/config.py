"""Plain-text run configuration: one ``key = value`` pair per line.

Covers the architecture knobs, loss weights, and training settings.
Unknown keys are rejected so typos fail loudly; a file written by
``dump-config`` reloads to an identical effective configuration.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .model import ArchConfig
from .training import LossWeights


@dataclass
class RunConfig:
    # architecture
    image_size: int = 32
    base_channels: int = 32
    down_blocks: int = 2
    translator_blocks: int = 6
    style_dim: int = 16
    latent_dim: int = 8
    num_domains: int = 2
    activation: str = "adarelu"
    structural_mode: str = "struconv"
    fixed_slope: float = 0.2
    adain_mode: str = "adain"
    # loss weights
    lambda_adv: float = 1.0
    lambda_sty: float = 1.0
    lambda_ds_initial: float = 2.0
    lambda_ds_final: float = 0.8
    lambda_cyc: float = 1.0
    r1_gamma: float = 1.0
    # training
    iterations: int = 5000
    batch_size: int = 8
    lr: float = 1e-4
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0

    def arch(self) -> ArchConfig:
        return ArchConfig(
            image_size=self.image_size,
            base_channels=self.base_channels,
            down_blocks=self.down_blocks,
            translator_blocks=self.translator_blocks,
            style_dim=self.style_dim,
            latent_dim=self.latent_dim,
            num_domains=self.num_domains,
            activation=self.activation,
            structural_mode=self.structural_mode,
            fixed_slope=self.fixed_slope,
            adain_mode=self.adain_mode,
        ).validate()

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda_adv=self.lambda_adv,
            lambda_sty=self.lambda_sty,
            lambda_ds_initial=self.lambda_ds_initial,
            lambda_ds_final=self.lambda_ds_final,
            lambda_cyc=self.lambda_cyc,
            r1_gamma=self.r1_gamma,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key, raw):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    return raw


def parse_config_text(text) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key: {key!r}")
        if key in values:
            raise ValueError(f"duplicate config key: {key!r}")
        values[key] = _parse_value(key, raw)
    cfg = RunConfig(**values)
    cfg.arch()  # validates architecture fields
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as f:
        return parse_config_text(f.read())


def dump_config(cfg: RunConfig, path):
    with open(path, "w") as f:
        for key, value in asdict(cfg).items():
            f.write(f"{key} = {value}\n")


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """Apply 'key=value' override strings (used by the CLI)."""
    values = asdict(cfg)
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"override must look like key=value, got {pair!r}")
        key, raw = (part.strip() for part in pair.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key: {key!r}")
        values[key] = _parse_value(key, raw)
    cfg = RunConfig(**values)
    cfg.arch()
    return cfg
