"""Configuration dataclasses for the restoration pipeline.

Defaults follow the full-scale recipe (banks 1024/16384, 8-frame clips,
lr 8e-5, batch 4, lambda 0.5). Toy-scale runs override via JSON config
files or the ``toy_*`` factories; the schema is one JSON object with keys
``codec``, ``predictor``, ``motion``, ``train`` and ``degradation``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any


@dataclass
class CodecConfig:
    """Encoder / vision-bank / generator hyperparameters."""

    latent_channels: int = 64
    downscale: int = 8
    bank_size_vision: int = 1024
    clip_frames: int = 8
    commitment_beta: float = 0.25
    in_channels: int = 3
    enc_channels: tuple[int, ...] = (32, 48, 64)
    dec_channels: tuple[int, ...] = (64, 48, 32)
    temporal_scales: int = 2  # coarsest generator scales that get 3D blocks + frame attention
    attn_heads: int = 4
    ema_bank: bool = False
    ema_decay: float = 0.99
    dead_code_steps: int = 2000

    def __post_init__(self) -> None:
        if self.downscale < 1 or self.downscale & (self.downscale - 1):
            raise ValueError("downscale must be a positive power of two")
        stages = self.downscale.bit_length() - 1
        if len(self.enc_channels) != stages or len(self.dec_channels) != stages:
            raise ValueError(
                f"enc_channels/dec_channels must have {stages} entries for downscale {self.downscale}"
            )
        if self.bank_size_vision < 2:
            raise ValueError("bank_size_vision must be >= 2")
        if self.latent_channels < 1 or self.clip_frames < 1:
            raise ValueError("latent_channels and clip_frames must be positive")


@dataclass
class PredictorConfig:
    """Index-prediction transformer hyperparameters."""

    d_model: int = 256
    predictor_blocks: int = 6
    heads: int = 8
    ffn_mult: int = 4
    mode: str = "spatial_temporal"  # or "spatial_only"

    def __post_init__(self) -> None:
        if self.predictor_blocks < 1:
            raise ValueError("predictor_blocks must be >= 1")
        if self.d_model % self.heads:
            raise ValueError("heads must divide d_model")
        if self.mode not in ("spatial_temporal", "spatial_only"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class MotionConfig:
    """Motion-statistics bank and fusion hyperparameters."""

    bank_size_motion: int = 16384
    modulation_variant: str = "adain_corrected"  # or "as_printed"
    epsilon: float = 1e-5
    fusion_blocks: int = 2
    fusion_heads: int = 4
    kmeans_iters: int = 50

    def __post_init__(self) -> None:
        if self.modulation_variant not in ("adain_corrected", "as_printed"):
            raise ValueError(f"unknown modulation_variant {self.modulation_variant!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.bank_size_motion < 1:
            raise ValueError("bank_size_motion must be >= 1")


@dataclass
class TrainConfig:
    """Optimization settings shared by stage-1 pretraining and stage-2 training."""

    lr: float = 8e-5
    batch_size: int = 4
    iterations: int = 2000  # full-scale recipe uses 200000
    lambda_bank: float = 0.5
    seed: int = 0
    clip_frames: int = 8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    gan_loss: str = "paper"  # or "nonsaturating"
    grad_clip: float = 1.0
    ckpt_every: int = 500
    pretrain_lr: float = 1e-3
    pretrain_iterations: int = 2000
    perceptual_seed: int = 77

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.pretrain_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if self.lambda_bank < 0:
            raise ValueError("lambda_bank must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.gan_loss not in ("paper", "nonsaturating"):
            raise ValueError(f"unknown gan_loss {self.gan_loss!r}")


@dataclass
class DegradationConfig:
    """Base sampling ranges for the blur/downsample/noise/JPEG pipeline.

    These are the *base* ranges; per-clip parameters are drawn from the
    bracket-expanded intervals (see ``DegradationRanges.from_base``).
    """

    rho: tuple[float, float] = (1.0, 10.0)
    b: tuple[float, float] = (2.0, 32.0)
    sigma: tuple[float, float] = (0.0, 10.0)
    w: tuple[int, int] = (50, 100)
    seed: int = 0


@dataclass
class PipelineConfig:
    codec: CodecConfig = field(default_factory=CodecConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        """Stable hash of the configuration actually in effect."""
        blob = json.dumps(self.to_dict(), sort_keys=True, default=_jsonable)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, default=_jsonable))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PipelineConfig":
        sections = {
            "codec": CodecConfig,
            "predictor": PredictorConfig,
            "motion": MotionConfig,
            "train": TrainConfig,
            "degradation": DegradationConfig,
        }
        kwargs = {}
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        for name, klass in sections.items():
            section = dict(data.get(name, {}))
            bad = set(section) - {f for f in klass.__dataclass_fields__}
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            for key, value in section.items():
                if isinstance(value, list):
                    section[key] = tuple(value)
            try:
                kwargs[name] = klass(**section)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid [{name}] config: {exc}") from exc
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(data)

    def override(self, **sections: dict[str, Any]) -> "PipelineConfig":
        """Return a copy with per-section field overrides applied."""
        out = self
        for name, fields in sections.items():
            if fields:
                out = replace(out, **{name: replace(getattr(out, name), **fields)})
        return out


class ConfigError(ValueError):
    """Raised for malformed configuration files or values (CLI exit code 3)."""


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON-serializable: {obj!r}")


def toy_config(size: int = 64, seed: int = 0) -> PipelineConfig:
    """Desk-scale configuration used by the bundled synthetic benchmark.

    Sized so stage-1 + stage-2 (2000 steps each) complete on a 2-thread CPU.
    """
    if size % 8:
        raise ValueError("toy size must be divisible by 8")
    return PipelineConfig(
        codec=CodecConfig(
            latent_channels=64,
            downscale=8,
            bank_size_vision=192,
            enc_channels=(24, 48, 64),
            dec_channels=(64, 48, 32),
            dead_code_steps=250,
        ),
        predictor=PredictorConfig(d_model=96, predictor_blocks=3, heads=4),
        motion=MotionConfig(bank_size_motion=64, fusion_blocks=2, fusion_heads=4),
        train=TrainConfig(batch_size=2, iterations=2000, pretrain_iterations=2000, seed=seed),
        degradation=DegradationConfig(rho=(1.5, 2.5), b=(2.0, 3.0), sigma=(4.0, 7.0), w=(60, 80), seed=seed),
    )
