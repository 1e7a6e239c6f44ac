"""Run configuration: one JSON document, strict keys, documented defaults.

Unknown keys are rejected at every nesting level so a typo fails fast instead
of silently falling back to a default. CLI flags override file values.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

ABLATIONS = ("lstm-off", "gan-off", "hardneg-off", "per-proposal-embed")


class GeometryConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    exemplar_size: int = 71
    search_size: int = 199
    context: float = 0.2
    scale_factors: list[float] = [0.964, 1.0, 1.0375]
    scale_penalty: float = 1.0
    k_bias: float = 0.0


class EmbeddingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    channels: list[int] = [8, 16, 16]
    weights_path: str | None = None


class LstmSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")
    units: int = Field(128, ge=1, le=4096)
    layers: int = Field(2, ge=1, le=4)
    lr: float = 1e-3
    init_iterations: int = 100
    init_loss_target: float = 0.01  # early stop for first-frame training
    update_iterations: int = 1


class GanSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")
    noise_dim: int = 32
    patch_size: int = 32
    g_channels: list[int] = [12, 12]
    d_channels: list[int] = [8, 16]
    lr: float = 2e-3
    beta1: float = 0.5
    batch_size: int = 16
    init_steps: int = 200
    update_steps: int = 20
    samples_per_update: int = 64
    bank_capacity: int = 256


class SamplerSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")
    n_pos: int = 32
    n_neg: int = 96
    sigma_xy: float = 0.1
    sigma_scale: float = 0.2
    neg_sigma_xy: float = 0.6
    neg_sigma_scale: float = 0.3
    pos_iou_min: float = 0.7
    neg_iou_max: float = 0.3
    hard_negatives: int = 16
    attempt_factor: int = 50


class TrackerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    seed: int = 7
    n_proposals: int = Field(64, ge=1)
    update_threshold: float = Field(0.6, gt=0.0, lt=1.0)
    box_smoothing: float = Field(0.0, ge=0.0, lt=1.0)
    ablations: list[str] = []
    geometry: GeometryConfig = GeometryConfig()
    embedding: EmbeddingConfig = EmbeddingConfig()
    lstm: LstmSettings = LstmSettings()
    gan: GanSettings = GanSettings()
    sampler: SamplerSettings = SamplerSettings()

    def model_post_init(self, _ctx) -> None:
        for a in self.ablations:
            if a not in ABLATIONS:
                raise ValueError(f"unknown ablation {a!r}; choose from {ABLATIONS}")

    @property
    def lstm_enabled(self) -> bool:
        return "lstm-off" not in self.ablations

    @property
    def gan_enabled(self) -> bool:
        return "gan-off" not in self.ablations

    @property
    def hardneg_enabled(self) -> bool:
        return "hardneg-off" not in self.ablations

    @property
    def per_proposal_embed(self) -> bool:
        return "per-proposal-embed" in self.ablations


class RunConfig(TrackerConfig):
    """Tracker settings plus dataset paths, output location and mode flags."""

    sequences: list[str] = []
    output_dir: str | None = None
    workers: int = Field(1, ge=1)
    dump_gan_samples: bool = False

    def tracker_config(self) -> TrackerConfig:
        return TrackerConfig(**{k: getattr(self, k) for k in TrackerConfig.model_fields})


def load_run_config(path: str | Path) -> RunConfig:
    return RunConfig.model_validate_json(Path(path).read_text())


def default_run_config() -> RunConfig:
    return RunConfig()


def seed_for_sequence(seed: int, name: str) -> int:
    """Stable per-sequence seed, independent of worker scheduling."""
    ss = np.random.SeedSequence([seed, zlib.crc32(name.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))


def dump_config(config: BaseModel) -> dict:
    return json.loads(config.model_dump_json())
