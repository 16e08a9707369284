"""Run configuration: one flat key=value namespace covering every tunable.

Defaults marked "reference" follow the full-scale training recipe; "desk"
defaults are scaled down so the whole pipeline runs on one machine.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError
from .flowgen import SampleConfig, TrainConfig

# label -> shown by --print-config
_LABELS = {
    "scales": "desk", "base_period": "desk", "bins": "desk", "rhythm_dim": "desk",
    "hidden_w": "desk", "hidden_a": "desk",
    "fps": "desk", "joints": "desk", "coords": "desk", "duration_s": "reference",
    "amplitude": "desk", "noise_std": "desk", "beat_joint_fraction": "desk",
    "tempo_min": "desk", "tempo_max": "desk",
    "cond_len": "desk", "cond_dim": "desk",
    "latent_len": "desk", "latent_dim": "desk",
    "blocks": "desk", "hidden": "desk", "heads": "desk",
    "batch_size": "reference", "epochs": "reference", "learning_rate": "reference",
    "adam_beta1": "reference", "adam_beta2": "reference",
    "cond_drop_prob": "desk", "grad_clip": "desk",
    "rhythm_mode": "desk", "align_mode": "desk",
    "steps": "reference", "cfg_scale": "reference",
    "window_frames": "desk", "window_latent": "desk", "smooth_sigma": "desk",
    "min_separation": "desk", "rel_threshold": "desk",
    "seed": "desk",
}


@dataclass
class RunConfig:
    # rhythm extraction
    scales: int = 4
    base_period: float = 4.0
    bins: int = 8
    rhythm_dim: int = 64
    hidden_w: int = 16
    hidden_a: int = 16
    # synthetic benchmark
    fps: float = 30.0
    joints: int = 17
    coords: int = 2
    duration_s: float = 5.0
    amplitude: float = 0.1
    noise_std: float = 0.005
    beat_joint_fraction: float = 0.5
    tempo_min: float = 60.0
    tempo_max: float = 180.0
    cond_len: int = 10
    cond_dim: int = 8
    # latent timeline
    latent_len: int = 50
    latent_dim: int = 8
    # velocity field
    blocks: int = 2
    hidden: int = 64
    heads: int = 4
    # training
    batch_size: int = 4
    epochs: int = 100
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.95
    cond_drop_prob: float = 0.1
    grad_clip: float = 1.0
    rhythm_mode: str = "learned"
    align_mode: str = "attn"
    # sampling
    steps: int = 32
    cfg_scale: float = 4.0
    # evaluation
    window_frames: float = 3.0
    window_latent: float = 1.0
    smooth_sigma: float = 2.0
    min_separation: int = 4
    rel_threshold: float = 0.5
    # master seed
    seed: int = 0

    def __post_init__(self):
        # reuse the stricter validators of the owning types
        self.train_config()
        self.sample_config()
        if self.tempo_min <= 0 or self.tempo_max < self.tempo_min:
            raise ConfigError(f"bad tempo range [{self.tempo_min}, {self.tempo_max}]")
        if not 0 < self.beat_joint_fraction <= 1:
            raise ConfigError(f"beat_joint_fraction must be in (0, 1], got {self.beat_joint_fraction}")

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs,
            learning_rate=self.learning_rate, adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2, cond_drop_prob=self.cond_drop_prob,
            seed=self.seed, grad_clip=self.grad_clip,
            scales=self.scales, base_period=self.base_period, bins=self.bins,
            rhythm_dim=self.rhythm_dim, hidden_w=self.hidden_w, hidden_a=self.hidden_a,
            blocks=self.blocks, hidden=self.hidden, heads=self.heads,
            rhythm_mode=self.rhythm_mode, align_mode=self.align_mode,
        )

    def sample_config(self, seed: int | None = None) -> SampleConfig:
        return SampleConfig(steps=self.steps, cfg_scale=self.cfg_scale,
                            seed=self.seed if seed is None else seed)

    def to_text(self, labeled: bool = False) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            line = f"{f.name} = {v!r}"
            if labeled:
                line += f"  # {_LABELS.get(f.name, 'desk')} default"
            lines.append(line)
        return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    """Parse a key=value config file; unknown keys are rejected."""
    known = {f.name: f for f in fields(RunConfig)}
    kwargs = {}
    with open(path, encoding="utf-8") as f:
        for ln, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected 'key = value', got {raw.rstrip()!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path}:{ln}: unknown config key {key!r}")
            typ = type(getattr(RunConfig(), key))
            try:
                if typ is str:
                    # to_text() writes strings via repr, so accept quoted values
                    if len(val) >= 2 and val[0] == val[-1] and val[0] in "'\"":
                        val = val[1:-1]
                    kwargs[key] = val
                else:
                    kwargs[key] = typ(val)
            except ValueError as e:
                raise ConfigError(f"{path}:{ln}: bad value for {key}: {e}")
    return RunConfig(**kwargs)
