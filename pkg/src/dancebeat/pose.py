"""Pose ingestion, motion differencing, and the synthetic benchmark generator.

The synthetic generator produces dance clips with known kinematic beats
(motion-magnitude minima) plus matching pulse-train latents, giving the
rest of the pipeline a ground truth to be verified against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError


@dataclass
class PoseSequence:
    """T x J x C keypoint trajectory at a fixed frame rate."""

    data: np.ndarray
    fps: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ConfigError(f"pose data must be T x J x C, got shape {self.data.shape}")
        T, J, C = self.data.shape
        if T < 2 or J < 1 or C not in (2, 3):
            raise ConfigError(f"invalid pose shape T={T} J={J} C={C}")
        if not np.isfinite(self.data).all():
            raise ConfigError("pose data contains non-finite values")
        if not self.fps > 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def joints(self) -> int:
        return self.data.shape[1]

    @property
    def coords(self) -> int:
        return self.data.shape[2]


@dataclass
class MotionField:
    """Frame-to-frame displacements and their per-joint speeds."""

    diffs: np.ndarray      # (T-1, J, C)
    magnitude: np.ndarray  # (T-1, J)


@dataclass
class BeatGrid:
    """Strictly increasing beat frame indices on a fixed timeline."""

    beat_frames: list[int]
    timeline_len: int
    fps: float

    def __post_init__(self):
        self.beat_frames = [int(f) for f in self.beat_frames]
        prev = -1
        for f in self.beat_frames:
            if not (0 <= f < self.timeline_len):
                raise ConfigError(f"beat frame {f} outside [0, {self.timeline_len})")
            if f <= prev:
                raise ConfigError("beat frames must be strictly increasing")
            prev = f


@dataclass
class ConditioningFeatures:
    """Precomputed or synthetic per-frame conditioning vectors (T_v x D_v)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ConfigError(f"conditioning must be T_v x D_v, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ConfigError("conditioning contains non-finite values")


@dataclass
class MusicLatent:
    """T_m x d latent sequence; the generation target."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ConfigError(f"latent must be T_m x d, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ConfigError("latent contains non-finite values")


# ---------------------------------------------------------------------------
# motion


def motion_diff(p: PoseSequence) -> MotionField:
    """Frame-wise displacement and its per-joint euclidean magnitude."""
    diffs = p.data[1:] - p.data[:-1]
    magnitude = np.linalg.norm(diffs, axis=2)
    return MotionField(diffs=diffs, magnitude=magnitude)


def local_minima(signal: np.ndarray) -> list[int]:
    """Interior local minima; two-sample plateaus resolve to the left index."""
    out = []
    n = signal.size
    for t in range(1, n - 1):
        if signal[t] < signal[t - 1] and signal[t] <= signal[t + 1]:
            out.append(t)
    return out


# ---------------------------------------------------------------------------
# synthetic benchmark


def synth_dance(
    tempo_bpm: float,
    duration_s: float,
    fps: float,
    joints: int,
    amplitude: float = 0.1,
    noise_std: float = 0.0,
    seed: int = 0,
    beat_joint_fraction: float = 0.5,
    coords: int = 2,
) -> tuple[PoseSequence, BeatGrid]:
    """Deterministic synthetic dance clip plus its ground-truth beat grid.

    A subset of joints oscillates with period 60*fps/tempo frames (shared
    phase, per-joint direction); the rest drift at constant velocity so
    joint weighting has something to suppress. Beats are the interior
    minima of the noise-free summed motion magnitude.
    """
    if tempo_bpm <= 0:
        raise ConfigError(f"tempo must be positive, got {tempo_bpm}")
    T = int(round(duration_s * fps))
    if T < 2:
        raise ConfigError(f"duration {duration_s}s at {fps} fps yields T={T} < 2")
    rng = np.random.default_rng(seed)
    period = 60.0 * fps / tempo_bpm
    n_beat = max(1, int(round(beat_joint_fraction * joints)))

    t = np.arange(T, dtype=np.float64)
    phase0 = math.floor(period / 2) + 0.5
    osc = amplitude * np.cos(math.pi * (t - phase0) / period)  # (T,)

    centers = rng.uniform(0.25, 0.75, size=(joints, coords))
    data = np.broadcast_to(centers, (T, joints, coords)).copy()

    # beat-carrying joints: shared-phase oscillation along a random unit direction
    dirs = rng.standard_normal((n_beat, coords))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    scale = rng.uniform(0.6, 1.0, size=(n_beat, 1))
    data[:, :n_beat, :] += osc[:, None, None] * (dirs * scale)[None, :, :]

    # drifting joints: constant velocity, so their speed is flat over time
    if joints > n_beat:
        vel = rng.standard_normal((joints - n_beat, coords))
        vel *= amplitude / (2.0 * T) / np.maximum(np.linalg.norm(vel, axis=1, keepdims=True), 1e-12)
        data[:, n_beat:, :] += t[:, None, None] * vel[None, :, :]

    clean = PoseSequence(data=data.copy(), fps=fps)
    mag = motion_diff(clean).magnitude[:, :n_beat].sum(axis=1)
    beats = local_minima(mag)
    grid = BeatGrid(beat_frames=beats, timeline_len=T, fps=fps)

    if noise_std > 0:
        data = data + rng.normal(0.0, noise_std, size=data.shape)
    return PoseSequence(data=data, fps=fps), grid


def map_to_latent(grid: BeatGrid, latent_len: int) -> list[int]:
    """Rescale beat frames onto a latent timeline by nearest-index rounding.

    Monotone; collisions merge into a single index. The top edge is
    clamped so rounding can never leave the timeline.
    """
    out: list[int] = []
    for f in grid.beat_frames:
        i = int(math.floor(f * latent_len / grid.timeline_len + 0.5))
        i = min(i, latent_len - 1)
        if not out or i != out[-1]:
            out.append(i)
    return out


def synth_latent(
    beats: BeatGrid,
    latent_len: int,
    dim: int,
    seed: int = 0,
    pulse_sigma: float = 1.0,
    noise_amp: float = 0.1,
) -> MusicLatent:
    """Pulse-train latent: channel 0 carries unit-height smoothed pulses at
    the rescaled beat indices, remaining channels are low-amplitude noise.
    """
    if latent_len < 1 or dim < 1:
        raise ConfigError(f"latent shape must be positive, got ({latent_len}, {dim})")
    rng = np.random.default_rng(seed)
    data = np.zeros((latent_len, dim))
    if dim > 1:
        data[:, 1:] = noise_amp * rng.standard_normal((latent_len, dim - 1))
    idx = np.arange(latent_len, dtype=np.float64)
    for i in map_to_latent(beats, latent_len):
        bump = np.exp(-0.5 * ((idx - i) / pulse_sigma) ** 2)
        data[:, 0] = np.maximum(data[:, 0], bump)
    return MusicLatent(data=data)


def synth_conditioning(length: int, dim: int, seed: int = 0) -> ConditioningFeatures:
    """Seeded stand-in for precomputed video features."""
    rng = np.random.default_rng(seed)
    return ConditioningFeatures(data=rng.standard_normal((length, dim)))


# ---------------------------------------------------------------------------
# text formats
#
# Pose file: line 1 header "T J C fps", then T lines of J*C decimals.
# Conditioning file: line 1 "T_v D_v", then T_v lines of D_v decimals.
# BeatGrid file: line 1 "timeline_len fps", line 2 space-separated frames.
# Latent file: line 1 "T_m d", then T_m lines of d decimals.


def _fmt_row(row: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in row)


def _parse_floats(text: str, n: int, line_no: int, what: str) -> np.ndarray:
    parts = text.split()
    if len(parts) != n:
        raise ParseError(f"{what}: expected {n} values, found {len(parts)}", line=line_no)
    try:
        vals = np.array([float(p) for p in parts])
    except ValueError as e:
        raise ParseError(f"{what}: {e}", line=line_no)
    if not np.isfinite(vals).all():
        raise ParseError(f"{what}: non-finite value", line=line_no)
    return vals


def save_pose_sequence(p: PoseSequence, path) -> None:
    T, J, C = p.data.shape
    lines = [f"{T} {J} {C} {repr(float(p.fps))}"]
    for t in range(T):
        lines.append(_fmt_row(p.data[t].reshape(-1)))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_pose_sequence(path, fps: float | None = None) -> PoseSequence:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError("empty pose file", line=1)
    head = lines[0].split()
    if len(head) != 4:
        raise ParseError("header must be 'T J C fps'", line=1)
    try:
        T, J, C = int(head[0]), int(head[1]), int(head[2])
        file_fps = float(head[3])
    except ValueError as e:
        raise ParseError(f"bad header: {e}", line=1)
    if T < 2:
        raise ParseError(f"pose sequence needs T >= 2 frames, header says T={T}", line=1)
    if len(lines) < 1 + T:
        raise ParseError(f"expected {T} frame lines, file has {len(lines) - 1}", line=len(lines))
    data = np.empty((T, J, C))
    for t in range(T):
        row = _parse_floats(lines[1 + t], J * C, 2 + t, f"frame {t}")
        data[t] = row.reshape(J, C)
    return PoseSequence(data=data, fps=fps if fps is not None else file_fps)


def save_conditioning(c: ConditioningFeatures, path) -> None:
    T_v, D_v = c.data.shape
    lines = [f"{T_v} {D_v}"] + [_fmt_row(c.data[t]) for t in range(T_v)]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_conditioning(path) -> ConditioningFeatures:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError("empty conditioning file", line=1)
    head = lines[0].split()
    if len(head) != 2:
        raise ParseError("header must be 'T_v D_v'", line=1)
    T_v, D_v = int(head[0]), int(head[1])
    if len(lines) < 1 + T_v:
        raise ParseError(f"expected {T_v} rows, file has {len(lines) - 1}", line=len(lines))
    data = np.empty((T_v, D_v))
    for t in range(T_v):
        data[t] = _parse_floats(lines[1 + t], D_v, 2 + t, f"row {t}")
    return ConditioningFeatures(data=data)


def save_beat_grid(g: BeatGrid, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{g.timeline_len} {repr(float(g.fps))}\n")
        f.write(" ".join(str(b) for b in g.beat_frames) + "\n")


def load_beat_grid(path) -> BeatGrid:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError("empty beat-grid file", line=1)
    head = lines[0].split()
    if len(head) != 2:
        raise ParseError("header must be 'timeline_len fps'", line=1)
    frames = [int(x) for x in lines[1].split()] if len(lines) > 1 else []
    return BeatGrid(beat_frames=frames, timeline_len=int(head[0]), fps=float(head[1]))


def save_latent(z: MusicLatent, path) -> None:
    T_m, d = z.data.shape
    lines = [f"{T_m} {d}"] + [_fmt_row(z.data[t]) for t in range(T_m)]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_latent(path) -> MusicLatent:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError("empty latent file", line=1)
    head = lines[0].split()
    if len(head) != 2:
        raise ParseError("header must be 'T_m d'", line=1)
    T_m, d = int(head[0]), int(head[1])
    if len(lines) < 1 + T_m:
        raise ParseError(f"expected {T_m} rows, file has {len(lines) - 1}", line=len(lines))
    data = np.empty((T_m, d))
    for t in range(T_m):
        data[t] = _parse_floats(lines[1 + t], d, 2 + t, f"row {t}")
    return MusicLatent(data=data)
