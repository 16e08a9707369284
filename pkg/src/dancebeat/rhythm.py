"""Fine-grained rhythm extraction from skeleton motion.

Pipeline per clip: frame-wise motion magnitudes are analyzed with a bank
of real Gabor wavelets (multi-scale temporal view), joints are reweighted
by a small shared MLP, direction-of-motion phase histograms add a spatial
view, and a gated linear fusion produces a T x D rhythm embedding whose
last frame is repeated to restore the original clip length.

All learnable paths run on `tensor.Tensor` so the embedding is
differentiable with respect to every parameter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .errors import ConfigError
from .pose import MotionField, PoseSequence, motion_diff
from .tensor import Tensor


@dataclass
class WaveletBank:
    """Real cosine-phase Gabor kernels on a dyadic period ladder."""

    scales: int
    base_period: float
    kernels: list[np.ndarray]
    periods: list[float]


def build_wavelet_bank(scales: int, base_period: float) -> WaveletBank:
    """Kernels with period base_period * 2^(s-1), sigma = period/2,
    truncated at +-ceil(3 sigma), mean-subtracted then L2-normalized."""
    if scales < 1:
        raise ConfigError(f"need at least one scale, got {scales}")
    if base_period < 2:
        raise ConfigError(f"base period must be >= 2 frames (sub-Nyquist), got {base_period}")
    kernels, periods = [], []
    for s in range(scales):
        lam = base_period * 2.0 ** s
        sigma = lam / 2.0
        half = int(math.ceil(3.0 * sigma))
        u = np.arange(-half, half + 1, dtype=np.float64)
        k = np.exp(-(u ** 2) / (2.0 * sigma ** 2)) * np.cos(2.0 * math.pi * u / lam)
        k -= k.mean()
        k /= np.linalg.norm(k)
        kernels.append(k)
        periods.append(lam)
    return WaveletBank(scales=scales, base_period=base_period, kernels=kernels, periods=periods)


@dataclass
class RhythmParams:
    """Learnable parameters: per-joint weight net, fusion projection, gate net."""

    scales: int
    bins: int
    dim: int
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    fuse_w: Tensor
    fuse_b: Tensor
    a1: Tensor
    ab1: Tensor
    a2: Tensor
    ab2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, scales: int, bins: int, dim: int,
             hidden_w: int = 16, hidden_a: int = 16) -> "RhythmParams":
        fin = 1 + scales
        fuse_in = bins * scales + scales
        return cls(
            scales=scales, bins=bins, dim=dim,
            w1=tz.init_uniform(rng, (fin, hidden_w), fin),
            b1=tz.zeros(hidden_w),
            w2=tz.init_uniform(rng, (hidden_w, 1), hidden_w),
            b2=tz.zeros(1),
            fuse_w=tz.init_uniform(rng, (fuse_in, dim), fuse_in),
            fuse_b=tz.zeros(dim),
            a1=tz.init_uniform(rng, (dim, hidden_a), dim),
            ab1=tz.zeros(hidden_a),
            a2=tz.init_uniform(rng, (hidden_a, 1), hidden_a),
            ab2=tz.zeros(1),
        )

    def tensors(self) -> list[tuple[str, Tensor]]:
        return [(n, getattr(self, n)) for n in
                ("w1", "b1", "w2", "b2", "fuse_w", "fuse_b", "a1", "ab1", "a2", "ab2")]


@dataclass
class ClipRhythmFeatures:
    """Pose-derived constants reused across training steps for one clip.

    Gradients never flow into these; they are functions of the input pose
    and the fixed wavelet bank only.
    """

    magnitude: np.ndarray   # (T-1, J)
    wavelet: np.ndarray     # (T-1, J, S) signed responses of the magnitude signal
    mx: np.ndarray          # (T-1, J, S) filtered x displacement
    my: np.ndarray          # (T-1, J, S) filtered y displacement
    mag_s: np.ndarray       # (T-1, J, S) per-scale magnitude sqrt(mx^2 + my^2)
    bin_idx: np.ndarray     # (T-1, J, S) phase bin per sample
    frames: int             # original clip length T
    fps: float


@dataclass
class RhythmIntermediates:
    """Inspection bundle from one forward pass."""

    wavelet: np.ndarray        # (T-1, J, S)
    joint_weights: np.ndarray  # (T-1, J)
    histograms: np.ndarray     # (T-1, K, S)
    gate: np.ndarray           # (T-1,)


@dataclass
class RhythmEmbedding:
    """T x D rhythm features; the final row repeats the penultimate one."""

    data: np.ndarray
    fps: float

    @property
    def length(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def _conv_cols(signal_2d: np.ndarray, bank: WaveletBank) -> np.ndarray:
    """conv1d_same of every column of (T, J) against every bank kernel -> (T, J, S)."""
    T, J = signal_2d.shape
    out = np.empty((T, J, bank.scales))
    for j in range(J):
        col = Tensor(signal_2d[:, j])
        for s, k in enumerate(bank.kernels):
            out[:, j, s] = tz.conv1d_same(col, k).data
    return out


def wavelet_features(m: MotionField, bank: WaveletBank) -> np.ndarray:
    """Per-joint, per-scale wavelet responses of the motion magnitude."""
    return _conv_cols(m.magnitude, bank)


def scale_components(m: MotionField, bank: WaveletBank) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Filtered x/y displacement per scale plus the per-scale magnitude."""
    if m.diffs.shape[2] < 2:
        raise ConfigError("phase analysis needs x and y coordinates (C >= 2)")
    mx = _conv_cols(m.diffs[:, :, 0], bank)
    my = _conv_cols(m.diffs[:, :, 1], bank)
    return mx, my, np.sqrt(mx ** 2 + my ** 2)


def phase_bins(mx: np.ndarray, my: np.ndarray, bins: int) -> np.ndarray:
    """Index of the right-open phase bin on [-pi, pi) holding atan2(my, mx)."""
    theta = np.arctan2(my, mx)
    idx = np.floor((theta + math.pi) / (2.0 * math.pi / bins)).astype(np.intp)
    return np.mod(idx, bins)  # angle exactly pi wraps to bin 0


def clip_features(p: PoseSequence, bank: WaveletBank, bins: int) -> ClipRhythmFeatures:
    m = motion_diff(p)
    w = wavelet_features(m, bank)
    mx, my, mag_s = scale_components(m, bank)
    return ClipRhythmFeatures(
        magnitude=m.magnitude, wavelet=w, mx=mx, my=my, mag_s=mag_s,
        bin_idx=phase_bins(mx, my, bins), frames=p.frames, fps=p.fps,
    )


def joint_weight_tensor(feats: ClipRhythmFeatures, params: RhythmParams) -> Tensor:
    """Softmax joint weights from the shared two-layer net, (T-1, J)."""
    Tm1, J = feats.magnitude.shape
    x = np.concatenate([feats.magnitude[:, :, None], feats.wavelet], axis=2)  # (T-1, J, 1+S)
    flat = Tensor(x.reshape(Tm1 * J, 1 + params.scales))
    h = tz.relu(tz.linear(flat, params.w1, params.b1))
    logits = tz.linear(h, params.w2, params.b2)
    return tz.softmax(tz.reshape(logits, (Tm1, J)), axis=1)


def rhythm_core_tensor(feats: ClipRhythmFeatures, params: RhythmParams,
                       want_intermediates: bool = False):
    """Differentiable forward pass producing the (T, D) rhythm embedding.

    Returns (embedding, gate) or (embedding, gate, intermediates).
    """
    Tm1, J = feats.magnitude.shape
    S, K = params.scales, params.bins
    w = joint_weight_tensor(feats, params)

    cols = []
    # histogram columns, flattened (k, s) row-major: bin membership is a
    # constant mask; gradient flows through weights and magnitudes only
    for k in range(K):
        for s in range(S):
            mass = feats.mag_s[:, :, s] * (feats.bin_idx[:, :, s] == k)
            cols.append(tz.tsum(tz.mul(w, mass), axis=1, keepdims=True))
    # weighted wavelet features, one column per scale
    for s in range(S):
        cols.append(tz.tsum(tz.mul(w, feats.wavelet[:, :, s]), axis=1, keepdims=True))
    feat = tz.concat(cols, axis=1)  # (T-1, K*S + S)

    core = tz.linear(feat, params.fuse_w, params.fuse_b)  # (T-1, D)
    gate = tz.sigmoid(tz.linear(tz.relu(tz.linear(core, params.a1, params.ab1)),
                                params.a2, params.ab2))  # (T-1, 1)
    gated = tz.mul(gate, core)
    full = tz.concat([gated, gated[Tm1 - 1:Tm1, :]], axis=0)  # repeat last frame -> (T, D)
    if not want_intermediates:
        return full, gate
    h = np.empty((Tm1, K, S))
    for k in range(K):
        for s in range(S):
            h[:, k, s] = cols[k * S + s].data[:, 0]
    inter = RhythmIntermediates(
        wavelet=feats.wavelet, joint_weights=w.data.copy(),
        histograms=h, gate=gate.data[:, 0].copy(),
    )
    return full, gate, inter


def joint_weights(m: MotionField, wavelet: np.ndarray, params: RhythmParams) -> np.ndarray:
    """Convenience numpy view of the joint-weight distribution."""
    feats = ClipRhythmFeatures(
        magnitude=m.magnitude, wavelet=wavelet, mx=None, my=None,
        mag_s=None, bin_idx=None, frames=m.magnitude.shape[0] + 1, fps=0.0,
    )
    return joint_weight_tensor(feats, params).data


def phase_histograms(mx: np.ndarray, my: np.ndarray, mag_s: np.ndarray,
                     weights: np.ndarray, bins: int) -> np.ndarray:
    """Weighted per-scale phase histograms, (T-1, K, S) (numpy reference)."""
    if bins < 2:
        raise ConfigError(f"need at least 2 phase bins, got {bins}")
    idx = phase_bins(mx, my, bins)
    Tm1, J, S = mag_s.shape
    h = np.zeros((Tm1, bins, S))
    for k in range(bins):
        h[:, k, :] = (weights[:, :, None] * mag_s * (idx == k)).sum(axis=1)
    return h


def extract_rhythm(p: PoseSequence, bank: WaveletBank, params: RhythmParams) -> RhythmEmbedding:
    feats = clip_features(p, bank, params.bins)
    full, _gate = rhythm_core_tensor(feats, params)
    return RhythmEmbedding(data=full.data.copy(), fps=p.fps)


def extract_rhythm_with_intermediates(
    p: PoseSequence, bank: WaveletBank, params: RhythmParams
) -> tuple[RhythmEmbedding, RhythmIntermediates]:
    feats = clip_features(p, bank, params.bins)
    full, _gate, inter = rhythm_core_tensor(feats, params, want_intermediates=True)
    return RhythmEmbedding(data=full.data.copy(), fps=p.fps), inter


def scale_energy(p: PoseSequence, bank: WaveletBank) -> np.ndarray:
    """Frame-averaged wavelet energy per scale; argmax marks the dominant
    oscillation period of the clip."""
    w = wavelet_features(motion_diff(p), bank)
    return (w ** 2).mean(axis=(0, 1))


def baseline_mean_rhythm(p: PoseSequence, dim: int) -> np.ndarray:
    """Ablation baseline: joint-averaged speed per frame, tiled to D columns."""
    m = motion_diff(p).magnitude.mean(axis=1)  # (T-1,)
    m = np.concatenate([m, m[-1:]])
    return np.tile(m[:, None], (1, dim))


def baseline_binary_rhythm(p: PoseSequence, dim: int) -> np.ndarray:
    """Ablation baseline: binarized first-difference rhythm, 1 at speed minima."""
    s = motion_diff(p).magnitude.sum(axis=1)
    b = np.zeros(p.frames)
    from .pose import local_minima

    for t in local_minima(s):
        b[t] = 1.0
    return np.tile(b[:, None], (1, dim))


# ---------------------------------------------------------------------------
# text export: header "T D fps" then T rows of D decimals


def save_rhythm(r: RhythmEmbedding, path) -> None:
    T, D = r.data.shape
    lines = [f"{T} {D} {repr(float(r.fps))}"]
    lines += [" ".join(repr(float(v)) for v in r.data[t]) for t in range(T)]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_rhythm(path) -> RhythmEmbedding:
    from .errors import ParseError

    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError("empty rhythm file", line=1)
    head = lines[0].split()
    if len(head) != 3:
        raise ParseError("header must be 'T D fps'", line=1)
    T, D, fps = int(head[0]), int(head[1]), float(head[2])
    data = np.empty((T, D))
    for t in range(T):
        vals = lines[1 + t].split()
        if len(vals) != D:
            raise ParseError(f"row {t}: expected {D} values, found {len(vals)}", line=2 + t)
        data[t] = [float(v) for v in vals]
    return RhythmEmbedding(data=data, fps=fps)
