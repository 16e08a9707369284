"""Conditional flow-matching music-latent generator.

A small transformer predicts the velocity field v(z_t, t | rhythm, cond)
on the linear path z_t = (1-t) z0 + t z1 with regression target z1 - z0.
Sampling integrates the learned ODE with a fixed-step Euler solver under
classifier-free guidance. Training jointly optimizes the velocity field,
the rhythm extractor, and the alignment queries with Adam.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as tz
from .align import AlignedRhythm, ContextQueries, align_tensor, segment_spans
from .errors import ConfigError, NumericalError
from .pose import ConditioningFeatures, MusicLatent, PoseSequence
from .rhythm import (ClipRhythmFeatures, RhythmParams, WaveletBank,
                     build_wavelet_bank, clip_features, rhythm_core_tensor)
from .tensor import Tape, Tensor, backward

TIME_FREQ_SCALE = 1000.0  # spreads t in [0,1] across the sinusoid spectrum


@dataclass
class TransformerBlock:
    ln1_g: Tensor
    ln1_b: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    f1: Tensor
    fb1: Tensor
    f2: Tensor
    fb2: Tensor

    def tensors(self, prefix: str) -> list[tuple[str, Tensor]]:
        names = ("ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
                 "ln2_g", "ln2_b", "f1", "fb1", "f2", "fb2")
        return [(f"{prefix}.{n}", getattr(self, n)) for n in names]


@dataclass
class VelocityFieldParams:
    blocks: int
    hidden: int
    heads: int
    latent_dim: int
    rhythm_dim: int
    cond_dim: int
    time_w1: Tensor = None
    time_b1: Tensor = None
    time_w2: Tensor = None
    time_b2: Tensor = None
    cond_w: Tensor = None
    cond_b: Tensor = None
    null_cond: Tensor = None
    rhythm_w: Tensor = None
    rhythm_b: Tensor = None
    null_rhythm: Tensor = None
    lat_w: Tensor = None
    lat_b: Tensor = None
    layers: list[TransformerBlock] = field(default_factory=list)
    out_g: Tensor = None
    out_b: Tensor = None
    head_w: Tensor = None
    head_b: Tensor = None

    @classmethod
    def init(cls, rng: np.random.Generator, blocks: int, hidden: int, heads: int,
             latent_dim: int, rhythm_dim: int, cond_dim: int) -> "VelocityFieldParams":
        if hidden % heads != 0:
            raise ConfigError(f"hidden size {hidden} not divisible by {heads} heads")
        ff = 4 * hidden
        p = cls(blocks=blocks, hidden=hidden, heads=heads, latent_dim=latent_dim,
                rhythm_dim=rhythm_dim, cond_dim=cond_dim)
        p.time_w1 = tz.init_uniform(rng, (hidden, hidden), hidden)
        p.time_b1 = tz.zeros(hidden)
        p.time_w2 = tz.init_uniform(rng, (hidden, hidden), hidden)
        p.time_b2 = tz.zeros(hidden)
        p.cond_w = tz.init_uniform(rng, (cond_dim, hidden), cond_dim)
        p.cond_b = tz.zeros(hidden)
        p.null_cond = tz.init_uniform(rng, (1, hidden), hidden)
        p.rhythm_w = tz.init_uniform(rng, (rhythm_dim, hidden), rhythm_dim)
        p.rhythm_b = tz.zeros(hidden)
        p.null_rhythm = tz.init_uniform(rng, (1, hidden), hidden)
        p.lat_w = tz.init_uniform(rng, (latent_dim, hidden), latent_dim)
        p.lat_b = tz.zeros(hidden)
        for _ in range(blocks):
            p.layers.append(TransformerBlock(
                ln1_g=Tensor(np.ones(hidden), requires_grad=True), ln1_b=tz.zeros(hidden),
                wq=tz.init_uniform(rng, (hidden, hidden), hidden), bq=tz.zeros(hidden),
                wk=tz.init_uniform(rng, (hidden, hidden), hidden), bk=tz.zeros(hidden),
                wv=tz.init_uniform(rng, (hidden, hidden), hidden), bv=tz.zeros(hidden),
                wo=tz.init_uniform(rng, (hidden, hidden), hidden), bo=tz.zeros(hidden),
                ln2_g=Tensor(np.ones(hidden), requires_grad=True), ln2_b=tz.zeros(hidden),
                f1=tz.init_uniform(rng, (hidden, ff), hidden), fb1=tz.zeros(ff),
                f2=tz.init_uniform(rng, (ff, hidden), ff), fb2=tz.zeros(hidden),
            ))
        p.out_g = Tensor(np.ones(hidden), requires_grad=True)
        p.out_b = tz.zeros(hidden)
        p.head_w = tz.init_uniform(rng, (hidden, latent_dim), hidden)
        p.head_b = tz.zeros(latent_dim)
        return p

    def tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for n in ("time_w1", "time_b1", "time_w2", "time_b2", "cond_w", "cond_b",
                  "null_cond", "rhythm_w", "rhythm_b", "null_rhythm", "lat_w", "lat_b"):
            out.append((n, getattr(self, n)))
        for i, blk in enumerate(self.layers):
            out.extend(blk.tensors(f"block{i}"))
        out.extend([("out_g", self.out_g), ("out_b", self.out_b),
                    ("head_w", self.head_w), ("head_b", self.head_b)])
        return out


def _ln(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    return tz.add(tz.mul(tz.layer_norm(x), g), b)


def _self_attention(x: Tensor, blk: TransformerBlock, heads: int) -> Tensor:
    n, hidden = x.shape
    dh = hidden // heads
    q = tz.linear(x, blk.wq, blk.bq)
    k = tz.linear(x, blk.wk, blk.bk)
    v = tz.linear(x, blk.wv, blk.bv)
    outs = []
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        qh, kh, vh = q[:, sl], k[:, sl], v[:, sl]
        scores = tz.mul(tz.matmul(qh, tz.transpose(kh)), 1.0 / math.sqrt(dh))
        outs.append(tz.matmul(tz.softmax(scores, axis=1), vh))
    return tz.linear(tz.concat(outs, axis=1), blk.wo, blk.bo)


def velocity(params: VelocityFieldParams, z_t, t: float,
             rhythm=None, cond=None) -> Tensor:
    """Predicted velocity at time t, shape (T_m, d).

    Token layout: [time token] ++ [conditioning tokens] ++ [latent tokens
    with rhythm features added positionwise]. Null rhythm/conditioning are
    replaced by learned null tokens.
    """
    z = z_t if isinstance(z_t, Tensor) else Tensor(np.asarray(z_t, dtype=np.float64))
    T_m, d = z.shape
    if d != params.latent_dim:
        raise ConfigError(f"latent dim {d} != model dim {params.latent_dim}")

    temb = Tensor(tz.sinusoidal_embedding([t * TIME_FREQ_SCALE], params.hidden))
    tt = tz.linear(tz.relu(tz.linear(temb, params.time_w1, params.time_b1)),
                   params.time_w2, params.time_b2)

    if cond is None:
        ct = params.null_cond
    else:
        cdata = cond.data if isinstance(cond, (ConditioningFeatures,)) else np.asarray(cond)
        if cdata.shape[1] != params.cond_dim:
            raise ConfigError(f"conditioning dim {cdata.shape[1]} != model dim {params.cond_dim}")
        ct = tz.linear(Tensor(cdata), params.cond_w, params.cond_b)

    lat = tz.linear(z, params.lat_w, params.lat_b)
    lat = tz.add(lat, tz.sinusoidal_embedding(np.arange(T_m), params.hidden))
    if rhythm is None:
        lat = tz.add(lat, params.null_rhythm)
    else:
        if isinstance(rhythm, AlignedRhythm):
            rhythm = Tensor(rhythm.data)
        elif not isinstance(rhythm, Tensor):
            rhythm = Tensor(np.asarray(rhythm, dtype=np.float64))
        if rhythm.shape[0] != T_m:
            raise ConfigError(
                f"rhythm length {rhythm.shape[0]} != latent length {T_m}")
        lat = tz.add(lat, tz.linear(rhythm, params.rhythm_w, params.rhythm_b))

    x = tz.concat([tt, ct, lat], axis=0)
    for blk in params.layers:
        x = tz.add(x, _self_attention(_ln(x, blk.ln1_g, blk.ln1_b), blk, params.heads))
        h = tz.linear(tz.relu(tz.linear(_ln(x, blk.ln2_g, blk.ln2_b), blk.f1, blk.fb1)),
                      blk.f2, blk.fb2)
        x = tz.add(x, h)
    n = x.shape[0]
    out = _ln(x[n - T_m:n, :], params.out_g, params.out_b)
    return tz.linear(out, params.head_w, params.head_b)


def cfg_velocity(v_cond: np.ndarray, v_uncond: np.ndarray, scale: float) -> np.ndarray:
    """Extrapolate from the unconditional toward the conditional velocity."""
    if v_cond.shape != v_uncond.shape:
        raise ConfigError(f"guidance shapes differ: {v_cond.shape} vs {v_uncond.shape}")
    return v_uncond + scale * (v_cond - v_uncond)


@dataclass
class SampleConfig:
    steps: int = 32
    cfg_scale: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"need at least one solver step, got {self.steps}")
        if self.cfg_scale < 0:
            raise ConfigError(f"guidance scale must be >= 0, got {self.cfg_scale}")


def euler_sample(params: VelocityFieldParams | None, rhythm, cond, latent_len: int,
                 sc: SampleConfig, velocity_fn=None, latent_dim: int | None = None) -> MusicLatent:
    """Integrate dz/dt = v(z, t) from a standard-normal draw at t=0 to t=1
    with `steps` fixed Euler steps; deterministic for a fixed seed.

    `velocity_fn(z, t, rhythm, cond) -> ndarray` overrides the model field
    (used by solver-accuracy oracles); `latent_dim` is then required.
    """
    if velocity_fn is None:
        vf = lambda z, t, r, c: velocity(params, z, t, r, c).data
        dim = params.latent_dim
    else:
        vf = velocity_fn
        dim = latent_dim if latent_dim is not None else params.latent_dim
    rng = np.random.default_rng(sc.seed)
    z = rng.standard_normal((latent_len, dim))
    dt = 1.0 / sc.steps
    unconditional = rhythm is None and cond is None
    for k in range(sc.steps):
        t_k = k / sc.steps
        if unconditional:
            v = vf(z, t_k, None, None)
        else:
            v = cfg_velocity(vf(z, t_k, rhythm, cond), vf(z, t_k, None, None), sc.cfg_scale)
        z = z + dt * v
    return MusicLatent(data=z)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    batch_size: int = 4
    epochs: int = 100
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.95
    cond_drop_prob: float = 0.1
    seed: int = 0
    grad_clip: float = 1.0  # 0 disables clipping
    # desk-scale shape overrides
    scales: int = 4
    base_period: float = 4.0
    bins: int = 8
    rhythm_dim: int = 64
    hidden_w: int = 16
    hidden_a: int = 16
    blocks: int = 2
    hidden: int = 64
    heads: int = 4
    # ablation switches: rhythm_mode in {learned, mean, binary, none},
    # align_mode in {attn, meanpool}
    rhythm_mode: str = "learned"
    align_mode: str = "attn"

    def __post_init__(self):
        if not 0 <= self.cond_drop_prob < 1:
            raise ConfigError(f"cond_drop_prob must be in [0, 1), got {self.cond_drop_prob}")
        for name in ("batch_size", "epochs", "learning_rate", "scales", "bins",
                     "rhythm_dim", "blocks", "hidden", "heads"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")
        if self.rhythm_mode not in ("learned", "mean", "binary", "none"):
            raise ConfigError(f"unknown rhythm_mode {self.rhythm_mode!r}")
        if self.align_mode not in ("attn", "meanpool"):
            raise ConfigError(f"unknown align_mode {self.align_mode!r}")


@dataclass
class TrainedModel:
    vf: VelocityFieldParams
    rhythm_net: RhythmParams
    queries: ContextQueries
    bank: WaveletBank
    config: TrainConfig
    loss_history: list[float]

    def all_tensors(self) -> list[tuple[str, Tensor]]:
        out = [(f"vf.{n}", t) for n, t in self.vf.tensors()]
        out += [(f"rhythm.{n}", t) for n, t in self.rhythm_net.tensors()]
        out += [(f"align.{n}", t) for n, t in self.queries.tensors()]
        return out


def mean_pool_align(r: Tensor, latent_len: int) -> Tensor:
    """Plain segment-mean downsampling (alignment-module ablation)."""
    rows = [tz.tmean(r[a:b, :], axis=0, keepdims=True)
            for a, b in segment_spans(r.shape[0], latent_len)]
    return tz.concat(rows, axis=0)


def rhythm_condition_tensor(feats: ClipRhythmFeatures, baseline: np.ndarray | None,
                            model: "TrainedModel", latent_len: int) -> Tensor | None:
    """Aligned rhythm conditioning for one clip, or None in 'none' mode."""
    mode = model.config.rhythm_mode
    if mode == "none":
        return None
    if mode == "learned":
        r, _gate = rhythm_core_tensor(feats, model.rhythm_net)
    else:
        r = Tensor(baseline)
    if model.config.align_mode == "attn":
        return align_tensor(r, model.queries)
    return mean_pool_align(r, latent_len)


def cfm_loss(model: TrainedModel, z1: np.ndarray, z0: np.ndarray, t: float,
             rhythm_cond: Tensor | None, cond: ConditioningFeatures | None) -> Tensor:
    """Mean squared error between the predicted velocity at z_t and the
    linear-path target z1 - z0."""
    if z1.shape != z0.shape:
        raise ConfigError(f"latent shapes differ: {z1.shape} vs {z0.shape}")
    z_t = (1.0 - t) * z0 + t * z1
    v = velocity(model.vf, z_t, t, rhythm_cond, cond)
    diff = tz.sub(v, z1 - z0)
    return tz.tmean(tz.mul(diff, diff))


class Adam:
    """Standard Adam with bias correction over a fixed tensor list."""

    def __init__(self, tensors: list[Tensor], lr: float, beta1: float, beta2: float,
                 eps: float = 1e-8):
        self.tensors = tensors
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(t.data) for t in tensors]
        self.v = [np.zeros_like(t.data) for t in tensors]
        self.step_count = 0

    def step(self) -> None:
        self.step_count += 1
        c1 = 1.0 - self.b1 ** self.step_count
        c2 = 1.0 - self.b2 ** self.step_count
        for i, t in enumerate(self.tensors):
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            t.data -= self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)

    def zero_grad(self) -> None:
        for t in self.tensors:
            t.grad = None


def _clip_global_norm(tensors: list[Tensor], max_norm: float) -> None:
    total = math.sqrt(sum(float((t.grad ** 2).sum()) for t in tensors if t.grad is not None))
    if total > max_norm > 0:
        scale = max_norm / total
        for t in tensors:
            if t.grad is not None:
                t.grad *= scale


def _baseline_rhythm(pose: PoseSequence, mode: str, dim: int) -> np.ndarray | None:
    from .rhythm import baseline_binary_rhythm, baseline_mean_rhythm

    if mode == "mean":
        return baseline_mean_rhythm(pose, dim)
    if mode == "binary":
        return baseline_binary_rhythm(pose, dim)
    return None


def init_model(tc: TrainConfig, latent_dim: int, latent_len: int,
               cond_dim: int) -> TrainedModel:
    rng = np.random.default_rng(tc.seed)
    bank = build_wavelet_bank(tc.scales, tc.base_period)
    rhythm_net = RhythmParams.init(rng, tc.scales, tc.bins, tc.rhythm_dim, tc.hidden_w, tc.hidden_a)
    queries = ContextQueries.init(rng, latent_len, tc.rhythm_dim)
    vf = VelocityFieldParams.init(rng, tc.blocks, tc.hidden, tc.heads,
                                  latent_dim, tc.rhythm_dim, cond_dim)
    return TrainedModel(vf=vf, rhythm_net=rhythm_net, queries=queries, bank=bank,
                        config=tc, loss_history=[])


def train(dataset: list[tuple[PoseSequence, MusicLatent, ConditioningFeatures]],
          tc: TrainConfig) -> TrainedModel:
    """Joint Adam optimization of all three parameter groups on the CFM loss.

    Deterministic for a fixed config seed. Raises NumericalError when a
    batch loss goes non-finite.
    """
    if not dataset:
        raise ConfigError("training dataset is empty")
    latent_len, latent_dim = dataset[0][1].data.shape
    cond_dim = dataset[0][2].data.shape[1]
    for pose, z, c in dataset:
        if z.data.shape != (latent_len, latent_dim) or c.data.shape[1] != cond_dim:
            raise ConfigError("dataset shapes are inconsistent")

    model = init_model(tc, latent_dim, latent_len, cond_dim)
    feats = [clip_features(pose, model.bank, tc.bins) if tc.rhythm_mode == "learned" else None
             for pose, _, _ in dataset]
    baselines = [_baseline_rhythm(pose, tc.rhythm_mode, tc.rhythm_dim)
                 for pose, _, _ in dataset]

    trainable = [t for _, t in model.all_tensors()]
    if tc.rhythm_mode != "learned":
        trainable = [t for n, t in model.all_tensors() if not n.startswith("rhythm.")]
    if tc.align_mode != "attn" or tc.rhythm_mode == "none":
        trainable = [t for t in trainable if t is not model.queries.data]
    opt = Adam(trainable, tc.learning_rate, tc.adam_beta1, tc.adam_beta2)
    rng = np.random.default_rng(tc.seed + 1)

    for epoch in range(tc.epochs):
        order = rng.permutation(len(dataset))
        epoch_losses = []
        for b0 in range(0, len(dataset), tc.batch_size):
            batch = order[b0:b0 + tc.batch_size]
            opt.zero_grad()
            batch_loss = 0.0
            for i in batch:
                pose, z1, cond = dataset[i]
                t = float(rng.uniform())
                z0 = rng.standard_normal(z1.data.shape)
                drop = tc.cond_drop_prob > 0 and rng.uniform() < tc.cond_drop_prob
                with Tape():
                    if drop:
                        rcond, vcond = None, None
                    else:
                        rcond = rhythm_condition_tensor(feats[i], baselines[i], model, latent_len)
                        vcond = cond
                    loss = tz.mul(cfm_loss(model, z1.data, z0, t, rcond, vcond),
                                  1.0 / len(batch))
                    backward(loss)
                batch_loss += float(loss.data) * len(batch)
            if not math.isfinite(batch_loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {b0 // tc.batch_size}")
            if tc.grad_clip > 0:
                _clip_global_norm(trainable, tc.grad_clip)
            opt.step()
            epoch_losses.append(batch_loss / len(batch))
        model.loss_history.append(float(np.mean(epoch_losses)))
    return model


def generate(model: TrainedModel, pose: PoseSequence, cond: ConditioningFeatures | None,
             latent_len: int, sc: SampleConfig, conditioned: bool = True) -> MusicLatent:
    """Sample a latent for one clip, conditioning on its rhythm unless
    `conditioned` is False (null-token generation)."""
    rhythm_cond = None
    if conditioned and model.config.rhythm_mode != "none":
        f = clip_features(pose, model.bank, model.config.bins) \
            if model.config.rhythm_mode == "learned" else None
        base = _baseline_rhythm(pose, model.config.rhythm_mode, model.config.rhythm_dim)
        rhythm_cond = rhythm_condition_tensor(f, base, model, latent_len)
        rhythm_cond = Tensor(rhythm_cond.data) if rhythm_cond is not None else None
    vcond = cond if conditioned else None
    return euler_sample(model.vf, rhythm_cond, vcond, latent_len, sc)
