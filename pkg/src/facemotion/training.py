"""Losses and the per-component training loop.

Three models share one architecture and one loss recipe; only the head-pose
model adds a first-frame term on top of the weighted reconstruction loss,
to curb discontinuities when long sequences are generated chunk by chunk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .denoiser import DenoiserConfig, DenoiserParams, forward_batch, init_denoiser
from .diffusion import NoiseSchedule, build_schedule
from .sequences import COMPONENT_DIMS


# ---------------------------------------------------------------------------
# losses (contract surface; the train step rebuilds the same math on tensors)


def diffusion_loss(x0: np.ndarray, x0_hat: np.ndarray) -> float:
    """Mean squared error over all frames and dimensions."""
    x0 = np.asarray(x0, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    if x0.shape != x0_hat.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {x0_hat.shape}")
    return float(np.mean((x0 - x0_hat) ** 2))


def first_frame_loss(x0_first: np.ndarray, x0_hat_first: np.ndarray) -> float:
    """Mean squared error restricted to the first frame."""
    a = np.asarray(x0_first, dtype=np.float64).reshape(-1)
    b = np.asarray(x0_hat_first, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"width mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def loss_terms_for(component_tag: str, include_first_frame: bool | None = None) -> tuple[str, ...]:
    """Which loss terms a component trains with.

    The pose model adds the first-frame term; the override exists for
    ablation runs that strip it.
    """
    if include_first_frame is None:
        include_first_frame = component_tag == "pose"
    return ("diff", "first") if include_first_frame else ("diff",)


def total_loss(component_tag: str, l_diff: float, l_first: float,
               lambda_weight: float, include_first_frame: bool | None = None) -> float:
    """lambda * L_diff, plus L_first for the pose model."""
    terms = loss_terms_for(component_tag, include_first_frame)
    out = lambda_weight * l_diff
    if "first" in terms:
        out += l_first
    return float(out)


# ---------------------------------------------------------------------------
# configuration and state


@dataclass
class TrainConfig:
    component_tag: str = "full"
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-4
    lambda_weight: float = 6.0
    window_len: int = 100
    T: int = 500
    seed: int = 0
    include_first_frame_loss: bool | None = None  # None: pose only

    def __post_init__(self):
        if self.component_tag not in COMPONENT_DIMS:
            raise ValueError(f"unknown component tag {self.component_tag!r}")
        for name in ("epochs",):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("batch_size", "window_len", "T"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate < 0 or self.lambda_weight < 0:
            raise ValueError("learning_rate and lambda_weight must be >= 0")


@dataclass
class TrainState:
    params: DenoiserParams
    config: TrainConfig
    sched: NoiseSchedule
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    loss_history: list[float] = field(default_factory=list)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
GRAD_CLIP_NORM = 1.0


def init_train_state(config: TrainConfig, net: DenoiserConfig,
                     norm_mean: np.ndarray | None = None,
                     norm_std: np.ndarray | None = None,
                     dtype=np.float64) -> TrainState:
    params = init_denoiser(net, seed=config.seed, dtype=dtype)
    if norm_mean is not None:
        params.norm_mean = np.asarray(norm_mean, dtype=np.float64)
        params.norm_std = np.asarray(norm_std, dtype=np.float64)
    params.trained_T = config.T
    zeros = {k: np.zeros_like(w.data) for k, w in params.weights.items()}
    return TrainState(
        params=params, config=config, sched=build_schedule(config.T),
        adam_m=zeros, adam_v={k: v.copy() for k, v in zeros.items()},
        rng=np.random.default_rng(config.seed),
    )


def normalize_motion(params: DenoiserParams, frames: np.ndarray) -> np.ndarray:
    return (frames - params.norm_mean) / params.norm_std


def denormalize_motion(params: DenoiserParams, frames: np.ndarray) -> np.ndarray:
    return frames * params.norm_std + params.norm_mean


# ---------------------------------------------------------------------------
# one optimizer step


def train_step(state: TrainState, batch: tuple[np.ndarray, np.ndarray],
               sched: NoiseSchedule | None = None) -> tuple[TrainState, dict]:
    """Noise a batch of windows, denoise, and apply one optimizer update.

    batch is (motion, audio) with motion (B, W, d) in raw units and audio
    (B, W, d_audio); every window must have exactly window_len frames.
    """
    sched = sched or state.sched
    cfg = state.config
    motion, audio = batch
    motion = np.asarray(motion, dtype=np.float64)
    audio = np.asarray(audio, dtype=np.float64)
    if motion.ndim != 3 or audio.ndim != 3 or motion.shape[:2] != audio.shape[:2]:
        raise ValueError(f"bad batch shapes {motion.shape} / {audio.shape}")
    if motion.shape[1] != cfg.window_len:
        raise ValueError(
            f"windows must have {cfg.window_len} frames, got {motion.shape[1]}"
        )
    b = motion.shape[0]
    terms = loss_terms_for(cfg.component_tag, cfg.include_first_frame_loss)

    dt = state.params.weights["head.w"].data.dtype
    x0 = normalize_motion(state.params, motion).astype(dt)
    t_steps = state.rng.integers(1, sched.T + 1, size=b)
    eps = state.rng.standard_normal(x0.shape)
    abar = sched.alpha_bar[t_steps - 1][:, None, None]
    x_t = (np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps).astype(dt)
    first = x0[:, :1, :]

    pred = forward_batch(state.params, x_t, t_steps, audio, first)
    target = Tensor(x0)
    resid = pred - target
    l_diff = (resid * resid).mean()
    loss = l_diff * cfg.lambda_weight
    l_first_val = 0.0
    if "first" in terms:
        fresid = pred[:, 0:1, :] - Tensor(first)
        l_first = (fresid * fresid).mean()
        loss = loss + l_first
        l_first_val = float(l_first.data)

    loss_val = float(loss.data)
    if not math.isfinite(loss_val):
        raise FloatingPointError(
            f"non-finite loss at step {state.step} "
            f"(diff={float(l_diff.data)}, first={l_first_val})"
        )
    loss.backward()

    if cfg.learning_rate > 0:
        _adam_update(state)
    for w in state.params.weights.values():
        w.grad = None
    state.params.check_finite()

    state.step += 1
    metrics = {"loss": loss_val, "diff": float(l_diff.data), "first": l_first_val}
    state.loss_history.append(loss_val)
    return state, metrics


def _adam_update(state: TrainState) -> None:
    grads = {}
    sq = 0.0
    for name, w in state.params.weights.items():
        g = w.grad if w.grad is not None else np.zeros_like(w.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name!r} "
                                     f"at step {state.step}")
        grads[name] = g
        sq += float((g * g).sum())
    gnorm = math.sqrt(sq)
    scale = GRAD_CLIP_NORM / gnorm if gnorm > GRAD_CLIP_NORM else 1.0

    t = state.step + 1
    lr = state.config.learning_rate
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for name, w in state.params.weights.items():
        g = grads[name] * scale
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * g * g
        w.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


# ---------------------------------------------------------------------------
# full component training


@dataclass
class TrainLog:
    rows: list[tuple[int, int, float, float, float]] = field(default_factory=list)
    skipped_short: int = 0
    n_train: int = 0
    n_val: int = 0

    def to_text(self) -> str:
        lines = ["epoch step loss diff first"]
        for epoch, step, loss, diff, first in self.rows:
            lines.append(f"{epoch} {step} {loss:.10g} {diff:.10g} {first:.10g}")
        return "\n".join(lines) + "\n"


def split_indices(n: int, fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Deterministic train/validation split by seed-stable hashing."""
    import hashlib

    train, val = [], []
    for i in range(n):
        h = hashlib.sha256(f"{seed}:{i}".encode()).digest()
        bucket = int.from_bytes(h[:8], "little") / 2 ** 64
        (val if bucket < fraction else train).append(i)
    return train, val


def train_component(config: TrainConfig, dataset, net: DenoiserConfig | None = None,
                    val_fraction: float = 0.1,
                    dtype=np.float32) -> tuple[DenoiserParams, TrainLog]:
    """Train one component model on a paired motion/audio dataset.

    The dataset is anything with a ``pairs`` attribute of
    (MotionSequence, AudioFeatureSequence) tuples. Sequences shorter than
    window_len are skipped and counted. Returns the trained parameters and
    the loss-curve log.
    """
    from .datakit import crop_random_window

    d_motion = COMPONENT_DIMS[config.component_tag]
    pairs = list(dataset.pairs)
    if not pairs:
        raise ValueError("dataset is empty")
    for motion, _audio in pairs:
        if motion.dim != d_motion:
            raise ValueError(
                f"component {config.component_tag!r} expects d={d_motion} windows, "
                f"got d={motion.dim}"
            )
    d_audio = pairs[0][1].dim

    log = TrainLog()
    train_idx, val_idx = split_indices(len(pairs), val_fraction, config.seed)
    usable = [i for i in train_idx if pairs[i][0].n_frames >= config.window_len]
    log.skipped_short = len(train_idx) - len(usable)
    log.n_train, log.n_val = len(usable), len(val_idx)
    if not usable:
        raise ValueError("no training sequence is at least window_len frames long")

    if net is None:
        net = DenoiserConfig(d_motion=d_motion, d_audio=d_audio, d_model=32,
                             n_layers=8, n_heads=8, max_frames=config.window_len)

    train_motion = np.concatenate([pairs[i][0].frames for i in usable])
    mean = train_motion.mean(axis=0)
    std = train_motion.std(axis=0)
    std = np.where(std < 1e-8, 1.0, std)
    state = init_train_state(config, net, norm_mean=mean, norm_std=std, dtype=dtype)

    for epoch in range(config.epochs):
        state.epoch = epoch
        draws = []
        for i in usable:
            n_windows = max(1, pairs[i][0].n_frames // config.window_len)
            draws.extend([i] * n_windows)
        order = state.rng.permutation(len(draws))
        for start in range(0, len(order), config.batch_size):
            chosen = [draws[j] for j in order[start:start + config.batch_size]]
            motion_w, audio_w = [], []
            for i in chosen:
                mw, aw = crop_random_window(pairs[i], config.window_len, state.rng)
                motion_w.append(mw.frames)
                audio_w.append(aw.features)
            state, metrics = train_step(
                state, (np.stack(motion_w), np.stack(audio_w)))
            log.rows.append((epoch, state.step, metrics["loss"],
                             metrics["diff"], metrics["first"]))
    return state.params, log
