"""Conditional transformer denoiser for motion sequences.

The network predicts the clean sequence x0_hat from a noisy sequence, a
step index, a per-frame audio encoding and a single identity (first-pose)
encoding. Audio is consumed through a small trainable transformer encoder,
identity through a two-layer MLP; the decoder stacks n_layers blocks of
self attention, cross attention against the identity token, a projection
back down from the concatenated attention outputs, and a feedforward.
Every attention layer uses the normalized-factorization linear-complexity
form, so no n x n score matrix is ever materialized.

Parameter tables are immutable during inference; calls on shared params
are safe from concurrent threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import Tensor, concat, gelu, layer_norm, linear, no_grad
from .diffusion import DiffusionState
from .sequences import AudioFeatureSequence

AUDIO_INJECTION_MODES = ("add_per_layer", "cross_attention", "add_once", "concatenate")


@dataclass
class DenoiserConfig:
    d_motion: int
    d_audio: int
    d_model: int = 256
    n_layers: int = 8
    n_heads: int = 8
    audio_injection_mode: str = "add_per_layer"
    use_id_conditioning: bool = True
    max_frames: int = 100
    audio_encoder_layers: int = 2

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.d_model % 2 != 0:
            raise ValueError("d_model must be even for sinusoidal embeddings")
        if self.n_layers < 1 or self.max_frames < 1 or self.audio_encoder_layers < 1:
            raise ValueError("n_layers, max_frames, audio_encoder_layers must be >= 1")
        if self.audio_injection_mode not in AUDIO_INJECTION_MODES:
            raise ValueError(
                f"audio_injection_mode must be one of {AUDIO_INJECTION_MODES}"
            )


@dataclass
class DenoiserParams:
    """Weight tables plus config and motion normalization statistics."""

    config: DenoiserConfig
    weights: dict[str, Tensor]
    norm_mean: np.ndarray
    norm_std: np.ndarray
    trained_T: int | None = None

    def check_finite(self) -> None:
        for name, w in self.weights.items():
            if not np.all(np.isfinite(w.data)):
                raise FloatingPointError(f"non-finite values in weight table {name!r}")


@dataclass
class ConditionBundle:
    audio_encoding: np.ndarray      # (N, d_model)
    id_encoding: np.ndarray         # (1, d_model)
    timestep_embedding: np.ndarray  # (d_model,)


# ---------------------------------------------------------------------------
# embeddings


def _embed_freqs(d_model: int) -> np.ndarray:
    half = d_model // 2
    return np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))


def embed_timestep(t: int, d_model: int) -> np.ndarray:
    """Sinusoidal embedding of a step index, interleaved sin/cos.

    Injective over the step range used here; at t=0 the pattern is
    [0, 1, 0, 1, ...].
    """
    if t < 0:
        raise ValueError(f"timestep must be >= 0, got {t}")
    if d_model % 2 != 0:
        raise ValueError("d_model must be even")
    ang = t * _embed_freqs(d_model)
    out = np.empty(d_model)
    out[0::2] = np.sin(ang)
    out[1::2] = np.cos(ang)
    return out


@lru_cache(maxsize=16)
def _positional_table(n: int, d_model: int) -> np.ndarray:
    ang = np.arange(n)[:, None] * _embed_freqs(d_model)[None, :]
    out = np.empty((n, d_model))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    out.setflags(write=False)
    return out


def positional_encoding(n: int, d_model: int) -> np.ndarray:
    """(n, d_model) table of frame-position embeddings."""
    return _positional_table(n, d_model).copy()


# ---------------------------------------------------------------------------
# attention


def _normalized_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """rho_q(Q) @ (rho_k(K)^T @ V) with softmax over Q rows and K columns.

    Works on (..., n, d) stacks; cost is O(n * d_k * d_v).
    """
    rho_q = q.softmax(axis=-1)
    rho_k = k.softmax(axis=-2)
    context = rho_k.swapaxes(-1, -2) @ v
    return rho_q @ context


def efficient_attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Linear-complexity attention on plain arrays.

    Q is softmax-normalized per row, K per column; the output equals
    rho_q(Q) @ (rho_k(K)^T @ V) without forming the n x n score matrix.
    """
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise ValueError("Q, K, V must be 2-D")
    if Q.shape[1] != K.shape[1]:
        raise ValueError(f"Q width {Q.shape[1]} != K width {K.shape[1]}")
    if K.shape[0] != V.shape[0]:
        raise ValueError(f"K rows {K.shape[0]} != V rows {V.shape[0]}")
    with no_grad():
        return _normalized_attention(Tensor(Q), Tensor(K), Tensor(V)).data


def _mha(w: dict[str, Tensor], prefix: str, n_heads: int,
         q_in: Tensor, kv_in: Tensor) -> Tensor:
    """Multi-head normalized attention with learned projections."""
    b, nq, dm = q_in.shape
    nk = kv_in.shape[-2]
    dh = dm // n_heads
    q = linear(q_in, w[f"{prefix}.q.w"], w[f"{prefix}.q.b"])
    k = linear(kv_in, w[f"{prefix}.k.w"], w[f"{prefix}.k.b"])
    v = linear(kv_in, w[f"{prefix}.v.w"], w[f"{prefix}.v.b"])
    q = q.reshape(b, nq, n_heads, dh).transpose((0, 2, 1, 3))
    k = k.reshape(b, nk, n_heads, dh).transpose((0, 2, 1, 3))
    v = v.reshape(b, nk, n_heads, dh).transpose((0, 2, 1, 3))
    out = _normalized_attention(q, k, v)
    out = out.transpose((0, 2, 1, 3)).reshape(b, nq, dm)
    return linear(out, w[f"{prefix}.out.w"], w[f"{prefix}.out.b"])


def _ff(w: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    hidden = gelu(linear(x, w[f"{prefix}.ff1.w"], w[f"{prefix}.ff1.b"]))
    return linear(hidden, w[f"{prefix}.ff2.w"], w[f"{prefix}.ff2.b"])


def _ln(w: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    return layer_norm(x, w[f"{prefix}.g"], w[f"{prefix}.b"])


# ---------------------------------------------------------------------------
# initialization


def _linear_init(rng, shapes: dict, name: str, d_in: int, d_out: int):
    scale = math.sqrt(2.0 / (d_in + d_out))
    shapes[f"{name}.w"] = rng.normal(0.0, scale, size=(d_in, d_out))
    shapes[f"{name}.b"] = np.zeros(d_out)


def _ln_init(shapes: dict, name: str, d: int):
    shapes[f"{name}.g"] = np.ones(d)
    shapes[f"{name}.b"] = np.zeros(d)


def _attn_init(rng, shapes: dict, prefix: str, d: int):
    for part in ("q", "k", "v", "out"):
        _linear_init(rng, shapes, f"{prefix}.{part}", d, d)


def init_denoiser(config: DenoiserConfig, seed: int = 0,
                  dtype=np.float64) -> DenoiserParams:
    """Fresh parameter tables with Glorot-scaled weights and zero biases.

    float32 params keep the whole forward/backward in float32, which is the
    fast desk-scale training mode; float64 is for gradient checking.
    """
    rng = np.random.default_rng(seed)
    t: dict[str, np.ndarray] = {}
    dm, da, d = config.d_model, config.d_audio, config.d_motion
    dff = 4 * dm

    _linear_init(rng, t, "motion_embed", d, dm)
    _linear_init(rng, t, "audio_in", da, dm)
    for i in range(config.audio_encoder_layers):
        p = f"aenc{i}"
        _ln_init(t, f"{p}.ln1", dm)
        _attn_init(rng, t, f"{p}.self", dm)
        _ln_init(t, f"{p}.ln2", dm)
        _linear_init(rng, t, f"{p}.ff1", dm, dff)
        _linear_init(rng, t, f"{p}.ff2", dff, dm)
    _linear_init(rng, t, "id_mlp.l1", d, dm)
    _linear_init(rng, t, "id_mlp.l2", dm, dm)
    for i in range(config.n_layers):
        p = f"dec{i}"
        if config.audio_injection_mode == "cross_attention":
            _ln_init(t, f"{p}.ln_aud", dm)
            _attn_init(rng, t, f"{p}.aud", dm)
        elif config.audio_injection_mode == "concatenate":
            _linear_init(rng, t, f"{p}.audcat", 2 * dm, dm)
        _ln_init(t, f"{p}.ln_self", dm)
        _attn_init(rng, t, f"{p}.self", dm)
        if config.use_id_conditioning:
            _ln_init(t, f"{p}.ln_cross", dm)
            _attn_init(rng, t, f"{p}.cross", dm)
            _linear_init(rng, t, f"{p}.reduce", 2 * dm, dm)
        _ln_init(t, f"{p}.ln_ff", dm)
        _linear_init(rng, t, f"{p}.ff1", dm, dff)
        _linear_init(rng, t, f"{p}.ff2", dff, dm)
    _ln_init(t, "head.ln", dm)
    _linear_init(rng, t, "head", dm, d)

    weights = {k: Tensor(v.astype(dtype), requires_grad=True) for k, v in t.items()}
    return DenoiserParams(config=config, weights=weights,
                          norm_mean=np.zeros(d), norm_std=np.ones(d))


# ---------------------------------------------------------------------------
# encoders


def param_dtype(params: DenoiserParams):
    return params.weights["head.w"].data.dtype


def _pos_tensor(params: DenoiserParams, n: int) -> Tensor:
    table = _positional_table(n, params.config.d_model)
    return Tensor(table.astype(param_dtype(params)))


def _encode_audio_t(params: DenoiserParams, feats: Tensor) -> Tensor:
    """(B, N, d_audio) -> (B, N, d_model) through the audio transformer."""
    cfg, w = params.config, params.weights
    n = feats.shape[-2]
    h = linear(feats, w["audio_in.w"], w["audio_in.b"])
    h = h + _pos_tensor(params, n)
    for i in range(cfg.audio_encoder_layers):
        p = f"aenc{i}"
        normed = _ln(w, f"{p}.ln1", h)
        h = h + _mha(w, f"{p}.self", cfg.n_heads, normed, normed)
        h = h + _ff(w, p, _ln(w, f"{p}.ln2", h))
    return h


def _encode_identity_t(params: DenoiserParams, first: Tensor) -> Tensor:
    """(B, 1, d_motion) -> (B, 1, d_model) through the identity MLP."""
    w = params.weights
    h = gelu(linear(first, w["id_mlp.l1.w"], w["id_mlp.l1.b"]))
    return linear(h, w["id_mlp.l2.w"], w["id_mlp.l2.b"])


def encode_audio(params: DenoiserParams, audio: AudioFeatureSequence) -> np.ndarray:
    """Encode per-frame audio features into (N, d_model) conditioning rows."""
    cfg = params.config
    if audio.n_frames > cfg.max_frames:
        raise ValueError(
            f"audio length {audio.n_frames} exceeds max_frames={cfg.max_frames}"
        )
    if audio.dim != cfg.d_audio:
        raise ValueError(f"audio width {audio.dim} != configured d_audio={cfg.d_audio}")
    with no_grad():
        out = _encode_audio_t(
            params, Tensor(audio.features[None].astype(param_dtype(params))))
    return out.data[0].astype(np.float64)


def encode_identity(params: DenoiserParams, first_frame: np.ndarray) -> np.ndarray:
    """Encode a single (1, d_motion) first-pose frame into (1, d_model)."""
    first_frame = np.asarray(first_frame, dtype=np.float64).reshape(1, -1)
    if first_frame.shape[1] != params.config.d_motion:
        raise ValueError(
            f"identity frame width {first_frame.shape[1]} != "
            f"d_motion={params.config.d_motion}"
        )
    with no_grad():
        out = _encode_identity_t(
            params, Tensor(first_frame[None].astype(param_dtype(params))))
    return out.data[0].astype(np.float64)


# ---------------------------------------------------------------------------
# decoder


def _decode(params: DenoiserParams, x: Tensor, audio_enc: Tensor, id_enc: Tensor,
            t_emb: Tensor, trace: dict | None = None) -> Tensor:
    """(B, N, d_motion) noisy input -> (B, N, d_motion) clean prediction."""
    cfg, w = params.config, params.weights
    b, n, _ = x.shape
    mode = cfg.audio_injection_mode

    h = linear(x, w["motion_embed.w"], w["motion_embed.b"])
    h = h + _pos_tensor(params, n)
    cond_seq = audio_enc + t_emb  # (B, N, dm) + (B, 1, dm)

    for i in range(cfg.n_layers):
        p = f"dec{i}"
        inject = mode != "add_once" or i == 0
        if inject:
            if mode in ("add_per_layer", "add_once"):
                h = h + cond_seq
            elif mode == "concatenate":
                h = linear(concat([h, cond_seq], axis=-1),
                           w[f"{p}.audcat.w"], w[f"{p}.audcat.b"])
            elif mode == "cross_attention":
                h = h + _mha(w, f"{p}.aud", cfg.n_heads,
                             _ln(w, f"{p}.ln_aud", h), cond_seq)
            if trace is not None:
                trace["audio_injections"] = trace.get("audio_injections", 0) + 1

        normed = _ln(w, f"{p}.ln_self", h)
        attn = _mha(w, f"{p}.self", cfg.n_heads, normed, normed)
        s = h + attn
        if cfg.use_id_conditioning:
            cross = _mha(w, f"{p}.cross", cfg.n_heads,
                         _ln(w, f"{p}.ln_cross", s), id_enc)
            merged = linear(concat([attn, cross], axis=-1),
                            w[f"{p}.reduce.w"], w[f"{p}.reduce.b"])
            s = s + merged
        h = s + _ff(w, p, _ln(w, f"{p}.ln_ff", s))

    h = _ln(w, "head.ln", h)
    return linear(h, w["head.w"], w["head.b"])


def denoise(params: DenoiserParams, x_t: DiffusionState, cond: ConditionBundle,
            trace: dict | None = None) -> np.ndarray:
    """Predict the clean sequence x0_hat for a single noisy sequence."""
    cfg = params.config
    n, d = x_t.x_t.shape
    if d != cfg.d_motion:
        raise ValueError(f"sequence width {d} != d_motion={cfg.d_motion}")
    if n > cfg.max_frames:
        raise ValueError(f"sequence length {n} exceeds max_frames={cfg.max_frames}")
    audio_enc = np.asarray(cond.audio_encoding, dtype=np.float64)
    if audio_enc.shape != (n, cfg.d_model):
        raise ValueError(
            f"audio encoding shape {audio_enc.shape} != ({n}, {cfg.d_model})"
        )
    id_enc = np.asarray(cond.id_encoding, dtype=np.float64).reshape(1, cfg.d_model)
    t_emb = np.asarray(cond.timestep_embedding, dtype=np.float64).reshape(1, cfg.d_model)
    dt = param_dtype(params)
    with no_grad():
        out = _decode(params, Tensor(x_t.x_t[None].astype(dt)),
                      Tensor(audio_enc[None].astype(dt)),
                      Tensor(id_enc[None].astype(dt)),
                      Tensor(t_emb[None].astype(dt)), trace=trace)
    return out.data[0].astype(np.float64)


def forward_batch(params: DenoiserParams, x_noisy: np.ndarray, t_steps: np.ndarray,
                  audio_feats: np.ndarray, first_frames: np.ndarray,
                  trace: dict | None = None) -> Tensor:
    """Differentiable full forward pass for a training batch.

    x_noisy (B, N, d), t_steps (B,), audio_feats (B, N, d_audio),
    first_frames (B, 1, d). Returns the (B, N, d) prediction tensor.
    """
    cfg = params.config
    b = x_noisy.shape[0]
    dt = param_dtype(params)
    t_emb = np.stack([embed_timestep(int(t), cfg.d_model) for t in t_steps])
    audio_enc = _encode_audio_t(params, Tensor(np.asarray(audio_feats, dtype=dt)))
    id_enc = _encode_identity_t(params, Tensor(np.asarray(first_frames, dtype=dt)))
    return _decode(params, Tensor(np.asarray(x_noisy, dtype=dt)), audio_enc, id_enc,
                   Tensor(t_emb.reshape(b, 1, cfg.d_model).astype(dt)), trace=trace)
