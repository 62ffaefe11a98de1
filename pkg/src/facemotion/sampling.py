"""Reverse-chain sampling and recursive long-sequence generation.

A chunk is generated by running the full reverse chain from unit Gaussian
noise, conditioned on an audio window and a first-pose frame. Long
sequences are built from consecutive chunks: chunk k reuses the last
generated frame of chunk k-1 as its first-pose condition, which keeps the
assembled sequence coherent across seams. The three component streams are
generated independently and interleaved into the full 70-dim layout by a
declared index map.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .denoiser import ConditionBundle, DenoiserParams, denoise, embed_timestep, \
    encode_audio, encode_identity
from .diffusion import DiffusionState, NoiseSchedule, ancestral_step, ddim_step, \
    ddim_timesteps
from .sequences import AudioFeatureSequence, COMPONENT_DIMS, MotionSequence

DIM_TO_COMPONENT = {v: k for k, v in COMPONENT_DIMS.items()}

FULL_DIM = 70
_COMPONENT_ORDER = ("lips", "expression", "pose")


@dataclass
class SamplerConfig:
    mode: str = "ddim"
    ddim_steps: int = 25
    chunk_len: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("ancestral", "ddim"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")
        if self.chunk_len < 2:
            raise ValueError("chunk_len must be >= 2")
        if self.ddim_steps < 1:
            raise ValueError("ddim_steps must be >= 1")


# ---------------------------------------------------------------------------
# component index map


def default_component_map() -> list[tuple[str, int]]:
    """full-vector index -> (component, local index).

    Expression coefficients occupy indices 0..50, the 13 mouth-region
    coefficients 51..63, head pose 64..69. The mapping is a declared
    convention; all assembly logic works off the table, never off these
    literals.
    """
    table = [("expression", i) for i in range(51)]
    table += [("lips", i) for i in range(13)]
    table += [("pose", i) for i in range(6)]
    return table


def validate_component_map(table: list[tuple[str, int]]) -> None:
    if len(table) != FULL_DIM:
        raise ValueError(f"index map must cover {FULL_DIM} entries, got {len(table)}")
    for tag in _COMPONENT_ORDER:
        locals_ = sorted(loc for t, loc in table if t == tag)
        if locals_ != list(range(COMPONENT_DIMS[tag])):
            raise ValueError(f"index map does not cover component {tag!r} exactly")


def write_component_map(path, table: list[tuple[str, int]]) -> None:
    validate_component_map(table)
    with open(path, "w") as fh:
        for full_idx, (tag, loc) in enumerate(table):
            fh.write(f"{full_idx} {tag} {loc}\n")


def read_component_map(path) -> list[tuple[str, int]]:
    table: list[tuple[str, int]] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            full_idx, tag, loc = line.split()
            if int(full_idx) != len(table):
                raise ValueError(f"index map rows out of order at {full_idx}")
            table.append((tag, int(loc)))
    validate_component_map(table)
    return table


def assemble_components(lips: np.ndarray, expr: np.ndarray, pose: np.ndarray,
                        index_map: list[tuple[str, int]] | None = None) -> np.ndarray:
    """Interleave (N,13), (N,51), (N,6) parts into the full (N,70) layout."""
    lips, expr, pose = (np.asarray(a, dtype=np.float64) for a in (lips, expr, pose))
    parts = {"lips": lips, "expression": expr, "pose": pose}
    n = lips.shape[0]
    for tag, a in parts.items():
        if a.ndim != 2 or a.shape != (n, COMPONENT_DIMS[tag]):
            raise ValueError(
                f"{tag} part must be ({n}, {COMPONENT_DIMS[tag]}), got {a.shape}"
            )
    table = index_map or default_component_map()
    validate_component_map(table)
    out = np.empty((n, FULL_DIM))
    for full_idx, (tag, loc) in enumerate(table):
        out[:, full_idx] = parts[tag][:, loc]
    return out


def split_components(full: np.ndarray,
                     index_map: list[tuple[str, int]] | None = None
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of assemble_components; recovers the parts bit-for-bit."""
    full = np.asarray(full, dtype=np.float64)
    if full.ndim != 2 or full.shape[1] != FULL_DIM:
        raise ValueError(f"full layout must be (N, {FULL_DIM}), got {full.shape}")
    table = index_map or default_component_map()
    validate_component_map(table)
    n = full.shape[0]
    parts = {tag: np.empty((n, COMPONENT_DIMS[tag])) for tag in _COMPONENT_ORDER}
    for full_idx, (tag, loc) in enumerate(table):
        parts[tag][:, loc] = full[:, full_idx]
    return parts["lips"], parts["expression"], parts["pose"]


# ---------------------------------------------------------------------------
# chunk sampling


def _normalize(params: DenoiserParams, frames: np.ndarray) -> np.ndarray:
    return (frames - params.norm_mean) / params.norm_std


def _denormalize(params: DenoiserParams, frames: np.ndarray) -> np.ndarray:
    return frames * params.norm_std + params.norm_mean


def sample_chunk(params: DenoiserParams, audio_chunk: AudioFeatureSequence,
                 first_frame: np.ndarray, sched: NoiseSchedule, cfg: SamplerConfig,
                 denoise_fn=None) -> MotionSequence:
    """Run the full reverse chain for one chunk.

    first_frame is a (1, d_motion) frame in raw (denormalized) units; the
    chain itself runs in normalized units. ddim mode is deterministic for a
    fixed seed; ancestral mode draws per-step noise from the same stream.
    denoise_fn overrides the network (used for oracle tests); it receives
    (DiffusionState, ConditionBundle) and must return the x0 prediction.
    """
    net = params.config
    if audio_chunk.n_frames != cfg.chunk_len:
        raise ValueError(
            f"audio chunk has {audio_chunk.n_frames} frames, expected {cfg.chunk_len}"
        )
    if cfg.chunk_len > net.max_frames:
        raise ValueError(f"chunk_len {cfg.chunk_len} exceeds max_frames={net.max_frames}")
    first_frame = np.asarray(first_frame, dtype=np.float64).reshape(1, -1)
    if first_frame.shape[1] != net.d_motion:
        raise ValueError(
            f"first frame width {first_frame.shape[1]} != d_motion={net.d_motion}"
        )
    if params.trained_T is not None and params.trained_T != sched.T:
        raise ValueError(
            f"params were trained with T={params.trained_T}, schedule has T={sched.T}"
        )
    if cfg.mode == "ddim" and cfg.ddim_steps > sched.T:
        raise ValueError(f"ddim_steps {cfg.ddim_steps} > T={sched.T}")

    audio_enc = encode_audio(params, audio_chunk)
    id_enc = encode_identity(params, _normalize(params, first_frame))
    if denoise_fn is None:
        denoise_fn = lambda state, cond: denoise(params, state, cond)

    def bundle(t: int) -> ConditionBundle:
        return ConditionBundle(audio_encoding=audio_enc, id_encoding=id_enc,
                               timestep_embedding=embed_timestep(t, net.d_model))

    rng = np.random.default_rng(cfg.seed)
    state = DiffusionState(rng.standard_normal((cfg.chunk_len, net.d_motion)),
                           t=sched.T)
    if cfg.mode == "ancestral":
        for t in range(sched.T, 0, -1):
            x0_hat = denoise_fn(state, bundle(t))
            gamma = rng.standard_normal(state.x_t.shape) if t > 1 \
                else np.zeros_like(state.x_t)
            state = ancestral_step(state, x0_hat, sched, gamma)
    else:
        steps = ddim_timesteps(sched.T, cfg.ddim_steps)
        for t, t_prev in zip(steps[:-1], steps[1:]):
            x0_hat = denoise_fn(state, bundle(t))
            state = ddim_step(state, x0_hat, t_prev, sched)

    frames = _denormalize(params, state.x_t)
    tag = DIM_TO_COMPONENT.get(net.d_motion, "full")
    return MotionSequence(frames=frames, fps=audio_chunk.fps, component_tag=tag)


def derive_chunk_seed(seed: int, chunk_index: int, component_tag: str) -> int:
    """Stable per-(chunk, component) stream seed for recursive generation."""
    comp_id = _COMPONENT_ORDER.index(component_tag)
    ss = np.random.SeedSequence([int(seed), int(chunk_index), comp_id])
    return int(ss.generate_state(1)[0])


def generate_long(params_lips: DenoiserParams, params_expr: DenoiserParams,
                  params_pose: DenoiserParams, audio: AudioFeatureSequence,
                  identity_frame: np.ndarray, sched: NoiseSchedule,
                  cfg: SamplerConfig,
                  index_map: list[tuple[str, int]] | None = None,
                  trace: list | None = None) -> MotionSequence:
    """Generate a full 70-dim sequence covering the whole audio input.

    The audio is cut into chunk_len windows (the final window zero-padded,
    the output truncated back). Chunk 1 is conditioned on the identity
    frame's component slices; chunk k>1 on the last generated frame of
    chunk k-1, per component. Seams inherit coherence only through that
    first-pose conditioning.
    """
    identity_frame = np.asarray(identity_frame, dtype=np.float64).reshape(1, -1)
    if identity_frame.shape[1] != FULL_DIM:
        raise ValueError(
            f"identity frame must have width {FULL_DIM}, got {identity_frame.shape[1]}"
        )
    all_params = {"lips": params_lips, "expression": params_expr, "pose": params_pose}
    for tag, p in all_params.items():
        if p.config.d_motion != COMPONENT_DIMS[tag]:
            raise ValueError(
                f"{tag} params have d_motion={p.config.d_motion}, "
                f"expected {COMPONENT_DIMS[tag]}"
            )
    table = index_map or default_component_map()

    n_audio = audio.n_frames
    n_chunks = -(-n_audio // cfg.chunk_len)
    padded = np.zeros((n_chunks * cfg.chunk_len, audio.dim))
    padded[:n_audio] = audio.features

    id_parts = split_components(identity_frame, table)
    condition = dict(zip(_COMPONENT_ORDER, id_parts))

    full_chunks = []
    for k in range(n_chunks):
        window = padded[k * cfg.chunk_len:(k + 1) * cfg.chunk_len]
        audio_chunk = AudioFeatureSequence(window, fps=audio.fps)
        outs = {}
        for tag in _COMPONENT_ORDER:
            chunk_cfg = replace(cfg, seed=derive_chunk_seed(cfg.seed, k, tag))
            if trace is not None:
                trace.append({"chunk": k, "component": tag,
                              "condition": condition[tag].copy()})
            outs[tag] = sample_chunk(all_params[tag], audio_chunk, condition[tag],
                                     sched, chunk_cfg)
            condition[tag] = outs[tag].frames[-1:].copy()
        full_chunks.append(assemble_components(
            outs["lips"].frames, outs["expression"].frames, outs["pose"].frames,
            table))
    frames = np.concatenate(full_chunks)[:n_audio]
    return MotionSequence(frames=frames, fps=audio.fps, component_tag="full")
