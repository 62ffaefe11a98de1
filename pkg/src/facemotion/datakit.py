"""File formats, checkpointing, and the synthetic oracle dataset.

Sequence files are little-endian binary with a 5-byte magic, fixed header
and frame-major float32 payload. Checkpoints store float64 weight tables
behind a length-prefixed text header so parameters round-trip bit-exactly.

The synthetic dataset substitutes for real recordings at desk scale: audio
features follow a seeded smooth random process, and motion is a known
function of audio and frame index (the oracle), so the quality of trained
models can be scored against recomputable ground truth. The oracle is

    motion[i, j] = gain * sin(2*pi * freq[j mod L] * i) * mean(audio[i]) + noise

with per-component frequency lists emulating the scale/frequency disparity
between lip, expression and pose motion.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .denoiser import DenoiserConfig, DenoiserParams
from .autodiff import Tensor
from .metrics import LandmarkSequence
from .sequences import AudioFeatureSequence, COMPONENT_DIMS, MotionSequence

MOTION_MAGIC = b"MSEQ1"
AUDIO_MAGIC = b"AFEA1"
LANDMARK_MAGIC = b"LMRK1"
CHECKPOINT_MAGIC = b"CMDT1"

_TAG_TO_BYTE = {"full": 0, "lips": 1, "expression": 2, "pose": 3}
_BYTE_TO_TAG = {v: k for k, v in _TAG_TO_BYTE.items()}


class FormatError(ValueError):
    """Raised when a file does not match its declared format."""


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file: expected {n} bytes for {what}, "
                          f"got {len(data)}")
    return data


def _check_magic(fh, magic: bytes) -> None:
    got = fh.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {got!r}")


def _check_no_trailing(fh) -> None:
    if fh.read(1):
        raise FormatError("trailing bytes after payload")


# ---------------------------------------------------------------------------
# motion / audio / landmark files


def write_motion(path, seq: MotionSequence) -> None:
    n, d = seq.frames.shape
    with open(path, "wb") as fh:
        fh.write(MOTION_MAGIC)
        fh.write(struct.pack("<IIfB", d, n, seq.fps, _TAG_TO_BYTE[seq.component_tag]))
        fh.write(seq.frames.astype("<f4").tobytes())


def read_motion(path) -> MotionSequence:
    with open(path, "rb") as fh:
        _check_magic(fh, MOTION_MAGIC)
        d, n, fps, tag_byte = struct.unpack("<IIfB", _read_exact(fh, 13, "header"))
        if tag_byte not in _BYTE_TO_TAG:
            raise FormatError(f"unknown component tag byte {tag_byte}")
        payload = _read_exact(fh, 4 * n * d, "frame payload")
        _check_no_trailing(fh)
    frames = np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float64)
    return MotionSequence(frames=frames, fps=fps, component_tag=_BYTE_TO_TAG[tag_byte])


def write_audio_features(path, seq: AudioFeatureSequence) -> None:
    n, d = seq.features.shape
    with open(path, "wb") as fh:
        fh.write(AUDIO_MAGIC)
        fh.write(struct.pack("<IIf", d, n, seq.fps))
        fh.write(seq.features.astype("<f4").tobytes())


def read_audio_features(path) -> AudioFeatureSequence:
    with open(path, "rb") as fh:
        _check_magic(fh, AUDIO_MAGIC)
        d, n, fps = struct.unpack("<IIf", _read_exact(fh, 12, "header"))
        payload = _read_exact(fh, 4 * n * d, "feature payload")
        _check_no_trailing(fh)
    feats = np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float64)
    return AudioFeatureSequence(features=feats, fps=fps)


def write_landmarks(path, seq: LandmarkSequence) -> None:
    n, k, _ = seq.points.shape
    with open(path, "wb") as fh:
        fh.write(LANDMARK_MAGIC)
        fh.write(struct.pack("<II", k, n))
        fh.write(seq.points.astype("<f4").tobytes())


def read_landmarks(path) -> LandmarkSequence:
    with open(path, "rb") as fh:
        _check_magic(fh, LANDMARK_MAGIC)
        k, n = struct.unpack("<II", _read_exact(fh, 8, "header"))
        payload = _read_exact(fh, 8 * n * k, "landmark payload")
        _check_no_trailing(fh)
    pts = np.frombuffer(payload, dtype="<f4").reshape(n, k, 2).astype(np.float64)
    return LandmarkSequence(points=pts)


# ---------------------------------------------------------------------------
# checkpoint container


def save_checkpoint(path, params: DenoiserParams) -> None:
    """Versioned container: text header (config + tensor directory) + raw f64."""
    cfg = params.config
    tensors: dict[str, np.ndarray] = {
        "norm_mean": params.norm_mean, "norm_std": params.norm_std}
    for name, w in params.weights.items():
        tensors[f"w.{name}"] = w.data

    lines = ["version=1"]
    for f_name in ("d_motion", "d_audio", "d_model", "n_layers", "n_heads",
                   "audio_injection_mode", "use_id_conditioning", "max_frames",
                   "audio_encoder_layers"):
        v = getattr(cfg, f_name)
        lines.append(f"config.{f_name}={int(v) if isinstance(v, bool) else v}")
    lines.append(f"trained_T={params.trained_T if params.trained_T else 0}")
    offset = 0
    payload_parts = []
    for name in sorted(tensors):
        src = tensors[name]
        tag = "f4" if src.dtype == np.float32 else "f8"
        arr = np.ascontiguousarray(src, dtype="<" + tag)
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"tensor {name} {tag} {shape} {offset}")
        payload_parts.append(arr.tobytes())
        offset += arr.nbytes
    header = ("\n".join(lines) + "\n").encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for part in payload_parts:
            fh.write(part)


def load_checkpoint(path) -> DenoiserParams:
    with open(path, "rb") as fh:
        _check_magic(fh, CHECKPOINT_MAGIC)
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        header = _read_exact(fh, header_len, "header").decode()
        payload = fh.read()

    cfg_kv: dict[str, str] = {}
    directory: list[tuple[str, str, tuple[int, ...], int]] = []
    for line in header.splitlines():
        if line.startswith("tensor "):
            _, name, dtype, shape_s, offset_s = line.split()
            if dtype not in ("f4", "f8"):
                raise FormatError(f"unsupported tensor dtype {dtype!r}")
            shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
            directory.append((name, dtype, shape, int(offset_s)))
        elif "=" in line:
            k, v = line.split("=", 1)
            cfg_kv[k] = v
    if cfg_kv.get("version") != "1":
        raise FormatError(f"unsupported checkpoint version {cfg_kv.get('version')!r}")

    config = DenoiserConfig(
        d_motion=int(cfg_kv["config.d_motion"]),
        d_audio=int(cfg_kv["config.d_audio"]),
        d_model=int(cfg_kv["config.d_model"]),
        n_layers=int(cfg_kv["config.n_layers"]),
        n_heads=int(cfg_kv["config.n_heads"]),
        audio_injection_mode=cfg_kv["config.audio_injection_mode"],
        use_id_conditioning=bool(int(cfg_kv["config.use_id_conditioning"])),
        max_frames=int(cfg_kv["config.max_frames"]),
        audio_encoder_layers=int(cfg_kv["config.audio_encoder_layers"]),
    )
    tensors: dict[str, np.ndarray] = {}
    for name, dtype, shape, offset in directory:
        count = int(np.prod(shape)) if shape else 1
        itemsize = 4 if dtype == "f4" else 8
        if offset + itemsize * count > len(payload):
            raise FormatError(f"truncated payload for tensor {name!r}")
        tensors[name] = np.frombuffer(
            payload, dtype="<" + dtype, count=count,
            offset=offset).reshape(shape).copy()
    for required in ("norm_mean", "norm_std"):
        if required not in tensors:
            raise FormatError(f"checkpoint missing {required!r}")

    weights = {name[2:]: Tensor(arr, requires_grad=True)
               for name, arr in tensors.items() if name.startswith("w.")}
    trained_t = int(cfg_kv.get("trained_T", "0"))
    params = DenoiserParams(config=config, weights=weights,
                            norm_mean=tensors["norm_mean"].astype(np.float64),
                            norm_std=tensors["norm_std"].astype(np.float64),
                            trained_T=trained_t if trained_t else None)
    params.check_finite()
    return params


# ---------------------------------------------------------------------------
# manifests (line-oriented key=value text)


def write_manifest(path, entries: dict) -> None:
    with open(path, "w") as fh:
        for k, v in entries.items():
            fh.write(f"{k}={v}\n")


def read_manifest(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"manifest line without '=': {line!r}")
            k, v = line.split("=", 1)
            out[k] = v
    return out


# ---------------------------------------------------------------------------
# synthetic oracle dataset


@dataclass
class SyntheticSpec:
    n_sequences: int
    frames_per_sequence: int
    d_audio: int
    component_tag: str = "full"
    oracle_gain: float = 1.0
    oracle_frequencies: tuple = (0.04,)
    noise_sigma: float = 0.01
    seed: int = 0
    fps: float = 25.0

    def __post_init__(self):
        if self.component_tag not in COMPONENT_DIMS:
            raise ValueError(f"unknown component tag {self.component_tag!r}")
        if self.n_sequences < 1 or self.frames_per_sequence < 1 or self.d_audio < 1:
            raise ValueError("n_sequences, frames_per_sequence, d_audio must be >= 1")
        freqs = tuple(float(f) for f in self.oracle_frequencies)
        if not freqs or not all(np.isfinite(freqs)):
            raise ValueError("oracle_frequencies must be a non-empty finite list")
        if not (np.isfinite(self.oracle_gain) and np.isfinite(self.noise_sigma)
                and self.noise_sigma >= 0):
            raise ValueError("oracle_gain and noise_sigma must be finite, sigma >= 0")
        self.oracle_frequencies = freqs


@dataclass
class Dataset:
    root: Path
    manifest: dict[str, str]
    pairs: list = field(default_factory=list)  # (MotionSequence, AudioFeatureSequence)

    def __len__(self):
        return len(self.pairs)


def _smooth_mixture(rng, n: int, n_terms: int = 3) -> np.ndarray:
    """Bounded smooth random signal in [-1, 1]."""
    amps = rng.uniform(0.5, 1.0, n_terms)
    freqs = rng.uniform(0.004, 0.03, n_terms)
    phases = rng.uniform(0.0, 2 * np.pi, n_terms)
    i = np.arange(n)[:, None]
    sig = (amps * np.sin(2 * np.pi * freqs * i + phases)).sum(axis=1)
    return sig / amps.sum()


def synthesize_audio(n_frames: int, d_audio: int, rng: np.random.Generator,
                     fps: float = 25.0) -> AudioFeatureSequence:
    """Smooth random feature process with per-frame mean kept near 1.

    A shared envelope drives all feature dimensions so the per-frame mean
    carries real signal; small per-dimension deviations decorrelate the
    individual features.
    """
    common = 1.0 + 0.45 * _smooth_mixture(rng, n_frames)
    feats = np.empty((n_frames, d_audio))
    for f in range(d_audio):
        feats[:, f] = common + 0.05 * _smooth_mixture(rng, n_frames)
    return AudioFeatureSequence(features=feats.astype(np.float32).astype(np.float64),
                                fps=fps)


def make_synthetic_dataset(spec: SyntheticSpec, out_dir) -> Dataset:
    """Generate paired motion/audio files plus a manifest of oracle params.

    Audio depends only on (seed, sequence index), so specs differing in
    component/oracle settings but sharing a seed produce identical audio,
    letting one audio stream drive all three component datasets.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d_motion = COMPONENT_DIMS[spec.component_tag]
    pairs = []
    for idx in range(spec.n_sequences):
        audio_rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed, 1000, idx]))
        noise_rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed, 2000, _TAG_TO_BYTE[spec.component_tag],
                                    idx]))
        audio = synthesize_audio(spec.frames_per_sequence, spec.d_audio, audio_rng,
                                 fps=spec.fps)
        clean = _oracle_frames(spec.oracle_gain, spec.oracle_frequencies,
                               audio.features, 0, d_motion)
        noisy = clean + noise_rng.normal(0.0, spec.noise_sigma, size=clean.shape)
        motion = MotionSequence(
            frames=noisy.astype(np.float32).astype(np.float64),
            fps=spec.fps, component_tag=spec.component_tag)
        write_motion(out_dir / f"seq_{idx:04d}.mseq", motion)
        write_audio_features(out_dir / f"seq_{idx:04d}.afea", audio)
        pairs.append((motion, audio))

    manifest = {
        "format": "synthetic-oracle-v1",
        "n_sequences": spec.n_sequences,
        "frames_per_sequence": spec.frames_per_sequence,
        "d_audio": spec.d_audio,
        "component": spec.component_tag,
        "oracle_gain": repr(spec.oracle_gain),
        "oracle_frequencies": ",".join(repr(f) for f in spec.oracle_frequencies),
        "noise_sigma": repr(spec.noise_sigma),
        "seed": spec.seed,
        "fps": repr(spec.fps),
    }
    write_manifest(out_dir / "manifest.txt", manifest)
    return Dataset(root=out_dir, manifest={k: str(v) for k, v in manifest.items()},
                   pairs=pairs)


def _oracle_frames(gain: float, frequencies, audio_features: np.ndarray,
                   start_index: int, d_motion: int) -> np.ndarray:
    freqs = np.asarray([float(f) for f in frequencies])
    feats = np.asarray(audio_features, dtype=np.float64)
    m = feats.mean(axis=1)
    n = feats.shape[0]
    i = start_index + np.arange(n)
    out = np.empty((n, d_motion))
    for j in range(d_motion):
        f = freqs[j % len(freqs)]
        out[:, j] = gain * np.sin(2 * np.pi * f * i) * m
    return out


def oracle_from_manifest(manifest: dict, audio: AudioFeatureSequence,
                         start_index: int = 0) -> np.ndarray:
    """Recompute the noiseless oracle for an audio window via the manifest."""
    gain = float(manifest["oracle_gain"])
    freqs = [float(f) for f in manifest["oracle_frequencies"].split(",")]
    d_motion = COMPONENT_DIMS[manifest["component"]]
    return _oracle_frames(gain, freqs, audio.features, start_index, d_motion)


def load_dataset(path) -> Dataset:
    root = Path(path)
    manifest = read_manifest(root / "manifest.txt")
    pairs = []
    for mpath in sorted(root.glob("seq_*.mseq")):
        apath = mpath.with_suffix(".afea")
        if not apath.exists():
            raise FormatError(f"missing audio file for {mpath.name}")
        pairs.append((read_motion(mpath), read_audio_features(apath)))
    if not pairs:
        raise FormatError(f"no sequence files found under {root}")
    return Dataset(root=root, manifest=manifest, pairs=pairs)


# ---------------------------------------------------------------------------
# windowing / resampling


def crop_random_window(pair, window_len: int, rng: np.random.Generator):
    """Aligned random motion/audio windows of exactly window_len frames."""
    motion, audio = pair
    n = motion.n_frames
    if audio.n_frames != n:
        raise ValueError(f"pair is misaligned: {n} motion vs {audio.n_frames} audio")
    if n < window_len:
        raise ValueError(f"sequence of {n} frames is shorter than window {window_len}")
    start = int(rng.integers(0, n - window_len + 1))
    mw = MotionSequence(frames=motion.frames[start:start + window_len],
                        fps=motion.fps, component_tag=motion.component_tag)
    aw = AudioFeatureSequence(features=audio.features[start:start + window_len],
                              fps=audio.fps)
    return mw, aw


def resample_to_fps(features: AudioFeatureSequence,
                    target_fps: float) -> AudioFeatureSequence:
    """Re-time features to target_fps by mean-pooling or linear interpolation."""
    if not (np.isfinite(target_fps) and target_fps > 0):
        raise ValueError(f"target fps must be positive, got {target_fps}")
    if features.n_frames == 0:
        raise ValueError("empty input")
    if target_fps == features.fps:
        return AudioFeatureSequence(features.features.copy(), fps=features.fps)
    n = features.n_frames
    out_len = int(round(n * target_fps / features.fps))
    if out_len < 1:
        raise ValueError("resampling would produce an empty sequence")
    ratio = features.fps / target_fps
    if abs(ratio - round(ratio)) < 1e-9 and ratio >= 1:
        k = int(round(ratio))
        groups = [features.features[i * k:(i + 1) * k] for i in range(out_len)]
        out = np.stack([g.mean(axis=0) for g in groups])
    else:
        pos = np.minimum(np.arange(out_len) * ratio, n - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n - 1)
        frac = (pos - lo)[:, None]
        out = features.features[lo] * (1 - frac) + features.features[hi] * frac
    return AudioFeatureSequence(features=out, fps=target_fps)
