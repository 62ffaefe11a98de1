"""Domain types for per-frame motion parameters and aligned audio features.

A motion sequence is an (N, d) array of real coefficients: 64 expression
coefficients plus 6 head-pose values in the full layout, or one of the
component slices used by the separate lips / expression / pose models.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Width of each component slice of the 70-dim motion vector.
COMPONENT_DIMS = {"lips": 13, "expression": 51, "pose": 6, "full": 70}

DEFAULT_FPS = 25.0


def _as_float_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D (frames x dims), got shape {a.shape}")
    if a.shape[0] < 1:
        raise ValueError(f"{name} must contain at least one frame")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


@dataclass
class MotionSequence:
    """An (N, d) sequence of motion parameters at a fixed frame rate.

    ``component_tag`` pins d: lips=13, expression=51, pose=6, full=70.
    """

    frames: np.ndarray
    fps: float = DEFAULT_FPS
    component_tag: str = "full"

    def __post_init__(self):
        self.frames = _as_float_matrix(self.frames, "frames")
        if self.component_tag not in COMPONENT_DIMS:
            raise ValueError(f"unknown component tag {self.component_tag!r}")
        want = COMPONENT_DIMS[self.component_tag]
        if self.frames.shape[1] != want:
            raise ValueError(
                f"component {self.component_tag!r} requires d={want}, "
                f"got d={self.frames.shape[1]}"
            )
        if not (np.isfinite(self.fps) and self.fps > 0):
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class AudioFeatureSequence:
    """An (N, D_a) sequence of per-frame audio feature vectors."""

    features: np.ndarray
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        self.features = _as_float_matrix(self.features, "features")
        if not (np.isfinite(self.fps) and self.fps > 0):
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def check_paired(motion: MotionSequence, audio: AudioFeatureSequence) -> None:
    """Validate that a motion/audio pair is frame-aligned for training."""
    if motion.n_frames != audio.n_frames:
        raise ValueError(
            f"motion has {motion.n_frames} frames but audio has {audio.n_frames}"
        )
