"""Landmark-based evaluation: similarity alignment, LMD, AHD, seam ratio.

Landmark distances are computed after (optionally) aligning each generated
frame onto its ground-truth frame with a least-squares similarity
transform, which removes head-pose translation/rotation/scale so that only
expression and lip error remains. Frames where the alignment is degenerate
are dropped and counted, never silently imputed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sequences import MotionSequence

# dlib 68-landmark conventions
NOSE_LANDMARK = 30
MOUTH_LANDMARKS = tuple(range(48, 68))


class DegenerateCloudError(ValueError):
    """Source landmark cloud carries no usable geometry."""


@dataclass
class LandmarkSequence:
    """(N, K, 2) pixel-space landmark coordinates."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 3 or self.points.shape[2] != 2:
            raise ValueError(f"points must be (N, K, 2), got {self.points.shape}")
        if self.points.shape[0] < 1 or self.points.shape[1] < 1:
            raise ValueError("need at least one frame and one landmark")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points contain non-finite values")

    @property
    def n_frames(self) -> int:
        return self.points.shape[0]

    @property
    def n_landmarks(self) -> int:
        return self.points.shape[1]

    def subset(self, indices) -> "LandmarkSequence":
        return LandmarkSequence(self.points[:, list(indices), :])


@dataclass
class SimilarityTransform:
    scale: float
    rotation: np.ndarray   # (2, 2), det +1
    translation: np.ndarray  # (2,)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(2)
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(2), atol=1e-9):
            raise ValueError("rotation is not orthogonal")
        if np.linalg.det(self.rotation) < 0:
            raise ValueError("rotation must have determinant +1")

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return self.scale * points @ self.rotation.T + self.translation


def kabsch_umeyama(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform:
    """Least-squares similarity transform mapping src onto dst.

    Minimizes sum ||s R src_i + t - dst_i||^2 over scale, rotation and
    translation, with reflections disallowed (determinant sign correction).

    Parameters
    ----------
    src, dst : (K, 2) arrays of corresponding points, K >= 2.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 2 or src.shape != dst.shape:
        raise ValueError(f"need matching (K, 2) clouds, got {src.shape}, {dst.shape}")
    k = src.shape[0]
    if k < 2:
        raise ValueError("need at least 2 points")

    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    sc = src - mu_src
    dc = dst - mu_dst
    var_src = (sc ** 2).sum() / k
    if var_src < 1e-12 * max(1.0, float(np.abs(src).max()) ** 2):
        raise DegenerateCloudError("source landmarks are all coincident")

    cov = dc.T @ sc / k
    u, d, vt = np.linalg.svd(cov)
    s_fix = np.eye(2)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[1, 1] = -1.0
    rot = u @ s_fix @ vt
    scale = float(np.trace(np.diag(d) @ s_fix)) / var_src
    if scale <= 0:
        raise DegenerateCloudError("alignment collapsed to non-positive scale")
    trans = mu_dst - scale * rot @ mu_src
    return SimilarityTransform(scale=scale, rotation=rot, translation=trans)


@dataclass
class LmdReport:
    value: float
    frames_used: int
    frames_dropped: int


def lmd_report(gen: LandmarkSequence, gt: LandmarkSequence,
               align: bool) -> LmdReport:
    """Mean Euclidean landmark distance, pooled over frames and landmarks."""
    if gen.points.shape != gt.points.shape:
        raise ValueError(
            f"landmark shapes differ: {gen.points.shape} vs {gt.points.shape}"
        )
    dists = []
    dropped = 0
    for i in range(gen.n_frames):
        g = gen.points[i]
        r = gt.points[i]
        if align:
            try:
                g = kabsch_umeyama(g, r).apply(g)
            except DegenerateCloudError:
                dropped += 1
                continue
        dists.append(np.linalg.norm(g - r, axis=1))
    if not dists:
        raise DegenerateCloudError("every frame was degenerate; nothing to average")
    return LmdReport(value=float(np.mean(np.concatenate(dists))),
                     frames_used=gen.n_frames - dropped, frames_dropped=dropped)


def lmd(gen: LandmarkSequence, gt: LandmarkSequence, align: bool) -> float:
    return lmd_report(gen, gt, align).value


def ahd(landmarks: LandmarkSequence, nose_index: int = NOSE_LANDMARK) -> float:
    """Average displacement of the nose landmark from its first-frame spot.

    The first frame contributes zero but stays in the average.
    """
    if not 0 <= nose_index < landmarks.n_landmarks:
        raise ValueError(
            f"nose index {nose_index} out of range for K={landmarks.n_landmarks}"
        )
    nose = landmarks.points[:, nose_index, :]
    return float(np.mean(np.linalg.norm(nose - nose[0], axis=1)))


def seam_discontinuity(seq, chunk_len: int) -> float:
    """Ratio of mean frame-to-frame jump at chunk boundaries to the rest.

    Accepts a MotionSequence or a plain (N, d) array. 1.0 means seams are
    statistically invisible. Sequences with no seam (shorter than one
    chunk) and constant sequences (0/0) return 1.0 by convention; a clean
    interior with jumping seams returns inf.
    """
    chunk_len = int(chunk_len)
    if chunk_len < 2:
        raise ValueError("chunk_len must be >= 2")
    frames = seq.frames if isinstance(seq, MotionSequence) else \
        np.asarray(seq, dtype=np.float64)
    n = frames.shape[0]
    if n <= chunk_len:
        return 1.0
    jumps = np.linalg.norm(np.diff(frames, axis=0), axis=1)  # jump i: frames i->i+1
    # jump index j sits between frames j and j+1; seams fall before frames
    # chunk_len, 2*chunk_len, ... i.e. at jump indices k*chunk_len - 1
    seam_idx = np.arange(chunk_len, n, chunk_len) - 1
    mask = np.zeros(len(jumps), dtype=bool)
    mask[seam_idx] = True
    seam_mean = jumps[mask].mean() if mask.any() else 0.0
    rest = jumps[~mask]
    rest_mean = rest.mean() if rest.size else 0.0
    if seam_mean == 0.0 and rest_mean == 0.0:
        return 1.0
    if rest_mean == 0.0:
        return float("inf")
    return float(seam_mean / rest_mean)
