"""Fixed-shape token sequences from variable-length modality features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PipelineConfig:
    audio_tokens: int = 64
    video_frames: int = 16
    spatial_grid: int = 2
    global_tokens: int = 16

    def __post_init__(self):
        for name in ("audio_tokens", "video_frames", "spatial_grid", "global_tokens"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def video_tokens(self) -> int:
        return self.video_frames * self.spatial_grid**2


def pool_windows(length: int, target: int) -> list[tuple[int, int]]:
    """Half-open windows [floor(i*L/T), ceil((i+1)*L/T)) for i < T."""
    return [(i * length // target, -(-(i + 1) * length // target)) for i in range(target)]


def adaptive_pool_1d(seq: np.ndarray, target: int) -> np.ndarray:
    """Pool an ``[L, d]`` sequence to ``target`` rows.

    Sequences shorter than ``target`` are zero-padded at the end instead
    of being stretched.
    """
    seq = np.asarray(seq)
    if seq.ndim != 2 or seq.shape[0] == 0 or seq.shape[1] == 0:
        raise ValueError("empty sequence")
    if target < 1:
        raise ValueError("target must be >= 1")
    length, dim = seq.shape
    if length < target:
        out = np.zeros((target, dim), dtype=seq.dtype)
        out[:length] = seq
        return out
    if length == target:
        return seq.copy()
    out = np.stack(
        [seq[lo:hi].mean(axis=0, dtype=np.float64) for lo, hi in pool_windows(length, target)]
    )
    return out.astype(seq.dtype, copy=False)


def sample_frames(n: int, k: int) -> list[int]:
    """Uniformly spaced frame indices, repeating the last frame when n < k."""
    if n < 1 or k < 1:
        raise ValueError("n and k must be >= 1")
    if n < k:
        return list(range(n)) + [n - 1] * (k - n)
    if k == 1:
        return [0]
    # exact integer round-half-up of j*(n-1)/(k-1)
    return [(2 * j * (n - 1) + (k - 1)) // (2 * (k - 1)) for j in range(k)]


def spatial_pool(frame: np.ndarray, grid: int) -> np.ndarray:
    """Average an ``[H, W, d]`` grid into ``grid*grid`` row-major cells."""
    frame = np.asarray(frame)
    if frame.ndim != 3:
        raise ValueError(f"expected [H, W, d] frame, got shape {frame.shape}")
    h, w, _ = frame.shape
    if h < grid or w < grid:
        raise ValueError("grid exceeds frame")
    cells = [
        frame[r0:r1, c0:c1].mean(axis=(0, 1), dtype=np.float64)
        for r0, r1 in pool_windows(h, grid)
        for c0, c1 in pool_windows(w, grid)
    ]
    return np.stack(cells).astype(frame.dtype, copy=False)


def middle_frame(n: int) -> int:
    if n < 1:
        raise ValueError("n must be >= 1")
    return n // 2


def broadcast_global(cls: np.ndarray, tokens: int) -> np.ndarray:
    cls = np.asarray(cls)
    if cls.ndim != 2 or cls.shape[0] != 1:
        raise ValueError("expected single token")
    return np.repeat(cls, tokens, axis=0)


@dataclass
class ModalityTokens:
    """Normalized streams for one clip.

    ``audio`` and ``temporal`` feed both the fusion module and the prompt,
    ``global_ctx`` is the broadcast class token used only for fusion and
    ``image`` holds the retained patch tokens of the middle frame.
    """

    audio: np.ndarray
    global_ctx: np.ndarray
    temporal: np.ndarray
    image: np.ndarray


def temporal_tokens(video: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    """[n, H, W, d] frame grids -> [K*g*g, d] tokens, frame-major."""
    if video.ndim != 4:
        raise ValueError(f"expected [frames, H, W, d] video, got shape {video.shape}")
    idx = sample_frames(video.shape[0], cfg.video_frames)
    return np.concatenate([spatial_pool(video[i], cfg.spatial_grid) for i in idx])


def normalize_clip(
    audio: np.ndarray, video: np.ndarray, global_frame: np.ndarray, cfg: PipelineConfig
) -> ModalityTokens:
    """Token-normalize one clip.

    ``global_frame`` is the middle-frame encoding laid out as ``[1 + P, d]``:
    the class token in row 0 followed by ``P`` patch tokens.
    """
    if global_frame.ndim != 2 or global_frame.shape[0] < 2:
        raise ValueError("global frame needs a class token and at least one patch")
    return ModalityTokens(
        audio=adaptive_pool_1d(audio, cfg.audio_tokens),
        global_ctx=broadcast_global(global_frame[:1], cfg.audio_tokens),
        temporal=temporal_tokens(video, cfg),
        image=adaptive_pool_1d(global_frame[1:], cfg.global_tokens),
    )
