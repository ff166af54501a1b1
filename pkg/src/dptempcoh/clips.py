"""Frame-sequence container and PNG directory I/O.

A clip directory holds zero-padded numbered PNGs (``000000.png``, ...).
Pixel data lives in float32 arrays of shape (F, C, H, W) scaled to [0, 1],
channel order RGB.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch


@dataclass
class VideoClip:
    """A block of F frames, each C x H x W in [0, 1]."""

    frames: np.ndarray
    frame_rate: float | None = None

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 4:
            raise ValueError(f"frames must be (F, C, H, W), got shape {frames.shape}")
        f, c, h, w = frames.shape
        if f < 1:
            raise ValueError("clip needs at least one frame")
        if c not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {c}")
        if h < 8 or w < 8:
            raise ValueError(f"frames must be at least 8x8, got {h}x{w}")
        if not np.isfinite(frames).all():
            raise ValueError("frames contain non-finite values")
        if frames.min() < 0.0 or frames.max() > 1.0:
            raise ValueError("frame values must lie in [0, 1]")
        if self.frame_rate is not None and self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(self.frames.shape)  # type: ignore[return-value]

    def to_tensor(self) -> torch.Tensor:
        """(F, C, H, W) float32 tensor."""
        return torch.from_numpy(np.ascontiguousarray(self.frames))

    @classmethod
    def from_tensor(cls, t: torch.Tensor, frame_rate: float | None = None) -> "VideoClip":
        arr = t.detach().cpu().clamp(0.0, 1.0).numpy().astype(np.float32)
        return cls(arr, frame_rate)


def frame_files(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"clip directory not found: {directory}")
    exts = {".png", ".jpg", ".jpeg", ".bmp"}
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in exts)


def load_clip(directory_path: str | Path, frame_count: int) -> VideoClip:
    """Load the first ``frame_count`` frames of a clip directory.

    Frames are sorted lexicographically, normalized to [0, 1], and must share
    one H x W geometry.
    """
    files = frame_files(directory_path)
    if len(files) < frame_count:
        raise ValueError(
            f"insufficient frames in {directory_path}: found {len(files)}, need {frame_count}"
        )
    frames = []
    shape = None
    for path in files[:frame_count]:
        img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if img is None:
            raise IOError(f"failed to read frame {path}")
        if img.dtype == np.uint16:
            arr = img.astype(np.float32) / 65535.0
        else:
            arr = img.astype(np.float32) / 255.0
        if arr.ndim == 2:
            arr = arr[None, :, :]
        else:
            if arr.shape[2] == 4:
                arr = arr[:, :, :3]
            arr = cv2.cvtColor(arr, cv2.COLOR_BGR2RGB).transpose(2, 0, 1)
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise ValueError(
                f"inconsistent frame dimensions in {directory_path}: {arr.shape} vs {shape}"
            )
        frames.append(arr)
    return VideoClip(np.stack(frames, axis=0))


def save_clip(clip: VideoClip, directory_path: str | Path) -> list[Path]:
    """Write a clip as zero-padded numbered PNGs; returns the written paths."""
    directory = Path(directory_path)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i, frame in enumerate(clip.frames):
        img = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
        if img.shape[0] == 1:
            out = img[0]
        else:
            out = cv2.cvtColor(img.transpose(1, 2, 0), cv2.COLOR_RGB2BGR)
        path = directory / f"{i:06d}.png"
        if not cv2.imwrite(str(path), out):
            raise IOError(f"failed to write frame {path}")
        written.append(path)
    return written


def list_clip_dirs(root: str | Path) -> list[Path]:
    """Immediate subdirectories of ``root`` that contain at least one frame file."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"clip root not found: {root}")
    out = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        try:
            if frame_files(sub):
                out.append(sub)
        except FileNotFoundError:
            continue
    return out
