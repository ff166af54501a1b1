"""Procedural synthetic clips: smooth moving face-like patterns.

Self-contained stand-in for a real high-quality face-video corpus. Each clip
is a colored background gradient plus an elliptical "head" with eyes and a
mouth drifting along a smooth trajectory, rendered with soft analytic masks
so the content is band-limited and codec-friendly.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .clips import VideoClip, save_clip


def _soft_mask(dist: np.ndarray, softness: float) -> np.ndarray:
    # dist < 0 inside the shape; softness in pixels
    return 1.0 / (1.0 + np.exp(np.clip(dist / softness, -30.0, 30.0)))


def _ellipse(xx, yy, cx, cy, rx, ry):
    return np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2) - 1.0


def make_toy_clip(
    seed: int,
    frames: int = 8,
    size: int = 64,
    channels: int = 3,
) -> VideoClip:
    """Render one deterministic clip; distinct seeds give distinct scenes."""
    rng = np.random.default_rng(seed)
    h = w = size
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")

    bg_a = rng.uniform(0.15, 0.55, size=3)
    bg_b = rng.uniform(0.35, 0.85, size=3)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(angle) * xx + np.sin(angle) * yy) / max(h, w)
    ramp = (ramp - ramp.min()) / (ramp.max() - ramp.min() + 1e-9)

    skin = rng.uniform(0.55, 0.9, size=3)
    eye_col = rng.uniform(0.02, 0.2, size=3)
    mouth_col = rng.uniform(0.3, 0.7, size=3) * np.array([1.0, 0.45, 0.45])
    hair_col = rng.uniform(0.05, 0.45, size=3)

    rx = size * rng.uniform(0.21, 0.27)
    ry = size * rng.uniform(0.26, 0.33)
    x0 = size * rng.uniform(0.4, 0.6)
    y0 = size * rng.uniform(0.42, 0.58)
    vx, vy = rng.uniform(-1.6, 1.6, size=2)  # px per frame
    wobble = rng.uniform(0.0, 0.8)
    phase = rng.uniform(0, 2 * np.pi)
    soft = size * 0.02 + 0.6

    out = np.empty((frames, channels, h, w), dtype=np.float32)
    for f in range(frames):
        cx = x0 + vx * f + wobble * np.sin(phase + 0.9 * f)
        cy = y0 + vy * f + wobble * np.cos(phase + 0.7 * f)
        img = bg_a[:, None, None] + (bg_b - bg_a)[:, None, None] * ramp[None]

        head = _soft_mask(_ellipse(xx, yy, cx, cy, rx, ry) * min(rx, ry), soft)
        hair = _soft_mask(_ellipse(xx, yy, cx, cy - 0.45 * ry, rx * 1.02, ry * 0.72) * min(rx, ry), soft)
        img = img * (1 - head[None]) + skin[:, None, None] * head[None]
        img = img * (1 - hair[None] * head[None]) + hair_col[:, None, None] * hair[None] * head[None]

        for side in (-1.0, 1.0):
            eye = _soft_mask(
                _ellipse(xx, yy, cx + side * 0.38 * rx, cy - 0.12 * ry, 0.16 * rx, 0.11 * ry) * 0.14 * rx,
                soft * 0.6,
            )
            img = img * (1 - eye[None]) + eye_col[:, None, None] * eye[None]
        mouth = _soft_mask(
            _ellipse(xx, yy, cx, cy + 0.45 * ry, 0.42 * rx, 0.12 * ry) * 0.12 * rx, soft * 0.6
        )
        img = img * (1 - mouth[None]) + mouth_col[:, None, None] * mouth[None]

        if channels == 1:
            img = img.mean(axis=0, keepdims=True)
        out[f] = np.clip(img, 0.0, 1.0)
    return VideoClip(out)


def make_toy_dataset(
    out_dir: str | Path,
    clips: int = 10,
    frames: int = 8,
    size: int = 64,
    seed: int = 0,
) -> list[Path]:
    """Write ``clips`` toy clip directories under ``out_dir``; returns their paths."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(clips):
        clip = make_toy_clip(seed * 100003 + i, frames=frames, size=size)
        path = root / f"clip_{i:03d}"
        save_clip(clip, path)
        paths.append(path)
    return paths
