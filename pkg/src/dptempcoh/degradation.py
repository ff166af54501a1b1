"""Blind degradation synthesis: blur, bicubic down/up, noise, JPEG round-trip.

Per frame, in order: Gaussian blur (kernel side 2*ceil(3*sigma)+1, reflective
padding), bicubic downsample by a real factor b >= 1, bicubic upsample back to
the source geometry, additive Gaussian noise with std sigma/255, JPEG
round-trip at an integer quality, clamp to [0, 1]. All randomness flows
through explicit numpy generators so (clip, seed) pairs reproduce bit-exactly
for a fixed JPEG codec build.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from .clips import VideoClip

# Outer legal domains implied by the bracket-expanded sampling protocol.
RHO_DOMAIN = (0.0, 11.0)
B_DOMAIN = (1.0, 33.0)
SIGMA_DOMAIN = (0.0, 11.0)
W_DOMAIN = (1, 100)

_MIN_BLUR_SIGMA = 1e-4


@dataclass(frozen=True)
class DegradationParams:
    """One sampled draw of the degradation pipeline parameters."""

    blur_sigma: float  # > 0
    down_factor: float  # >= 1
    noise_sigma: float  # >= 0, in 0-255 pixel units
    jpeg_quality: int  # in [1, 100]

    def __post_init__(self) -> None:
        if not self.blur_sigma > 0:
            raise ValueError("blur_sigma must be > 0")
        if self.down_factor < 1:
            raise ValueError("down_factor must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not (W_DOMAIN[0] <= int(self.jpeg_quality) <= W_DOMAIN[1]):
            raise ValueError("jpeg_quality must lie in [1, 100]")


@dataclass(frozen=True)
class DegradationRanges:
    """Closed sampling intervals plus the seed that drives all draws."""

    rho_range: tuple[float, float]
    b_range: tuple[float, float]
    sigma_range: tuple[float, float]
    w_range: tuple[float, float]
    seed: int = 0

    def __post_init__(self) -> None:
        _check_interval("rho_range", self.rho_range, RHO_DOMAIN)
        _check_interval("b_range", self.b_range, B_DOMAIN)
        _check_interval("sigma_range", self.sigma_range, SIGMA_DOMAIN)
        _check_interval("w_range", self.w_range, W_DOMAIN)

    @classmethod
    def from_base(
        cls,
        rho: tuple[float, float] = (1.0, 10.0),
        b: tuple[float, float] = (2.0, 32.0),
        sigma: tuple[float, float] = (0.0, 10.0),
        w: tuple[float, float] = (50, 100),
        seed: int = 0,
    ) -> "DegradationRanges":
        """Expand base ranges into sampling brackets: rho/b/sigma +-1, w +-5.

        Lower bounds are floored at their legal minima (b >= 1, sigma >= 0,
        w >= 1); w is capped at 100.
        """
        return cls(
            rho_range=(max(rho[0] - 1.0, _MIN_BLUR_SIGMA), rho[1] + 1.0),
            b_range=(max(b[0] - 1.0, 1.0), b[1] + 1.0),
            sigma_range=(max(sigma[0] - 1.0, 0.0), sigma[1] + 1.0),
            w_range=(max(w[0] - 5, 1), min(w[1] + 5, 100)),
            seed=seed,
        )


def _check_interval(name: str, interval: tuple[float, float], domain: tuple[float, float]) -> None:
    lo, hi = interval
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ValueError(f"{name} must be a nonempty closed interval, got {interval}")
    if lo < domain[0] or hi > domain[1]:
        raise ValueError(f"{name} {interval} outside legal domain {domain}")


def sample_degradation_params(
    ranges: DegradationRanges, rng: np.random.Generator | None = None
) -> DegradationParams:
    """Draw one parameter record, uniformly per interval, clamped to legal domains."""
    if rng is None:
        rng = np.random.default_rng(ranges.seed)
    rho = max(float(rng.uniform(*ranges.rho_range)), _MIN_BLUR_SIGMA)
    b = max(float(rng.uniform(*ranges.b_range)), 1.0)
    sigma = max(float(rng.uniform(*ranges.sigma_range)), 0.0)
    w = int(np.clip(round(rng.uniform(*ranges.w_range)), W_DOMAIN[0], W_DOMAIN[1]))
    return DegradationParams(rho, b, sigma, w)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D Gaussian taps truncated at 3*sigma, normalized to sum 1."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur(frame: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    out = ndimage.convolve1d(frame, k, axis=1, mode="reflect")
    return ndimage.convolve1d(out, k, axis=2, mode="reflect")


def _resize_chw(frame: np.ndarray, height: int, width: int) -> np.ndarray:
    hwc = np.ascontiguousarray(frame.transpose(1, 2, 0))
    out = cv2.resize(hwc, (width, height), interpolation=cv2.INTER_CUBIC)
    if out.ndim == 2:
        out = out[:, :, None]
    return out.transpose(2, 0, 1)


def _jpeg_roundtrip(frame: np.ndarray, quality: int) -> np.ndarray:
    """8-bit baseline JPEG encode/decode; gray input is replicated to 3 channels."""
    c = frame.shape[0]
    img = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    hwc = img.transpose(1, 2, 0)
    if c == 1:
        hwc = np.repeat(hwc, 3, axis=2)
    ok, buf = cv2.imencode(".jpg", hwc, [int(cv2.IMWRITE_JPEG_QUALITY), int(quality)])
    if not ok:
        raise RuntimeError("JPEG encoding failed")
    dec = cv2.imdecode(buf, cv2.IMREAD_COLOR)
    out = dec.astype(np.float32) / 255.0
    if c == 1:
        out = out.mean(axis=2, keepdims=True)
    return out.transpose(2, 0, 1)


def jpeg_codec_identity() -> str:
    """Identity of the JPEG codec build, recorded in manifests."""
    return f"opencv-{cv2.__version__}"


def degrade_frame(
    frame: np.ndarray,
    params: DegradationParams,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Apply the full degradation chain to one (C, H, W) frame in [0, 1].

    ``rng`` drives the additive noise; omitting it yields a fixed seed so the
    call is deterministic on its own.
    """
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim != 3:
        raise ValueError(f"frame must be (C, H, W), got shape {frame.shape}")
    if not np.isfinite(frame).all():
        raise ValueError("frame contains non-finite values")
    if rng is None:
        rng = np.random.default_rng(0)
    _, h, w = frame.shape

    out = _blur(frame, params.blur_sigma)
    if params.down_factor > 1.0:
        dh = max(1, int(round(h / params.down_factor)))
        dw = max(1, int(round(w / params.down_factor)))
        out = _resize_chw(out, dh, dw)
        out = _resize_chw(out, h, w)
    if params.noise_sigma > 0:
        out = out + rng.normal(0.0, params.noise_sigma / 255.0, size=out.shape)
    out = _jpeg_roundtrip(out.astype(np.float32), params.jpeg_quality)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def degrade_clip(
    clip: VideoClip,
    ranges: DegradationRanges,
    per_clip_params: bool = True,
) -> tuple[VideoClip, DegradationParams]:
    """Degrade every frame of a clip.

    With ``per_clip_params`` (the default) one parameter draw is shared by all
    frames; noise realizations still differ frame to frame. The per-frame mode
    is a stress-test flag and reports the first frame's draw.
    """
    rng = np.random.default_rng(ranges.seed)
    params = sample_degradation_params(ranges, rng)
    frames = []
    first = params
    for i, frame in enumerate(clip.frames):
        if not per_clip_params and i > 0:
            params = sample_degradation_params(ranges, rng)
        frames.append(degrade_frame(frame, params, rng))
    return VideoClip(np.stack(frames, axis=0), clip.frame_rate), first


MANIFEST_COLUMNS = ["clip_id", "hq_dir", "lq_dir", "seed", "rho", "b", "sigma", "w"]


def write_clip_manifest(path: str | Path, rows: list[dict]) -> None:
    """UTF-8 CSV mapping each degraded clip to its source and sampled params."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in MANIFEST_COLUMNS})


def read_clip_manifest(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
