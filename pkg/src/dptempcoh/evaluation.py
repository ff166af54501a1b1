"""Restoration metrics and batch evaluation reports.

PSNR is computed in [0, 1] space; the inter-frame difference (IFD) uses
0-255 pixel units. The Fréchet distance is the generic Gaussian form over
any feature vectors; nothing here depends on pretrained networks.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .clips import VideoClip, list_clip_dirs, load_clip

PSNR_INF = math.inf


def psnr(a: VideoClip, b: VideoClip) -> float:
    """10*log10(1/MSE) in dB over all frames and channels; inf when MSE is 0."""
    if a.shape != b.shape:
        raise ValueError(f"geometry mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.frames.astype(np.float64) - b.frames.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / mse)


def ifd(clip: VideoClip) -> float:
    """Mean squared error between consecutive frames, in 0-255 units."""
    if clip.num_frames < 2:
        raise ValueError("IFD needs at least 2 frames")
    x = clip.frames.astype(np.float64) * 255.0
    diffs = x[1:] - x[:-1]
    return float(np.mean(diffs**2))


def perceptual_distance(
    a: VideoClip, b: VideoClip, extractor: Callable[[torch.Tensor], list[torch.Tensor]]
) -> float:
    """Mean over frames and feature layers of RMS feature distance.

    With the identity extractor this reduces to root-mean-square pixel
    distance. Zero iff the extracted features agree exactly.
    """
    if a.shape != b.shape:
        raise ValueError(f"geometry mismatch: {a.shape} vs {b.shape}")
    fa = _frame_features(a, extractor)
    fb = _frame_features(b, extractor)
    per_frame = _feature_rms_per_frame(fa, fb)
    return float(np.mean(per_frame))


def _frame_features(clip: VideoClip, extractor) -> list[torch.Tensor]:
    with torch.no_grad():
        return [t.double() for t in extractor(clip.to_tensor())]


def _feature_rms_per_frame(fa: list[torch.Tensor], fb: list[torch.Tensor]) -> np.ndarray:
    frames = fa[0].shape[0]
    acc = np.zeros(frames, dtype=np.float64)
    for la, lb in zip(fa, fb):
        d = (la - lb).reshape(frames, -1)
        acc += torch.sqrt((d**2).mean(dim=1)).numpy()
    return acc / len(fa)


def frechet_distance(feats_a: np.ndarray | Sequence, feats_b: np.ndarray | Sequence) -> float:
    """Gaussian Fréchet distance between two feature sets.

    ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), with the matrix square
    root taken by eigendecomposition of the symmetrized product and negative
    eigenvalues clamped at zero.
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("feature sets must be 2-D (samples x dim)")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least 2 samples per set")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    cov_a = np.atleast_2d(cov_a)
    cov_b = np.atleast_2d(cov_b)
    prod = cov_a @ cov_b
    sym = 0.5 * (prod + prod.T)
    eigvals = np.linalg.eigvalsh(sym)
    sqrt_trace = np.sqrt(np.clip(eigvals, 0.0, None)).sum()
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * sqrt_trace)
    return max(value, 0.0)


def per_frame_metrics(
    restored: VideoClip,
    reference: VideoClip,
    extractor: Callable[[torch.Tensor], list[torch.Tensor]],
) -> list[dict]:
    """Per-frame perceptual and PSNR traces (length F)."""
    if restored.shape != reference.shape:
        raise ValueError("geometry mismatch")
    fa = _frame_features(restored, extractor)
    fb = _frame_features(reference, extractor)
    perc = _feature_rms_per_frame(fa, fb)
    rows = []
    for f in range(restored.num_frames):
        mse = float(np.mean((restored.frames[f].astype(np.float64) - reference.frames[f].astype(np.float64)) ** 2))
        frame_psnr = PSNR_INF if mse == 0 else 10.0 * math.log10(1.0 / mse)
        rows.append({"frame": f, "perceptual": float(perc[f]), "psnr": frame_psnr})
    return rows


@dataclass
class MetricReport:
    """Per-clip metric table plus aggregates over the evaluated set."""

    rows: list[dict]
    aggregates: dict
    frechet: float | None
    config_digest: str
    psnr_inf_count: int = 0
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "aggregates": self.aggregates,
            "frechet": self.frechet,
            "config_digest": self.config_digest,
            "psnr_inf_count": self.psnr_inf_count,
            "errors": self.errors,
        }


def _aggregate(rows: list[dict]) -> tuple[dict, int]:
    finite_psnr = [r["psnr"] for r in rows if math.isfinite(r["psnr"])]
    inf_count = sum(1 for r in rows if math.isinf(r["psnr"]))
    agg = {
        "psnr": float(np.mean(finite_psnr)) if finite_psnr else PSNR_INF,
        "ifd": float(np.mean([r["ifd"] for r in rows])) if rows else 0.0,
        "perceptual": float(np.mean([r["perceptual"] for r in rows])) if rows else 0.0,
    }
    return agg, inf_count


def evaluate_set(
    restored_dir: str | Path,
    reference_dir: str | Path,
    out_dir: str | Path | None = None,
    extractor: Callable[[torch.Tensor], list[torch.Tensor]] | None = None,
    frame_count: int | None = None,
    compute_frechet: bool = True,
    config_digest: str = "",
) -> MetricReport:
    """Evaluate every clip id present in both directories.

    Writes ``report.json``, ``report.csv`` and per-clip ``traces/<id>.csv``
    under ``out_dir`` when given. Clip ids present on only one side are an
    error, reported explicitly.
    """
    if extractor is None:
        from .perceptual import RandomFeaturePyramid

        extractor = RandomFeaturePyramid()
    restored_ids = {p.name: p for p in list_clip_dirs(restored_dir)}
    reference_ids = {p.name: p for p in list_clip_dirs(reference_dir)}
    shared = sorted(set(restored_ids) & set(reference_ids))
    errors = [f"missing in restored: {i}" for i in sorted(set(reference_ids) - set(restored_ids))]
    errors += [f"missing in reference: {i}" for i in sorted(set(restored_ids) - set(reference_ids))]
    if not shared:
        report = MetricReport([], {}, None, config_digest, 0, errors or ["no clip ids in common"])
        if out_dir is not None:
            _write_report(report, Path(out_dir), {})
        return report

    rows = []
    traces = {}
    rest_feats, ref_feats = [], []
    for clip_id in shared:
        n = frame_count or len(list((restored_ids[clip_id]).glob("*.png")))
        restored = load_clip(restored_ids[clip_id], n)
        reference = load_clip(reference_ids[clip_id], n)
        row = {
            "clip_id": clip_id,
            "psnr": psnr(restored, reference),
            "ifd": ifd(restored) if restored.num_frames >= 2 else 0.0,
            "perceptual": perceptual_distance(restored, reference, extractor),
        }
        rows.append(row)
        traces[clip_id] = per_frame_metrics(restored, reference, extractor)
        if compute_frechet:
            rest_feats.append(_pooled_features(restored, extractor))
            ref_feats.append(_pooled_features(reference, extractor))

    frechet = None
    if compute_frechet:
        ra = np.concatenate(rest_feats, axis=0)
        rb = np.concatenate(ref_feats, axis=0)
        if ra.shape[0] >= 2 and rb.shape[0] >= 2:
            frechet = frechet_distance(ra, rb)
    agg, inf_count = _aggregate(rows)
    report = MetricReport(rows, agg, frechet, config_digest, inf_count, errors)
    if out_dir is not None:
        _write_report(report, Path(out_dir), traces)
    return report


def _pooled_features(clip: VideoClip, extractor) -> np.ndarray:
    """One vector per frame: channel-wise means of the deepest feature layer."""
    feats = _frame_features(clip, extractor)
    deepest = feats[-1]
    return deepest.mean(dim=(2, 3)).numpy() if deepest.ndim == 4 else deepest.reshape(deepest.shape[0], -1).numpy()


def _write_report(report: MetricReport, out_dir: Path, traces: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    payload["aggregates"] = {
        k: ("inf" if isinstance(v, float) and math.isinf(v) else v)
        for k, v in payload["aggregates"].items()
    }
    for row in payload["rows"]:
        if math.isinf(row["psnr"]):
            row["psnr"] = "inf"
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2))
    with open(out_dir / "report.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["clip_id", "psnr", "ifd", "perceptual"])
        writer.writeheader()
        for row in payload["rows"]:
            writer.writerow(row)
    trace_dir = out_dir / "traces"
    trace_dir.mkdir(exist_ok=True)
    for clip_id, rows in traces.items():
        with open(trace_dir / f"{clip_id}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["frame", "perceptual", "psnr"])
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
