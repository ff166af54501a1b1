"""Index prediction over the vision bank from degraded video tokens.

Tokens from all frames and spatial positions are flattened, given a
learnable position embedding (a temporal table plus a spatial table), run
through pre-norm self-attention transformer blocks, and classified into bank
indices. ``spatial_temporal`` mode lets every token attend to every other;
``spatial_only`` masks attention to be block-diagonal per frame.
"""
from __future__ import annotations

import csv
from pathlib import Path

import cv2
import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .codec import VisionBank, lookup
from .config import PredictorConfig
from .torchutil import first_argmax

MODES = ("spatial_temporal", "spatial_only")


class SelfAttentionBlock(nn.Module):
    """Pre-norm multi-head self-attention + feed-forward."""

    def __init__(self, d_model: int, heads: int, ffn_mult: int = 4):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(d_model)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.ffn = nn.Sequential(
            nn.Linear(d_model, ffn_mult * d_model),
            nn.GELU(),
            nn.Linear(ffn_mult * d_model, d_model),
        )

    def forward(
        self, x: torch.Tensor, attn_mask: torch.Tensor | None = None, need_weights: bool = False
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        b, t, d = x.shape
        dh = d // self.heads
        q, k, v = self.qkv(self.norm1(x)).chunk(3, dim=-1)

        def split(u):
            return u.reshape(b, t, self.heads, dh).transpose(1, 2)

        scores = split(q) @ split(k).transpose(-1, -2) * dh**-0.5
        if attn_mask is not None:
            scores = scores.masked_fill(~attn_mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ split(v)).transpose(1, 2).reshape(b, t, d)
        x = x + self.proj(out)
        x = x + self.ffn(self.norm2(x))
        return x, (attn if need_weights else None)


class ContentPredictor(nn.Module):
    """Transformer classifying each degraded token into a vision-bank index."""

    def __init__(self, cfg: PredictorConfig, token_dim: int, frames: int, grid_h: int, grid_w: int, bank_size: int):
        super().__init__()
        self.cfg = cfg
        self.frames = frames
        self.grid_h = grid_h
        self.grid_w = grid_w
        self.bank_size = bank_size
        d = cfg.d_model
        self.in_proj = nn.Linear(token_dim, d)
        self.temporal_emb = nn.Parameter(torch.randn(frames, d) * 0.02)
        self.spatial_emb = nn.Parameter(torch.randn(grid_h * grid_w, d) * 0.02)
        self.blocks = nn.ModuleList(
            SelfAttentionBlock(d, cfg.heads, cfg.ffn_mult) for _ in range(cfg.predictor_blocks)
        )
        self.out_norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, bank_size)

    def position_embedding(self) -> torch.Tensor:
        """(f*h*w, d_model) table: temporal row + spatial row per token."""
        table = self.temporal_emb[:, None, :] + self.spatial_emb[None, :, :]
        return table.reshape(-1, self.cfg.d_model)

    def _mask(self, mode: str, device) -> torch.Tensor | None:
        if mode == "spatial_temporal":
            return None
        hw = self.grid_h * self.grid_w
        frame_of = torch.arange(self.frames * hw, device=device) // hw
        return (frame_of[:, None] == frame_of[None, :])[None, None]

    def forward(
        self, z: torch.Tensor, mode: str | None = None, need_weights: bool = False
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        """Token grid (B?, F, L, h, w) to logits (B?, F, h, w, N).

        Also returns the last block's attention weights when asked.
        """
        mode = mode or self.cfg.mode
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        squeeze = z.ndim == 4
        if squeeze:
            z = z[None]
        b, f, c, h, w = z.shape
        if (f, h, w) != (self.frames, self.grid_h, self.grid_w):
            raise ValueError(
                f"token geometry {(f, h, w)} does not match position table "
                f"{(self.frames, self.grid_h, self.grid_w)}"
            )
        tokens = z.permute(0, 1, 3, 4, 2).reshape(b, f * h * w, c)
        x = self.in_proj(tokens) + self.position_embedding()[None]
        mask = self._mask(mode, z.device)
        last_attn = None
        for i, block in enumerate(self.blocks):
            want = need_weights and i == len(self.blocks) - 1
            x, attn = block(x, attn_mask=mask, need_weights=want)
            if want:
                last_attn = attn
        logits = self.head(self.out_norm(x)).reshape(b, f, h, w, self.bank_size)
        if squeeze:
            logits = logits[0]
            last_attn = last_attn[0] if last_attn is not None else None
        return logits, last_attn


def predict_logits(z: torch.Tensor, predictor: ContentPredictor, mode: str | None = None) -> torch.Tensor:
    logits, _ = predictor(z, mode=mode)
    return logits


def predict_indices(logits: torch.Tensor) -> torch.Tensor:
    """Per-token argmax over bank indices; ties break to the lowest index."""
    if not torch.isfinite(logits).all():
        raise ValueError("logits contain non-finite values")
    return first_argmax(logits, dim=-1)


def predict_content(
    z: torch.Tensor, predictor: ContentPredictor, bank: VisionBank, mode: str | None = None
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Predicted high-quality features via bank lookup, plus codes and logits."""
    if bank.size != predictor.bank_size:
        raise ValueError(f"bank size {bank.size} != classifier width {predictor.bank_size}")
    logits = predict_logits(z, predictor, mode=mode)
    codes = predict_indices(logits)
    return lookup(bank, codes), codes, logits


def export_attention_maps(
    z: torch.Tensor,
    predictor: ContentPredictor,
    query_position: tuple[int, int, int],
    mode: str | None = None,
    out_dir: str | Path | None = None,
    clip_id: str = "clip",
) -> list[np.ndarray]:
    """Last-block attention row for one query token, as per-frame (h, w) maps.

    Maps are averaged over heads; all frames together sum to 1. When
    ``out_dir`` is given, writes one grayscale PNG per frame plus a CSV of raw
    weights under ``attn/<clip_id>/<f>_<h>_<w>/``.
    """
    if z.ndim != 4:
        raise ValueError("attention export expects a single clip (F, L, h, w)")
    fq, hq, wq = query_position
    f, hgrid, wgrid = predictor.frames, predictor.grid_h, predictor.grid_w
    if not (0 <= fq < f and 0 <= hq < hgrid and 0 <= wq < wgrid):
        raise IndexError(f"query position {query_position} out of range {(f, hgrid, wgrid)}")
    predictor.eval()
    with torch.no_grad():
        _, attn = predictor(z, mode=mode, need_weights=True)
    row = attn.mean(dim=0)[fq * hgrid * wgrid + hq * wgrid + wq]
    maps = row.reshape(f, hgrid, wgrid).cpu().numpy().astype(np.float64)

    if out_dir is not None:
        base = Path(out_dir) / "attn" / clip_id / f"{fq}_{hq}_{wq}"
        base.mkdir(parents=True, exist_ok=True)
        peak = maps.max()
        for k in range(f):
            img = np.zeros_like(maps[k], dtype=np.uint8) if peak == 0 else np.clip(
                np.rint(maps[k] / peak * 255.0), 0, 255
            ).astype(np.uint8)
            cv2.imwrite(str(base / f"frame{k}.png"), img)
        with open(base / "weights.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "h", "w", "weight"])
            for k in range(f):
                for i in range(hgrid):
                    for j in range(wgrid):
                        writer.writerow([k, i, j, repr(maps[k, i, j])])
    return [maps[k] for k in range(f)]


def build_predictor(
    cfg: PredictorConfig, token_dim: int, frames: int, grid_h: int, grid_w: int, bank_size: int, seed: int = 0
) -> ContentPredictor:
    torch.manual_seed(seed)
    return ContentPredictor(cfg, token_dim, frames, grid_h, grid_w, bank_size)
