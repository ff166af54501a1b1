"""Vector-quantized video autoencoder.

A per-frame 2D convolutional encoder turns clips into token grids, a learned
vision bank discretizes tokens by nearest-neighbor matching, and a generator
decodes token grids back to clips through 2D deconvolutions interleaved with
3D residual blocks and frame attention (attention along the frame axis at
each spatial location).

Tensor layouts: clips are (B, F, C, H, W) or (F, C, H, W); token feature
grids are (B, F, L, h, w) or (F, L, h, w) with L = latent channels and
h = H / downscale.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import torch
import torch.nn.functional as F
from torch import nn

from .clips import VideoClip
from .config import CodecConfig
from .torchutil import first_argmin, squared_distances


def _groups(ch: int) -> int:
    g = 8
    while ch % g:
        g //= 2
    return max(g, 1)


class FrameEncoder(nn.Module):
    """Stride-2 conv stack applied independently to every frame."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        layers: list[nn.Module] = []
        prev = cfg.in_channels
        for ch in cfg.enc_channels:
            layers += [nn.Conv2d(prev, ch, 4, stride=2, padding=1), nn.GroupNorm(_groups(ch), ch), nn.SiLU()]
            prev = ch
        layers += [nn.Conv2d(prev, cfg.latent_channels, 3, padding=1)]
        self.net = nn.Sequential(*layers)
        self.downscale = cfg.downscale

    def forward(self, clips: torch.Tensor) -> torch.Tensor:
        squeeze = clips.ndim == 4
        if squeeze:
            clips = clips[None]
        b, f, c, h, w = clips.shape
        if h % self.downscale or w % self.downscale:
            raise ValueError(f"frame size {h}x{w} not divisible by downscale {self.downscale}")
        z = self.net(clips.reshape(b * f, c, h, w))
        z = z.reshape(b, f, *z.shape[1:])
        return z[0] if squeeze else z


class Res3DBlock(nn.Module):
    """Residual block with temporal-extent-3 kernels; norms stay frame-local."""

    def __init__(self, ch: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(ch), ch)
        self.conv1 = nn.Conv3d(ch, ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(_groups(ch), ch)
        self.conv2 = nn.Conv3d(ch, ch, 3, padding=1)

    @staticmethod
    def _frame_norm(norm: nn.GroupNorm, x: torch.Tensor) -> torch.Tensor:
        b, f, c, h, w = x.shape
        return norm(x.reshape(b * f, c, h, w)).reshape(b, f, c, h, w)

    @staticmethod
    def _conv3d(conv: nn.Conv3d, x: torch.Tensor) -> torch.Tensor:
        return conv(x.permute(0, 2, 1, 3, 4)).permute(0, 2, 1, 3, 4)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self._conv3d(self.conv1, F.silu(self._frame_norm(self.norm1, x)))
        y = self._conv3d(self.conv2, F.silu(self._frame_norm(self.norm2, y)))
        return x + y


class FrameAttention(nn.Module):
    """Multi-head attention over the frame axis at each spatial location.

    The output projection starts at zero, so a freshly built block is an
    identity map.
    """

    def __init__(self, ch: int, heads: int):
        super().__init__()
        if ch % heads:
            raise ValueError("heads must divide channel count")
        self.heads = heads
        self.norm = nn.LayerNorm(ch)
        self.qkv = nn.Linear(ch, 3 * ch)
        self.proj = nn.Linear(ch, ch)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, f, c, h, w = x.shape
        t = x.permute(0, 3, 4, 1, 2).reshape(b * h * w, f, c)
        q, k, v = self.qkv(self.norm(t)).chunk(3, dim=-1)
        dh = c // self.heads

        def split(u):
            return u.reshape(-1, f, self.heads, dh).transpose(1, 2)

        attn = torch.softmax(split(q) @ split(k).transpose(-1, -2) * dh**-0.5, dim=-1)
        out = (attn @ split(v)).transpose(1, 2).reshape(-1, f, c)
        out = self.proj(out).reshape(b, h, w, f, c).permute(0, 3, 4, 1, 2)
        return x + out


class Generator(nn.Module):
    """Token grid to clip: deconv upsampling with temporal mixing blocks."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        chans = cfg.dec_channels
        self.head = nn.Conv2d(cfg.latent_channels, chans[0], 3, padding=1)
        self.res3d = nn.ModuleList()
        self.frame_attn = nn.ModuleList()
        self.ups = nn.ModuleList()
        self.stage_norms = nn.ModuleList()
        for i, ch in enumerate(chans):
            if i < cfg.temporal_scales:
                self.res3d.append(Res3DBlock(ch))
                self.frame_attn.append(FrameAttention(ch, cfg.attn_heads))
            nxt = chans[i + 1] if i + 1 < len(chans) else chans[-1]
            self.stage_norms.append(nn.GroupNorm(_groups(ch), ch))
            self.ups.append(nn.ConvTranspose2d(ch, nxt, 4, stride=2, padding=1))
        self.tail_norm = nn.GroupNorm(_groups(chans[-1]), chans[-1])
        self.tail = nn.Conv2d(chans[-1], cfg.in_channels, 3, padding=1)
        self.temporal_scales = cfg.temporal_scales

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        squeeze = z.ndim == 4
        if squeeze:
            z = z[None]
        b, f, c, h, w = z.shape
        x = self.head(z.reshape(b * f, c, h, w))
        x = x.reshape(b, f, *x.shape[1:])
        for i in range(len(self.ups)):
            if i < self.temporal_scales:
                x = self.res3d[i](x)
                x = self.frame_attn[i](x)
            bf = x.reshape(b * f, *x.shape[2:])
            bf = self.ups[i](F.silu(self.stage_norms[i](bf)))
            x = bf.reshape(b, f, *bf.shape[1:])
        bf = x.reshape(b * f, *x.shape[2:])
        out = torch.sigmoid(self.tail(F.silu(self.tail_norm(bf))))
        out = out.reshape(b, f, *out.shape[1:])
        return out[0] if squeeze else out


class VisionBank(nn.Module):
    """Learned codebook of high-quality token vectors."""

    def __init__(self, size: int, dim: int, ema: bool = False, ema_decay: float = 0.99):
        super().__init__()
        if size < 2:
            raise ValueError("bank needs at least 2 entries")
        self.entries = nn.Parameter(torch.randn(size, dim), requires_grad=not ema)
        self.ema = ema
        self.ema_decay = ema_decay
        if ema:
            self.register_buffer("ema_cluster_size", torch.zeros(size))
            self.register_buffer("ema_embed_sum", self.entries.data.clone())
        self.register_buffer("last_used", torch.zeros(size, dtype=torch.long))

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


def quantize(z: torch.Tensor, bank: VisionBank) -> tuple[torch.Tensor, torch.Tensor]:
    """Nearest bank entry per token in squared Euclidean distance.

    Ties break to the lowest index. Returns (codes, quantized grid); the
    quantized grid carries gradients to the bank entries (not to ``z``).
    """
    if bank.size == 0:
        raise ValueError("empty bank")
    if z.shape[-3] != bank.dim:
        raise ValueError(f"token dim {z.shape[-3]} != bank dim {bank.dim}")
    lead = z.shape[:-3]
    h, w = z.shape[-2:]
    tokens = z.movedim(-3, -1).reshape(-1, bank.dim)
    d2 = squared_distances(tokens, bank.entries)
    codes = first_argmin(d2, dim=1).reshape(*lead, h, w)
    return codes, lookup(bank, codes)


def lookup(bank: VisionBank, codes: torch.Tensor) -> torch.Tensor:
    """Exact copy of bank entries at the given codes, token-grid layout."""
    if codes.numel() and (codes.min() < 0 or codes.max() >= bank.size):
        raise IndexError(f"code out of range [0, {bank.size})")
    return bank.entries[codes].movedim(-1, -3)


class VideoCodec(nn.Module):
    """Encoder + vision bank + generator with a shared configuration."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = FrameEncoder(cfg)
        self.bank = VisionBank(cfg.bank_size_vision, cfg.latent_channels, cfg.ema_bank, cfg.ema_decay)
        self.generator = Generator(cfg)

    def encode(self, clips: torch.Tensor) -> torch.Tensor:
        return self.encoder(clips)

    def decode(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-3] != self.cfg.latent_channels:
            raise ValueError(
                f"feature channels {features.shape[-3]} != latent_channels {self.cfg.latent_channels}"
            )
        return self.generator(features)

    def reconstruct(self, clips: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Autoencode through the quantized bottleneck (inference path)."""
        z = self.encode(clips)
        codes, zq = quantize(z, self.bank)
        return self.decode(zq), codes


def build_codec(cfg: CodecConfig, seed: int = 0) -> VideoCodec:
    torch.manual_seed(seed)
    return VideoCodec(cfg)


def encode_clip(clip: VideoClip, codec: VideoCodec) -> torch.Tensor:
    """VideoClip to token feature grid (F, L, h, w); deterministic."""
    codec.eval()
    with torch.no_grad():
        return codec.encode(clip.to_tensor())


def decode_features(features: torch.Tensor, codec: VideoCodec) -> VideoClip:
    codec.eval()
    with torch.no_grad():
        return VideoClip.from_tensor(codec.decode(features))


@dataclass
class PretrainLosses:
    recon_l1: float
    perceptual: float
    codebook: float
    commitment: float
    total: float
    codes_used: int


def vq_losses(
    z: torch.Tensor, bank: VisionBank, beta: float
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Quantize and build straight-through features plus both VQ loss terms."""
    codes, zq = quantize(z, bank)
    zq_st = z + (zq - z).detach()
    codebook = F.mse_loss(zq, z.detach()) if not bank.ema else zq.sum() * 0.0
    commitment = beta * F.mse_loss(z, zq.detach())
    return codes, zq_st, codebook, commitment


def _ema_update(bank: VisionBank, z: torch.Tensor, codes: torch.Tensor) -> None:
    tokens = z.detach().movedim(-3, -1).reshape(-1, bank.dim)
    onehot = F.one_hot(codes.reshape(-1), bank.size).to(tokens.dtype)
    counts = onehot.sum(0)
    sums = onehot.T @ tokens
    d = bank.ema_decay
    bank.ema_cluster_size.mul_(d).add_(counts, alpha=1 - d)
    bank.ema_embed_sum.mul_(d).add_(sums, alpha=1 - d)
    norm = bank.ema_cluster_size.clamp_min(1e-5)[:, None]
    bank.entries.data.copy_(bank.ema_embed_sum / norm)


def _reseed_dead_codes(bank: VisionBank, z: torch.Tensor, codes: torch.Tensor, limit: int) -> None:
    used = torch.bincount(codes.reshape(-1), minlength=bank.size) > 0
    bank.last_used[used] = 0
    bank.last_used[~used] += 1
    dead = bank.last_used >= limit
    n_dead = int(dead.sum())
    if n_dead == 0:
        return
    tokens = z.detach().movedim(-3, -1).reshape(-1, bank.dim)
    pick = torch.randint(0, tokens.shape[0], (n_dead,))
    bank.entries.data[dead] = tokens[pick] + 0.01 * torch.randn(n_dead, bank.dim)
    bank.last_used[dead] = 0


def pretrain_codec_step(
    hq_batch: torch.Tensor,
    codec: VideoCodec,
    extractor: nn.Module,
    optimizer: torch.optim.Optimizer,
    step_idx: int = 0,
) -> PretrainLosses:
    """One reconstruction step: L1 + perceptual + VQ codebook/commitment."""
    codec.train()
    optimizer.zero_grad(set_to_none=True)
    z = codec.encode(hq_batch)
    codes, zq_st, codebook, commitment = vq_losses(z, codec.bank, codec.cfg.commitment_beta)
    recon = codec.decode(zq_st)
    recon_l1 = (recon - hq_batch).abs().mean()
    b, f = hq_batch.shape[:2]
    frames_hat = recon.reshape(b * f, *recon.shape[2:])
    frames_ref = hq_batch.reshape(b * f, *hq_batch.shape[2:])
    perc = sum((fa - fb).abs().mean() for fa, fb in zip(extractor(frames_hat), extractor(frames_ref)))
    loss = recon_l1 + perc + codebook + commitment
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite pretraining loss at step {step_idx}: {loss}")
    loss.backward()
    optimizer.step()
    with torch.no_grad():
        if codec.bank.ema:
            _ema_update(codec.bank, z, codes)
        _reseed_dead_codes(codec.bank, z, codes, codec.cfg.dead_code_steps)
    return PretrainLosses(
        recon_l1=float(recon_l1),
        perceptual=float(perc),
        codebook=float(codebook),
        commitment=float(commitment),
        total=float(loss),
        codes_used=int(torch.unique(codes).numel()),
    )


CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    modules: dict[str, nn.Module],
    config_digest: str,
    step_count: int,
    extra: dict | None = None,
) -> None:
    """Atomically write named parameter blocks behind a header record."""
    payload = {
        "header": {
            "format_version": CHECKPOINT_VERSION,
            "config_digest": config_digest,
            "step_count": step_count,
        },
        "state": {name: module.state_dict() for name, module in modules.items()},
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    buf = io.BytesIO()
    torch.save(payload, buf)
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path: str | Path, modules: dict[str, nn.Module] | None = None) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("header", {}).get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version in {path}")
    if modules:
        for name, module in modules.items():
            module.load_state_dict(payload["state"][name])
    return payload
