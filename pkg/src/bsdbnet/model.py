"""Dual-branch network: magnitude branch, complex branch, shared mask decoder."""
from __future__ import annotations

import math
import os
import tempfile
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn.functional as F
from torch import nn

from .bandsplit import BAND_SCHEMES, BandLayout, BandSplit, MaskDecoder, make_band_layout
from .dsp import N_BINS, ComplexSpectrogram, decouple
from .interaction import Interaction
from .ssm import MambaBlock

DEFAULT_COMPRESSION = 0.5
CHECKPOINT_FORMAT = "bsdbnet-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 128
    depth: int = 6
    band_scheme: str = "speech3"
    band_widths: tuple[int, ...] | None = None
    d_state: int = 16
    expand: int = 2
    d_conv: int = 4
    encoder_kernel: tuple[int, int] = (3, 2)  # (band, time)
    dilated_kernel: int = 2
    dilations: tuple[int, ...] = (1, 2)
    decoder_hidden: int | None = None  # defaults to decoder_mult * embed_dim
    decoder_mult: int = 32
    out_channels: int = 2
    name: str = ""

    def __post_init__(self):
        if self.embed_dim < 1 or self.depth < 1:
            raise ValueError("embed_dim and depth must be positive")
        if self.band_widths is None:
            widths = make_band_layout(N_BINS, self.band_scheme).widths
        else:
            widths = tuple(int(w) for w in self.band_widths)
        if sum(widths) != N_BINS:
            raise ValueError(f"band widths sum to {sum(widths)}, expected {N_BINS}")
        object.__setattr__(self, "band_widths", widths)
        object.__setattr__(self, "encoder_kernel", tuple(self.encoder_kernel))
        object.__setattr__(self, "dilations", tuple(self.dilations))
        if self.encoder_kernel[0] % 2 != 1:
            raise ValueError("the band extent of the encoder kernel must be odd")

    @property
    def layout(self) -> BandLayout:
        scheme = self.band_scheme if BAND_SCHEMES.get(self.band_scheme) == self.band_widths else "custom"
        return BandLayout(self.band_widths, scheme)

    @property
    def hidden(self) -> int:
        return self.decoder_hidden or self.decoder_mult * self.embed_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("band_widths", "encoder_kernel", "dilations"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config key(s): {', '.join(sorted(unknown))}")
        d = dict(d)
        for k in ("band_widths", "encoder_kernel", "dilations"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


# Ablation grid: "<embed_dim>-<depth>".
NAMED_CONFIGS = ("64-4", "64-6", "128-4", "128-6", "256-2", "256-4", "256-6")


def named_config(name: str, **overrides) -> ModelConfig:
    if name == "micro":
        base = dict(embed_dim=8, depth=1, band_scheme="fullband", decoder_mult=16)
    elif name in NAMED_CONFIGS:
        n, l = name.split("-")
        base = dict(embed_dim=int(n), depth=int(l))
    else:
        raise ValueError(f"unknown config {name!r}; valid names: {', '.join(NAMED_CONFIGS + ('micro',))}")
    base.update(overrides)
    return ModelConfig(name=name, **base)


class CausalConv2d(nn.Module):
    """Conv2d over ``(band, time)`` on channels-last ``(B, K, T, N)`` input.

    The band axis is zero-padded symmetrically; the time axis only on the left.
    """

    def __init__(self, channels: int, kernel: tuple[int, int], dilation: tuple[int, int] = (1, 1)):
        super().__init__()
        self.kernel = kernel
        self.dilation = dilation
        self.conv = nn.Conv2d(channels, channels, kernel, dilation=dilation)
        self.band_pad = dilation[0] * (kernel[0] - 1) // 2
        self.time_pad = dilation[1] * (kernel[1] - 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x.permute(0, 3, 1, 2)
        x = F.pad(x, (self.time_pad, 0, self.band_pad, self.band_pad))
        return self.conv(x).permute(0, 2, 3, 1)


class DilatedBlock(nn.Module):
    """Stacked causal convolutions along time with growing dilation."""

    def __init__(self, channels: int, kernel: int = 2, dilations=(1, 2)):
        super().__init__()
        self.convs = nn.ModuleList(
            CausalConv2d(channels, (1, kernel), (1, d)) for d in dilations
        )
        self.acts = nn.ModuleList(nn.PReLU(channels) for _ in dilations[:-1])

    def forward(self, x):
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.acts):
                x = _channels_last(self.acts[i], x)
        return x


def _channels_last(act: nn.PReLU, x: torch.Tensor) -> torch.Tensor:
    # nn.PReLU with per-channel weights expects channels on dim 1.
    return act(x.movedim(-1, 1)).movedim(1, -1)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        n = cfg.embed_dim
        self.interaction = Interaction(n)
        self.conv = CausalConv2d(n, cfg.encoder_kernel)
        self.norm = nn.LayerNorm(n)
        self.act = nn.PReLU(n)

    def forward(self, own, other):
        x = self.conv(self.interaction(own, other))
        return _channels_last(self.act, self.norm(x))


class DecodeStage(nn.Module):
    """PReLU(LN(DilatedBlock(x)))."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        n = cfg.embed_dim
        self.dconv = DilatedBlock(n, cfg.dilated_kernel, cfg.dilations)
        self.norm = nn.LayerNorm(n)
        self.act = nn.PReLU(n)

    def forward(self, x):
        return _channels_last(self.act, self.norm(self.dconv(x)))


class MagnitudeHead(nn.Module):
    """Bounded gate sigmoid(.) * tanh(.) applied to the magnitude embedding."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        n = cfg.embed_dim
        self.stage = DecodeStage(cfg)
        self.sig_conv = nn.Linear(n, n)
        self.tanh_conv = nn.Linear(n, n)

    def gate(self, features):
        d = self.stage(features)
        return torch.sigmoid(self.sig_conv(d)) * torch.tanh(self.tanh_conv(d))

    def forward(self, features, a_mag):
        if features.shape != a_mag.shape:
            raise ValueError(f"shape mismatch {tuple(features.shape)} vs {tuple(a_mag.shape)}")
        return a_mag * self.gate(features)


class ComplexHead(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.real = DecodeStage(cfg)
        self.imag = DecodeStage(cfg)

    def forward(self, features):
        return self.real(features) + self.imag(features)


@dataclass
class EnhancedOutput:
    men_out: torch.Tensor  # (B, K, T, N)
    cen_out: torch.Tensor  # (B, K, T, N)
    complex_mask: torch.Tensor  # (B, T, F, 2)
    enhanced: torch.Tensor  # (B, T, F) complex, compressed domain
    compression_exponent: float = DEFAULT_COMPRESSION

    @property
    def enhanced_spec(self) -> ComplexSpectrogram:
        data = self.enhanced[0] if self.enhanced.shape[0] == 1 else self.enhanced
        return ComplexSpectrogram(data, compression_exponent=self.compression_exponent)


class BSDBNet(nn.Module):
    """Band-split dual-branch enhancement network.

    Takes a power-compressed noisy spectrogram ``(B, T, F)`` and returns a
    complex ratio mask applied to it. Every operation is causal in time.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        layout = cfg.layout
        n = cfg.embed_dim
        kw = dict(d_state=cfg.d_state, expand=cfg.expand, d_conv=cfg.d_conv)
        self.split_mag = BandSplit(layout, 1, n)
        self.split_ri = BandSplit(layout, 2, n)
        self.enc_mag = Encoder(cfg)
        self.enc_ri = Encoder(cfg)
        self.blocks_mag = nn.ModuleList(MambaBlock(n, **kw) for _ in range(cfg.depth))
        self.blocks_ri = nn.ModuleList(MambaBlock(n, **kw) for _ in range(cfg.depth))
        self.men_head = MagnitudeHead(cfg)
        self.cen_head = ComplexHead(cfg)
        self.decoder = MaskDecoder(layout, n, cfg.hidden, cfg.out_channels)

    def forward(self, noisy: torch.Tensor, identity_mask: bool = False) -> EnhancedOutput:
        if noisy.ndim == 2:
            noisy = noisy.unsqueeze(0)
        views = decouple(noisy)
        z_mag = self.split_mag(views.magnitude.unsqueeze(-1))
        z_ri = self.split_ri(views.ri)

        m = self.enc_mag(z_mag, z_ri)
        c = self.enc_ri(z_ri, z_mag)
        for blk_m, blk_c in zip(self.blocks_mag, self.blocks_ri):
            m, c = blk_m(m, c), blk_c(c, m)

        men_out = self.men_head(m, z_mag)
        cen_out = self.cen_head(c)
        mask = self.decoder(men_out + cen_out)
        if identity_mask:
            mask = torch.stack([torch.ones_like(mask[..., 0]), torch.zeros_like(mask[..., 1])], -1)
        enhanced = torch.view_as_complex(mask.contiguous()) * noisy
        return EnhancedOutput(men_out, cen_out, mask, enhanced)

    def enhance(self, spec: ComplexSpectrogram, identity_mask: bool = False) -> EnhancedOutput:
        if not math.isclose(spec.compression_exponent, DEFAULT_COMPRESSION):
            raise ValueError(
                f"network input must be power-compressed with exponent {DEFAULT_COMPRESSION}, "
                f"got {spec.compression_exponent}"
            )
        return self(spec.data, identity_mask=identity_mask)


def build_model(cfg: ModelConfig | str, seed: int | None = None, dtype=torch.float32) -> BSDBNet:
    if isinstance(cfg, str):
        cfg = named_config(cfg)
    if seed is not None:
        torch.manual_seed(seed)
    return BSDBNet(cfg).to(dtype)


def forward(noisy: ComplexSpectrogram, config: ModelConfig, params: dict | BSDBNet) -> EnhancedOutput:
    """Functional entry point: run the network for ``config`` with ``params``."""
    if isinstance(params, BSDBNet):
        model = params
    else:
        model = BSDBNet(config)
        model.load_state_dict(params)
    return model.enhance(noisy)


# ---------------------------------------------------------------- checkpoints


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: BSDBNet, extra: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "band_layout": {"scheme": model.cfg.layout.scheme, "widths": list(model.cfg.band_widths)},
        "compression_exponent": DEFAULT_COMPRESSION,
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
    }
    if extra:
        payload["extra"] = extra
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".ckpt.tmp")
    os.close(fd)
    try:
        torch.save(payload, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, dtype=torch.float32) -> tuple[BSDBNet, dict]:
    """Load and validate a checkpoint; returns ``(model, payload)``."""
    try:
        payload = torch.load(os.fspath(path), map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a zoo of unpickling errors
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: missing {CHECKPOINT_FORMAT!r} header")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    try:
        cfg = ModelConfig.from_dict(payload["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid config ({exc})") from exc
    if list(cfg.band_widths) != list(payload.get("band_layout", {}).get("widths", [])):
        raise CheckpointError(f"{path}: band layout header disagrees with config")

    model = BSDBNet(cfg).to(dtype)
    expected = model.state_dict()
    state = payload.get("state_dict", {})
    missing = sorted(set(expected) - set(state))
    unexpected = sorted(set(state) - set(expected))
    if missing or unexpected:
        raise CheckpointError(f"{path}: missing tensors {missing[:5]}, unexpected {unexpected[:5]}")
    for name, ref in expected.items():
        if tuple(state[name].shape) != tuple(ref.shape):
            raise CheckpointError(
                f"{path}: tensor {name} has shape {tuple(state[name].shape)}, "
                f"config implies {tuple(ref.shape)}"
            )
    model.load_state_dict({k: v.to(dtype) for k, v in state.items()})
    return model, payload
