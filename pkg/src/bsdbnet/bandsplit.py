"""Band-split embedding of the frequency axis and the per-band mask decoder."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .dsp import N_BINS


@dataclass(frozen=True)
class BandLayout:
    widths: tuple[int, ...]
    scheme: str = "custom"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if not widths or any(w < 1 for w in widths):
            raise ValueError(f"band widths must be positive integers, got {self.widths}")
        object.__setattr__(self, "widths", widths)

    @property
    def n_bands(self) -> int:
        return len(self.widths)

    @property
    def n_bins(self) -> int:
        return sum(self.widths)

    @property
    def edges(self) -> list[tuple[int, int]]:
        out, start = [], 0
        for w in self.widths:
            out.append((start, start + w))
            start += w
        return out


# Every scheme must cover 161 bins.
BAND_SCHEMES: dict[str, tuple[int, ...]] = {
    "uniform8": (8,) * 20 + (1,),
    "uniform16": (16,) * 10 + (1,),
    # 50 Hz per bin: 0-1.6k, 1.6-4k, 4-8k Hz.
    "speech3": (32, 48, 81),
    # 0-0.8k, 0.8-2.4k, 2.4-4.8k, 4.8-8k Hz.
    "speech4": (16, 32, 48, 65),
    "fullband": (161,),
}


def make_band_layout(n_bins: int = N_BINS, scheme: str = "speech3") -> BandLayout:
    if n_bins != N_BINS:
        raise ValueError(f"band layouts are defined for {N_BINS} bins, got {n_bins}")
    try:
        widths = BAND_SCHEMES[scheme]
    except KeyError:
        raise ValueError(
            f"unknown band scheme {scheme!r}; choose from {sorted(BAND_SCHEMES)}"
        ) from None
    layout = BandLayout(widths, scheme)
    assert layout.n_bins == n_bins
    return layout


def glu(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Gated linear unit: first half times sigmoid of the second half."""
    value, gate = x.chunk(2, dim=dim)
    return value * torch.sigmoid(gate)


class BandSplit(nn.Module):
    """Project each band of a ``(B, T, F, C)`` feature map to an N-dim embedding.

    Output layout is ``(B, K, T, N)``. Each band has its own LayerNorm (over
    the band's ``F_i * C`` values of one frame) and its own linear map.
    """

    def __init__(self, layout: BandLayout, in_channels: int, embed_dim: int):
        super().__init__()
        self.layout = layout
        self.in_channels = in_channels
        self.embed_dim = embed_dim
        self.norms = nn.ModuleList(nn.LayerNorm(w * in_channels) for w in layout.widths)
        self.fcs = nn.ModuleList(nn.Linear(w * in_channels, embed_dim) for w in layout.widths)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[2] != self.layout.n_bins or x.shape[3] != self.in_channels:
            raise ValueError(
                f"expected (B, T, {self.layout.n_bins}, {self.in_channels}) features, "
                f"got {tuple(x.shape)}"
            )
        B, T = x.shape[:2]
        bands = []
        for (lo, hi), norm, fc in zip(self.layout.edges, self.norms, self.fcs):
            a = x[:, :, lo:hi, :].reshape(B, T, -1)
            bands.append(fc(norm(a)))
        return torch.stack(bands, dim=1)


class MaskDecoder(nn.Module):
    """Per-band LN -> Linear -> Tanh -> Linear -> GLU, merged along frequency.

    Maps ``(B, K, T, N)`` to ``(B, T, F, C_out)``.
    """

    def __init__(self, layout: BandLayout, embed_dim: int, hidden: int, out_channels: int = 2):
        super().__init__()
        self.layout = layout
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.out_channels = out_channels
        self.norms = nn.ModuleList(nn.LayerNorm(embed_dim) for _ in layout.widths)
        self.fc_hidden = nn.ModuleList(nn.Linear(embed_dim, hidden) for _ in layout.widths)
        # GLU halves the output, hence the factor 2.
        self.fc_out = nn.ModuleList(
            nn.Linear(hidden, 2 * w * out_channels) for w in layout.widths
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 4 or z.shape[1] != self.layout.n_bands or z.shape[3] != self.embed_dim:
            raise ValueError(
                f"expected (B, {self.layout.n_bands}, T, {self.embed_dim}) features, "
                f"got {tuple(z.shape)}"
            )
        B, _, T, _ = z.shape
        outs = []
        for i, w in enumerate(self.layout.widths):
            h = torch.tanh(self.fc_hidden[i](self.norms[i](z[:, i])))
            m = glu(self.fc_out[i](h))
            outs.append(m.reshape(B, T, w, self.out_channels))
        return torch.cat(outs, dim=2)
