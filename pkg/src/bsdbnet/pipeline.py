"""Waveform-in, waveform-out enhancement."""
from __future__ import annotations

import numpy as np
import torch

from .dsp import FRAME_LEN, HOP, istft_tensor, power_compress_tensor, stft_tensor
from .model import DEFAULT_COMPRESSION, BSDBNet


def _padding(n_samples: int) -> tuple[int, int]:
    # One hop of leading zeros and at least one hop of trailing zeros puts every
    # real sample under two frames; the trailing pad also completes the last frame.
    lead = FRAME_LEN - HOP
    body = lead + n_samples + HOP
    n_frames = max(1, -(-(body - FRAME_LEN) // HOP) + 1)
    total = FRAME_LEN + (n_frames - 1) * HOP
    return lead, total - lead - n_samples


def analyse(x: torch.Tensor, exponent: float = DEFAULT_COMPRESSION) -> torch.Tensor:
    """``(..., L)`` waveform -> compressed ``(..., T, F)`` spectrogram, padded as in :func:`enhance_tensor`."""
    lead, trail = _padding(x.shape[-1])
    x = torch.nn.functional.pad(x, (lead, trail))
    return power_compress_tensor(stft_tensor(x), exponent)


def synthesise(spec: torch.Tensor, n_samples: int, exponent: float = DEFAULT_COMPRESSION) -> torch.Tensor:
    lead, _ = _padding(n_samples)
    y = istft_tensor(power_compress_tensor(spec, 1.0 / exponent))
    return y[..., lead: lead + n_samples]


def enhance_tensor(model: BSDBNet, x: torch.Tensor, identity_mask: bool = False) -> torch.Tensor:
    """stft -> compress -> network -> decompress -> istft, output length == input length."""
    n = x.shape[-1]
    batched = x.ndim == 2
    spec = analyse(x if batched else x.unsqueeze(0))
    out = model(spec, identity_mask=identity_mask).enhanced
    y = synthesise(out, n)
    return y if batched else y[0]


@torch.no_grad()
def enhance_waveform(model: BSDBNet, samples: np.ndarray, identity_mask: bool = False) -> np.ndarray:
    model.eval()
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(np.asarray(samples), dtype=dtype)
    return enhance_tensor(model, x, identity_mask).cpu().numpy().astype(np.float64)
