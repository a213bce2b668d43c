"""SI-SDR and the causality probe."""
from __future__ import annotations

import numpy as np
import torch

from .dsp import N_BINS, Waveform
from .model import BSDBNet, ModelConfig, build_model

SI_SDR_CAP = 100.0


def _samples(x) -> np.ndarray:
    if isinstance(x, Waveform):
        return x.samples
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy().astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def si_sdr(est, ref) -> float:
    """Scale-invariant SDR in dB, capped at +100 dB when the residual vanishes."""
    est, ref = _samples(est), _samples(ref)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = np.dot(ref, ref)
    if ref_energy <= 0:
        raise ValueError("reference signal is silent")
    alpha = np.dot(est, ref) / ref_energy
    target = alpha * ref
    residual = est - target
    res_energy = np.dot(residual, residual)
    tgt_energy = np.dot(target, target)
    if res_energy <= np.finfo(np.float64).tiny * max(tgt_energy, 1.0):
        return SI_SDR_CAP
    if tgt_energy <= 0:
        return -SI_SDR_CAP
    return float(min(SI_SDR_CAP, 10.0 * np.log10(tgt_energy / res_energy)))


@torch.no_grad()
def causality_probe(model: BSDBNet | None = None, config: ModelConfig | str | None = None,
                    trials: int = 100, n_frames: int = 24, seed: int = 0,
                    perturbation: float = 1.0) -> float:
    """Largest change of enhanced frames ``<= t`` when frames ``> t`` are perturbed.

    A causal model returns (numerically) zero. ``perturbation=0`` is the
    control run and must return exactly 0.
    """
    if model is None:
        if config is None:
            raise ValueError("pass a model or a config")
        model = build_model(config, seed=seed)
    model.eval()
    dtype = next(model.parameters()).dtype
    cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _ in range(trials):
        x = torch.randn(1, n_frames, N_BINS, dtype=cdtype, generator=gen)
        t = int(torch.randint(0, n_frames - 1, (1,), generator=gen))
        y = x.clone()
        noise = torch.randn(1, n_frames - t - 1, N_BINS, dtype=cdtype, generator=gen)
        y[:, t + 1:] += perturbation * noise
        a = model(x).enhanced[:, : t + 1]
        b = model(y).enhanced[:, : t + 1]
        worst = max(worst, float((a - b).abs().max()))
    return worst
