"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import math

import numpy as np
import pytest
import torch
from torch import nn

from bsdbnet import training
from bsdbnet.complexity import NAMED_CONFIGS, count_macs, count_parameters
from bsdbnet.dsp import ComplexSpectrogram, Waveform, power_compress, stft
from bsdbnet.metrics import causality_probe, si_sdr
from bsdbnet.model import build_model, named_config
from bsdbnet.pipeline import analyse, enhance_waveform, synthesise
from bsdbnet.ssm import selective_scan
from bsdbnet.training import (
    TOY_OPTIM,
    LossConfig,
    OptimConfig,
    loss_total,
    mix_at_snr,
    toy_dataset,
    train,
)


def test_01_parameter_count_128_6(criterion):
    n = count_parameters("128-6")
    criterion(1, "parameters of 128-6 in [8.3M, 11.3M]", 8.3e6 <= n <= 11.3e6,
              f"{n:,} ({n / 9.78e6 - 1:+.1%} vs 9.78M)")


def test_02_mac_ordering(criterion):
    macs = [count_macs(name, 1.0) for name in NAMED_CONFIGS]
    ordered = all(a < b for a, b in zip(macs, macs[1:]))
    m = count_macs("128-6", 1.0)
    detail = " < ".join(f"{name}={v / 1e9:.2f}G" for name, v in zip(NAMED_CONFIGS, macs))
    criterion(2, "strict MAC ordering and 128-6 in [1.1G, 2.5G]/s", ordered and 1.1e9 <= m <= 2.5e9, detail)


class CenteredConv(nn.Module):
    """Channels-last 3x3 conv padded on both sides of time."""

    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, (3, 3), padding=1)

    def forward(self, x):
        return self.conv(x.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)


@pytest.mark.slow
def test_03_causality_probe(criterion):
    model = build_model("64-4", seed=0)
    violation = causality_probe(model, trials=100, seed=0)
    mutant = build_model("64-4", seed=0)
    mutant.enc_mag.conv = CenteredConv(64)
    flagged = causality_probe(mutant, trials=100, seed=0)
    criterion(3, "64-4 causal over 100 trials, centered-conv mutant flagged",
              violation < 1e-5 and flagged > 1e-3,
              f"violation {violation:.2e} (< 1e-5), mutant {flagged:.2e} (> 1e-3)")


def _loop_oracle(u, delta, A, B, C, D):
    l, d = u.shape
    n = A.shape[1]
    h = np.zeros((d, n))
    y = np.zeros((l, d))
    for t in range(l):
        for c in range(d):
            for s in range(n):
                h[c, s] = math.exp(delta[t, c] * A[c, s]) * h[c, s] + delta[t, c] * B[t, s] * u[t, c]
            y[t, c] = sum(C[t, s] * h[c, s] for s in range(n)) + D[c] * u[t, c]
    return y


def test_04_scan_oracle(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        l, d, n = int(rng.integers(1, 33)), int(rng.integers(1, 5)), int(rng.integers(1, 9))
        u = rng.standard_normal((l, d))
        delta = rng.uniform(1e-3, 1.0, (l, d))
        A = -rng.uniform(0.05, 3.0, (d, n))
        B, C = rng.standard_normal((l, n)), rng.standard_normal((l, n))
        D = rng.standard_normal(d)
        t = lambda a: torch.as_tensor(a, dtype=torch.float64)  # noqa: E731
        got = selective_scan(t(u)[None], t(delta)[None], t(A), t(B)[None], t(C)[None], t(D))[0].numpy()
        want = _loop_oracle(u, delta, A, B, C, D)
        worst = max(worst, float(np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-300)))
    criterion(4, "selective scan vs per-step oracle, 200 instances", worst < 1e-5, f"max rel. err {worst:.2e}")


def test_05_gradient_check(criterion):
    cfg = named_config("micro")
    assert (cfg.embed_dim, cfg.depth, cfg.band_widths) == (8, 1, (161,))
    model = build_model(cfg, seed=0, dtype=torch.float64)
    data = toy_dataset(1, 0.1, seed=0)
    x = analyse(torch.as_tensor(np.stack(data.noisy)))
    s = analyse(torch.as_tensor(np.stack(data.clean)))

    def loss():
        return loss_total(model(x).enhanced, s, LossConfig())[0]

    model.zero_grad()
    l0 = loss()
    l0.backward()
    h = 1e-5
    # Central differences resolve gradients down to ~eps*|L|/h; only entries
    # 1e4 above that floor can show a relative error of 1e-4 at all.
    floor = np.finfo(np.float64).eps * abs(l0.item()) / h
    params = list(model.named_parameters())
    rng = np.random.default_rng(0)
    rel, names, draws = [], set(), 0
    analytic, numeric = [], []
    with torch.no_grad():
        while len(rel) < 50:
            i = int(rng.integers(len(params)))
            name, p = params[i]
            j = int(rng.integers(p.numel()))
            draws += 1
            a = p.grad.view(-1)[j].item()
            flat = p.view(-1)
            v = flat[j].item()
            flat[j] = v + h
            lp = loss().item()
            flat[j] = v - h
            lm = loss().item()
            flat[j] = v
            num = (lp - lm) / (2 * h)
            analytic.append(a)
            numeric.append(num)
            if abs(a) < 1e4 * floor:
                continue
            rel.append(abs(a - num) / max(abs(a), abs(num)))
            names.add(name)
    a, n = np.array(analytic), np.array(numeric)
    vec = float(np.linalg.norm(a - n) / np.linalg.norm(a))
    worst = max(rel)
    criterion(5, "micro float64 gradients vs central differences (h=1e-5), 50 params",
              worst < 1e-4 and vec < 1e-4,
              f"max rel. err {worst:.2e} over {len(names)} tensors; all {draws} draws vector rel. err {vec:.2e}")


def test_06_round_trips(criterion):
    x = np.random.default_rng(6).standard_normal(16000) * 0.1
    xt = torch.as_tensor(x)
    y = synthesise(analyse(xt, 1.0), len(x), 1.0).numpy()
    snr = 10 * np.log10(np.sum(x**2) / max(np.sum((x - y) ** 2), 1e-300))
    spec = stft(Waveform(x))
    back = power_compress(power_compress(spec, 0.5), 2.0)
    err = float((back.data - spec.data).abs().max())
    criterion(6, "STFT/iSTFT SNR > 50 dB, compress 0.5 then 2 within 1e-6",
              snr > 50 and err < 1e-6 and back.compression_exponent == 1.0,
              f"reconstruction {snr:.1f} dB, compression round trip {err:.1e}")


def test_07_loss_correctness(criterion):
    rnd = torch.randn(10, 161, dtype=torch.complex128)
    zero = loss_total(ComplexSpectrogram(rnd, 0.5), ComplexSpectrogram(rnd.clone(), 0.5))[0].item()
    est = torch.zeros(1, 161, dtype=torch.complex128)
    tgt = est.clone()
    tgt[0, 3] = 3 + 4j
    total = loss_total(ComplexSpectrogram(est, 0.5), ComplexSpectrogram(tgt, 0.5), LossConfig(0.5))[0].item()
    criterion(7, "loss identity is 0 and single-bin case is 25", zero == 0.0 and total == 25.0,
              f"identity {zero}, single bin {total}")


@pytest.mark.slow
def test_08_desk_scale_learning(criterion):
    data = toy_dataset(8, 1.0, snrs=(-5.0, 0.0, 5.0), seed=0)
    result = train("micro", OptimConfig(**TOY_OPTIM, seed=0), data)
    losses = result.train_losses
    ratio = losses[-1] / losses[0]
    gains = [si_sdr(enhance_waveform(result.model, x), c) - si_sdr(x, c) for x, c in zip(data.noisy, data.clean)]
    gain = float(np.mean(gains))
    criterion(8, "toy set: loss <= 10% of initial in 500 steps, SI-SDR gain >= 5 dB",
              len(losses) <= 500 and ratio <= 0.10 and gain >= 5.0,
              f"loss {losses[0]:.1f} -> {losses[-1]:.1f} (ratio {ratio:.3f}) in {len(losses)} steps, "
              f"SI-SDR gain {gain:+.2f} dB")


def test_09_mixer_fidelity(criterion):
    rng = np.random.default_rng(9)
    snr_err, sisdr_err = 0.0, 0.0
    for target in (-5.0, 0.0, 5.0):
        for _ in range(5):
            clean = rng.standard_normal(32000) * rng.uniform(0.05, 0.5)
            noise = rng.standard_normal(int(rng.integers(8000, 40000)))
            mixed = mix_at_snr(Waveform(clean), Waveform(noise), target).samples
            resid = mixed - clean
            measured = 10 * np.log10(np.dot(clean, clean) / np.dot(resid, resid))
            snr_err = max(snr_err, abs(measured - target))
            sisdr_err = max(sisdr_err, abs(si_sdr(mixed, clean) - target))
    criterion(9, "mixer SNR within 0.01 dB and SI-SDR within 0.5 dB",
              snr_err < 0.01 and sisdr_err < 0.5,
              f"max SNR error {snr_err:.2e} dB, max SI-SDR error {sisdr_err:.3f} dB")


def test_10_schedule_halving(criterion, monkeypatch):
    # The first validation sets the best loss; the next two stagnate.
    vals = iter([2.0, 2.0, 2.0, 1.0])
    monkeypatch.setattr(training, "evaluate", lambda *a, **k: next(vals))
    data = toy_dataset(2, 0.25, seed=0)
    cfg = named_config("micro", decoder_mult=1)
    result = train(cfg, OptimConfig(batch_size=2, max_steps=8, val_every=2), data)
    at_val = [r.lr for r in result.history if r.val_loss is not None]
    lrs = result.lrs
    ok = at_val == [5e-4, 5e-4, 2.5e-4, 2.5e-4] and all(a >= b for a, b in zip(lrs, lrs[1:]))
    criterion(10, "two stagnant validations halve lr 5e-4 -> 2.5e-4", ok,
              "lr after each validation: " + ", ".join(f"{v:g}" for v in at_val))
