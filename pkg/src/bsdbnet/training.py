"""Loss, noisy/clean pair synthesis and the optimisation loop."""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .dsp import SAMPLE_RATE, ComplexSpectrogram, Waveform
from .model import BSDBNet, ModelConfig, build_model, load_checkpoint, save_checkpoint
from .pipeline import analyse

log = logging.getLogger(__name__)

TOY_SNRS = (-5.0, 0.0, 5.0)


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")


@dataclass
class OptimConfig:
    lr: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    plateau_patience: int = 2
    lr_factor: float = 0.5
    batch_size: int = 4
    max_steps: int = 1000
    val_every: int = 50
    grad_clip: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.batch_size < 1 or self.max_steps < 1 or self.val_every < 1:
            raise ValueError("batch_size, max_steps and val_every must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "OptimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown optim config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


# Desk-scale recipe for the 8-clip toy set: full-batch steps and a higher
# learning rate than the full-corpus default, which is tuned for large data.
TOY_OPTIM = dict(lr=3e-3, batch_size=8, max_steps=500, val_every=50)


# ---------------------------------------------------------------------- loss


def _as_tensor(spec):
    return spec.data if isinstance(spec, ComplexSpectrogram) else spec


def loss_terms(est: torch.Tensor, target: torch.Tensor, beta: float = 0.5):
    """RI + magnitude loss on complex tensors; sums over every element."""
    diff = torch.view_as_real(est) - torch.view_as_real(target)
    l_ri = diff.pow(2).sum()
    l_mag = (est.abs() - target.abs()).pow(2).sum()
    return beta * l_ri + (1.0 - beta) * l_mag, l_ri, l_mag


def loss_total(est, target, cfg: LossConfig = LossConfig()):
    """Return ``(total, l_ri, l_mag)`` for two spectrograms in the same compressed domain."""
    if isinstance(est, ComplexSpectrogram) and isinstance(target, ComplexSpectrogram):
        if not math.isclose(est.compression_exponent, target.compression_exponent):
            raise ValueError(
                "estimate and target use different compression exponents "
                f"({est.compression_exponent} vs {target.compression_exponent})"
            )
    est, target = _as_tensor(est), _as_tensor(target)
    if est.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(est.shape)} vs {tuple(target.shape)}")
    return loss_terms(est, target, cfg.beta)


# -------------------------------------------------------------------- mixing


def fit_length(noise: np.ndarray, n: int) -> np.ndarray:
    """Tile or crop ``noise`` to exactly ``n`` samples."""
    noise = np.asarray(noise, dtype=np.float64)
    if len(noise) == 0:
        raise ValueError("empty noise signal")
    reps = -(-n // len(noise))
    return np.tile(noise, reps)[:n]


def noise_scale(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    e_clean = float(np.dot(clean, clean))
    e_noise = float(np.dot(noise, noise))
    if e_clean <= 0:
        raise ValueError("clean signal is silent")
    if e_noise <= 0:
        raise ValueError("noise signal is silent")
    return math.sqrt(e_clean / (e_noise * 10.0 ** (snr_db / 10.0)))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """Scale ``noise`` so the mixture has exactly ``snr_db`` and add it to ``clean``."""
    c = clean.samples
    n = fit_length(noise.samples, len(c))
    return Waveform(c + noise_scale(c, n, snr_db) * n, clean.sample_rate)


def speech_surrogate(rng: np.random.Generator, seconds: float = 1.0) -> np.ndarray:
    """Harmonic tone with a gliding pitch and a syllable-rate envelope."""
    n = int(round(seconds * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    f0 = rng.uniform(100.0, 220.0) * (1.0 + rng.uniform(-0.15, 0.15) * t / max(seconds, 1e-9))
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    x = np.zeros(n)
    for k in range(1, int(rng.integers(4, 9)) + 1):
        x += rng.uniform(0.3, 1.0) / k * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    rate = rng.uniform(2.5, 5.0)
    env = 0.5 * (1 - np.cos(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
    x *= 0.1 + 0.9 * env
    return 0.3 * x / np.max(np.abs(x))


@dataclass
class PairDataset:
    """Equal-length (noisy, clean) waveform pairs held in memory."""

    noisy: list[np.ndarray]
    clean: list[np.ndarray]
    snrs: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.noisy) != len(self.clean) or not self.noisy:
            raise ValueError("need the same, nonzero number of noisy and clean clips")
        for a, b in zip(self.noisy, self.clean):
            if len(a) != len(b):
                raise ValueError("noisy and clean clips must have equal lengths")

    def __len__(self):
        return len(self.noisy)

    def batch(self, idx, segment: int | None, rng: np.random.Generator):
        n = min(len(self.noisy[i]) for i in idx)
        seg = n if segment is None else min(segment, n)
        xs, ys = [], []
        for i in idx:
            off = int(rng.integers(0, len(self.noisy[i]) - seg + 1))
            xs.append(self.noisy[i][off: off + seg])
            ys.append(self.clean[i][off: off + seg])
        return np.stack(xs), np.stack(ys)


def toy_dataset(n_clips: int = 8, seconds: float = 1.0, snrs=TOY_SNRS, seed: int = 0) -> PairDataset:
    """Speech surrogates in white noise, SNRs cycling through ``snrs``."""
    rng = np.random.default_rng(seed)
    noisy, clean, used = [], [], []
    for i in range(n_clips):
        c = speech_surrogate(rng, seconds)
        w = rng.standard_normal(len(c))
        snr = float(snrs[i % len(snrs)])
        noisy.append(mix_at_snr(Waveform(c), Waveform(w), snr).samples)
        clean.append(c)
        used.append(snr)
    return PairDataset(noisy, clean, used)


def _crop(x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if len(x) <= n:
        return fit_length(x, n)
    off = int(rng.integers(0, len(x) - n + 1))
    return x[off: off + n]


def dataset_from_dirs(clean_dir, noise_dir, n_clips: int, seconds: float, snrs=TOY_SNRS,
                      seed: int = 0) -> PairDataset:
    """Deterministically mix random crops of user-supplied clean and noise WAVs."""
    from .dsp import read_wav

    clean_files = sorted(Path(clean_dir).glob("*.wav"))
    noise_files = sorted(Path(noise_dir).glob("*.wav"))
    if not clean_files or not noise_files:
        raise FileNotFoundError(f"no .wav files in {clean_dir} or {noise_dir}")
    rng = np.random.default_rng(seed)
    seg = int(round(seconds * SAMPLE_RATE))
    noisy, clean, used = [], [], []
    attempts = 0
    while len(noisy) < n_clips:
        attempts += 1
        if attempts > 20 * n_clips:
            raise ValueError(f"could not draw {n_clips} non-silent clean/noise crops from the given files")
        c = _crop(read_wav(clean_files[rng.integers(len(clean_files))]).samples, seg, rng)
        w = _crop(read_wav(noise_files[rng.integers(len(noise_files))]).samples, seg, rng)
        if np.dot(c, c) <= 0 or np.dot(w, w) <= 0:
            continue
        snr = float(rng.choice(snrs))
        noisy.append(mix_at_snr(Waveform(c), Waveform(w), snr).samples)
        clean.append(c)
        used.append(snr)
    return PairDataset(noisy, clean, used)


# ------------------------------------------------------------------ training


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class HistoryRow:
    step: int
    train_loss: float
    val_loss: float | None
    lr: float


@dataclass
class TrainResult:
    model: BSDBNet
    history: list[HistoryRow]
    best_val: float
    checkpoint: Path | None = None

    @property
    def lrs(self) -> list[float]:
        return [r.lr for r in self.history]

    @property
    def train_losses(self) -> list[float]:
        return [r.train_loss for r in self.history]


def make_scheduler(optimizer, cfg: OptimConfig):
    # Halve after `plateau_patience` consecutive non-improving evaluations.
    return torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="min", factor=cfg.lr_factor, patience=cfg.plateau_patience - 1,
        threshold=0.0, threshold_mode="abs",
    )


def write_history(path, history: list[HistoryRow]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "train_loss", "val_loss", "lr"])
        for r in history:
            w.writerow([r.step, f"{r.train_loss:.8g}", "" if r.val_loss is None else f"{r.val_loss:.8g}", f"{r.lr:.8g}"])
    os.replace(tmp, path)


def read_history(path) -> list[HistoryRow]:
    with open(path, newline="") as fh:
        return [
            HistoryRow(int(r["step"]), float(r["train_loss"]),
                       float(r["val_loss"]) if r["val_loss"] else None, float(r["lr"]))
            for r in csv.DictReader(fh)
        ]


def _spectra(model: BSDBNet, noisy: np.ndarray, clean: np.ndarray):
    dtype = next(model.parameters()).dtype
    x = analyse(torch.as_tensor(noisy, dtype=dtype))
    s = analyse(torch.as_tensor(clean, dtype=dtype))
    return x, s


def batch_loss(model: BSDBNet, noisy: np.ndarray, clean: np.ndarray, loss_cfg: LossConfig) -> torch.Tensor:
    """Mean per-utterance loss of a ``(B, L)`` batch."""
    x, s = _spectra(model, noisy, clean)
    total, _, _ = loss_terms(model(x).enhanced, s, loss_cfg.beta)
    return total / x.shape[0]


@torch.no_grad()
def evaluate(model: BSDBNet, data: PairDataset, loss_cfg: LossConfig, batch_size: int = 8) -> float:
    model.eval()
    total, count = 0.0, 0
    rng = np.random.default_rng(0)
    for start in range(0, len(data), batch_size):
        idx = list(range(start, min(start + batch_size, len(data))))
        x, y = data.batch(idx, None, rng)
        total += float(batch_loss(model, x, y, loss_cfg)) * len(idx)
        count += len(idx)
    return total / count


def train(model_cfg: ModelConfig | str, optim_cfg: OptimConfig, dataset: PairDataset,
          val_dataset: PairDataset | None = None, loss_cfg: LossConfig = LossConfig(),
          run_dir=None, segment_seconds: float | None = None, resume: bool = False,
          dtype=torch.float32, model: BSDBNet | None = None) -> TrainResult:
    """Adam + plateau halving. Writes ``best.ckpt``/``last.ckpt``/``history.csv`` when ``run_dir`` is set.

    With ``resume=True`` the model, optimiser, scheduler, step counter and
    history are restored from ``run_dir/last.ckpt``.
    """
    val_dataset = val_dataset or dataset
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
    segment = None if segment_seconds is None else int(round(segment_seconds * SAMPLE_RATE))

    torch.manual_seed(optim_cfg.seed)
    rng = np.random.default_rng(optim_cfg.seed)
    if model is None:
        model = build_model(model_cfg, dtype=dtype)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=optim_cfg.lr, betas=(optim_cfg.adam_beta1, optim_cfg.adam_beta2)
    )
    scheduler = make_scheduler(optimizer, optim_cfg)
    history: list[HistoryRow] = []
    start_step, best_val = 0, math.inf

    if resume:
        if run_dir is None or not (run_dir / "last.ckpt").exists():
            raise FileNotFoundError("resume requested but no last.ckpt in the run directory")
        model, payload = load_checkpoint(run_dir / "last.ckpt", dtype=dtype)
        state = payload["extra"]
        optimizer = torch.optim.Adam(
            model.parameters(), lr=optim_cfg.lr, betas=(optim_cfg.adam_beta1, optim_cfg.adam_beta2)
        )
        optimizer.load_state_dict(state["optimizer"])
        scheduler = make_scheduler(optimizer, optim_cfg)
        scheduler.load_state_dict(state["scheduler"])
        start_step, best_val = int(state["step"]), float(state["best_val"])
        rng.bit_generator.state = state["rng_state"]
        if (run_dir / "history.csv").exists():
            history = read_history(run_dir / "history.csv")

    best_path = None
    for step in range(start_step + 1, optim_cfg.max_steps + 1):
        model.train()
        idx = rng.choice(len(dataset), size=min(optim_cfg.batch_size, len(dataset)), replace=False)
        x, y = dataset.batch(list(idx), segment, rng)
        loss = batch_loss(model, x, y, loss_cfg)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(
                f"loss became {loss.item()} at step {step} (lr {optimizer.param_groups[0]['lr']:.3g}); "
                "try a lower learning rate or gradient clipping"
            )
        optimizer.zero_grad()
        loss.backward()
        if optim_cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), optim_cfg.grad_clip)
        optimizer.step()

        val = None
        if step % optim_cfg.val_every == 0 or step == optim_cfg.max_steps:
            val = evaluate(model, val_dataset, loss_cfg)
            scheduler.step(val)
            if val < best_val:
                best_val = val
                if run_dir is not None:
                    best_path = run_dir / "best.ckpt"
                    save_checkpoint(best_path, model, {"step": step, "val_loss": val})
        history.append(HistoryRow(step, loss.item(), val, optimizer.param_groups[0]["lr"]))

        if val is not None and run_dir is not None:
            extra = {
                "step": step,
                "best_val": best_val,
                "optimizer": optimizer.state_dict(),
                "scheduler": scheduler.state_dict(),
                "optim_config": asdict(optim_cfg),
                "rng_state": rng.bit_generator.state,
            }
            save_checkpoint(run_dir / "last.ckpt", model, extra)
            write_history(run_dir / "history.csv", history)
            log.info("step %d train %.4g val %.4g lr %.3g", step, loss.item(), val,
                     optimizer.param_groups[0]["lr"])

    return TrainResult(model, history, best_val, best_path)
