"""Waveform <-> compressed complex spectrogram conversion.

Framing is fixed to 16 kHz audio, a 320-sample periodic Hann window, hop 160
and a 320-point FFT (161 bins). Frames are taken without center padding so the
analysis never looks past the current frame.
"""
from __future__ import annotations

import math
import os
import tempfile
import wave
from dataclasses import dataclass, replace

import numpy as np
import torch

SAMPLE_RATE = 16000
FRAME_LEN = 320
HOP = 160
N_FFT = 320
N_BINS = N_FFT // 2 + 1


class AudioFormatError(ValueError):
    """Raised for audio that does not match the 16 kHz mono PCM contract."""


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioFormatError(f"expected a mono 1-D signal, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise AudioFormatError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class ComplexSpectrogram:
    """A ``(..., T, F)`` complex tensor plus the framing it was produced with."""

    data: torch.Tensor
    compression_exponent: float = 1.0
    frame_hop: int = HOP
    frame_len: int = FRAME_LEN
    fft_size: int = N_FFT

    def __post_init__(self):
        if not torch.is_complex(self.data):
            raise TypeError("spectrogram data must be a complex tensor")
        if self.data.shape[-1] != self.fft_size // 2 + 1:
            raise ValueError(
                f"expected {self.fft_size // 2 + 1} frequency bins, got {self.data.shape[-1]}"
            )

    @property
    def n_frames(self) -> int:
        return self.data.shape[-2]

    @property
    def is_compressed(self) -> bool:
        return not math.isclose(self.compression_exponent, 1.0)


@dataclass(frozen=True)
class SpectralViews:
    magnitude: torch.Tensor  # (..., T, F)
    ri: torch.Tensor  # (..., T, F, 2)


def hann_window(dtype=torch.float32, device=None) -> torch.Tensor:
    return torch.hann_window(FRAME_LEN, periodic=True, dtype=dtype, device=device)


def n_frames_for(n_samples: int) -> int:
    if n_samples < FRAME_LEN:
        raise ValueError(f"signal of {n_samples} samples is shorter than one frame ({FRAME_LEN})")
    return 1 + (n_samples - FRAME_LEN) // HOP


def n_samples_for(n_frames: int) -> int:
    return FRAME_LEN + (n_frames - 1) * HOP


def stft_tensor(x: torch.Tensor) -> torch.Tensor:
    """Batched analysis: ``(..., L)`` real -> ``(..., T, F)`` complex."""
    n_frames_for(x.shape[-1])
    frames = x.unfold(-1, FRAME_LEN, HOP)
    return torch.fft.rfft(frames * hann_window(x.dtype, x.device), n=N_FFT, dim=-1)


def istft_tensor(spec: torch.Tensor) -> torch.Tensor:
    """Weighted overlap-add inverse of :func:`stft_tensor`.

    The synthesis window equals the analysis window and the output is divided
    by the overlap-added squared window wherever that envelope is nonzero.
    """
    lead = spec.shape[:-2]
    n_frames = spec.shape[-2]
    real_dtype = spec.real.dtype
    window = hann_window(real_dtype, spec.device)
    frames = torch.fft.irfft(spec, n=N_FFT, dim=-1)[..., :FRAME_LEN] * window
    length = n_samples_for(n_frames)
    cols = frames.reshape(-1, n_frames, FRAME_LEN).transpose(1, 2)
    out = torch.nn.functional.fold(
        cols, output_size=(1, length), kernel_size=(1, FRAME_LEN), stride=(1, HOP)
    ).reshape(*lead, length)
    env_cols = (window**2).reshape(1, FRAME_LEN, 1).expand(1, FRAME_LEN, n_frames)
    env = torch.nn.functional.fold(
        env_cols, output_size=(1, length), kernel_size=(1, FRAME_LEN), stride=(1, HOP)
    ).reshape(length)
    nonzero = env > torch.finfo(real_dtype).tiny
    return torch.where(nonzero, out / torch.where(nonzero, env, torch.ones_like(env)), out)


def stft(wave_: Waveform) -> ComplexSpectrogram:
    if wave_.sample_rate != SAMPLE_RATE:
        raise AudioFormatError(f"expected {SAMPLE_RATE} Hz audio, got {wave_.sample_rate} Hz")
    x = torch.from_numpy(wave_.samples)
    return ComplexSpectrogram(stft_tensor(x))


def istft(spec: ComplexSpectrogram) -> Waveform:
    if spec.is_compressed:
        raise ValueError(
            "istft received a compressed spectrogram "
            f"(exponent {spec.compression_exponent}); decompress it first"
        )
    if spec.data.ndim != 2:
        raise ValueError("istft expects a single (T, F) spectrogram; use istft_tensor for batches")
    y = istft_tensor(spec.data.detach())
    return Waveform(y.cpu().numpy().astype(np.float64))


def power_compress_tensor(spec: torch.Tensor, exponent: float) -> torch.Tensor:
    """|X| -> |X|**exponent with phase kept; zero bins stay zero (phase 0)."""
    if exponent <= 0:
        raise ValueError(f"compression exponent must be positive, got {exponent}")
    mag = spec.abs()
    # polar() keeps the phase and avoids dividing by the magnitude.
    return torch.polar(mag.pow(exponent), torch.angle(spec))


def power_compress(spec: ComplexSpectrogram, exponent: float) -> ComplexSpectrogram:
    return replace(
        spec,
        data=power_compress_tensor(spec.data, exponent),
        compression_exponent=spec.compression_exponent * exponent,
    )


def decompress(spec: ComplexSpectrogram) -> ComplexSpectrogram:
    return power_compress(spec, 1.0 / spec.compression_exponent)


def decouple(spec: ComplexSpectrogram | torch.Tensor) -> SpectralViews:
    data = spec.data if isinstance(spec, ComplexSpectrogram) else spec
    ri = torch.view_as_real(data)
    return SpectralViews(magnitude=data.abs(), ri=ri)


def read_wav(path: str | os.PathLike) -> Waveform:
    """Read 16-bit mono PCM at 16 kHz. Anything else is rejected, never resampled."""
    with wave.open(os.fspath(path), "rb") as fh:
        channels, width, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
        if channels != 1:
            raise AudioFormatError(f"{path}: expected mono audio, got {channels} channels")
        if width != 2:
            raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
        if rate != SAMPLE_RATE:
            raise AudioFormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz")
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path: str | os.PathLike, wave_: Waveform) -> None:
    """Write 16-bit mono PCM atomically (temp file + rename)."""
    if wave_.sample_rate != SAMPLE_RATE:
        raise AudioFormatError(f"refusing to write {wave_.sample_rate} Hz audio")
    pcm = np.clip(np.round(wave_.samples * 32768.0), -32768, 32767).astype("<i2")
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".wav.tmp")
    os.close(fd)
    try:
        with wave.open(tmp, "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(SAMPLE_RATE)
            fh.writeframes(pcm.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
