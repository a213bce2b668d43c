"""Band-split dual-branch speech enhancement with selective state-space blocks."""
from .bandsplit import BandLayout, make_band_layout
from .complexity import complexity_report, count_macs, count_parameters
from .dsp import ComplexSpectrogram, Waveform, decompress, istft, power_compress, read_wav, stft, write_wav
from .estimator import BSDBEnhancer
from .metrics import causality_probe, si_sdr
from .model import BSDBNet, ModelConfig, build_model, load_checkpoint, named_config, save_checkpoint
from .pipeline import enhance_waveform
from .training import LossConfig, OptimConfig, loss_total, mix_at_snr, toy_dataset, train

__version__ = "0.1.0"

__all__ = [
    "BSDBEnhancer",
    "BSDBNet",
    "BandLayout",
    "ComplexSpectrogram",
    "LossConfig",
    "ModelConfig",
    "OptimConfig",
    "Waveform",
    "build_model",
    "causality_probe",
    "complexity_report",
    "count_macs",
    "count_parameters",
    "decompress",
    "enhance_waveform",
    "istft",
    "load_checkpoint",
    "loss_total",
    "make_band_layout",
    "mix_at_snr",
    "named_config",
    "power_compress",
    "read_wav",
    "save_checkpoint",
    "si_sdr",
    "stft",
    "toy_dataset",
    "train",
    "write_wav",
]
