"""Analytic parameter and multiply-accumulate (MAC) counts.

Counting convention:

* one multiply-accumulate = 1 MAC; biases, normalisation, activations and
  elementwise gating products are not counted;
* ``Linear(a, b)`` costs ``a * b`` per application;
* a convolution costs ``kernel_size * C_in * C_out / groups`` per output
  position, padded positions included;
* one selective-scan step costs ``d_inner * d_state`` per direction;
* the STFT/iSTFT around the network is not counted.

Counts are for a batch of one utterance and cover ``T`` frames of audio.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .dsp import N_BINS, SAMPLE_RATE, n_frames_for
from .model import NAMED_CONFIGS, ModelConfig, named_config

# Published complexity of the ablation grid: (MACs in G/s, parameters in M).
PUBLISHED_REFERENCE: dict[str, tuple[float, float | None]] = {
    "64-4": (0.88, None),
    "64-6": (0.98, None),
    "128-4": (1.34, None),
    "128-6": (1.68, 9.78),
    "256-2": (1.87, None),
    "256-4": (3.06, None),
    "256-6": (4.26, None),
}

# Tolerance windows used by ``profile --check``.
PARAM_WINDOW_128_6 = (8.3e6, 11.3e6)
MAC_WINDOW_128_6 = (1.1e9, 2.5e9)


def _resolve(config) -> ModelConfig:
    return named_config(config) if isinstance(config, str) else config


def _ln(width):
    return 2 * width


def _ssm_params(cfg: ModelConfig) -> int:
    n, d, s = cfg.embed_dim, cfg.expand * cfg.embed_dim, cfg.d_state
    r = math.ceil(n / 16)
    return (
        n * 2 * d            # in_proj
        + d * cfg.d_conv + d  # depthwise conv
        + d * (r + 2 * s)    # x_proj
        + r * d + d          # dt_proj
        + d * s + d          # A_log, D
        + d * n              # out_proj
    )


def _ssm_macs(cfg: ModelConfig) -> int:
    n, d, s = cfg.embed_dim, cfg.expand * cfg.embed_dim, cfg.d_state
    r = math.ceil(n / 16)
    return n * 2 * d + d * cfg.d_conv + d * (r + 2 * s) + r * d + d * s + d * n


def _interaction_params(n):
    return 2 * n * n + n + _ln(n)


def _dilated_params(cfg):
    n = cfg.embed_dim
    k = len(cfg.dilations)
    return k * (n * n * cfg.dilated_kernel + n) + (k - 1) * n


def _decode_stage_params(cfg):
    return _dilated_params(cfg) + _ln(cfg.embed_dim) + cfg.embed_dim


def _block_params(cfg):
    n = cfg.embed_dim
    return (
        _interaction_params(n)
        + _ln(n) + 2 * _ssm_params(cfg) + 2 * n * n + n
        + _ln(n) + _ssm_params(cfg) + n * n + n
    )


def count_parameters(config) -> int:
    """Exact number of learnable scalars of the network for ``config``."""
    cfg = _resolve(config)
    n, h, c_out = cfg.embed_dim, cfg.hidden, cfg.out_channels
    kb, kt = cfg.encoder_kernel
    widths = cfg.band_widths

    split = sum(_ln(w * c) + w * c * n + n for w in widths for c in (1, 2))
    encoder = _interaction_params(n) + n * n * kb * kt + n + _ln(n) + n
    men = _decode_stage_params(cfg) + 2 * (n * n + n)
    cen = 2 * _decode_stage_params(cfg)
    decoder = sum(_ln(n) + n * h + h + h * 2 * w * c_out + 2 * w * c_out for w in widths)
    return split + 2 * encoder + 2 * cfg.depth * _block_params(cfg) + men + cen + decoder


def macs_per_frame(config) -> int:
    cfg = _resolve(config)
    n, h, c_out = cfg.embed_dim, cfg.hidden, cfg.out_channels
    kb, kt = cfg.encoder_kernel
    k = len(cfg.band_widths)
    n2 = n * n
    ssm = _ssm_macs(cfg)

    encoder = 2 * n2 + n2 * kb * kt
    block = 2 * n2 + (2 * ssm + 2 * n2) + (ssm + n2)
    dil = len(cfg.dilations) * n2 * cfg.dilated_kernel
    heads = (dil + 2 * n2) + 2 * dil
    per_position = 2 * encoder + 2 * cfg.depth * block + heads

    split = N_BINS * 3 * n
    decoder = k * n * h + h * 2 * N_BINS * c_out
    return split + k * per_position + decoder


def count_macs(config, audio_seconds: float = 1.0) -> float:
    """MACs to process ``audio_seconds`` of 16 kHz audio."""
    n_frames = n_frames_for(int(round(audio_seconds * SAMPLE_RATE)))
    return float(n_frames * macs_per_frame(config))


@dataclass
class ComplexityRow:
    name: str
    params: int
    macs_per_second: float
    ref_macs: float | None = None  # G/s
    ref_params: float | None = None  # M

    @property
    def macs_deviation(self) -> float | None:
        if self.ref_macs is None:
            return None
        return self.macs_per_second / (self.ref_macs * 1e9) - 1.0

    @property
    def params_deviation(self) -> float | None:
        if self.ref_params is None:
            return None
        return self.params / (self.ref_params * 1e6) - 1.0


@dataclass
class ComplexityReport:
    rows: list[ComplexityRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def check(self) -> list[str]:
        """Return failure messages for the 128-6 windows and grid ordering."""
        failures = []
        by_name = {r.name: r for r in self.rows}
        if "128-6" in by_name:
            r = by_name["128-6"]
            lo, hi = PARAM_WINDOW_128_6
            if not lo <= r.params <= hi:
                failures.append(f"128-6 parameters {r.params:,} outside [{lo:,.0f}, {hi:,.0f}]")
            lo, hi = MAC_WINDOW_128_6
            if not lo <= r.macs_per_second <= hi:
                failures.append(f"128-6 MACs {r.macs_per_second:.3e} outside [{lo:.2e}, {hi:.2e}]")
        grid = [by_name[n] for n in NAMED_CONFIGS if n in by_name]
        for a, b in zip(grid, grid[1:]):
            if not a.macs_per_second < b.macs_per_second:
                failures.append(f"MAC ordering violated: {a.name} >= {b.name}")
        return failures

    def to_text(self) -> str:
        header = f"{'config':<8} {'params':>12} {'MACs G/s':>9} {'ref G/s':>9} {'dev':>7} {'ref M':>8} {'dev':>7}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            pm = f"{r.ref_macs:.2f}" if r.ref_macs is not None else "-"
            pp = f"{r.ref_params:.2f}" if r.ref_params is not None else "-"
            dm = f"{r.macs_deviation:+.0%}" if r.macs_deviation is not None else "-"
            dp = f"{r.params_deviation:+.0%}" if r.params_deviation is not None else "-"
            lines.append(
                f"{r.name:<8} {r.params:>12,} {r.macs_per_second / 1e9:>9.3f} {pm:>9} {dm:>7} {pp:>8} {dp:>7}"
            )
        lines.append("PESQ / STOI / ESTOI: not computed here, use an external reference implementation.")
        return "\n".join(lines)

    def to_csv(self) -> str:
        out = ["name,params,macs_per_second,ref_macs_gps,ref_params_m"]
        for r in self.rows:
            out.append(
                f"{r.name},{r.params},{r.macs_per_second:.1f},"
                f"{'' if r.ref_macs is None else r.ref_macs},"
                f"{'' if r.ref_params is None else r.ref_params}"
            )
        return "\n".join(out)


def complexity_report(configs=NAMED_CONFIGS) -> ComplexityReport:
    """One row per config (names or :class:`ModelConfig`), in the given order."""
    rows = []
    for c in configs:
        cfg = _resolve(c)
        name = cfg.name or f"{cfg.embed_dim}-{cfg.depth}"
        ref_macs, ref_params = PUBLISHED_REFERENCE.get(name, (None, None))
        rows.append(ComplexityRow(name, count_parameters(cfg), count_macs(cfg, 1.0), ref_macs, ref_params))
    return ComplexityReport(rows)
