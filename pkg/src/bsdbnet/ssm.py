"""Selective state-space sequence modelling and the time-frequency block.

Shapes follow the usual selective-scan convention: ``u`` is ``(b, l, d)``,
``delta`` is ``(b, l, d)``, ``A`` is ``(d, n)``, ``B``/``C`` are ``(b, l, n)``
and ``D`` is ``(d,)``.
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .interaction import Interaction


def discretize(delta: torch.Tensor, A: torch.Tensor, B: torch.Tensor):
    """Zero-order hold for the diagonal A, Euler step for B.

    ``delta`` broadcasts against the trailing state axis of ``A`` and ``B``:
    Abar = exp(delta * A), Bbar = delta * B.
    """
    delta = torch.as_tensor(delta)
    if torch.any(delta <= 0):
        raise ValueError("step sizes must be strictly positive")
    delta = delta.unsqueeze(-1)
    return torch.exp(delta * A), delta * B


def selective_scan(u, delta, A, B, C, D=None, return_state: bool = False):
    """Sequential scan h_t = Abar_t * h_{t-1} + Bbar_t * u_t, y_t = <C_t, h_t> + D u_t.

    The state starts at zero. This is the reference implementation; it loops
    over time and is vectorised over batch, channel and state.
    """
    b, l, d = u.shape
    n = A.shape[1]
    if delta.shape != u.shape or A.shape != (d, n) or B.shape != (b, l, n) or C.shape != (b, l, n):
        raise ValueError(
            "shape mismatch: u%s delta%s A%s B%s C%s"
            % (tuple(u.shape), tuple(delta.shape), tuple(A.shape), tuple(B.shape), tuple(C.shape))
        )
    deltaA = torch.exp(delta.unsqueeze(-1) * A)  # (b, l, d, n)
    deltaB_u = (delta * u).unsqueeze(-1) * B.unsqueeze(2)  # (b, l, d, n)
    h = u.new_zeros(b, d, n)
    ys = []
    for t in range(l):
        h = deltaA[:, t] * h + deltaB_u[:, t]
        ys.append(torch.einsum("bdn,bn->bd", h, C[:, t]))
    y = torch.stack(ys, dim=1)
    if D is not None:
        y = y + u * D
    return (y, h) if return_state else y


class SelectiveSSM(nn.Module):
    """Mamba-style mixer: gated input projection, causal depthwise conv,
    input-dependent (delta, B, C), selective scan, output projection.

    Input and output are ``(b, l, d_model)``; the recurrence runs forward
    along ``l`` and nothing looks ahead.
    """

    def __init__(self, d_model: int, d_state: int = 16, expand: int = 2, d_conv: int = 4,
                 dt_rank: int | None = None, dt_min: float = 1e-3, dt_max: float = 1e-1):
        super().__init__()
        self.d_model = d_model
        self.d_state = d_state
        self.d_inner = expand * d_model
        self.d_conv = d_conv
        self.dt_rank = dt_rank or math.ceil(d_model / 16)

        self.in_proj = nn.Linear(d_model, 2 * self.d_inner, bias=False)
        self.conv1d = nn.Conv1d(self.d_inner, self.d_inner, d_conv, groups=self.d_inner)
        self.x_proj = nn.Linear(self.d_inner, self.dt_rank + 2 * d_state, bias=False)
        self.dt_proj = nn.Linear(self.dt_rank, self.d_inner)
        self.out_proj = nn.Linear(self.d_inner, d_model, bias=False)

        A = torch.arange(1, d_state + 1, dtype=torch.float32).repeat(self.d_inner, 1)
        self.A_log = nn.Parameter(torch.log(A))
        self.D = nn.Parameter(torch.ones(self.d_inner))

        # dt bias so that softplus(bias) is log-uniform in [dt_min, dt_max].
        dt = torch.exp(
            torch.rand(self.d_inner) * (math.log(dt_max) - math.log(dt_min)) + math.log(dt_min)
        )
        with torch.no_grad():
            self.dt_proj.bias.copy_(dt + torch.log(-torch.expm1(-dt)))

    @property
    def A(self) -> torch.Tensor:
        # Strictly negative by construction.
        return -torch.exp(self.A_log)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, l, _ = x.shape
        xz = self.in_proj(x)
        xs, z = xz.chunk(2, dim=-1)
        xs = F.pad(xs.transpose(1, 2), (self.d_conv - 1, 0))
        xs = F.silu(self.conv1d(xs)).transpose(1, 2)
        dt, B, C = self.x_proj(xs).split([self.dt_rank, self.d_state, self.d_state], dim=-1)
        delta = F.softplus(self.dt_proj(dt))
        # softplus underflows to exactly 0 for very negative inputs.
        delta = delta.clamp_min(torch.finfo(delta.dtype).tiny)
        y = selective_scan(xs, delta, self.A, B, C, self.D)
        return self.out_proj(y * F.silu(z))


class BidirectionalSSM(nn.Module):
    """Forward and reversed SSM passes, concatenated and projected back to d_model."""

    def __init__(self, d_model: int, **ssm_kwargs):
        super().__init__()
        self.fwd = SelectiveSSM(d_model, **ssm_kwargs)
        self.bwd = SelectiveSSM(d_model, **ssm_kwargs)
        self.merge = nn.Linear(2 * d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y_f = self.fwd(x)
        y_b = self.bwd(x.flip(1)).flip(1)
        return self.merge(torch.cat([y_f, y_b], dim=-1))


class MambaBlock(nn.Module):
    """Interaction, then bidirectional modelling across bands, then causal
    modelling across time, each stage with a residual connection.

    ``host`` and ``companion`` are ``(B, K, T, N)``.
    """

    def __init__(self, embed_dim: int, d_state: int = 16, expand: int = 2, d_conv: int = 4):
        super().__init__()
        kw = dict(d_state=d_state, expand=expand, d_conv=d_conv)
        self.interaction = Interaction(embed_dim)
        self.freq_norm = nn.LayerNorm(embed_dim)
        self.freq_ssm = BidirectionalSSM(embed_dim, **kw)
        self.time_norm = nn.LayerNorm(embed_dim)
        self.time_ssm = SelectiveSSM(embed_dim, **kw)
        self.time_out = nn.Linear(embed_dim, embed_dim)

    def forward(self, host: torch.Tensor, companion: torch.Tensor) -> torch.Tensor:
        x_in = self.interaction(host, companion)
        B, K, T, N = x_in.shape

        f_in = self.freq_norm(x_in).permute(0, 2, 1, 3).reshape(B * T, K, N)
        f = self.freq_ssm(f_in).reshape(B, T, K, N).permute(0, 2, 1, 3)
        f_out = x_in + f

        t_in = self.time_norm(f_out).reshape(B * K, T, N)
        t_out = self.time_out(self.time_ssm(t_in)).reshape(B, K, T, N)
        return f_out + t_out
