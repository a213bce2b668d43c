import torch
from torch import nn


class Interaction(nn.Module):
    """Sigmoid-gated cross-branch fusion: ``host + companion * mask``.

    The mask comes from a 1x1 convolution over the concatenated channels
    followed by LayerNorm and a sigmoid. Tensors are channels-last
    ``(B, K, T, N)``, so the 1x1 convolution is a Linear on the last axis.
    """

    def __init__(self, embed_dim: int):
        super().__init__()
        self.embed_dim = embed_dim
        self.conv = nn.Linear(2 * embed_dim, embed_dim)
        self.norm = nn.LayerNorm(embed_dim)

    def mask(self, host: torch.Tensor, companion: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.norm(self.conv(torch.cat([host, companion], dim=-1))))

    def forward(self, host: torch.Tensor, companion: torch.Tensor) -> torch.Tensor:
        if host.shape != companion.shape:
            raise ValueError(
                f"interaction inputs must share a shape, got {tuple(host.shape)} "
                f"and {tuple(companion.shape)}"
            )
        return host + companion * self.mask(host, companion)
