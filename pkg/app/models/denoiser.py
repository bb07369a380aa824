# app/models/denoiser.py
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from app.schemas.training import DenoiserConfig


def timestep_embedding(taus: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of (possibly fractional) diffusion times, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=taus.dtype) / half)
    args = taus[:, None] * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class DenoiserNet(nn.Module):
    """Small convolutional noise predictor eps_hat(x_tau, tau).

    Four 3x3 convolution stages (1 -> C -> C -> C -> 1) with SiLU activations; the tau
    embedding is projected to a per-channel bias added after every hidden stage, and the
    input is added back to the output (residual input connection).
    """

    def __init__(self, config: DenoiserConfig = DenoiserConfig()):
        super().__init__()
        self.config = config
        c = config.channels
        self.embed_proj = nn.Linear(config.embedding_dim, c)
        self.conv_in = nn.Conv2d(1, c, kernel_size=3, padding=1)
        self.conv_mid1 = nn.Conv2d(c, c, kernel_size=3, padding=1)
        self.conv_mid2 = nn.Conv2d(c, c, kernel_size=3, padding=1)
        self.conv_out = nn.Conv2d(c, 1, kernel_size=3, padding=1)

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, x: torch.Tensor, tau: torch.Tensor) -> torch.Tensor:
        """Predict eps for fields x of shape (B, H, W) or (H, W)."""
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        dtype = self.conv_in.weight.dtype
        h_in = x.to(dtype)
        tau = torch.as_tensor(tau, dtype=dtype).reshape(-1).expand(h_in.shape[0])
        # times are scaled to [0, 1000] so the frequency bank spans the whole horizon
        emb = timestep_embedding(1000.0 * tau / self.config.horizon_T, self.config.embedding_dim)
        bias = self.embed_proj(emb)[:, :, None, None]

        h = F.silu(self.conv_in(h_in.unsqueeze(1)) + bias)
        h = F.silu(self.conv_mid1(h) + bias)
        h = F.silu(self.conv_mid2(h) + bias)
        eps = self.conv_out(h).squeeze(1) + h_in
        eps = eps.to(x.dtype)
        return eps.squeeze(0) if squeeze else eps
