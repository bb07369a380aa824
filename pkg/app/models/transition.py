# app/models/transition.py
from typing import Optional, Tuple

import torch
import torch.nn as nn

from app.schemas.training import TransitionSpec


def partition_tubelets(volume: torch.Tensor, tubelet: Tuple[int, int, int]) -> torch.Tensor:
    """(B, K, H, W) -> (B, num_tokens, t*h*w) non-overlapping tubes, time-major token order."""
    b, k, height, width = volume.shape
    t, h, w = tubelet
    tubes = volume.reshape(b, k // t, t, height // h, h, width // w, w)
    tubes = tubes.permute(0, 1, 3, 5, 2, 4, 6)
    return tubes.reshape(b, (k // t) * (height // h) * (width // w), t * h * w)


def unpatch(patches: torch.Tensor, height: int, width: int, patch: Tuple[int, int]) -> torch.Tensor:
    """(B, (H/h)*(W/w), h*w) -> (B, H, W)."""
    h, w = patch
    b = patches.shape[0]
    grid = patches.reshape(b, height // h, width // w, h, w).permute(0, 1, 3, 2, 4)
    return grid.reshape(b, height, width)


class AttentionBlock(nn.Module):
    """Pre-norm self-attention block; keeps the last attention weights for inspection."""

    def __init__(self, embed_dim: int, num_heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(embed_dim)
        self.attn = nn.MultiheadAttention(embed_dim, num_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(embed_dim)
        self.mlp = nn.Sequential(
            nn.Linear(embed_dim, 2 * embed_dim),
            nn.GELU(),
            nn.Linear(2 * embed_dim, embed_dim),
        )
        self.last_attention: Optional[torch.Tensor] = None

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        h = self.norm1(tokens)
        out, weights = self.attn(h, h, h, need_weights=True, average_attn_weights=False)
        self.last_attention = weights.detach()
        tokens = tokens + out
        return tokens + self.mlp(self.norm2(tokens))


class TubeletTransformer(nn.Module):
    """Next-frame predictor over a K-frame model-space history.

    Tubelet tokens pass through an encoder stack and a decoder stack; decoder tokens are
    averaged over the temporal groups and un-patched into a residual added to the last
    history frame. The residual head starts at zero, so an untrained model predicts the
    last frame.
    """

    def __init__(self, spec: TransitionSpec = TransitionSpec()):
        super().__init__()
        self.spec = spec
        cfg = spec.tubelet
        self.num_tokens = cfg.num_tokens(spec.context_k, spec.height, spec.width)
        self.time_groups = spec.context_k // cfg.t_time
        self.patch_embed = nn.Linear(cfg.t_time * cfg.t_h * cfg.t_w, cfg.embed_dim)
        self.pos_embed = nn.Parameter(torch.zeros(1, self.num_tokens, cfg.embed_dim))
        nn.init.normal_(self.pos_embed, std=0.02)
        self.encoder = nn.ModuleList(AttentionBlock(cfg.embed_dim, cfg.num_heads) for _ in range(cfg.num_layers))
        self.decoder = nn.ModuleList(AttentionBlock(cfg.embed_dim, cfg.num_heads) for _ in range(cfg.num_layers))
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.head = nn.Linear(cfg.embed_dim, cfg.t_h * cfg.t_w)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def embed(self, volume: torch.Tensor) -> torch.Tensor:
        """Tubelet tokens plus position embeddings, (B, num_tokens, embed_dim)."""
        tubes = partition_tubelets(volume, self.spec.tubelet.tubelet)
        return self.patch_embed(tubes) + self.pos_embed

    def attention_maps(self):
        return [block.last_attention for block in list(self.encoder) + list(self.decoder)]

    def forward(self, volume: torch.Tensor) -> torch.Tensor:
        """Predict (B, H, W) from (B, K, H, W)."""
        spec = self.spec
        if tuple(volume.shape[1:]) != (spec.context_k, spec.height, spec.width):
            raise ValueError(
                f"expected history (B, {spec.context_k}, {spec.height}, {spec.width}), got {tuple(volume.shape)}"
            )
        dtype = self.patch_embed.weight.dtype
        x = volume.to(dtype)
        tokens = self.embed(x)
        for block in self.encoder:
            tokens = block(tokens)
        for block in self.decoder:
            tokens = block(tokens)
        tokens = self.norm(tokens)
        spatial = tokens.reshape(x.shape[0], self.time_groups, -1, tokens.shape[-1]).mean(dim=1)
        residual = unpatch(self.head(spatial), spec.height, spec.width, (spec.tubelet.t_h, spec.tubelet.t_w))
        return (x[:, -1] + residual).to(volume.dtype)
