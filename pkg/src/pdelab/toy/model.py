"""Minimal encoder-classifier with seven diffusion integration positions.

The model is a post-norm transformer encoder in float64. A single shared
diffusion module (the numpy layer wrapped as a torch autograd Function)
can be wired in at one of seven points:

    after-embedding   once, on the embedded sequence before block 1
    after-mlp         on each block's MLP branch output, pre-residual
    layer-diffusion   between consecutive blocks
    before-layernorm  on each sub-layer's residual sum, just before its norm
    in-attention      on the value projections before attention weighting
    head-diffusion    across the heads axis of the per-head attention outputs
    after-attention   on each block's attention branch output, pre-residual

``position="none"`` gives the exact baseline (no diffusion parameters).
All variants share identical non-diffusion parameters for a given seed:
initialization draws skip the diffusion module entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import torch
from torch import nn

from ..fields import BoundaryMode
from ..layer import (
    DiffusionLayerParams,
    backward as layer_backward,
    default_mix_weights,
    forward as layer_forward,
    raw_for_alpha,
)

POSITIONS = (
    "none",
    "after-embedding",
    "after-mlp",
    "layer-diffusion",
    "before-layernorm",
    "in-attention",
    "head-diffusion",
    "after-attention",
)


@dataclass(frozen=True)
class DiffusionSettings:
    """Structural settings for the model's diffusion module."""

    scales: tuple[int, ...] = (1, 2, 4)
    alpha_init: float = 0.1
    post_norm: bool = False
    boundary: BoundaryMode = BoundaryMode.REPLICATE_CLAMP
    tie_channels: bool = False
    frozen: bool = False
    raw_override: float | None = None


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    layers: int = 2
    heads: int = 4
    mlp_hidden: int = 256
    vocab: int = 16
    max_len: int = 64
    num_classes: int = 10
    position: str = "none"
    pde: DiffusionSettings = dc_field(default_factory=DiffusionSettings)
    seed: int = 0
    dropout: float = 0.1

    def __post_init__(self) -> None:
        if self.dim % self.heads != 0:
            raise ValueError(f"heads={self.heads} must divide dim={self.dim}")
        if self.position not in POSITIONS:
            raise ValueError(f"unknown position {self.position!r}; expected one of {POSITIONS}")
        if self.position not in ("none", "head-diffusion") and max(self.pde.scales) >= self.max_len:
            raise ValueError(
                f"max diffusion scale {max(self.pde.scales)} must be < max_len {self.max_len}"
            )


class _DiffusionFn(torch.autograd.Function):
    """Autograd bridge to the numpy forward/backward of the layer.

    The batch axis is folded into channels; per-channel coefficients are
    tiled accordingly so every batch element sees the same parameters.
    """

    @staticmethod
    def forward(ctx, x: torch.Tensor, raw: torch.Tensor, mix: torch.Tensor, module: "SequenceDiffusion"):
        B, N, C = x.shape
        xn = x.detach().numpy().transpose(1, 0, 2).reshape(N, B * C)
        raw_np = raw.detach().numpy()
        tiled = raw_np if raw_np.shape[1] == 1 else np.tile(raw_np, (1, B))
        params = DiffusionLayerParams(
            scales=module.scales,
            raw_alpha=tiled,
            mix_weights=mix.detach().numpy(),
            alpha_bound=module.alpha_bound,
            post_norm=module.post_norm,
            boundary=module.boundary,
        )
        out, cache = layer_forward(xn, params)
        ctx.cache = cache
        ctx.dims = (B, N, C)
        ctx.tied = raw_np.shape[1] == 1
        return torch.from_numpy(out.reshape(N, B, C).transpose(1, 0, 2).copy())

    @staticmethod
    def backward(ctx, grad_out: torch.Tensor):
        B, N, C = ctx.dims
        gn = grad_out.detach().numpy().transpose(1, 0, 2).reshape(N, B * C)
        gi, gr, gw = layer_backward(ctx.cache, gn)
        grad_x = torch.from_numpy(gi.reshape(N, B, C).transpose(1, 0, 2).copy())
        if ctx.tied:
            grad_raw = torch.from_numpy(gr)
        else:
            grad_raw = torch.from_numpy(gr.reshape(-1, B, C).sum(axis=1))
        return grad_x, grad_raw, torch.from_numpy(gw), None


class SequenceDiffusion(nn.Module):
    """Learnable diffusion along axis 1 of a (batch, positions, channels) tensor."""

    def __init__(self, channels: int, settings: DiffusionSettings):
        super().__init__()
        self.scales = tuple(settings.scales)
        self.alpha_bound = 0.5
        self.post_norm = settings.post_norm
        self.boundary = settings.boundary
        k = len(self.scales)
        width = 1 if settings.tie_channels else channels
        raw0 = settings.raw_override
        if raw0 is None:
            raw0 = raw_for_alpha(settings.alpha_init, self.alpha_bound)
        self.raw_alpha = nn.Parameter(
            torch.full((k, width), raw0, dtype=torch.float64),
            requires_grad=not settings.frozen,
        )
        self.mix_weights = nn.Parameter(
            torch.from_numpy(default_mix_weights(k)).clone(),
            requires_grad=not settings.frozen,
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return _DiffusionFn.apply(x, self.raw_alpha, self.mix_weights, self)

    def constrained_alphas(self) -> np.ndarray:
        from ..layer import constrain_alpha

        return np.asarray(constrain_alpha(self.raw_alpha.detach().numpy(), self.alpha_bound))

    def effective_sums(self) -> np.ndarray:
        """Per-channel weighted coefficient sums after runtime enforcement."""
        alpha = self.constrained_alphas()
        w = np.abs(self.mix_weights.detach().numpy())
        s = w @ alpha
        return np.minimum(s, self.alpha_bound - 1e-6)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)

    def forward(
        self,
        x: torch.Tensor,
        value_pde: SequenceDiffusion | None = None,
        head_pde: SequenceDiffusion | None = None,
    ) -> torch.Tensor:
        B, L, D = x.shape
        H, dh = self.heads, self.head_dim
        q = self.q(x).view(B, L, H, dh).transpose(1, 2)
        k = self.k(x).view(B, L, H, dh).transpose(1, 2)
        vfull = self.v(x)
        if value_pde is not None:
            vfull = value_pde(vfull)
        v = vfull.view(B, L, H, dh).transpose(1, 2)
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(dh), dim=-1)
        out = att @ v  # (B, H, L, dh)
        if head_pde is not None:
            across = out.permute(0, 2, 1, 3).reshape(B * L, H, dh)
            across = head_pde(across)
            out = across.reshape(B, L, H, dh).permute(0, 2, 1, 3)
        return self.o(out.transpose(1, 2).reshape(B, L, D))


class EncoderBlock(nn.Module):
    """Pre-norm encoder block: x + Attn(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim: int, heads: int, mlp_hidden: int, dropout: float):
        super().__init__()
        self.attn = MultiHeadAttention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, mlp_hidden)
        self.fc2 = nn.Linear(mlp_hidden, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, position: str, pde: SequenceDiffusion | None) -> torch.Tensor:
        if position == "before-layernorm" and pde is not None:
            x = pde(x)
        a = self.attn(
            self.norm1(x),
            value_pde=pde if position == "in-attention" else None,
            head_pde=pde if position == "head-diffusion" else None,
        )
        if position == "after-attention" and pde is not None:
            a = pde(a)
        x = x + self.drop(a)
        if position == "before-layernorm" and pde is not None:
            x = pde(x)
        f = self.fc2(torch.nn.functional.gelu(self.fc1(self.norm2(x))))
        if position == "after-mlp" and pde is not None:
            f = pde(f)
        return x + self.drop(f)


class ToyTransformer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.tok_emb = nn.Embedding(config.vocab, config.dim)
        self.pos_emb = nn.Embedding(config.max_len, config.dim)
        self.drop = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList(
            EncoderBlock(config.dim, config.heads, config.mlp_hidden, config.dropout)
            for _ in range(config.layers)
        )
        self.norm_f = nn.LayerNorm(config.dim)
        self.head = nn.Linear(config.dim, config.num_classes)
        # registered last so the shared non-diffusion parameter order (and
        # the RNG draw sequence at init) matches the baseline exactly
        self.pde = _build_diffusion(config)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        B, L = tokens.shape
        positions = torch.arange(L, device=tokens.device)
        x = self.tok_emb(tokens) + self.pos_emb(positions)[None]
        x = self.drop(x)
        pos = self.config.position
        if pos == "after-embedding" and self.pde is not None:
            x = self.pde(x)
        n_blocks = len(self.blocks)
        for i, block in enumerate(self.blocks):
            x = block(x, pos, self.pde)
            if pos == "layer-diffusion" and self.pde is not None and i < n_blocks - 1:
                x = self.pde(x)
        return self.head(self.norm_f(x).mean(dim=1))

    def coefficient_snapshot(self) -> np.ndarray | None:
        return None if self.pde is None else self.pde.constrained_alphas()


def effective_pde_scales(config: ModelConfig) -> tuple[int, ...]:
    """Scales the diffusion module actually uses at this position.

    Head diffusion runs on a lattice of length ``heads``, so scales are
    filtered to those strictly below the head count.
    """
    if config.position == "head-diffusion":
        return tuple(s for s in config.pde.scales if s < config.heads)
    return tuple(config.pde.scales)


def _build_diffusion(config: ModelConfig) -> SequenceDiffusion | None:
    if config.position == "none":
        return None
    scales = effective_pde_scales(config)
    if not scales:
        return None  # degenerate lattice: identity, no parameters
    channels = config.dim // config.heads if config.position == "head-diffusion" else config.dim
    settings = DiffusionSettings(
        scales=scales,
        alpha_init=config.pde.alpha_init,
        post_norm=config.pde.post_norm,
        boundary=config.pde.boundary,
        tie_channels=config.pde.tie_channels,
        frozen=config.pde.frozen,
        raw_override=config.pde.raw_override,
    )
    return SequenceDiffusion(channels, settings)


def _init_weights(model: ToyTransformer, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for name, p in model.named_parameters():
        if name.startswith("pde"):
            continue  # constant-initialized, consumes no randomness
        if "emb" in name:
            p.data.normal_(0.0, 1.0 / math.sqrt(p.shape[-1]), generator=gen)
        elif p.dim() >= 2:
            bound = math.sqrt(6.0 / (p.shape[0] + p.shape[1]))
            p.data.uniform_(-bound, bound, generator=gen)
        elif "norm" in name and name.endswith("weight"):
            p.data.fill_(1.0)
        else:
            p.data.zero_()


def build_model(config: ModelConfig) -> ToyTransformer:
    """Construct and deterministically initialize a model variant."""
    model = ToyTransformer(config)
    model.double()
    _init_weights(model, config.seed)
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
