"""Toy decoder-only language model with LoRA on the query/value projections."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class ToyLMConfig:
    layers: int = 4
    heads: int = 4
    embed_dim: int = 256
    context: int = 512
    vocab_size: int = 0
    lora_rank: int = 8
    lora_alpha: float = 16.0

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if self.lora_rank < 1:
            raise ValueError("lora_rank must be >= 1")


def lora_forward(x: np.ndarray, W: np.ndarray, A: np.ndarray, B: np.ndarray, alpha: float) -> np.ndarray:
    """``W x + (alpha / r) B (A x)`` for a single vector."""
    r = A.shape[0]
    return W @ x + (alpha / r) * (B @ (A @ x))


class LoRALinear(nn.Module):
    """Frozen-able linear layer with an additive low-rank update."""

    def __init__(self, dim_in: int, dim_out: int, rank: int, alpha: float):
        super().__init__()
        self.base = nn.Linear(dim_in, dim_out)
        self.lora_A = nn.Parameter(torch.zeros(rank, dim_in))
        self.lora_B = nn.Parameter(torch.zeros(dim_out, rank))
        self.scale = alpha / rank
        self.lora_enabled = True

    def reset_lora(self, generator: torch.Generator) -> None:
        bound = 1.0 / math.sqrt(self.lora_A.shape[1])
        with torch.no_grad():
            self.lora_A.uniform_(-bound, bound, generator=generator)
            self.lora_B.zero_()

    def forward(self, x):
        y = self.base(x)
        if self.lora_enabled:
            y = y + self.scale * F.linear(F.linear(x, self.lora_A), self.lora_B)
        return y


class Block(nn.Module):
    def __init__(self, cfg: ToyLMConfig):
        super().__init__()
        e = cfg.embed_dim
        self.heads = cfg.heads
        self.ln1 = nn.LayerNorm(e)
        self.q = LoRALinear(e, e, cfg.lora_rank, cfg.lora_alpha)
        self.k = nn.Linear(e, e)
        self.v = LoRALinear(e, e, cfg.lora_rank, cfg.lora_alpha)
        self.o = nn.Linear(e, e)
        self.ln2 = nn.LayerNorm(e)
        self.mlp = nn.Sequential(nn.Linear(e, 4 * e), nn.GELU(), nn.Linear(4 * e, e))

    def _split(self, x):
        b, t, e = x.shape
        return x.view(b, t, self.heads, e // self.heads).transpose(1, 2)

    def forward(self, x, cache=None):
        h = self.ln1(x)
        q, k, v = self._split(self.q(h)), self._split(self.k(h)), self._split(self.v(h))
        if cache is not None:
            if cache:
                k = torch.cat([cache[0], k], dim=2)
                v = torch.cat([cache[1], v], dim=2)
            cache[:] = [k, v]
        # single-token decode steps attend to the whole cache
        causal = q.shape[2] == k.shape[2] and q.shape[2] > 1
        a = F.scaled_dot_product_attention(q, k, v, is_causal=causal)
        b, _, t, _ = a.shape
        x = x + self.o(a.transpose(1, 2).reshape(b, t, -1))
        return x + self.mlp(self.ln2(x))


class ToyLM(nn.Module):
    def __init__(self, cfg: ToyLMConfig):
        super().__init__()
        if cfg.vocab_size < 1:
            raise ValueError("vocab_size must be set")
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.embed_dim)
        self.pos_emb = nn.Embedding(cfg.context, cfg.embed_dim)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.layers))
        self.ln_f = nn.LayerNorm(cfg.embed_dim)
        self.head = nn.Linear(cfg.embed_dim, cfg.vocab_size, bias=False)

    def lora_layers(self) -> list[LoRALinear]:
        return [m for m in self.modules() if isinstance(m, LoRALinear)]

    def set_lora(self, enabled: bool) -> None:
        for m in self.lora_layers():
            m.lora_enabled = enabled

    def lora_parameters(self) -> list[nn.Parameter]:
        return [p for m in self.lora_layers() for p in (m.lora_A, m.lora_B)]

    def base_parameters(self) -> list[nn.Parameter]:
        lora = {id(p) for p in self.lora_parameters()}
        return [p for p in self.parameters() if id(p) not in lora]

    def forward(self, embeds: torch.Tensor, cache=None, start: int = 0) -> torch.Tensor:
        """Logits for ``[B, T, E]`` input embeddings (positions ``start..``)."""
        t = embeds.shape[1]
        if start + t > self.cfg.context:
            raise ValueError(f"context overflow: {start + t} > {self.cfg.context}")
        x = embeds + self.pos_emb(torch.arange(start, start + t))
        for i, block in enumerate(self.blocks):
            x = block(x, None if cache is None else cache[i])
        return self.head(self.ln_f(x))


def masked_lm_loss(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean next-token cross-entropy over positions where ``mask`` is set.

    ``logits[:, i]`` predicts ``targets[:, i + 1]``; ``mask`` marks target
    positions (response span).
    """
    m = mask[:, 1:]
    if not bool(m.any()):
        raise ValueError("empty response span")
    logp = F.log_softmax(logits[:, :-1].float(), dim=-1)
    nll = -logp.gather(-1, targets[:, 1:].clamp(min=0).unsqueeze(-1)).squeeze(-1)
    return nll[m].mean()
