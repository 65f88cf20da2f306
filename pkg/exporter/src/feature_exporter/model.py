"""A small two-branch multimodal regression model for exercising the
activation exporter.

The model mirrors the shape of the larger networks the exporter targets:
each input modality runs through its own branch, the branch outputs meet at
a combining stage, and a linear head turns the fused vector into a scalar
prediction. The branch outputs (the inputs *entering* the combining stage)
are what the exporter captures.
"""

from __future__ import annotations

import zlib

import torch
from torch import nn

VOCAB_SIZE = 512
TEXT_WIDTH = 8
NUMERIC_WIDTH = 3


def tokenize(text: str, vocab_size: int = VOCAB_SIZE) -> list[int]:
    """Deterministic word-hash tokenizer; empty text maps to the pad token."""
    tokens = [zlib.crc32(word.encode("utf-8")) % (vocab_size - 1) + 1
              for word in text.split()]
    return tokens or [0]


class ToyTwoBranchModel(nn.Module):
    """Text branch (embedding bag, width 8) + numeric branch (MLP, width 3),
    fused by concatenation into a linear regression head."""

    def __init__(self, numeric_in: int, vocab_size: int = VOCAB_SIZE,
                 text_width: int = TEXT_WIDTH,
                 numeric_width: int = NUMERIC_WIDTH, seed: int = 0):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        self.text_branch = nn.EmbeddingBag(vocab_size, text_width, mode="mean")
        self.numeric_branch = nn.Sequential(
            nn.Linear(numeric_in, 16), nn.Tanh(), nn.Linear(16, numeric_width))
        self.head = nn.Linear(text_width + numeric_width, 1)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.randn(p.shape, generator=generator) * 0.3)

    @property
    def branch_tags(self) -> tuple[str, ...]:
        return ("text", "numeric")

    def branch_module(self, tag: str) -> nn.Module:
        if tag == "text":
            return self.text_branch
        if tag == "numeric":
            return self.numeric_branch
        raise KeyError(tag)

    def forward(self, token_ids: torch.Tensor, offsets: torch.Tensor,
                numerics: torch.Tensor) -> torch.Tensor:
        text_out = self.text_branch(token_ids, offsets)
        numeric_out = self.numeric_branch(numerics)
        fused = torch.cat([text_out, numeric_out], dim=1)
        return self.head(fused).squeeze(-1)


def build_model(model_id: str, numeric_in: int) -> ToyTwoBranchModel:
    """Resolve a model id: ``toy-two-branch`` (optionally ``:<seed>``) or a
    path to a saved state dict of the toy architecture."""
    if model_id.startswith("toy-two-branch"):
        seed = 0
        if ":" in model_id:
            seed = int(model_id.split(":", 1)[1])
        model = ToyTwoBranchModel(numeric_in=numeric_in, seed=seed)
    else:
        model = ToyTwoBranchModel(numeric_in=numeric_in)
        state = torch.load(model_id, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    model.eval()
    return model
