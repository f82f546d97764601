"""Two-slot prompts over an eight-word vocabulary."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError

COLORS = ("red", "green", "blue")
SHAPES = ("circle", "square", "triangle")
VOCAB = COLORS + SHAPES + ("null", "pad")
TOKEN_ID = {w: i for i, w in enumerate(VOCAB)}
NULL_ID = TOKEN_ID["null"]
PAD_ID = TOKEN_ID["pad"]
N_TOKENS = 2


@dataclass(frozen=True)
class Prompt:
    tokens: tuple

    def __post_init__(self):
        toks = tuple(int(t) for t in self.tokens)
        if len(toks) != N_TOKENS:
            raise ArgumentError(f"prompts have exactly {N_TOKENS} tokens, got {len(toks)}")
        if any(not 0 <= t < len(VOCAB) for t in toks):
            raise ArgumentError(f"token id out of vocabulary: {toks}")
        object.__setattr__(self, "tokens", toks)

    @classmethod
    def null(cls) -> "Prompt":
        return cls((NULL_ID, NULL_ID))

    @classmethod
    def of(cls, color: str, shape: str) -> "Prompt":
        return cls((TOKEN_ID[color], TOKEN_ID[shape]))

    @classmethod
    def parse(cls, text: str) -> "Prompt":
        words = text.replace(",", " ").split()
        if not words or words == ["null"] or text.strip() == "":
            return cls.null()
        try:
            return cls(tuple(TOKEN_ID[w] for w in words))
        except KeyError as e:
            raise ArgumentError(f"unknown word {e.args[0]!r} in prompt {text!r}") from None

    @property
    def is_null(self) -> bool:
        return self.tokens == (NULL_ID, NULL_ID)

    @property
    def words(self) -> tuple:
        return tuple(VOCAB[t] for t in self.tokens)

    @property
    def color(self):
        return next((w for w in self.words if w in COLORS), None)

    @property
    def shape(self):
        return next((w for w in self.words if w in SHAPES), None)

    def __str__(self) -> str:
        return " ".join(self.words)


def token_array(prompts, batch: int) -> np.ndarray:
    """``(batch, N)`` int array from one prompt or a list of ``batch`` prompts."""
    if isinstance(prompts, Prompt) or prompts is None:
        p = prompts if prompts is not None else Prompt.null()
        return np.tile(np.array(p.tokens, dtype=np.int64), (batch, 1))
    prompts = list(prompts)
    if len(prompts) != batch:
        raise ArgumentError(f"got {len(prompts)} prompts for a batch of {batch}")
    return np.array([p.tokens for p in prompts], dtype=np.int64)
