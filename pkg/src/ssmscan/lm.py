"""Toy byte-level language pipeline: vision prefix + prompt -> greedy bytes.

The decoder is a stack of gated-scan blocks over a 258-token byte vocabulary
(256 byte values plus BOS/EOS), with a final RMS norm and an output
projection tied to the embedding matrix. Vision tokens enter the sequence as
raw embeddings, separated from the embedded prompt by a single learned
boundary vector.

Generation is greedy (ties broken toward the lowest token id) and runs in
recurrent mode: each layer carries a constant-size state (filter tail plus
scan tensor), so a decode step never re-reads the prefix. ``forward`` on the
full sequence is the reference the recurrent path is tested against.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import DomainError, ShapeError
from .rng import generator
from .ssm import (
    Mamba2BlockWeights,
    Mamba2StepState,
    init_mamba2_weights,
    mamba2_block,
    mamba2_step,
    rmsnorm,
)
from .validation import as_tensor, check_ndim, check_positive

N_BYTES = 256
BOS = 256
EOS = 257
VOCAB_SIZE = 258


def tokenize(text) -> List[int]:
    """Byte-level tokenizer: BOS + raw bytes + EOS (UTF-8 for str input)."""
    data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    return [BOS] + list(data) + [EOS]


def detokenize(ids) -> bytes:
    """Inverse of tokenize: drops specials, keeps every byte value."""
    out = bytearray()
    for i in ids:
        if not 0 <= i < VOCAB_SIZE:
            raise DomainError(f"token id {i} outside vocabulary of {VOCAB_SIZE}")
        if i < N_BYTES:
            out.append(i)
    return bytes(out)


@dataclass(frozen=True)
class ToyLmConfig:
    d_llm: int = 64
    n_layers: int = 4
    max_gen: int = 48
    n_heads: int = 4
    state_size: int = 8

    def __post_init__(self):
        check_positive(self.d_llm, "d_llm")
        check_positive(self.n_layers, "n_layers")
        if self.max_gen < 0:
            raise DomainError(f"max_gen must be >= 0, got {self.max_gen}")


@dataclass(frozen=True)
class GenerationResult:
    """Greedy decode output: emitted ids, decoded bytes, per-step seconds."""

    tokens: List[int]
    text: bytes
    timing: List[float] = field(default_factory=list)

    @property
    def total_seconds(self) -> float:
        return float(sum(self.timing))


class MambaLm:
    """Randomly initialized decoder; weights are fixed at construction."""

    def __init__(self, config: ToyLmConfig = ToyLmConfig(), seed: int = 0):
        self.config = config
        rng = generator(seed, "lm")
        d = config.d_llm
        self.embedding = rng.standard_normal((VOCAB_SIZE, d)) / np.sqrt(d)
        self.boundary = rng.standard_normal(d) / np.sqrt(d)
        self.blocks = [
            init_mamba2_weights(
                d,
                generator(seed, f"lm.block{i}"),
                n_heads=config.n_heads,
                state_size=config.state_size,
            )
            for i in range(config.n_layers)
        ]
        self.final_norm = np.ones(d)

    # -- full-sequence path ------------------------------------------------

    def forward(self, prefix: np.ndarray) -> np.ndarray:
        """Logits for every position of an (L, d_llm) embedded prefix."""
        x = as_tensor(prefix, None, "prefix")
        check_ndim(x, 2, "prefix")
        if x.shape[0] < 1:
            raise ShapeError("prefix must contain at least one position")
        if x.shape[1] != self.config.d_llm:
            raise ShapeError(
                f"prefix width {x.shape[1]} != d_llm {self.config.d_llm}"
            )
        for w in self.blocks:
            x = mamba2_block(x, w)
        x = rmsnorm(x, self.final_norm)
        return x @ self.embedding.T

    # -- recurrent path ----------------------------------------------------

    def init_states(self) -> List[Mamba2StepState]:
        return [Mamba2StepState(w) for w in self.blocks]

    def step(self, x_t: np.ndarray, states: List[Mamba2StepState]) -> np.ndarray:
        """Logits for one position given the running per-layer states."""
        x = as_tensor(x_t, None, "step input").reshape(-1)
        for w, state in zip(self.blocks, states):
            x = mamba2_step(x, w, state)
        x = rmsnorm(x, self.final_norm)
        return x @ self.embedding.T

    def embed_prompt(self, vision_tokens: Optional[np.ndarray], prompt) -> np.ndarray:
        """Prefix embeddings: vision tokens ++ boundary ++ embedded tokens."""
        pieces = []
        if vision_tokens is not None:
            v = as_tensor(vision_tokens, None, "vision tokens")
            check_ndim(v, 2, "vision tokens")
            if v.shape[1] != self.config.d_llm:
                raise ShapeError(
                    f"vision token width {v.shape[1]} != d_llm {self.config.d_llm}"
                )
            pieces.append(v)
            pieces.append(self.boundary[None, :])
        pieces.append(self.embedding[tokenize(prompt)])
        return np.concatenate(pieces, axis=0)

    def generate(self, vision_tokens: Optional[np.ndarray], prompt,
                 max_gen: Optional[int] = None) -> GenerationResult:
        """Greedy decode after the vision+prompt prefix.

        Runs in recurrent mode: the prefix is consumed once through the
        per-layer states, then each new token costs one step regardless of
        context length. Stops at EOS or after max_gen tokens.
        """
        cap = self.config.max_gen if max_gen is None else max_gen
        if cap == 0:
            return GenerationResult([], b"", [])
        prefix = self.embed_prompt(vision_tokens, prompt)
        states = self.init_states()
        logits = None
        for row in prefix:
            logits = self.step(row, states)
        tokens: List[int] = []
        timing: List[float] = []
        while len(tokens) < cap:
            t0 = time.perf_counter()
            nxt = int(np.argmax(logits))  # argmax takes the lowest id on ties
            tokens.append(nxt)
            if nxt == EOS:
                timing.append(time.perf_counter() - t0)
                break
            logits = self.step(self.embedding[nxt], states)
            timing.append(time.perf_counter() - t0)
        return GenerationResult(tokens, detokenize(tokens), timing)

    def generate_reforward(self, vision_tokens: Optional[np.ndarray], prompt,
                           max_gen: Optional[int] = None) -> GenerationResult:
        """Reference decoder: re-runs forward() over the whole growing
        sequence at every step. O(L) state and O(L^2)-ish time; exists to
        validate the recurrent path."""
        cap = self.config.max_gen if max_gen is None else max_gen
        if cap == 0:
            return GenerationResult([], b"", [])
        prefix = self.embed_prompt(vision_tokens, prompt)
        tokens: List[int] = []
        timing: List[float] = []
        while len(tokens) < cap:
            t0 = time.perf_counter()
            logits = self.forward(prefix)[-1]
            nxt = int(np.argmax(logits))
            tokens.append(nxt)
            timing.append(time.perf_counter() - t0)
            if nxt == EOS:
                break
            prefix = np.concatenate([prefix, self.embedding[nxt][None, :]], axis=0)
        return GenerationResult(tokens, detokenize(tokens), timing)

    # -- serialization -----------------------------------------------------

    def to_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {
            "config": np.array(
                [self.config.d_llm, self.config.n_layers, self.config.max_gen,
                 self.config.n_heads, self.config.state_size],
                dtype=np.float64,
            ),
            "embedding": self.embedding,
            "boundary": self.boundary,
            "final_norm": self.final_norm,
        }
        for i, w in enumerate(self.blocks):
            arrays.update(w.to_arrays(f"block{i}."))
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "MambaLm":
        cfg_vals = arrays["config"].astype(int)
        config = ToyLmConfig(*(int(v) for v in cfg_vals))
        model = cls.__new__(cls)
        model.config = config
        model.embedding = arrays["embedding"]
        model.boundary = arrays["boundary"]
        model.final_norm = arrays["final_norm"]
        model.blocks = [
            Mamba2BlockWeights.from_arrays(arrays, f"block{i}.")
            for i in range(config.n_layers)
        ]
        return model
