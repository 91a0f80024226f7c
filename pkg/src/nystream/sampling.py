"""Randomized column selection: batch multinomial draws and the
shrink/expand weight chains that maintain the streaming dictionary.

Randomness is counter-based: every (purpose, step, index) triple maps to its
own Philox substream, so a run is bit-reproducible for a fixed seed no
matter how the dictionary evolves, and the Bernoulli trials of distinct
indices stay independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import InputError

_PURPOSE_CHAIN = 1
_PURPOSE_BATCH = 2
_MASK64 = (1 << 64) - 1
_KEY_SPAN = 1 << 28  # step/index components must stay below this


@dataclass(frozen=True)
class RngHandle:
    """Seeded source of independent, addressable random substreams."""

    seed: int

    def _key(self, purpose: int, a: int, b: int) -> int:
        if not (0 <= a < _KEY_SPAN and 0 <= b < _KEY_SPAN):
            raise InputError("substream coordinates out of range")
        return (
            (self.seed & _MASK64)
            | (purpose & 0xFF) << 64
            | (a + 1) << 72
            | (b + 1) << 100
        )

    def chain_stream(self, step: int, index: int) -> np.random.Generator:
        """Substream feeding the Bernoulli chain of one index at one step."""
        return np.random.Generator(
            np.random.Philox(key=self._key(_PURPOSE_CHAIN, step, index))
        )

    def batch_stream(self) -> np.random.Generator:
        """Substream for batch multinomial sampling."""
        return np.random.Generator(np.random.Philox(key=self._key(_PURPOSE_BATCH, 0, 0)))


@dataclass(frozen=True)
class Dictionary:
    """Retained column indices with positive integer weights.

    ``q_bar`` is the capacity parameter: chains fire whenever an index's
    weight-probability product drops to 1/q_bar or below.
    """

    weights: dict[int, int]
    q_bar: int

    def __post_init__(self) -> None:
        if int(self.q_bar) < 1:
            raise InputError("q_bar must be a positive integer")
        for i, b in self.weights.items():
            if b < 1:
                raise InputError(f"index {i} has non-positive weight {b}")
        object.__setattr__(self, "weights", dict(sorted(self.weights.items())))

    @classmethod
    def empty(cls, q_bar: int) -> "Dictionary":
        return cls(weights={}, q_bar=q_bar)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(self.weights)

    @property
    def size(self) -> int:
        return len(self.weights)


def direct_sample(p, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``m`` i.i.d. indices (with replacement) from distribution ``p``."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if np.any(p < 0):
        raise InputError("probabilities must be nonnegative")
    total = float(p.sum())
    if abs(total - 1.0) > 1e-6:
        raise InputError(f"probabilities sum to {total!r}, expected 1")
    if m < 0:
        raise InputError("sample size must be nonnegative")
    if m == 0:
        return np.empty(0, dtype=np.int64)
    return rng.choice(p.shape[0], size=m, replace=True, p=p / total).astype(np.int64)


def _weight_chain(b: int, p: float, inv_budget: float, gen: np.random.Generator) -> int:
    # Success of Bernoulli(b/(b+1)) grows the weight; a single failure zeroes
    # it for good.  Threshold comparison is `<=` so ties fire the chain.
    while b != 0 and b * p <= inv_budget:
        if gen.random() < b / (b + 1.0):
            b += 1
        else:
            b = 0
    return b


def shrink_expand(
    dictionary: Dictionary,
    p_tilde: Mapping[int, float],
    new_index: int,
    rng: RngHandle,
    step: int,
) -> Dictionary:
    """One dictionary update: rethreshold retained weights, admit the new index.

    ``p_tilde`` must cover every retained index plus ``new_index`` with the
    already-clamped (monotone) probabilities.  Retained indices whose chain
    fails are dropped and never resurface; the new index enters with weight 1
    and runs the same chain against its own probability.
    """
    inv_budget = 1.0 / dictionary.q_bar
    out: dict[int, int] = {}
    for i, b in dictionary.weights.items():
        try:
            p = p_tilde[i]
        except KeyError:
            raise InputError(f"no probability supplied for retained index {i}")
        if not p > 0:
            raise InputError(f"retained index {i} has non-positive probability")
        if b * p <= inv_budget:
            # Substreams are keyed by (step, index), so skipping generator
            # creation for chains that never fire cannot shift anyone else's
            # randomness.
            b = _weight_chain(b, p, inv_budget, rng.chain_stream(step, i))
        if b != 0:
            out[i] = b
    if new_index in dictionary.weights:
        raise InputError(f"index {new_index} is already in the dictionary")
    p_new = p_tilde.get(new_index, 0.0)
    if p_new > 0:
        b_new = 1
        if b_new * p_new <= inv_budget:
            b_new = _weight_chain(1, p_new, inv_budget, rng.chain_stream(step, new_index))
        if b_new != 0:
            out[new_index] = b_new
    # p_new <= 0 only in degenerate streams (zero kernel mass); the chain
    # would then a.s. end at weight 0, so drop the column outright.
    return Dictionary(weights=out, q_bar=dictionary.q_bar)


def selection_weights(dictionary: Dictionary) -> dict[int, float]:
    """Square roots of the integer weights: the selection entries."""
    return {i: float(np.sqrt(b)) for i, b in dictionary.weights.items()}
