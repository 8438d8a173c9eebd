"""Output layers over the shared latent state.

Two independent affine heads: one produces next-item classification logits,
the other produces Q-values (identity activation, so values can represent
unbounded cumulative rewards). Neither head scores the padding item.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import HIDDEN
from .numerics import ParameterStore


@dataclass
class HeadParams:
    sup_weight: np.ndarray  # [HIDDEN, n_items]
    sup_bias: np.ndarray  # [n_items]
    q_weight: np.ndarray  # [HIDDEN, n_items]
    q_bias: np.ndarray  # [n_items]

    @property
    def n_items(self) -> int:
        return self.sup_bias.shape[0]

    @classmethod
    def init(
        cls,
        store: ParameterStore,
        n_items: int,
        rng: np.random.Generator,
        scale: float = 0.05,
    ) -> "HeadParams":
        store.add("sup_weight", rng.uniform(-scale, scale, size=(HIDDEN, n_items)))
        store.add("sup_bias", np.zeros(n_items))
        store.add("q_weight", rng.uniform(-scale, scale, size=(HIDDEN, n_items)))
        store.add("q_bias", np.zeros(n_items))
        return cls.from_store(store)

    @classmethod
    def from_store(cls, store: ParameterStore) -> "HeadParams":
        return cls(
            sup_weight=store.value("sup_weight"),
            sup_bias=store.value("sup_bias"),
            q_weight=store.value("q_weight"),
            q_bias=store.value("q_bias"),
        )


def supervised_logits(s: np.ndarray, p: HeadParams) -> np.ndarray:
    """Classification logits; accepts [HIDDEN] or [B, HIDDEN] states."""
    return s @ p.sup_weight + p.sup_bias


def q_values(s: np.ndarray, p: HeadParams) -> np.ndarray:
    """Q-values over all items for the given state(s)."""
    return s @ p.q_weight + p.q_bias


def softmax(y: np.ndarray) -> np.ndarray:
    """Probabilities along the last axis, stabilized by max subtraction."""
    shifted = y - np.max(y, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
