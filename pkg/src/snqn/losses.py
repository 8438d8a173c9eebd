"""Training objectives.

Per-item reference implementations of every loss used by the trainer:
cross-entropy over next-item logits, the double-Q positive/negative TD
terms, the combined SNQN sum, the sampled-average advantage, the
advantage-weighted SA2C actor loss, and its propensity-corrected variant.
The batched trainer computes the same quantities vectorized; tests pin the
two paths against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .encoder import SessionSequence
from .heads import softmax
from .numerics import UsageError


@dataclass
class RewardConfig:
    r_click: float = 0.2
    r_purchase: float = 1.0
    r_negative: float = 0.0
    gamma: float = 0.5

    def __post_init__(self) -> None:
        if self.r_click <= 0 or self.r_purchase <= 0:
            raise UsageError("RewardConfig: click/purchase rewards must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise UsageError("RewardConfig: gamma must lie in [0, 1)")

    def reward_for(self, interaction: int) -> float:
        """Reward of a positive action by its interaction type (1=purchase)."""
        return self.r_purchase if interaction == 1 else self.r_click


@dataclass
class TDBatchItem:
    """One replay tuple: window before the action, window after, action,
    sampled negatives, reward of the observed interaction, terminal flag."""

    state_seq: SessionSequence
    next_state_seq: SessionSequence
    positive_action: int
    negatives: tuple[int, ...]
    reward: float
    is_terminal: bool

    def validate(self, n_items: int, expected_negatives: int | None = None) -> None:
        if self.positive_action in self.negatives:
            raise UsageError("TDBatchItem: positive action among negatives")
        if len(set(self.negatives)) != len(self.negatives):
            raise UsageError("TDBatchItem: duplicate negatives")
        if any(not 0 <= a < n_items for a in self.negatives):
            raise UsageError("TDBatchItem: negative out of item range")
        if expected_negatives is not None and len(self.negatives) != expected_negatives:
            raise UsageError("TDBatchItem: wrong number of negatives")


QFn = Callable[[SessionSequence], np.ndarray]


def cross_entropy(y: np.ndarray, target: int) -> float:
    """-log softmax(y)[target], computed through the stabilized softmax."""
    if not 0 <= target < y.shape[-1]:
        raise UsageError("cross_entropy: target out of range")
    shifted = y - np.max(y)
    return float(np.log(np.sum(np.exp(shifted))) - shifted[target])


def cross_entropy_grad(y: np.ndarray, target: int) -> np.ndarray:
    """Gradient of cross_entropy w.r.t. the logits: p - Y."""
    g = softmax(y)
    g = np.array(g, copy=True)
    g[target] -= 1.0
    return g


def td_loss(
    item: TDBatchItem,
    q_online: QFn,
    q_boot: QFn,
    rc: RewardConfig,
) -> tuple[float, float]:
    """Positive and negative one-step TD terms under the double-Q pairing.

    The online net chooses the argmax actions; the other net, evaluated on
    its own encodings, supplies the bootstrap values, which carry no
    gradient. The negative branch bootstraps from the *current* state
    because an unobserved action does not advance the user state. The
    positive bootstrap is zero at terminal steps; the negative one is not.
    """
    q_cur = q_online(item.state_seq)
    a_star_neg = int(np.argmax(q_cur))
    boot_neg = rc.gamma * float(q_boot(item.state_seq)[a_star_neg])

    if item.is_terminal:
        boot_pos = 0.0
    else:
        q_next = q_online(item.next_state_seq)
        a_star_pos = int(np.argmax(q_next))
        boot_pos = rc.gamma * float(q_boot(item.next_state_seq)[a_star_pos])

    resid_pos = item.reward + boot_pos - float(q_cur[item.positive_action])
    l_p = resid_pos * resid_pos

    l_n = 0.0
    for a_neg in item.negatives:
        resid = rc.r_negative + boot_neg - float(q_cur[a_neg])
        l_n += resid * resid
    return l_p, l_n


def snqn_loss(l_s: float, l_p: float, l_n: float) -> float:
    return l_s + l_p + l_n


def advantage(q: np.ndarray, a_plus: int, negatives: Sequence[int]) -> float:
    """Positive action's Q minus the average Q over {a_plus} union negatives.

    Callers must pass Q-values that are already detached from the gradient
    path; the result is treated as a constant weight.
    """
    if a_plus in negatives:
        raise UsageError("advantage: positive action among negatives")
    if len(negatives) == 0:
        return 0.0
    total = float(q[a_plus]) + math.fsum(float(q[a]) for a in negatives)
    q_bar = total / (len(negatives) + 1)
    return float(q[a_plus]) - q_bar


def sa2c_loss(l_s: float, adv: float, l_p: float, l_n: float) -> float:
    """Advantage-weighted actor term plus the unchanged TD terms."""
    return l_s * adv + l_p + l_n


def propensity(pi_prob: float, beta_prob: float, cap: float = 10.0) -> float:
    """Importance weight pi/beta, clipped to [0, cap]; beta must be nonzero."""
    if beta_prob <= 0.0:
        raise UsageError("propensity: behavior probability is zero for this action")
    return min(max(pi_prob / beta_prob, 0.0), cap)


def off_policy_actor_loss(l_s: float, adv: float, rho: float) -> float:
    """Actor loss with the propensity correction; rho is a constant weight."""
    return l_s * adv * rho
