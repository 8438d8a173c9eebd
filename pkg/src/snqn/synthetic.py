"""Controllable session MDP with a tabular value-iteration oracle.

Sessions are generated from a small preference model: a user type is drawn
uniformly, items are drawn from a behavior policy (the type's affinity row
or uniform), and an interaction is a purchase exactly when the affinity of
the shown item clears a threshold. Unobserved actions never advance the
user state, so the negative TD branch that bootstraps from the current
state is well-posed against the oracle.

The oracle's discrete state is (user type, last-two-item history). Because
nothing in the generator depends on older history, value iteration over
that state space is exact rather than approximate. Episode termination is
part of the oracle: it is only a function of the truncated state when all
sessions share one fixed length L <= 3, which value_iteration enforces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import CLICK, PURCHASE, RawEvent, ReplayDataset
from .encoder import WINDOW, encode_batch
from .heads import q_values
from .losses import RewardConfig
from .numerics import UsageError
from .rng import substream
from .training import ConfigError, Network

HISTORY_TRUNC = 2
MAX_ORACLE_STATES = 10**6

BEHAVIORS = ("affinity_proportional", "uniform")


@dataclass
class SyntheticSpec:
    n_items: int
    n_user_types: int
    affinity: np.ndarray  # [n_user_types, n_items] rows are probability vectors
    purchase_threshold: float
    session_len_range: tuple[int, int]
    gamma: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        self.affinity = np.asarray(self.affinity, dtype=np.float64)
        if self.n_items > 32 or self.n_items < 2:
            raise ConfigError("SyntheticSpec: n_items must be in [2, 32]")
        if self.affinity.shape != (self.n_user_types, self.n_items):
            raise ConfigError("SyntheticSpec: affinity shape mismatch")
        if np.any(self.affinity < 0) or not np.allclose(
            self.affinity.sum(axis=1), 1.0, atol=1e-9
        ):
            raise ConfigError("SyntheticSpec: affinity rows must be probability vectors")
        lo, hi = self.session_len_range
        if not 2 <= lo <= hi <= WINDOW:
            raise ConfigError("SyntheticSpec: session lengths must lie in [2, 10]")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("SyntheticSpec: gamma must lie in [0, 1)")

    def interaction_for(self, user_type: int, item: int) -> int:
        return PURCHASE if self.affinity[user_type, item] >= self.purchase_threshold else CLICK

    def to_json_dict(self) -> dict:
        return {
            "n_items": self.n_items,
            "n_user_types": self.n_user_types,
            "affinity": self.affinity.tolist(),
            "purchase_threshold": self.purchase_threshold,
            "session_len_range": list(self.session_len_range),
            "gamma": self.gamma,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SyntheticSpec":
        return cls(
            n_items=doc["n_items"],
            n_user_types=doc["n_user_types"],
            affinity=np.array(doc["affinity"], dtype=np.float64),
            purchase_threshold=doc["purchase_threshold"],
            session_len_range=tuple(doc["session_len_range"]),
            gamma=doc.get("gamma", 0.5),
            seed=doc.get("seed", 0),
        )


def oracle_spec(seed: int = 0) -> SyntheticSpec:
    """5-item, 2-user-type spec for exact-oracle runs.

    Item supports of the two types are disjoint, so any observed item
    identifies the type and the encoder can in principle match the
    type-conditioned oracle exactly. Each type has one purchase item.
    Fixed session length 3 keeps termination a function of the truncated
    history length.
    """
    affinity = np.array(
        [
            [0.66, 0.34, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.36, 0.33, 0.31],
        ]
    )
    return SyntheticSpec(
        n_items=5,
        n_user_types=2,
        affinity=affinity,
        purchase_threshold=0.35,
        session_len_range=(3, 3),
        gamma=0.5,
        seed=seed,
    )


def benchmark_spec(seed: int = 0) -> SyntheticSpec:
    """32-item, 4-user-type spec for the directional experiments.

    Item supports overlap (every type touches every item), so inferring
    the user type needs evidence from the whole window. Each type's two
    "favorite" items are both its purchase items and its most
    discriminative ones, which is what gives reward-weighted training room
    to beat plain next-item imitation. Roughly one event in five is a
    purchase.
    """
    rng = substream(seed, "benchmark-spec")
    n_items, n_types = 32, 4
    affinity = np.zeros((n_types, n_items))
    for t in range(n_types):
        own = np.arange(t * 8, t * 8 + 8)
        affinity[t, :] = 0.35 / 24
        affinity[t, own] = 0.075
        affinity[t, own[:2]] = 0.1
        affinity[t] += rng.uniform(0.0, 0.002, size=n_items)
        affinity[t] /= affinity[t].sum()
    return SyntheticSpec(
        n_items=n_items,
        n_user_types=n_types,
        affinity=affinity,
        purchase_threshold=0.09,
        session_len_range=(3, 10),
        gamma=0.5,
        seed=seed,
    )


PRESETS = {"oracle5": oracle_spec, "benchmark32": benchmark_spec}


@dataclass
class SyntheticLog:
    events: list[RawEvent]
    session_types: dict[str, int]


def generate_log(
    spec: SyntheticSpec,
    n_sessions: int,
    behavior: str = "affinity_proportional",
    seed: int | None = None,
) -> SyntheticLog:
    """Sample sessions from the behavior policy; deterministic under seed."""
    if behavior not in BEHAVIORS:
        raise ConfigError(f"unknown behavior policy {behavior!r}")
    rng = substream(spec.seed if seed is None else seed, "generate-log", behavior)
    events: list[RawEvent] = []
    session_types: dict[str, int] = {}
    lo, hi = spec.session_len_range
    uniform_p = np.full(spec.n_items, 1.0 / spec.n_items)
    for s in range(n_sessions):
        sid = f"s{s:06d}"
        user_type = int(rng.integers(0, spec.n_user_types))
        session_types[sid] = user_type
        length = int(rng.integers(lo, hi + 1))
        probs = (
            spec.affinity[user_type] if behavior == "affinity_proportional" else uniform_p
        )
        items = rng.choice(spec.n_items, size=length, p=probs)
        for t, item in enumerate(items):
            events.append(
                RawEvent(
                    session_id=sid,
                    timestamp=t,
                    item_id=str(int(item)),
                    behavior=spec.interaction_for(user_type, int(item)),
                )
            )
    return SyntheticLog(events=events, session_types=session_types)


@dataclass
class QTable:
    """Tabular optimal action values keyed by (user type, truncated history)."""

    values: dict  # (user_type, hist tuple) -> np.ndarray [n_items]
    gamma: float
    r_max: float

    def q(self, user_type: int, hist: tuple, action: int) -> float:
        return float(self.values[(user_type, hist)][action])

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(v))) for v in self.values.values())


def _all_hists(n_items: int) -> list[tuple]:
    hists: list[tuple] = [()]
    hists += [(i,) for i in range(n_items)]
    hists += [(i, j) for i in range(n_items) for j in range(n_items)]
    return hists


def value_iteration(
    spec: SyntheticSpec, rewards: RewardConfig, horizon: int = 1000
) -> QTable:
    """Iterate Q(s,a) = r(s,a) + gamma * max_a' Q(s',a') to a fixed point.

    Sessions must have one fixed length L <= 3: the last session event is
    terminal (no bootstrap), and only then is "terminal" a function of the
    truncated-history length (events at history length L-1 are final).
    """
    lo, hi = spec.session_len_range
    if lo != hi or hi > HISTORY_TRUNC + 1:
        raise ConfigError(
            "value_iteration: oracle is exact only for one fixed session "
            f"length <= {HISTORY_TRUNC + 1}; got range {spec.session_len_range}"
        )
    length = lo
    n_states = spec.n_user_types * (1 + spec.n_items + spec.n_items**2)
    if n_states > MAX_ORACLE_STATES:
        raise ConfigError(f"value_iteration: {n_states} states exceed the guard")

    r = np.empty((spec.n_user_types, spec.n_items))
    for u in range(spec.n_user_types):
        for a in range(spec.n_items):
            r[u, a] = rewards.reward_for(spec.interaction_for(u, a))

    hists = _all_hists(spec.n_items)
    q = {(u, h): np.zeros(spec.n_items) for u in range(spec.n_user_types) for h in hists}
    sweeps = 0
    while sweeps < horizon:
        delta = 0.0
        new_q = {}
        for (u, hist), old in q.items():
            terminal = len(hist) >= length - 1
            if terminal:
                vals = r[u].copy()
            else:
                vals = np.empty(spec.n_items)
                for a in range(spec.n_items):
                    nxt = (hist + (a,))[-HISTORY_TRUNC:]
                    vals[a] = r[u, a] + spec.gamma * float(np.max(q[(u, nxt)]))
            new_q[(u, hist)] = vals
            delta = max(delta, float(np.max(np.abs(vals - old))))
        q = new_q
        sweeps += 1
        if delta < 1e-10:
            break
    return QTable(values=q, gamma=spec.gamma, r_max=float(r.max()))


@dataclass
class VisitedPair:
    user_type: int
    hist: tuple
    action: int
    visits: int


def collect_visited_pairs(
    ds: ReplayDataset,
    session_types: dict[str, int],
    split: str = "train",
    min_visits: int = 50,
) -> list[VisitedPair]:
    """Count (oracle state, positive action) occurrences in a split.

    Sessions generated by this module use the string form of the item index
    as the external id, so the dense index maps back to the generator's
    item directly via the vocab.
    """
    back = {idx: int(key) for key, idx in ds.item_vocab.items()}
    counts: dict[tuple, int] = {}
    for sess in ds.splits[split]:
        u = session_types[sess.session_id]
        raw = [back[int(i)] for i in sess.items]
        for t in range(1, len(raw)):
            hist = tuple(raw[max(0, t - HISTORY_TRUNC) : t])
            key = (u, hist, raw[t])
            counts[key] = counts.get(key, 0) + 1
    return [
        VisitedPair(user_type=u, hist=h, action=a, visits=c)
        for (u, h, a), c in sorted(counts.items())
        if c >= min_visits
    ]


def compare_q(
    net: Network,
    oracle: QTable,
    pairs: list[VisitedPair],
    item_to_dense: dict[int, int],
) -> tuple[float, list[dict]]:
    """Max |Q_learned - Q*| over the listed pairs, with a per-pair breakdown.

    The learned state is built by encoding the oracle state's history
    (mapped through the dataset vocabulary).
    """
    if not pairs:
        raise UsageError("compare_q: no pairs to compare")
    pad = net.n_items
    ids = np.full((len(pairs), WINDOW), pad, dtype=np.int64)
    lens = np.empty(len(pairs), dtype=np.int64)
    for row, pair in enumerate(pairs):
        dense = [item_to_dense[i] for i in pair.hist]
        ids[row, : len(dense)] = dense
        lens[row] = len(dense)
    h, _ = encode_batch(ids, lens, net.encoder)
    q_learned = q_values(h, net.heads)

    breakdown = []
    worst = 0.0
    for row, pair in enumerate(pairs):
        learned = float(q_learned[row, item_to_dense[pair.action]])
        target = oracle.q(pair.user_type, pair.hist, pair.action)
        dev = abs(learned - target)
        worst = max(worst, dev)
        breakdown.append(
            {
                "user_type": pair.user_type,
                "hist": list(pair.hist),
                "action": pair.action,
                "visits": pair.visits,
                "q_learned": learned,
                "q_star": target,
                "abs_dev": dev,
            }
        )
    return worst, breakdown


def expected_purchase_fraction(spec: SyntheticSpec, behavior: str) -> float:
    """Closed-form purchase probability of one event under the behavior policy."""
    if behavior == "uniform":
        item_p = np.full(spec.n_items, 1.0 / spec.n_items)
        per_type = [
            sum(
                item_p[a]
                for a in range(spec.n_items)
                if spec.interaction_for(u, a) == PURCHASE
            )
            for u in range(spec.n_user_types)
        ]
    else:
        per_type = [
            sum(
                spec.affinity[u, a]
                for a in range(spec.n_items)
                if spec.interaction_for(u, a) == PURCHASE
            )
            for u in range(spec.n_user_types)
        ]
    return float(math.fsum(per_type) / spec.n_user_types)
