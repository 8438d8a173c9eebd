"""Item-sequence encoder: embedding lookup + single GRU layer.

The latent user state is the final GRU hidden state over the valid prefix
of a fixed-length window. Positions at or past valid_len hold the padding
item and never update the hidden state, so appending padding is a no-op.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ParameterStore, UsageError, sigmoid

WINDOW = 10
HIDDEN = 64
EMBED = 64

_GATES = ("z", "r", "h")


@dataclass
class SessionSequence:
    """Fixed-length window of item ids plus per-position interaction types.

    item_ids has length WINDOW; indices >= valid_len hold the padding id
    (n_items). interaction_types uses 0 for click and 1 for purchase.
    """

    item_ids: tuple[int, ...]
    valid_len: int
    interaction_types: tuple[int, ...]

    def validate(self, n_items: int) -> None:
        # -1 is the unresolved-padding placeholder used before the item count
        # is known; both it and the reserved id n_items count as padding
        if len(self.item_ids) != WINDOW or len(self.interaction_types) != WINDOW:
            raise UsageError("SessionSequence: window must have length 10")
        if not 1 <= self.valid_len <= WINDOW:
            raise UsageError("SessionSequence: valid_len out of [1, 10]")
        for pos, item in enumerate(self.item_ids):
            if pos < self.valid_len:
                if not 0 <= item < n_items:
                    raise IndexError(
                        f"SessionSequence: item id {item} out of range at {pos}"
                    )
            elif item not in (n_items, -1):
                raise UsageError(
                    f"SessionSequence: position {pos} past valid_len must be padding"
                )


def make_sequence(items, types=None) -> SessionSequence:
    """Build a right-padded SessionSequence from up to WINDOW raw items.

    The padding id is implied later by the encoder params; -1 marks padding
    here and is replaced when the sequence is turned into index arrays, so
    callers normally go through `sequence_array` instead.
    """
    items = list(items)
    if not 1 <= len(items) <= WINDOW:
        raise UsageError("make_sequence: need between 1 and 10 items")
    if types is None:
        types = [0] * len(items)
    pad_n = WINDOW - len(items)
    return SessionSequence(
        item_ids=tuple(items) + (-1,) * pad_n,
        valid_len=len(items),
        interaction_types=tuple(types) + (0,) * pad_n,
    )


def sequence_array(seq: SessionSequence, n_items: int) -> tuple[np.ndarray, np.ndarray]:
    """One-row (ids, length) arrays with -1 placeholders mapped to the pad id."""
    ids = np.array(
        [i if i >= 0 else n_items for i in seq.item_ids], dtype=np.int64
    )[None, :]
    return ids, np.array([seq.valid_len], dtype=np.int64)


@dataclass
class EncoderParams:
    """Views into a ParameterStore for the embedding table and GRU weights."""

    embedding: np.ndarray  # [n_items + 1, EMBED]; last row is the padding item
    W: dict[str, np.ndarray]  # input weights per gate, [EMBED, HIDDEN]
    U: dict[str, np.ndarray]  # recurrent weights per gate, [HIDDEN, HIDDEN]
    b: dict[str, np.ndarray]  # biases per gate, [HIDDEN]

    @property
    def n_items(self) -> int:
        return self.embedding.shape[0] - 1

    @classmethod
    def init(
        cls,
        store: ParameterStore,
        n_items: int,
        rng: np.random.Generator,
        scale: float = 0.05,
    ) -> "EncoderParams":
        store.add(
            "embedding", rng.uniform(-scale, scale, size=(n_items + 1, EMBED))
        )
        for g in _GATES:
            store.add(f"gru_W{g}", rng.uniform(-scale, scale, size=(EMBED, HIDDEN)))
            store.add(f"gru_U{g}", rng.uniform(-scale, scale, size=(HIDDEN, HIDDEN)))
            store.add(f"gru_b{g}", np.zeros(HIDDEN))
        return cls.from_store(store)

    @classmethod
    def from_store(cls, store: ParameterStore) -> "EncoderParams":
        return cls(
            embedding=store.value("embedding"),
            W={g: store.value(f"gru_W{g}") for g in _GATES},
            U={g: store.value(f"gru_U{g}") for g in _GATES},
            b={g: store.value(f"gru_b{g}") for g in _GATES},
        )


@dataclass
class EncodeCache:
    """Per-step activations saved by encode_batch for backpropagation."""

    ids: np.ndarray  # [B, T] as consumed (pad id in skipped slots)
    lens: np.ndarray  # [B]
    steps: list  # per step: (ids_t, e, h_prev, z, r, hbar, mask)


def encode_batch(
    ids: np.ndarray,
    lens: np.ndarray,
    enc: EncoderParams,
    want_cache: bool = False,
):
    """GRU forward over a batch of right-padded windows.

    ids: [B, T] item indices (padding id where position >= length);
    lens: [B] valid lengths. Returns (h [B, HIDDEN], cache or None).
    """
    n_items = enc.n_items
    if ids.max(initial=0) > n_items or ids.min(initial=0) < 0:
        raise IndexError("encode: item id out of range")
    batch = ids.shape[0]
    dtype = enc.embedding.dtype
    h = np.zeros((batch, HIDDEN), dtype=dtype)
    steps = []
    horizon = int(lens.max(initial=0))
    for t in range(horizon):
        mask = (t < lens)[:, None]
        ids_t = ids[:, t]
        e = enc.embedding[ids_t]
        z = sigmoid(e @ enc.W["z"] + h @ enc.U["z"] + enc.b["z"])
        r = sigmoid(e @ enc.W["r"] + h @ enc.U["r"] + enc.b["r"])
        hbar = np.tanh(e @ enc.W["h"] + (r * h) @ enc.U["h"] + enc.b["h"])
        h_new = (1.0 - z) * h + z * hbar
        if want_cache:
            steps.append((ids_t, e, h, z, r, hbar, mask))
        h = np.where(mask, h_new, h)
    cache = EncodeCache(ids=ids, lens=lens, steps=steps) if want_cache else None
    return h, cache


def encode(seq: SessionSequence, enc: EncoderParams) -> np.ndarray:
    """Encode one SessionSequence to its length-HIDDEN state vector."""
    seq.validate(enc.n_items)
    ids, lens = sequence_array(seq, enc.n_items)
    h, _ = encode_batch(ids, lens, enc)
    return h[0]


def encode_backward(
    cache: EncodeCache | None,
    enc: EncoderParams,
    store: ParameterStore,
    dh: np.ndarray,
) -> None:
    """Backprop through time, accumulating gradients into `store`.

    dh is the upstream gradient w.r.t. the final hidden state, [B, HIDDEN].
    """
    if cache is None or not isinstance(cache, EncodeCache):
        raise UsageError("encode_backward: forward cache required")
    if dh.shape != (cache.ids.shape[0], HIDDEN):
        raise UsageError("encode_backward: upstream gradient has wrong shape")

    g_emb = store.grad("embedding")
    gW = {g: store.grad(f"gru_W{g}") for g in _GATES}
    gU = {g: store.grad(f"gru_U{g}") for g in _GATES}
    gb = {g: store.grad(f"gru_b{g}") for g in _GATES}

    dh = dh.copy()
    for ids_t, e, h_prev, z, r, hbar, mask in reversed(cache.steps):
        d_act = np.where(mask, dh, 0.0)
        d_pass = np.where(mask, 0.0, dh)

        dz = d_act * (hbar - h_prev)
        dhbar = d_act * z
        dh_prev = d_act * (1.0 - z)

        # candidate: hbar = tanh(e Wh + (r*h_prev) Uh + bh)
        da_h = dhbar * (1.0 - hbar * hbar)
        gW["h"] += e.T @ da_h
        gU["h"] += (r * h_prev).T @ da_h
        gb["h"] += da_h.sum(axis=0)
        de = da_h @ enc.W["h"].T
        d_rh = da_h @ enc.U["h"].T
        dr = d_rh * h_prev
        dh_prev += d_rh * r

        da_z = dz * z * (1.0 - z)
        gW["z"] += e.T @ da_z
        gU["z"] += h_prev.T @ da_z
        gb["z"] += da_z.sum(axis=0)
        de += da_z @ enc.W["z"].T
        dh_prev += da_z @ enc.U["z"].T

        da_r = dr * r * (1.0 - r)
        gW["r"] += e.T @ da_r
        gU["r"] += h_prev.T @ da_r
        gb["r"] += da_r.sum(axis=0)
        de += da_r @ enc.W["r"].T
        dh_prev += da_r @ enc.U["r"].T

        active = mask[:, 0]
        np.add.at(g_emb, ids_t[active], de[active])
        dh = dh_prev + d_pass
