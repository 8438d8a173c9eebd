"""Session-log ingestion, preprocessing, splits, and replay batch streams.

Input layouts: a generic TSV (session_id, timestamp, item_id, behavior),
the RecSys-2015-challenge pair of click/buy CSVs, and the RetailRocket
events CSV (views map to clicks; add-to-cart and transaction rows map to
purchases). Preprocessing filters rare items, drops short sessions,
optionally subsamples sessions, and splits 8:1:1 by whole sessions.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .encoder import WINDOW
from .rng import substream

CLICK = 0
PURCHASE = 1

_BEHAVIOR_NAMES = {CLICK: "click", PURCHASE: "purchase"}
_BEHAVIOR_CODES = {"click": CLICK, "purchase": PURCHASE}

FORMATS = ("generic_tsv", "rc15_clicks+buys", "retailrocket_events")


class DataError(Exception):
    """Malformed input data or an empty result where data is required."""


@dataclass
class RawEvent:
    session_id: str
    timestamp: int
    item_id: str
    behavior: int  # CLICK or PURCHASE


@dataclass
class Session:
    session_id: str
    items: np.ndarray  # dense item indices, int64
    behaviors: np.ndarray  # CLICK/PURCHASE per position, int64

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class PreprocessConfig:
    min_session_len: int = 3
    min_item_freq: int | None = None  # None disables the item filter
    sample_n_sessions: int | None = None
    seed: int = 0
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)


@dataclass
class ReplayDataset:
    item_vocab: dict[str, int]
    splits: dict[str, list[Session]]  # keys: train, val, test
    stats: dict = field(default_factory=dict)

    @property
    def n_items(self) -> int:
        return len(self.item_vocab)

    def digest(self) -> str:
        h = hashlib.sha256()
        for key, idx in sorted(self.item_vocab.items()):
            h.update(f"{key}\t{idx}\n".encode())
        for split in ("train", "val", "test"):
            for sess in self.splits[split]:
                h.update(split.encode())
                h.update(sess.session_id.encode())
                h.update(sess.items.astype(np.int64).tobytes())
                h.update(sess.behaviors.astype(np.int64).tobytes())
        return h.hexdigest()


def _parse_ts(text: str, path: str, line_no: int) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        stamp = datetime.fromisoformat(text.replace("Z", "+00:00"))
        if stamp.tzinfo is None:
            stamp = stamp.replace(tzinfo=timezone.utc)
        return int(stamp.timestamp())
    except ValueError:
        raise DataError(f"{path}:{line_no}: bad timestamp {text!r}") from None


def _read_generic_tsv(path: str) -> list[RawEvent]:
    events = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is not None and header != ["session_id", "timestamp", "item_id", "behavior"]:
            raise DataError(f"{path}:1: bad header {header!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{line_no}: expected 4 columns, got {len(row)}")
            sid, ts, item, behavior = row
            if behavior not in _BEHAVIOR_CODES:
                raise DataError(f"{path}:{line_no}: unknown behavior {behavior!r}")
            events.append(
                RawEvent(sid, _parse_ts(ts, path, line_no), item, _BEHAVIOR_CODES[behavior])
            )
    return events


def _read_csv_rows(path: str, n_cols: int):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for line_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) < n_cols:
                raise DataError(f"{path}:{line_no}: expected {n_cols} columns")
            yield line_no, row


def _read_rc15(path: str) -> list[RawEvent]:
    """Click/buy CSV pair in one directory (clicks.csv / buys.csv or .dat)."""

    def find(stem: str) -> str:
        for name in (f"{stem}.csv", f"{stem}.dat", f"yoochoose-{stem}.dat"):
            cand = os.path.join(path, name)
            if os.path.exists(cand):
                return cand
        raise DataError(f"{path}: no {stem} file found")

    if not os.path.isdir(path):
        raise DataError(f"{path}: rc15 format expects a directory of two CSVs")
    events = []
    clicks = find("clicks")
    for line_no, row in _read_csv_rows(clicks, 3):
        sid, ts, item = row[0], row[1], row[2]
        events.append(RawEvent(sid, _parse_ts(ts, clicks, line_no), item, CLICK))
    buys = find("buys")
    for line_no, row in _read_csv_rows(buys, 3):
        sid, ts, item = row[0], row[1], row[2]
        events.append(RawEvent(sid, _parse_ts(ts, buys, line_no), item, PURCHASE))
    return events


_RETAILROCKET_EVENTS = {"view": CLICK, "addtocart": PURCHASE, "transaction": PURCHASE}


def _read_retailrocket(path: str) -> list[RawEvent]:
    events = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:4]] != [
            "timestamp",
            "visitorid",
            "event",
            "itemid",
        ]:
            raise DataError(f"{path}:1: bad retailrocket header {header!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 4:
                raise DataError(f"{path}:{line_no}: expected >= 4 columns")
            ts, visitor, event, item = row[0], row[1], row[2], row[3]
            if event not in _RETAILROCKET_EVENTS:
                raise DataError(f"{path}:{line_no}: unknown event {event!r}")
            events.append(
                RawEvent(visitor, _parse_ts(ts, path, line_no), item, _RETAILROCKET_EVENTS[event])
            )
    return events


def ingest(path: str, fmt: str) -> list[RawEvent]:
    """Read events in the named layout, grouped by session, time-ordered.

    Ties on timestamp keep file order (sorts are stable).
    """
    if not os.path.exists(path):
        raise DataError(f"input not found: {path}")
    if fmt == "generic_tsv":
        events = _read_generic_tsv(path)
    elif fmt == "rc15_clicks+buys":
        events = _read_rc15(path)
    elif fmt == "retailrocket_events":
        events = _read_retailrocket(path)
    else:
        raise DataError(f"unknown input format {fmt!r}")

    by_session: dict[str, list[RawEvent]] = {}
    for ev in events:
        by_session.setdefault(ev.session_id, []).append(ev)
    ordered = []
    for sid in sorted(by_session):
        ordered.extend(sorted(by_session[sid], key=lambda ev: ev.timestamp))
    return ordered


def preprocess(events: list[RawEvent], cfg: PreprocessConfig) -> ReplayDataset:
    """Filter, sample, split, and index a raw event list.

    Filters run in order: item-frequency filter, then session-length filter
    (re-checked after item removal), then session subsampling. Splitting is
    8:1:1 by whole sessions. Fully deterministic under cfg.seed.
    """
    if not events:
        raise DataError("preprocess: no input events")

    sessions: dict[str, list[RawEvent]] = {}
    for ev in events:
        sessions.setdefault(ev.session_id, []).append(ev)

    if cfg.min_item_freq is not None:
        counts: dict[str, int] = {}
        for ev in events:
            counts[ev.item_id] = counts.get(ev.item_id, 0) + 1
        keep = {item for item, c in counts.items() if c >= cfg.min_item_freq}
        sessions = {
            sid: [ev for ev in evs if ev.item_id in keep]
            for sid, evs in sessions.items()
        }

    sessions = {
        sid: evs for sid, evs in sessions.items() if len(evs) >= cfg.min_session_len
    }
    if not sessions:
        raise DataError("preprocess: all sessions were filtered out")

    session_ids = sorted(sessions)
    if cfg.sample_n_sessions is not None and cfg.sample_n_sessions < len(session_ids):
        rng = substream(cfg.seed, "preprocess", "sample")
        picked = rng.choice(len(session_ids), size=cfg.sample_n_sessions, replace=False)
        session_ids = [session_ids[i] for i in np.sort(picked)]

    vocab_keys = sorted({ev.item_id for sid in session_ids for ev in sessions[sid]})
    vocab = {key: idx for idx, key in enumerate(vocab_keys)}

    rng = substream(cfg.seed, "preprocess", "split")
    order = rng.permutation(len(session_ids))
    n = len(session_ids)
    n_train = int(cfg.split_ratios[0] * n)
    n_val = int(cfg.split_ratios[1] * n)
    split_of = {}
    for pos, idx in enumerate(order):
        if pos < n_train:
            split_of[session_ids[idx]] = "train"
        elif pos < n_train + n_val:
            split_of[session_ids[idx]] = "val"
        else:
            split_of[session_ids[idx]] = "test"

    splits: dict[str, list[Session]] = {"train": [], "val": [], "test": []}
    n_clicks = 0
    n_purchases = 0
    for sid in session_ids:
        evs = sessions[sid]
        items = np.array([vocab[ev.item_id] for ev in evs], dtype=np.int64)
        behaviors = np.array([ev.behavior for ev in evs], dtype=np.int64)
        n_clicks += int((behaviors == CLICK).sum())
        n_purchases += int((behaviors == PURCHASE).sum())
        splits[split_of[sid]].append(Session(sid, items, behaviors))

    stats = {
        "sequences": len(session_ids),
        "items": len(vocab),
        "clicks": n_clicks,
        "purchases": n_purchases,
        "split_sizes": {k: len(v) for k, v in splits.items()},
        "min_session_len": cfg.min_session_len,
        "min_item_freq": cfg.min_item_freq,
        "sample_n_sessions": cfg.sample_n_sessions,
        "seed": cfg.seed,
        "behavior_mapping_note": "retailrocket 'transaction' rows are treated as purchases",
    }
    return ReplayDataset(item_vocab=vocab, splits=splits, stats=stats)


def save_dataset(ds: ReplayDataset, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "vocab.tsv"), "w") as fh:
        fh.write("item_id\tindex\n")
        for key, idx in sorted(ds.item_vocab.items(), key=lambda kv: kv[1]):
            fh.write(f"{key}\t{idx}\n")
    for split, sess_list in ds.splits.items():
        with open(os.path.join(out_dir, f"{split}.tsv"), "w") as fh:
            fh.write("session_id\tposition\titem_index\tbehavior\n")
            for sess in sess_list:
                for pos, (item, beh) in enumerate(zip(sess.items, sess.behaviors)):
                    fh.write(
                        f"{sess.session_id}\t{pos}\t{int(item)}\t{_BEHAVIOR_NAMES[int(beh)]}\n"
                    )
    with open(os.path.join(out_dir, "stats.json"), "w") as fh:
        json.dump({"stats": ds.stats, "digest": ds.digest()}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(in_dir: str) -> ReplayDataset:
    vocab_path = os.path.join(in_dir, "vocab.tsv")
    if not os.path.exists(vocab_path):
        raise DataError(f"{in_dir}: not a dataset directory (vocab.tsv missing)")
    vocab = {}
    with open(vocab_path) as fh:
        next(fh)
        for line in fh:
            key, idx = line.rstrip("\n").split("\t")
            vocab[key] = int(idx)
    splits: dict[str, list[Session]] = {}
    for split in ("train", "val", "test"):
        rows: dict[str, list[tuple[int, int, int]]] = {}
        order: list[str] = []
        with open(os.path.join(in_dir, f"{split}.tsv")) as fh:
            next(fh)
            for line in fh:
                sid, pos, item, behavior = line.rstrip("\n").split("\t")
                if sid not in rows:
                    rows[sid] = []
                    order.append(sid)
                rows[sid].append((int(pos), int(item), _BEHAVIOR_CODES[behavior]))
        sess_list = []
        for sid in order:
            entries = sorted(rows[sid])
            sess_list.append(
                Session(
                    sid,
                    np.array([item for _, item, _ in entries], dtype=np.int64),
                    np.array([beh for _, _, beh in entries], dtype=np.int64),
                )
            )
        splits[split] = sess_list
    with open(os.path.join(in_dir, "stats.json")) as fh:
        stats = json.load(fh)["stats"]
    return ReplayDataset(item_vocab=vocab, splits=splits, stats=stats)


@dataclass
class TrainItems:
    """Replay tuples for one split, flattened into aligned arrays."""

    states: np.ndarray  # [N, WINDOW] right-padded with pad id
    lens: np.ndarray  # [N]
    next_states: np.ndarray  # [N, WINDOW]
    next_lens: np.ndarray  # [N]
    actions: np.ndarray  # [N]
    target_behavior: np.ndarray  # [N] CLICK/PURCHASE of the target interaction
    is_terminal: np.ndarray  # [N] bool

    def __len__(self) -> int:
        return len(self.actions)


def window_ids(items: np.ndarray, upto: int, pad: int) -> tuple[np.ndarray, int]:
    """Right-padded window of the last <= WINDOW items among items[:upto]."""
    start = max(0, upto - WINDOW)
    chunk = items[start:upto]
    out = np.full(WINDOW, pad, dtype=np.int64)
    out[: len(chunk)] = chunk
    return out, len(chunk)


def build_train_items(ds: ReplayDataset, split: str) -> TrainItems:
    """One replay tuple per in-session position t >= 1.

    A session [a, b, c] yields (state [a] -> action b) and
    (state [a, b] -> action c, terminal). The reward class is the behavior
    of the target interaction.
    """
    pad = ds.n_items
    states, lens, nstates, nlens, acts, behs, terms = [], [], [], [], [], [], []
    for sess in ds.splits[split]:
        length = len(sess)
        for t in range(1, length):
            ids, ln = window_ids(sess.items, t, pad)
            nids, nln = window_ids(sess.items, t + 1, pad)
            states.append(ids)
            lens.append(ln)
            nstates.append(nids)
            nlens.append(nln)
            acts.append(int(sess.items[t]))
            behs.append(int(sess.behaviors[t]))
            terms.append(t == length - 1)
    if not states:
        raise DataError(f"build_train_items: split {split!r} has no usable events")
    return TrainItems(
        states=np.stack(states),
        lens=np.array(lens, dtype=np.int64),
        next_states=np.stack(nstates),
        next_lens=np.array(nlens, dtype=np.int64),
        actions=np.array(acts, dtype=np.int64),
        target_behavior=np.array(behs, dtype=np.int64),
        is_terminal=np.array(terms, dtype=bool),
    )


def sample_negatives_array(
    positives: np.ndarray, n: int, n_items: int, rng: np.random.Generator
) -> np.ndarray:
    """Per-row distinct uniform negatives excluding the positive and padding."""
    from .training import sample_negatives  # shared scalar implementation

    out = np.empty((len(positives), n), dtype=np.int64)
    for i, pos in enumerate(positives):
        out[i] = sample_negatives(int(pos), n, n_items, rng)
    return out


def make_batches(ds: ReplayDataset, split: str, cfg, epoch: int = 0):
    """Stream of replay batches for one epoch of a split.

    cfg provides batch_size, neg_samples, and seed (a TrainingConfig or any
    object with those attributes). The training split is shuffled; val and
    test streams keep session order.
    """
    items = build_train_items(ds, split)
    return iter_batches(
        items,
        ds.n_items,
        cfg.batch_size,
        cfg.neg_samples,
        epoch,
        cfg.seed,
        shuffle=split == "train",
    )


def iter_batches(
    items: TrainItems,
    n_items: int,
    batch_size: int,
    neg_samples: int,
    epoch: int,
    seed: int,
    shuffle: bool = True,
):
    """Yield per-batch dict views for one epoch.

    Order and negatives are pure functions of (seed, epoch); negatives are
    resampled each epoch.
    """
    n = len(items)
    if shuffle:
        order = substream(seed, "shuffle", epoch).permutation(n)
    else:
        order = np.arange(n)
    negatives = None
    if neg_samples > 0:
        neg_rng = substream(seed, "negatives", epoch)
        negatives = sample_negatives_array(
            items.actions, neg_samples, n_items, neg_rng
        )
    for start in range(0, n, batch_size):
        take = order[start : start + batch_size]
        yield {
            "states": items.states[take],
            "lens": items.lens[take],
            "next_states": items.next_states[take],
            "next_lens": items.next_lens[take],
            "actions": items.actions[take],
            "target_behavior": items.target_behavior[take],
            "is_terminal": items.is_terminal[take],
            "negatives": negatives[take] if negatives is not None else None,
        }
