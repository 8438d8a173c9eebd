"""Ranking metrics per interaction type and the off-policy corrected NDCG.

Every test event is scored by teacher forcing: the state is encoded from
the ground-truth history window, the chosen head ranks all items, and the
single relevant item contributes a hit flag and 1/log2(1+rank). NG_off
reweights the per-event NDCG by the inverse of an item-frequency behavior
policy estimated on the training split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import CLICK, PURCHASE, ReplayDataset, window_ids
from .encoder import encode_batch
from .heads import q_values, supervised_logits
from .numerics import UsageError

DEFAULT_KS = (5, 10, 20)
_TYPE_NAMES = {CLICK: "click", PURCHASE: "purchase"}

HEADS = ("supervised", "q")


@dataclass
class ItemFrequencyPolicy:
    """State-independent behavior policy: normalized item frequencies."""

    beta: np.ndarray  # [n_items], sums to 1; 0 for items unseen in training

    @classmethod
    def from_dataset(cls, ds: ReplayDataset, split: str = "train") -> "ItemFrequencyPolicy":
        counts = np.zeros(ds.n_items, dtype=np.float64)
        for sess in ds.splits[split]:
            np.add.at(counts, sess.items, 1.0)
        total = counts.sum()
        if total <= 0:
            raise UsageError("ItemFrequencyPolicy: empty training split")
        return cls(beta=counts / total)

    @classmethod
    def uniform(cls, n_items: int) -> "ItemFrequencyPolicy":
        return cls(beta=np.full(n_items, 1.0 / n_items))


@dataclass
class MetricsReport:
    """HR@k / NDCG@k / NG_off@k per interaction type, plus event counts."""

    ks: tuple[int, ...]
    values: dict  # values[type_name][metric][k] -> float
    counts: dict  # event counts and NG_off exclusions per type

    def to_json_dict(self) -> dict:
        return {
            "ks": list(self.ks),
            "metrics": {
                t: {m: {str(k): v for k, v in per_k.items()} for m, per_k in ms.items()}
                for t, ms in self.values.items()
            },
            "counts": self.counts,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "MetricsReport":
        ks = tuple(doc["ks"])
        values = {
            t: {m: {int(k): v for k, v in per_k.items()} for m, per_k in ms.items()}
            for t, ms in doc["metrics"].items()
        }
        return cls(ks=ks, values=values, counts=doc["counts"])

    def get(self, type_name: str, metric: str, k: int) -> float:
        return self.values[type_name][metric][k]

    def format_table(self) -> str:
        header = ["interaction"]
        for k in self.ks:
            header += [f"HR@{k}", f"NG@{k}", f"NGoff@{k}"]
        rows = [header]
        for t in ("purchase", "click"):
            row = [t]
            for k in self.ks:
                for metric in ("hr", "ndcg", "ng_off"):
                    row.append(f"{self.values[t][metric][k]:.4f}")
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows]
        lines.append(
            "events: purchase={purchase} click={click} "
            "ng_off_excluded={ng_off_excluded}".format(**self.counts)
        )
        return "\n".join(lines)

    def to_tsv(self) -> str:
        lines = ["interaction\tmetric\tk\tvalue"]
        for t in sorted(self.values):
            for metric in ("hr", "ndcg", "ng_off"):
                for k in self.ks:
                    lines.append(f"{t}\t{metric}\t{k}\t{self.values[t][metric][k]:.6f}")
        return "\n".join(lines) + "\n"


def mean_of_reports(reports: list[MetricsReport]) -> MetricsReport:
    """Arithmetic mean of several reports (the repeated-seed protocol)."""
    if not reports:
        raise UsageError("mean_of_reports: no reports")
    ks = reports[0].ks
    values = {}
    for t in reports[0].values:
        values[t] = {}
        for metric in reports[0].values[t]:
            values[t][metric] = {
                k: math.fsum(r.values[t][metric][k] for r in reports) / len(reports)
                for k in ks
            }
    counts = dict(reports[0].counts)
    counts["averaged_over"] = len(reports)
    return MetricsReport(ks=ks, values=values, counts=counts)


def recommend(head: str, state: np.ndarray, net, k: int) -> list[int]:
    """Top-k items for one state vector; ties break toward lower item index."""
    if head == "supervised":
        scores = supervised_logits(state, net.heads)
    elif head == "q":
        scores = q_values(state, net.heads)
    else:
        raise UsageError(f"recommend: unknown head {head!r}")
    if k > scores.shape[-1]:
        raise UsageError("recommend: k exceeds the number of items")
    order = np.lexsort((np.arange(scores.shape[-1]), -scores))
    return [int(i) for i in order[:k]]


def hit_and_rank(recs: list[int], truth: int) -> tuple[int, float]:
    """(hit flag, DCG contribution) of a single relevant item in a top-k list."""
    if truth in recs:
        rank = recs.index(truth) + 1
        return 1, 1.0 / math.log2(1.0 + rank)
    return 0, 0.0


def _ranks_of_truth(scores: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """1-based rank of each row's truth item under the tie-break rule."""
    truth_scores = scores[np.arange(len(truth)), truth]
    higher = (scores > truth_scores[:, None]).sum(axis=1)
    n = scores.shape[1]
    idx = np.arange(n)[None, :]
    tied_before = ((scores == truth_scores[:, None]) & (idx < truth[:, None])).sum(axis=1)
    return higher + tied_before + 1


@dataclass
class _EventAccumulator:
    ks: tuple[int, ...]
    hits: dict = field(default_factory=dict)  # (type, k) -> list of 0/1
    dcgs: dict = field(default_factory=dict)  # (type, k) -> list of dcg
    weighted: dict = field(default_factory=dict)  # (type, k) -> list of dcg/beta
    inv_beta: dict = field(default_factory=dict)  # type -> list of 1/beta
    n_events: dict = field(default_factory=dict)
    n_excluded: dict = field(default_factory=dict)

    def add(self, etype: int, rank: int, beta_prob: float | None) -> None:
        self.n_events[etype] = self.n_events.get(etype, 0) + 1
        for k in self.ks:
            hit = 1 if rank <= k else 0
            dcg = 1.0 / math.log2(1.0 + rank) if hit else 0.0
            self.hits.setdefault((etype, k), []).append(hit)
            self.dcgs.setdefault((etype, k), []).append(dcg)
            if beta_prob is not None and beta_prob > 0.0:
                self.weighted.setdefault((etype, k), []).append(dcg / beta_prob)
        if beta_prob is not None and beta_prob > 0.0:
            self.inv_beta.setdefault(etype, []).append(1.0 / beta_prob)
        else:
            self.n_excluded[etype] = self.n_excluded.get(etype, 0) + 1


def evaluate(
    net,
    ds: ReplayDataset,
    split: str,
    head: str = "supervised",
    ks: tuple[int, ...] = DEFAULT_KS,
    policy: ItemFrequencyPolicy | None = None,
    batch_size: int = 1024,
) -> MetricsReport:
    """Score every next-item event of a split and accumulate the metrics.

    Pure function of (net, split, policy): repeated calls are identical.
    Test items unseen in training (behavior probability zero) are excluded
    from NG_off but still count toward HR/NDCG; the exclusion is reported.
    Accumulation uses compensated summation so any evaluation order agrees
    to within 1e-9.
    """
    sessions = ds.splits[split]
    if not sessions:
        raise UsageError(f"evaluate: split {split!r} is empty")
    if head not in HEADS:
        raise UsageError(f"evaluate: unknown head {head!r}")
    if policy is None:
        policy = ItemFrequencyPolicy.from_dataset(ds, "train")

    pad = ds.n_items
    acc = _EventAccumulator(ks=tuple(ks))

    windows, lens, truths, types = [], [], [], []

    def flush():
        if not windows:
            return
        ids = np.stack(windows)
        ln = np.array(lens, dtype=np.int64)
        h, _ = encode_batch(ids, ln, net.encoder)
        scores = (
            supervised_logits(h, net.heads)
            if head == "supervised"
            else q_values(h, net.heads)
        )
        truth_arr = np.array(truths, dtype=np.int64)
        ranks = _ranks_of_truth(scores, truth_arr)
        for rank, truth, etype in zip(ranks, truth_arr, types):
            acc.add(int(etype), int(rank), float(policy.beta[truth]))
        windows.clear()
        lens.clear()
        truths.clear()
        types.clear()

    for sess in sessions:
        for t in range(1, len(sess)):
            ids, ln = window_ids(sess.items, t, pad)
            windows.append(ids)
            lens.append(ln)
            truths.append(int(sess.items[t]))
            types.append(int(sess.behaviors[t]))
            if len(windows) >= batch_size:
                flush()
    flush()

    values: dict = {}
    for etype, name in _TYPE_NAMES.items():
        n = acc.n_events.get(etype, 0)
        values[name] = {"hr": {}, "ndcg": {}, "ng_off": {}}
        for k in ks:
            hits = acc.hits.get((etype, k), [])
            dcgs = acc.dcgs.get((etype, k), [])
            values[name]["hr"][k] = math.fsum(hits) / n if n else 0.0
            values[name]["ndcg"][k] = math.fsum(dcgs) / n if n else 0.0
            wsum = math.fsum(acc.weighted.get((etype, k), []))
            inv_sum = math.fsum(acc.inv_beta.get(etype, []))
            values[name]["ng_off"][k] = wsum / inv_sum if inv_sum > 0 else 0.0

    counts = {
        "click": acc.n_events.get(CLICK, 0),
        "purchase": acc.n_events.get(PURCHASE, 0),
        "ng_off_excluded": {
            "click": acc.n_excluded.get(CLICK, 0),
            "purchase": acc.n_excluded.get(PURCHASE, 0),
        },
    }
    return MetricsReport(ks=tuple(ks), values=values, counts=counts)


# re-export for callers that build eval fixtures by hand
__all__ = [
    "ItemFrequencyPolicy",
    "MetricsReport",
    "mean_of_reports",
    "recommend",
    "hit_and_rank",
    "evaluate",
    "DEFAULT_KS",
    "HEADS",
]
