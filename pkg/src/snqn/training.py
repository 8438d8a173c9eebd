"""Double-Q training of the shared encoder and its two heads.

Each step flips a fair coin to pick which of the two networks is updated;
the chosen network supplies the argmax actions and receives the gradients,
the other one (evaluated on its own encodings) supplies the bootstrap
values, which never carry gradient. SA2C runs the same procedure, then
after a pretraining phase reweights the supervised term by the sampled
advantage (optionally times a propensity weight) and lowers the learning
rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PURCHASE, ReplayDataset, build_train_items, iter_batches
from .encoder import EncoderParams, encode_batch, encode_backward
from .heads import HeadParams, q_values, softmax, supervised_logits
from .losses import RewardConfig
from .numerics import (
    AdamConfig,
    DTYPE_TRAIN,
    NonFiniteError,
    ParameterStore,
    UsageError,
    adam_step,
)
from .rng import substream

MODES = ("supervised_only", "SNQN", "SA2C", "SA2C_offpolicy", "DQN")


class ConfigError(Exception):
    """A configuration value is out of contract."""


@dataclass
class TrainingConfig:
    mode: str = "SNQN"
    seed: int = 0
    batch_size: int = 256
    learning_rate_main: float = 0.01
    learning_rate_post_pretrain: float = 0.001
    pretrain_steps: int = 5000
    neg_samples: int = 10
    max_steps: int = 10000
    max_epochs: int | None = None
    validate_every: int = 2000
    log_every: int = 100
    rho_cap: float = 10.0
    validation_head: str | None = None  # None: supervised, or q for DQN mode

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.learning_rate_main <= 0 or self.learning_rate_post_pretrain <= 0:
            raise ConfigError("learning rates must be positive")
        if self.pretrain_steps < 0 or self.neg_samples < 0:
            raise ConfigError("pretrain_steps and neg_samples must be >= 0")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")


@dataclass
class Network:
    """One encoder + head pair backed by a single parameter store."""

    store: ParameterStore
    encoder: EncoderParams
    heads: HeadParams

    @property
    def n_items(self) -> int:
        return self.heads.n_items

    @classmethod
    def init(
        cls,
        n_items: int,
        rng: np.random.Generator,
        dtype=DTYPE_TRAIN,
        scale: float = 0.05,
    ) -> "Network":
        store = ParameterStore(dtype=np.dtype(dtype))
        enc = EncoderParams.init(store, n_items, rng, scale=scale)
        heads = HeadParams.init(store, n_items, rng, scale=scale)
        return cls(store=store, encoder=enc, heads=heads)

    @classmethod
    def from_store(cls, store: ParameterStore) -> "Network":
        return cls(
            store=store,
            encoder=EncoderParams.from_store(store),
            heads=HeadParams.from_store(store),
        )

    def copy(self) -> "Network":
        return Network.from_store(self.store.copy())


@dataclass
class DualNetworks:
    net1: Network
    net2: Network

    @classmethod
    def init(cls, n_items: int, seed: int, dtype=DTYPE_TRAIN, scale: float = 0.05):
        return cls(
            net1=Network.init(n_items, substream(seed, "init", 1), dtype, scale),
            net2=Network.init(n_items, substream(seed, "init", 2), dtype, scale),
        )


def sample_negatives(
    positive: int, n: int, n_items: int, rng: np.random.Generator
) -> np.ndarray:
    """n distinct uniform items excluding the positive action and padding."""
    if n == 0:
        return np.empty(0, dtype=np.int64)
    if n > n_items - 1:
        raise ConfigError(f"cannot draw {n} distinct negatives from {n_items} items")
    chosen: list[int] = []
    seen = {positive}
    while len(chosen) < n:
        cand = int(rng.integers(0, n_items))
        if cand in seen:
            continue
        seen.add(cand)
        chosen.append(cand)
    return np.array(chosen, dtype=np.int64)


@dataclass
class FrozenTargets:
    """Stop-gradient quantities of one step.

    Everything the analytic gradient treats as constant lives here: the
    targets of both TD branches, the advantage weights, and the propensity
    weights. The gradient check re-evaluates the objective against these
    same constants.
    """

    target_pos: np.ndarray | None  # [B]
    target_neg: np.ndarray | None  # [B]
    advantages: np.ndarray | None  # [B]
    rhos: np.ndarray | None  # [B]


@dataclass
class StepLosses:
    l_s: float
    l_p: float
    l_n: float
    adv_mean: float
    total: float
    per_item: np.ndarray | None = None


def _actor_weights(mode: str, frozen: FrozenTargets, batch_size: int, dtype):
    """Per-item multiplier of the supervised term."""
    if mode in ("SNQN", "supervised_only"):
        return np.ones(batch_size, dtype=dtype)
    if mode == "DQN":
        return np.zeros(batch_size, dtype=dtype)
    w = frozen.advantages.astype(dtype, copy=True)
    if mode == "SA2C_offpolicy":
        w = w * frozen.rhos.astype(dtype)
    return w


def compute_frozen_targets(
    batch: dict,
    online: "Network",
    boot: "Network",
    rc: RewardConfig,
    mode: str,
    rho_cap: float,
    beta: np.ndarray | None,
) -> FrozenTargets:
    """Evaluate every stop-gradient quantity of one step at the current params."""
    dtype = online.store.dtype
    target_pos = target_neg = advantages = rhos = None
    if mode == "supervised_only":
        return FrozenTargets(None, None, None, None)

    rows = np.arange(len(batch["actions"]))
    rewards = np.where(
        batch["target_behavior"] == PURCHASE, rc.r_purchase, rc.r_click
    ).astype(dtype)

    h_cur, _ = encode_batch(batch["states"], batch["lens"], online.encoder)
    q_cur_online = q_values(h_cur, online.heads)
    h_cur_boot, _ = encode_batch(batch["states"], batch["lens"], boot.encoder)
    q_cur_boot = q_values(h_cur_boot, boot.heads)
    h_next_online, _ = encode_batch(
        batch["next_states"], batch["next_lens"], online.encoder
    )
    q_next_online = q_values(h_next_online, online.heads)
    h_next_boot, _ = encode_batch(
        batch["next_states"], batch["next_lens"], boot.encoder
    )
    q_next_boot = q_values(h_next_boot, boot.heads)

    a_star_pos = np.argmax(q_next_online, axis=1)
    a_star_neg = np.argmax(q_cur_online, axis=1)
    boot_pos = np.where(
        batch["is_terminal"], 0.0, rc.gamma * q_next_boot[rows, a_star_pos]
    )
    target_pos = (rewards + boot_pos).astype(dtype)
    target_neg = (rc.r_negative + rc.gamma * q_cur_boot[rows, a_star_neg]).astype(dtype)

    if mode in ("SA2C", "SA2C_offpolicy"):
        negs = batch["negatives"]
        if negs is None or negs.shape[1] == 0:
            advantages = np.zeros(len(rows), dtype=dtype)
        else:
            q_pos = q_cur_online[rows, batch["actions"]]
            q_neg_sum = q_cur_online[rows[:, None], negs].sum(axis=1)
            q_bar = (q_pos + q_neg_sum) / (negs.shape[1] + 1)
            advantages = (q_pos - q_bar).astype(dtype)
    if mode == "SA2C_offpolicy":
        if beta is None:
            raise UsageError("off-policy mode needs a behavior policy")
        probs = softmax(supervised_logits(h_cur, online.heads))
        pi = probs[rows, batch["actions"]]
        b = beta[batch["actions"]]
        if np.any(b <= 0):
            raise UsageError(
                "propensity: behavior probability is zero for a training action"
            )
        rhos = np.clip(pi / b, 0.0, rho_cap).astype(dtype)
    return FrozenTargets(
        target_pos=target_pos,
        target_neg=target_neg,
        advantages=advantages,
        rhos=rhos,
    )


def batch_objective(
    batch: dict,
    online: "Network",
    frozen: FrozenTargets,
    mode: str,
    with_grads: bool,
) -> StepLosses:
    """Mean loss of one batch against frozen targets; optionally backprop.

    This is the exact differentiable objective the analytic gradients
    implement: the TD targets, advantages, and propensities in `frozen`
    are constants.
    """
    dtype = online.store.dtype
    use_td = mode != "supervised_only"
    use_ce = mode != "DQN"
    b = len(batch["actions"])
    rows = np.arange(b)

    h, cache = encode_batch(
        batch["states"], batch["lens"], online.encoder, want_cache=with_grads
    )
    w = _actor_weights(mode, frozen, b, dtype)

    l_s_vec = np.zeros(b, dtype=dtype)
    d_logits = None
    if use_ce:
        logits = supervised_logits(h, online.heads)
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp_shifted = np.exp(shifted)
        log_z = np.log(exp_shifted.sum(axis=1))
        l_s_vec = (log_z - shifted[rows, batch["actions"]]).astype(dtype)
        if with_grads:
            probs = exp_shifted / exp_shifted.sum(axis=1, keepdims=True)
            d_logits = probs * w[:, None]
            d_logits[rows, batch["actions"]] -= w
            d_logits /= b

    l_p_vec = np.zeros(b, dtype=dtype)
    l_n_vec = np.zeros(b, dtype=dtype)
    d_q = None
    if use_td:
        q_cur = q_values(h, online.heads)
        resid_pos = frozen.target_pos - q_cur[rows, batch["actions"]]
        l_p_vec = (resid_pos * resid_pos).astype(dtype)
        if with_grads:
            d_q = np.zeros_like(q_cur)
            np.add.at(d_q, (rows, batch["actions"]), -2.0 * resid_pos / b)
        negs = batch["negatives"]
        if negs is not None and negs.shape[1] > 0:
            q_neg = q_cur[rows[:, None], negs]
            resid_neg = frozen.target_neg[:, None] - q_neg
            l_n_vec = (resid_neg * resid_neg).sum(axis=1).astype(dtype)
            if with_grads:
                np.add.at(d_q, (rows[:, None], negs), -2.0 * resid_neg / b)

    per_item = w * l_s_vec + l_p_vec + l_n_vec

    if with_grads:
        d_h = np.zeros_like(h)
        store = online.store
        if d_logits is not None:
            store.grad("sup_weight")[...] += h.T @ d_logits
            store.grad("sup_bias")[...] += d_logits.sum(axis=0)
            d_h += d_logits @ online.heads.sup_weight.T
        if d_q is not None:
            store.grad("q_weight")[...] += h.T @ d_q
            store.grad("q_bias")[...] += d_q.sum(axis=0)
            d_h += d_q @ online.heads.q_weight.T
        encode_backward(cache, online.encoder, store, d_h)

    adv_mean = float(frozen.advantages.mean()) if frozen.advantages is not None else 0.0
    return StepLosses(
        l_s=float(l_s_vec.mean()),
        l_p=float(l_p_vec.mean()),
        l_n=float(l_n_vec.mean()),
        adv_mean=adv_mean,
        total=float(per_item.mean()),
        per_item=per_item,
    )


class Trainer:
    """Owns the two networks, the RNG substreams, and the step schedule."""

    def __init__(
        self,
        cfg: TrainingConfig,
        n_items: int,
        rc: RewardConfig | None = None,
        nets: DualNetworks | None = None,
        beta: np.ndarray | None = None,
        coin_rng: np.random.Generator | None = None,
        coin_transform=None,
    ):
        self.cfg = cfg
        self.rc = rc or RewardConfig()
        self.n_items = n_items
        if cfg.neg_samples > n_items - 1:
            raise ConfigError(
                f"neg_samples={cfg.neg_samples} too large for {n_items} items"
            )
        self.nets = nets or DualNetworks.init(n_items, cfg.seed)
        self.beta = beta
        self.coin_rng = coin_rng if coin_rng is not None else substream(cfg.seed, "coin")
        self.coin_transform = coin_transform
        self.step_index = 0

    def _mode_at(self, step_index: int) -> tuple[str, float]:
        """Effective loss mode and learning rate for a step."""
        cfg = self.cfg
        if cfg.mode in ("SA2C", "SA2C_offpolicy"):
            if step_index >= cfg.pretrain_steps:
                return cfg.mode, cfg.learning_rate_post_pretrain
            return "SNQN", cfg.learning_rate_main
        return cfg.mode, cfg.learning_rate_main

    def train_step(self, batch: dict) -> StepLosses:
        """One coin-flipped double-Q update on one mini-batch."""
        if len(batch["actions"]) == 0:
            raise UsageError("train_step: empty batch")
        mode, lr = self._mode_at(self.step_index)
        z = float(self.coin_rng.uniform())
        if self.coin_transform is not None:
            z = self.coin_transform(z)
        if z <= 0.5:
            online, boot = self.nets.net1, self.nets.net2
        else:
            online, boot = self.nets.net2, self.nets.net1

        frozen = compute_frozen_targets(
            batch, online, boot, self.rc, mode, self.cfg.rho_cap, self.beta
        )
        losses = batch_objective(batch, online, frozen, mode, with_grads=True)
        if not np.isfinite(losses.total):
            worst = int(np.argmax(~np.isfinite(losses.per_item)))
            raise NonFiniteError(
                f"non-finite loss at step {self.step_index}, batch item {worst}"
            )
        adam_step(online.store, AdamConfig(learning_rate=lr))
        self.step_index += 1
        return losses


def train_step_snqn(batch: dict, trainer: Trainer) -> StepLosses:
    if trainer._mode_at(trainer.step_index)[0] != "SNQN":
        raise UsageError("train_step_snqn: trainer is not running SNQN updates")
    return trainer.train_step(batch)


def train_step_sa2c(batch: dict, trainer: Trainer) -> StepLosses:
    if trainer.cfg.mode not in ("SA2C", "SA2C_offpolicy"):
        raise UsageError("train_step_sa2c: trainer is not in an SA2C mode")
    return trainer.train_step(batch)


@dataclass
class TrainResult:
    nets: DualNetworks
    log: list[dict] = field(default_factory=list)
    best_step: int | None = None
    best_metric: float | None = None
    best_store: ParameterStore | None = None


def run_training(
    cfg: TrainingConfig,
    ds: ReplayDataset,
    rc: RewardConfig | None = None,
    nets: DualNetworks | None = None,
    log_sink=None,
    validate: bool = True,
) -> TrainResult:
    """Iterate shuffled mini-batches until max_steps / max_epochs.

    Emits periodic loss records and validation metrics; tracks the best
    validation checkpoint by purchase NDCG@10. net1 is the serving network.
    """
    from .evaluation import ItemFrequencyPolicy, evaluate  # import here: eval depends on data only

    if not ds.splits["train"]:
        raise ConfigError("run_training: empty training split")
    rc = rc or RewardConfig()
    items = build_train_items(ds, "train")
    beta = None
    if cfg.mode == "SA2C_offpolicy":
        beta = ItemFrequencyPolicy.from_dataset(ds, "train").beta
    trainer = Trainer(cfg, ds.n_items, rc=rc, nets=nets, beta=beta)
    result = TrainResult(nets=trainer.nets)
    last_validated = None

    def emit(record: dict) -> None:
        result.log.append(record)
        if log_sink is not None:
            log_sink(record)

    def run_validation(step: int) -> None:
        nonlocal last_validated
        if not validate or not ds.splits["val"] or step == last_validated:
            return
        last_validated = step
        head = cfg.validation_head or ("q" if cfg.mode == "DQN" else "supervised")
        report = evaluate(trainer.nets.net1, ds, "val", head=head)
        metric = report.get("purchase", "ndcg", 10)
        emit(
            {
                "step": step,
                "event": "validation",
                "val_purchase_ndcg10": metric,
                "val_purchase_hr10": report.get("purchase", "hr", 10),
                "val_click_ndcg10": report.get("click", "ndcg", 10),
            }
        )
        if result.best_metric is None or metric > result.best_metric:
            result.best_metric = metric
            result.best_step = step
            result.best_store = trainer.nets.net1.store.copy()

    epoch = 0
    done = cfg.max_steps == 0
    while not done:
        if cfg.max_epochs is not None and epoch >= cfg.max_epochs:
            break
        for batch in iter_batches(
            items, ds.n_items, cfg.batch_size, cfg.neg_samples, epoch, cfg.seed
        ):
            losses = trainer.train_step(batch)
            step = trainer.step_index
            if cfg.log_every and step % cfg.log_every == 0:
                emit(
                    {
                        "step": step,
                        "event": "train",
                        "L_s": losses.l_s,
                        "L_p": losses.l_p,
                        "L_n": losses.l_n,
                        "A_mean": losses.adv_mean,
                        "loss": losses.total,
                    }
                )
            if cfg.validate_every and step % cfg.validate_every == 0:
                run_validation(step)
            if step >= cfg.max_steps:
                done = True
                break
        epoch += 1
    if trainer.step_index > 0:
        run_validation(trainer.step_index)
    return result
