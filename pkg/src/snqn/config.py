"""Run configuration: a schema-validated flat key-value namespace.

Values come from an optional plain-text config file (`key = value` lines,
`#` comments) plus repeated command-line overrides; later sources win.
Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .losses import RewardConfig
from .training import MODES, ConfigError, TrainingConfig


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _parse_optional_int(text: str):
    return None if text.strip().lower() in ("none", "") else int(text)


@dataclass
class RunConfig:
    # training
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
    validation_head: str | None = None
    # rewards
    r_click: float = 0.2
    r_purchase: float = 1.0
    r_negative: float = 0.0
    gamma: float = 0.5
    # preprocessing
    min_session_len: int = 3
    min_item_freq: int | None = None
    sample_n_sessions: int | None = None
    # evaluation
    eval_ks: tuple[int, ...] = (5, 10, 20)
    head: str = "supervised"
    seeds: tuple[int, ...] = ()
    eval_split: str = "test"

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            mode=self.mode,
            seed=self.seed,
            batch_size=self.batch_size,
            learning_rate_main=self.learning_rate_main,
            learning_rate_post_pretrain=self.learning_rate_post_pretrain,
            pretrain_steps=self.pretrain_steps,
            neg_samples=self.neg_samples,
            max_steps=self.max_steps,
            max_epochs=self.max_epochs,
            validate_every=self.validate_every,
            log_every=self.log_every,
            rho_cap=self.rho_cap,
            validation_head=self.validation_head,
        )

    def reward_config(self) -> RewardConfig:
        return RewardConfig(
            r_click=self.r_click,
            r_purchase=self.r_purchase,
            r_negative=self.r_negative,
            gamma=self.gamma,
        )


# key -> (parser, help text); defaults come from the dataclass
SCHEMA = {
    "mode": (str, f"training mode, one of {', '.join(MODES)}"),
    "seed": (int, "root seed for every random substream"),
    "batch_size": (int, "mini-batch size"),
    "learning_rate_main": (float, "Adam learning rate (pretraining / SNQN)"),
    "learning_rate_post_pretrain": (float, "Adam learning rate after the pretrain phase"),
    "pretrain_steps": (int, "steps trained as SNQN before SA2C reweighting starts"),
    "neg_samples": (int, "negative actions sampled per positive action"),
    "max_steps": (int, "total training steps"),
    "max_epochs": (_parse_optional_int, "optional epoch cap (none disables)"),
    "validate_every": (int, "validation cadence in steps"),
    "log_every": (int, "training-loss log cadence in steps"),
    "rho_cap": (float, "clip bound for the propensity weight"),
    "validation_head": (
        lambda s: None if s.strip().lower() in ("none", "") else s.strip(),
        "head used for validation checkpoint selection (none = mode default)",
    ),
    "r_click": (float, "reward of a click interaction"),
    "r_purchase": (float, "reward of a purchase interaction"),
    "r_negative": (float, "reward assigned to sampled negative actions"),
    "gamma": (float, "discount factor"),
    "min_session_len": (int, "drop sessions shorter than this after filtering"),
    "min_item_freq": (_parse_optional_int, "drop items with fewer interactions (none disables)"),
    "sample_n_sessions": (_parse_optional_int, "subsample to this many sessions (none disables)"),
    "eval_ks": (_parse_int_list, "comma-separated ranking cutoffs"),
    "head": (str, "recommendation head: supervised or q"),
    "seeds": (_parse_int_list, "comma-separated seed list for repeated runs"),
    "eval_split": (str, "split evaluated by the evaluate command"),
}


def schema_help() -> str:
    lines = ["configuration keys (config file or --set key=value):"]
    defaults = RunConfig()
    for name in sorted(SCHEMA):
        _, text = SCHEMA[name]
        lines.append(f"  {name:<28} {text} (default: {getattr(defaults, name)!r})")
    return "\n".join(lines)


def parse_config_file(path: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            pairs[key] = value
    return pairs


def load_run_config(
    config_path: str | None = None, overrides: list[str] | None = None
) -> RunConfig:
    """Merge file values and `key=value` overrides over the defaults."""
    raw: dict[str, str] = {}
    if config_path:
        raw.update(parse_config_file(config_path))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()

    cfg = RunConfig()
    valid = {f.name for f in fields(RunConfig)}
    for key, text in raw.items():
        if key not in SCHEMA or key not in valid:
            raise ConfigError(f"unknown configuration key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            setattr(cfg, key, parser(text))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown mode {cfg.mode!r}")
    if cfg.head not in ("supervised", "q"):
        raise ConfigError(f"unknown head {cfg.head!r}")
    return cfg
