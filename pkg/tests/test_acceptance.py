"""Acceptance suite: one test per criterion, one pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s` to watch the lines appear;
the full suite takes a few minutes, dominated by the synthetic training
runs. Every tolerance is pinned here, not configured elsewhere.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest

from snqn.data import PreprocessConfig, build_train_items, iter_batches, preprocess, save_dataset
from snqn.evaluation import ItemFrequencyPolicy, evaluate
from snqn.gradcheck import run_gradcheck
from snqn.losses import RewardConfig
from snqn.rng import substream
from snqn.synthetic import (
    benchmark_spec,
    collect_visited_pairs,
    compare_q,
    generate_log,
    oracle_spec,
    value_iteration,
)
from snqn.training import (
    DualNetworks,
    Network,
    Trainer,
    TrainingConfig,
    run_training,
)

pytestmark = pytest.mark.slow

SEEDS = (101, 102, 103)
ARM_STEPS = 500
QHEAD_STEPS = 600


def report(criterion, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {criterion:>2} {name}: {status}  {detail}")
    return ok


# ---------------------------------------------------------------------------
# shared fixtures
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def oracle_run():
    """Criterion-2 training: 5-item env, positive-only SNQN, vs Q*."""
    t0 = time.time()
    spec = oracle_spec(seed=7)
    log = generate_log(spec, 5000)
    ds = preprocess(log.events, PreprocessConfig(seed=7))
    rc = RewardConfig(r_click=0.2, r_purchase=1.0, gamma=0.5)
    oracle = value_iteration(spec, rc)
    pairs = collect_visited_pairs(ds, log.session_types, min_visits=50)
    cfg = TrainingConfig(
        mode="SNQN",
        seed=11,
        neg_samples=0,
        max_steps=4000,
        learning_rate_main=0.002,
        validate_every=0,
        log_every=0,
    )
    result = run_training(cfg, ds, rc=rc, validate=False)
    item_to_dense = {int(k): v for k, v in ds.item_vocab.items()}
    max_dev, breakdown = compare_q(result.nets.net1, oracle, pairs, item_to_dense)
    return {
        "max_dev": max_dev,
        "breakdown": breakdown,
        "pairs": pairs,
        "elapsed": time.time() - t0,
        "steps": cfg.max_steps,
        "reward_config": rc,
    }


@pytest.fixture(scope="module")
def benchmark_dataset():
    spec = benchmark_spec(seed=3)
    log = generate_log(spec, 6000)
    return preprocess(log.events, PreprocessConfig(seed=3))


@pytest.fixture(scope="module")
def directional_arms(benchmark_dataset):
    """Final networks of every arm x seed used by criteria 4 and 5."""
    ds = benchmark_dataset
    rc = RewardConfig()
    t0 = time.time()

    def train(mode, seed, neg, pretrain=0):
        cfg = TrainingConfig(
            mode=mode,
            seed=seed,
            neg_samples=neg,
            max_steps=ARM_STEPS,
            pretrain_steps=pretrain,
            validate_every=0,
            log_every=0,
        )
        return run_training(cfg, ds, rc=rc, validate=False).nets.net1

    arms = {}
    for seed in SEEDS:
        arms[("supervised_only", seed)] = train("supervised_only", seed, 10)
        arms[("SNQN0", seed)] = train("SNQN", seed, 0)
        arms[("SNQN", seed)] = train("SNQN", seed, 10)
        arms[("SA2C", seed)] = train("SA2C", seed, 10, pretrain=ARM_STEPS // 2)
    arms["elapsed"] = time.time() - t0
    return arms


@pytest.fixture(scope="module")
def directional_reports(benchmark_dataset, directional_arms):
    reports = {}
    for key, net in directional_arms.items():
        if key == "elapsed":
            continue
        reports[key] = evaluate(net, benchmark_dataset, "test", head="supervised")
    return reports


def wins(metric_fn, better, worse):
    return sum(1 for s in SEEDS if metric_fn(better, s) > metric_fn(worse, s))


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def test_criterion_1_gradient_correctness():
    t0 = time.time()
    results = run_gradcheck(seeds=(0, 1, 2), n_probes=200)
    elapsed = time.time() - t0
    worst = max(results, key=lambda r: r.max_rel_error)
    ok = all(r.max_rel_error < 1e-4 for r in results) and elapsed < 60.0
    assert report(
        1,
        "gradient correctness",
        ok,
        f"worst rel err {worst.max_rel_error:.2e} ({worst.mode}, seed {worst.seed}), "
        f"{len(results)} checks in {elapsed:.1f}s",
    )


def test_criterion_2_tabular_oracle_equivalence(oracle_run):
    ok = (
        oracle_run["max_dev"] < 0.05
        and oracle_run["steps"] <= 20_000
        and oracle_run["elapsed"] < 600.0
    )
    assert report(
        2,
        "tabular oracle equivalence",
        ok,
        f"max |Q_learned - Q*| = {oracle_run['max_dev']:.4f} over "
        f"{len(oracle_run['pairs'])} pairs (>=50 visits) in {oracle_run['elapsed']:.0f}s",
    )


def test_criterion_3_metric_exactness():
    from snqn.evaluation import hit_and_rank

    _, dcg3 = hit_and_rank([4, 1, 7, 2, 9], 7)
    exact_rank3 = dcg3 == 0.5

    hits = [1, 1, 0, 1]
    hr = sum(hits) / len(hits)
    exact_hr = hr == 0.75

    # uniform behavior policy: NG_off must equal NDCG to 1e-9
    from snqn.data import CLICK, PURCHASE

    from tests.test_evaluation import bias_net, make_dataset

    scores = substream(1, "c3").normal(size=8)
    sessions = [
        ([0, 1, 2], [CLICK, CLICK, PURCHASE]),
        ([3, 4], [CLICK, CLICK]),
        ([5, 6, 7], [CLICK, PURCHASE, CLICK]),
    ]
    rep = evaluate(
        bias_net(scores),
        make_dataset(sessions),
        "test",
        policy=ItemFrequencyPolicy.uniform(8),
    )
    ng_off_exact = all(
        abs(rep.get(t, "ng_off", k) - rep.get(t, "ndcg", k)) < 1e-9
        for t in ("click", "purchase")
        for k in rep.ks
    )
    ok = exact_rank3 and exact_hr and ng_off_exact
    assert report(
        3,
        "metric exactness",
        ok,
        f"rank-3 NDCG={dcg3}, HR(3/4)={hr}, uniform-beta NG_off==NDCG: {ng_off_exact}",
    )


def test_criterion_4_negative_sampling_benefit(directional_arms, directional_reports):
    def hr5(arm, seed):
        return directional_reports[(arm, seed)].get("purchase", "hr", 5)

    def ng5(arm, seed):
        return directional_reports[(arm, seed)].get("purchase", "ndcg", 5)

    snqn_vs_sup = wins(hr5, "SNQN", "supervised_only")
    snqn_vs_sqn = wins(ng5, "SNQN", "SNQN0")
    elapsed = directional_arms["elapsed"]
    ok = snqn_vs_sup >= 2 and snqn_vs_sqn >= 2 and elapsed < 1800.0
    assert report(
        4,
        "negative-sampling benefit",
        ok,
        f"SNQN>supervised on HR@5(purchase): {snqn_vs_sup}/3; "
        f"SNQN(10)>SNQN(0) on NDCG@5(purchase): {snqn_vs_sqn}/3; "
        f"training {elapsed:.0f}s",
    )


def test_criterion_5_sa2c_ndcg_edge(directional_reports):
    def ng5(arm, seed):
        return directional_reports[(arm, seed)].get("purchase", "ndcg", 5)

    count = sum(1 for s in SEEDS if ng5("SA2C", s) >= ng5("SNQN", s))
    ok = count >= 2
    assert report(
        5,
        "SA2C NDCG edge",
        ok,
        f"SA2C >= SNQN on NDCG@5(purchase) in {count}/3 seeds",
    )


def test_criterion_6_q_head_usability(benchmark_dataset):
    ds = benchmark_dataset
    rc = RewardConfig()

    def best_q_net(mode, seed):
        cfg = TrainingConfig(
            mode=mode,
            seed=seed,
            neg_samples=10,
            max_steps=QHEAD_STEPS,
            validate_every=100,
            validation_head="q",
            log_every=0,
        )
        res = run_training(cfg, ds, rc=rc)
        return Network.from_store(res.best_store)

    count = 0
    details = []
    for seed in SEEDS:
        snqn = evaluate(best_q_net("SNQN", seed), ds, "test", head="q")
        dqn = evaluate(best_q_net("DQN", seed), ds, "test", head="q")
        a, b = snqn.get("purchase", "hr", 5), dqn.get("purchase", "hr", 5)
        details.append(f"seed {seed}: {a:.4f} vs {b:.4f}")
        count += a > b
    ok = count >= 2
    assert report(
        6,
        "Q-head usability (SNQN vs DQN)",
        ok,
        f"SNQN q-head > DQN on HR@5(purchase) in {count}/3 seeds ({'; '.join(details)})",
    )


def test_criterion_7_bounded_q(oracle_run):
    bound = 1.0 / (1.0 - 0.5) + 0.1  # r_max/(1-gamma) + 0.1
    worst = max(row["q_learned"] for row in oracle_run["breakdown"])
    ok = worst <= bound
    assert report(
        7,
        "bounded Q after oracle training",
        ok,
        f"max visited Q = {worst:.4f} <= {bound}",
    )


def test_criterion_8_equivalence_lattice(benchmark_dataset):
    # SA2C with T = infinity must track SNQN bit for bit over 500 steps
    ds = benchmark_dataset
    items = build_train_items(ds, "train")

    def make_trainer(mode):
        cfg = TrainingConfig(
            mode=mode,
            seed=77,
            neg_samples=10,
            max_steps=500,
            pretrain_steps=10**9,
            validate_every=0,
            log_every=0,
        )
        return Trainer(cfg, ds.n_items, rc=RewardConfig())

    snqn, sa2c = make_trainer("SNQN"), make_trainer("SA2C")
    steps = 0
    identical = True
    epoch = 0
    while steps < 500 and identical:
        for batch in iter_batches(items, ds.n_items, 256, 10, epoch, 77):
            snqn.train_step(batch)
            sa2c.train_step(batch)
            steps += 1
            if steps % 100 == 0 or steps == 500:
                identical = (
                    snqn.nets.net1.store.equal_values(sa2c.nets.net1.store)
                    and snqn.nets.net2.store.equal_values(sa2c.nets.net2.store)
                )
            if steps >= 500 or not identical:
                break
        epoch += 1
    assert report(
        8,
        "equivalence lattice (SA2C T=inf == SNQN)",
        identical,
        f"parameter stores bitwise identical through {steps} steps",
    )


def test_criterion_9_full_scale_reproduction_not_required():
    report(
        9,
        "full-scale table reproduction",
        True,
        "not required by design; optional RC15 stretch check stays off by default",
    )
    pytest.skip("full-scale reproduction is explicitly out of scope; stretch check off by default")


def test_criterion_10_determinism(benchmark_dataset, tmp_path):
    # two end-to-end CLI train+evaluate runs: byte-identical metrics JSON
    # once the timestamp field is dropped
    ds_dir = tmp_path / "ds"
    save_dataset(benchmark_dataset, str(ds_dir))
    docs = []
    for tag in ("a", "b"):
        run_dir = tmp_path / f"run_{tag}"
        eval_dir = tmp_path / f"eval_{tag}"
        for cmd in (
            [
                "train", "--data", ds_dir, "--out", run_dir, "--mode", "SNQN",
                "--seed", "19", "--max-steps", "40", "--no-figures",
                "--set", "neg_samples=10", "--set", "validate_every=20",
            ],
            [
                "evaluate", "--data", ds_dir, "--checkpoint", run_dir / "best.ckpt",
                "--out", eval_dir, "--no-figures",
            ],
        ):
            proc = subprocess.run(
                [sys.executable, "-m", "snqn", *[str(c) for c in cmd]],
                capture_output=True,
                text=True,
            )
            assert proc.returncode == 0, proc.stderr
        doc = json.loads((eval_dir / "metrics.json").read_text())
        doc.pop("timestamp")
        docs.append(doc)
    ok = docs[0] == docs[1]
    assert report(10, "end-to-end determinism", ok, "metrics JSON identical across runs")
