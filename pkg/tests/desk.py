"""Desk-scale pipeline shared by the acceptance suite.

Trained artifacts are cached under ``$MCG_ACCEPTANCE_CACHE`` (default
``~/.cache/mcgattack-acceptance``), keyed by a hash of :data:`PIPELINE`.
Delete the directory to rebuild from scratch.  Evaluations are never cached.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path


from mcgattack.attackloss import generate_pgd_corpus, load_corpus, save_corpus
from mcgattack.flowgen import ConditionalGlow, load_generator, save_generator
from mcgattack.harness.experiment import Arm, evaluate, select_evaluation
from mcgattack.harness.metrics import compute_metrics
from mcgattack.metatest import MetaTestConfig
from mcgattack.metatrain import MetaTrainConfig, meta_train, pretrain_generator, task_stream
from mcgattack.models import (
    DefenseWrapper,
    apply_defense,
    load_classifier,
    local_oracle,
    make_shapes,
    save_classifier,
    train_classifier,
)

PIPELINE = {
    "dataset": {"num_classes": 5, "size": 32, "n_train": 2000, "n_test": 500, "seed": 0},
    "zoo": {"epochs": 15, "lr": 1e-3, "seed": 1},
    "pgd": {"epsilon": 0.1, "step_size": 0.02, "iters": 50, "n_images": 1000},
    "generator": {"n_blocks": 2, "n_steps": 4, "hidden": 32, "cond_channels": 8},
    "pretrain": {"lr": 1e-3, "epochs": 8, "batch_size": 16, "seed": 0},
    "meta_train": {"n_tasks_per_batch": 8, "k_inner_steps": 4, "alpha": 1e-2, "beta": 0.5, "batches": 30, "temperature": 3.0, "seed": 0},
}

EPSILON = 0.1
BUDGET = 1000
N_EVAL = 200
SEEDS = (0, 1, 2)

# attack-time settings; fine-tuning keeps the defaults (s=4, lambda=3e-4, m=4, H=64)
META_TEST = {"k": 4, "alpha": 1e-2, "inner_temperature": 3.0, "init_temperature": 3.0}


def cache_dir() -> Path:
    key = hashlib.sha256(json.dumps(PIPELINE, sort_keys=True).encode()).hexdigest()[:12]
    root = Path(os.environ.get("MCG_ACCEPTANCE_CACHE", Path.home() / ".cache" / "mcgattack-acceptance"))
    return root / key


@dataclass
class Desk:
    dataset: object
    surrogate: object
    target: object
    pretrained: ConditionalGlow
    meta: ConditionalGlow
    timings: dict


def build() -> Desk:
    """Train (or load) surrogate, target, PGD corpus, pre-trained and meta-trained generators."""
    p = PIPELINE
    root = cache_dir()
    root.mkdir(parents=True, exist_ok=True)
    timings = {}
    ds = make_shapes(**p["dataset"])

    def stage(name, make, save, load):
        path = root / name
        if (root / f"{name}.npz").exists():
            return load(path)
        t = time.time()
        obj = make()
        save(obj, path)
        timings[name] = time.time() - t
        return obj

    z = p["zoo"]
    surrogate = stage("arch_a", lambda: train_classifier(ds, "arch_a", z["epochs"], z["seed"], z["lr"]), save_classifier, load_classifier)
    target = stage("arch_b", lambda: train_classifier(ds, "arch_b", z["epochs"], z["seed"], z["lr"]), save_classifier, load_classifier)
    g = p["pgd"]
    n = g["n_images"]
    corpus = stage(
        "corpus",
        lambda: generate_pgd_corpus(surrogate, ds.train_x[:n], ds.train_y[:n], g["epsilon"], g["step_size"], g["iters"]),
        save_corpus,
        load_corpus,
    )

    def pretrain():
        flow = ConditionalGlow(ds.image_shape, epsilon=EPSILON, **p["generator"])
        pt = p["pretrain"]
        return pretrain_generator(corpus, ds.train_x, flow, pt["lr"], pt["epochs"], pt["batch_size"], pt["seed"])[0]

    pretrained = stage("pretrained", pretrain, save_generator, load_generator)
    mt = MetaTrainConfig(**p["meta_train"])
    meta = stage(
        "meta",
        lambda: meta_train(mt, pretrained, task_stream(ds.train_x, ds.train_y, mt.seed), surrogate),
        save_generator,
        load_generator,
    )
    return Desk(ds, surrogate, target, pretrained, meta, timings)


def run_arm(desk: Desk, attacker: str, seed: int, generator=None, meta_test=None, budget=BUDGET, defense=None, target=None):
    """Attack the ``N_EVAL`` images chosen for ``seed``; returns ``(report, rows, seconds)``."""
    target = target or desk.target
    oracle = local_oracle(target, budget)
    if defense is not None:
        oracle = apply_defense(oracle, DefenseWrapper(**defense, seed=seed))
    items = select_evaluation(desk.dataset, target, N_EVAL, seed, "untargeted")
    mt = MetaTestConfig(**{**META_TEST, **(meta_test or {})}) if generator is not None else None
    surrogate = copy.deepcopy(desk.surrogate) if generator is not None else None
    arm = Arm(oracle, attacker, {}, EPSILON, budget, generator, surrogate, mt, seed)
    t = time.time()
    results, rows = evaluate(arm, desk.dataset.test_x, items)
    return compute_metrics(results, rows), rows, time.time() - t
