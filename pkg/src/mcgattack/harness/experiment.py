"""Pipeline stages and the evaluation protocol."""

from __future__ import annotations

import copy
import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import torch

from ..attackers import make_attacker
from ..attackloss import generate_pgd_corpus, load_corpus, save_corpus
from ..core import AttackGoal
from ..errors import ConfigError
from ..flowgen.generator import load_generator, save_generator
from ..flowgen.glow import ConditionalGlow
from ..metatest import AttackHistory, EpisodeState, MetaTestConfig, attack_episode
from ..metatrain import meta_train, pretrain_generator, task_stream
from ..models.data import ImageDataset, load_dataset
from ..models.oracle import (
    DefenseWrapper,
    LocalBackend,
    RequestMapping,
    ScoreMapping,
    TargetOracle,
    apply_defense,
    remote_oracle,
)
from ..models.zoo import Classifier, load_classifier, save_classifier, train_classifier
from ..serialization import container_paths, content_hash
from .config import ExperimentConfig
from .metrics import MetricsReport, compute_metrics, emit_curve

logger = logging.getLogger(__name__)


# --------------------------------------------------------------- stage verbs


def stage_zoo_train(cfg: ExperimentConfig, out) -> Classifier:
    ds = load_dataset(cfg.dataset)
    z = cfg.zoo
    model = train_classifier(ds, z.arch, z.epochs, z.seed, z.lr, z.batch_size)
    save_classifier(model, out)
    logger.info("trained %s: test error %.3f", z.arch, model.test_error)
    return model


def stage_pgd_corpus(cfg: ExperimentConfig, out) -> dict:
    ds = load_dataset(cfg.dataset)
    surrogate = load_classifier(_need(cfg.surrogate, "surrogate"))
    n = cfg.pgd.n_images or len(ds.train_x)
    corpus = generate_pgd_corpus(
        surrogate, ds.train_x[:n], ds.train_y[:n], cfg.pgd.epsilon, cfg.pgd.step_size, cfg.pgd.iters
    )
    save_corpus(corpus, out, cfg.surrogate)
    return corpus


def build_generator(cfg: ExperimentConfig, image_shape, epsilon: float) -> ConditionalGlow:
    g = cfg.generator_arch
    return ConditionalGlow(
        image_shape, g.n_blocks, g.n_steps, g.hidden, g.cond_channels, epsilon=epsilon, dct_factor=g.dct_factor
    )


def stage_pretrain(cfg: ExperimentConfig, out) -> ConditionalGlow:
    ds = load_dataset(cfg.dataset)
    corpus = load_corpus(_need(cfg.corpus, "corpus"))
    flow = build_generator(cfg, ds.image_shape, corpus["meta"]["epsilon"])
    p = cfg.pretrain
    flow, curve = pretrain_generator(corpus, ds.train_x, flow, p.lr, p.epochs, p.batch_size, p.seed)
    save_generator(flow, out, {"stage": "pretrain", "corpus_hash": content_hash(cfg.corpus), "final_nll": curve[-1] if curve else None})
    return flow


def stage_meta_train(cfg: ExperimentConfig, out) -> ConditionalGlow:
    ds = load_dataset(cfg.dataset)
    surrogate = load_classifier(_need(cfg.surrogate, "surrogate"))
    flow = load_generator(_need(cfg.generator, "generator"))
    mt = cfg.meta_train
    log_path = Path(out).with_name(Path(out).name + ".log.jsonl")

    def checkpoint(phi, batch, rng_state):
        save_generator(phi, Path(out).with_name(Path(out).stem + f"_b{batch}"), {"stage": "meta_train", "batch": batch})

    flow = meta_train(mt, flow, task_stream(ds.train_x, ds.train_y, mt.seed), surrogate, log_path=log_path, on_checkpoint=checkpoint)
    save_generator(flow, out, {"stage": "meta_train", "batches": mt.batches, "surrogate_hash": content_hash(cfg.surrogate)})
    return flow


def _need(value, what):
    if not value:
        raise ConfigError(f"config is missing the {what} path")
    if not container_paths(value)[0].exists():
        raise ConfigError(f"{what} checkpoint {value} does not exist")
    return value


# ------------------------------------------------------------------ protocol


def select_evaluation(
    dataset: ImageDataset, target: Optional[Classifier], n_eval: int, seed: int, goal_mode: str
) -> list:
    """Pick ``n_eval`` test images (correctly classified by ``target`` when
    available) and fix their goals.  Targeted labels are uniform over the
    non-true classes."""
    gen = torch.Generator().manual_seed(seed)
    order = torch.randperm(len(dataset.test_x), generator=gen).tolist()
    if target is not None:
        with torch.no_grad():
            pred = target(dataset.test_x).argmax(1)
        order = [i for i in order if int(pred[i]) == int(dataset.test_y[i])]
    chosen = order[:n_eval]
    items = []
    k = dataset.num_classes
    for i in chosen:
        y = int(dataset.test_y[i])
        if goal_mode == "targeted":
            t = int(torch.randint(0, k - 1, (1,), generator=gen))
            t = t + 1 if t >= y else t
            goal = AttackGoal.targeted(y, t)
        else:
            goal = AttackGoal.untargeted(y)
        items.append((i, goal))
    return items


@dataclass
class Arm:
    """Everything needed to attack one evaluation set in one configuration."""

    oracle: TargetOracle
    attacker_id: str
    attacker_params: dict
    epsilon: float
    budget: int
    generator: Optional[ConditionalGlow] = None
    surrogate: Optional[Classifier] = None
    meta_test: Optional[MetaTestConfig] = None
    seed: int = 0


def episode_rng(seed: int, image_id: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed * 1_000_003 + image_id)


def evaluate(arm: Arm, images: torch.Tensor, items: list, trace_fh=None) -> tuple:
    """Attack every ``(image_id, goal)``; returns ``(results, rows)``."""
    attacker = make_attacker(arm.attacker_id, **arm.attacker_params)
    state = None
    if arm.generator is not None:
        mt = arm.meta_test or MetaTestConfig()
        original = arm.surrogate
        state = EpisodeState(arm.generator, copy.deepcopy(original), arm.oracle, AttackHistory(mt.history_capacity))
    results, rows = [], []
    for image_id, goal in items:
        x = images[image_id]
        rng = episode_rng(arm.seed, image_id)
        arm.oracle.reset(arm.budget)
        if state is None:
            result = attacker.run(arm.oracle, x, goal, arm.epsilon, None, rng)
        else:
            if mt.reset_surrogate:
                state.surrogate = copy.deepcopy(original)
            result = attack_episode(x, goal, state, attacker, mt, rng)
        results.append(result)
        rows.append(
            {
                "image_id": int(image_id),
                "success": bool(result.success),
                "queries_used": int(result.queries_used),
                "first_query_success": bool(result.first_query_success),
                "goal": goal.mode,
                "true_label": goal.true_label,
                "target_label": goal.target_label,
            }
        )
        if trace_fh is not None:
            for idx, m, ok in getattr(attacker, "last_trace", []):
                trace_fh.write(json.dumps({"image_id": int(image_id), "index": idx, "loss": m, "success": ok}) + "\n")
    return results, rows


def build_oracle(cfg: ExperimentConfig, target: Optional[Classifier]) -> TargetOracle:
    if cfg.remote:
        r = dict(cfg.remote)
        oracle = remote_oracle(
            r.pop("url"),
            RequestMapping(**r.pop("request", {})),
            ScoreMapping(**r.pop("scores", {})),
            budget=cfg.budget,
            **r,
        )
    else:
        if target is None:
            raise ConfigError("need a target checkpoint or a remote endpoint")
        oracle = TargetOracle(LocalBackend(target, cfg.oracle_output), cfg.budget)
    if cfg.defense:
        oracle = apply_defense(oracle, DefenseWrapper(**cfg.defense))
    return oracle


def _check_compatible(cfg, dataset, surrogate, target, generator):
    shape = dataset.image_shape
    for name, model in (("surrogate", surrogate), ("target", target)):
        if model is not None and tuple(model.input_shape) != shape:
            raise ConfigError(f"{name} expects {model.input_shape}, dataset images are {shape}")
    if generator is not None:
        if tuple(generator.image_shape) != shape:
            raise ConfigError(f"generator shape {generator.image_shape} != dataset image shape {shape}")
        if abs(generator.epsilon - cfg.epsilon) > 1e-12:
            raise ConfigError(f"generator epsilon {generator.epsilon} != experiment epsilon {cfg.epsilon}")


def write_outputs(run_dir: Path, report: MetricsReport, rows: list, cfg: ExperimentConfig, budget: int) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "results.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    summary = report.summary()
    summary["config"] = cfg.to_dict()
    (run_dir / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    method = ("MCG + " if cfg.mcg else "") + cfg.attacker
    write_table(run_dir / "table.csv", [(method, report)])
    grid = sorted({1, 10, 50, 100, 200, 500, 1000, 2000, 5000, budget} & set(range(1, budget + 1)))
    write_curve(run_dir / "curve.tsv", emit_curve(rows, grid))


def _fmt(v, pct=False):
    if v is None:
        return "null"
    return f"{v:.1f}%" if pct else f"{v:.1f}"


def write_table(path, entries: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Attack Method", "ASR", "Mean", "Median", "FASR"])
        for method, r in entries:
            w.writerow([method, _fmt(r.asr, True), _fmt(r.mean_queries), _fmt(r.median_queries), _fmt(r.fasr, True)])


def write_curve(path, curve: list) -> None:
    with open(path, "w") as fh:
        fh.write("queries\tasr\n")
        for q, asr in curve:
            fh.write(f"{q}\t{asr:.4f}\n")


def run_experiment(cfg: ExperimentConfig) -> MetricsReport:
    """Load checkpoints, attack the evaluation set and persist the results.

    Writes ``results.jsonl``, ``report.json``, ``table.csv`` and
    ``curve.tsv`` under ``output_dir/name``.
    """
    cfg.validate()
    dataset = load_dataset(cfg.dataset)
    target = load_classifier(_need(cfg.target, "target")) if cfg.target else None
    surrogate = generator = None
    if cfg.mcg:
        surrogate = load_classifier(_need(cfg.surrogate, "surrogate"))
        generator = load_generator(_need(cfg.generator, "generator"))
    _check_compatible(cfg, dataset, surrogate, target, generator)
    oracle = build_oracle(cfg, target)
    items = select_evaluation(dataset, target, cfg.n_eval, cfg.seed, cfg.goal)
    arm = Arm(oracle, cfg.attacker, dict(cfg.attacker_params), cfg.epsilon, cfg.budget, generator, surrogate, cfg.meta_test, cfg.seed)
    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    trace_fh = open(run_dir / "trace.jsonl", "w") if cfg.trace else None
    try:
        results, rows = evaluate(arm, dataset.test_x, items, trace_fh)
    finally:
        if trace_fh:
            trace_fh.close()
    report = compute_metrics(results, rows)
    write_outputs(run_dir, report, rows, cfg, cfg.budget)
    return report


def read_results(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def report_from_results(path) -> MetricsReport:
    rows = read_results(path)
    return compute_metrics(rows, rows)
