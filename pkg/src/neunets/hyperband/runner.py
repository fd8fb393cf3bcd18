"""Bracket execution: sample, train a little, keep the best, train more.

Configurations keep their weights when promoted between rungs, so a
survivor entering a rung at ``r`` total epochs only trains for the
marginal epochs the rung adds.  Configurations within a rung train
concurrently; promotion is a serial barrier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from neunets import ir, nn
from neunets.data import preprocess_images
from neunets.errors import GraphValidationError, StateError
from neunets.hyperband.configspace import (
    ConfigSpace,
    decode_genome,
    optimizer_from_genome,
    sample_genome,
)
from neunets.hyperband.schedule import build_schedule
from neunets.trainer import JobFailure, TrainJob, run_parallel


@dataclass
class _Config:
    id: int
    genome: dict
    optimizer: nn.OptimizerConfig
    graph: ir.NetworkGraph | None = None
    accuracy: float = -1.0
    trained_epochs: int = 0


@dataclass
class HyperbandResult:
    genome: dict
    optimizer: nn.OptimizerConfig
    graph: ir.NetworkGraph | None
    accuracy: float
    config_id: int
    partial: bool = False
    history: list = field(default_factory=list)


def _train_seed(seed: int, config_id: int, r: int) -> int:
    return int(np.random.default_rng([seed, config_id, r]).integers(2 ** 31))


def run_hyperband(space: ConfigSpace, dataset, R: int = 27, eta: int = 3,
                  budget=None, *, representation: str | None = None,
                  seed: int = 0, warm_configs=None, evaluator=None,
                  max_workers: int = 2, log_path=None) -> HyperbandResult:
    """Search the configuration space under a successive-halving schedule.

    ``representation`` fixes the model representation; by default each
    configuration draws one at random (the search is joint).  Warm
    configurations — ``{"genome", "optimizer"}`` dicts from a dataset
    group — replace the first samples of the widest bracket and of the
    full-resource bracket, so the best of them is always measured at the
    full allowance ``R``.  ``evaluator(genome, r) -> accuracy`` replaces
    real training (used for schedule-level testing); with it the dataset
    may be ``None``.  Budget exhaustion returns the best configuration
    measured so far with ``partial=True``.
    """
    schedule = build_schedule(R, eta)
    warm = list(warm_configs or [])

    ds = dataset
    if evaluator is None:
        if ds is None:
            raise ValueError("a dataset is required unless an evaluator is given")
        if ds.images.dtype == np.uint8:
            ds = preprocess_images(ds, "tapas")

    rng = np.random.default_rng([seed, 29])
    next_id = 0

    def fresh_config(genome_override=None, optimizer_override=None) -> _Config:
        nonlocal next_id
        cfg_id, next_id = next_id, next_id + 1
        if genome_override is not None:
            graph = None
            if ds is not None:
                graph = decode_genome(genome_override, ds.input_shape, ds.n_classes)
            opt = optimizer_override or optimizer_from_genome(genome_override)
            if isinstance(opt, dict):
                opt = nn.OptimizerConfig.from_dict(opt)
            return _Config(cfg_id, genome_override, opt, graph=graph)
        for _ in range(100):
            rep = representation or str(
                space.representations[int(rng.integers(len(space.representations)))]
            )
            genome = sample_genome(space, rep, rng)
            if ds is None:
                return _Config(cfg_id, genome,
                               optimizer_from_genome(genome, space.batch_size))
            try:
                graph = decode_genome(genome, ds.input_shape, ds.n_classes)
            except GraphValidationError:
                continue
            return _Config(cfg_id, genome,
                           optimizer_from_genome(genome, space.batch_size),
                           graph=graph)
        raise GraphValidationError("no decodable configuration found")

    def bracket_configs(s: int, n: int) -> list[_Config]:
        configs = []
        seed_warm = warm and s in (schedule.s_max, 0)
        for slot in range(n):
            if seed_warm and slot < len(warm):
                entry = warm[slot]
                try:
                    configs.append(fresh_config(entry["genome"],
                                                entry.get("optimizer")))
                    continue
                except GraphValidationError:
                    pass  # warm genome does not decode here; sample instead
            configs.append(fresh_config())
        return configs

    best: _Config | None = None
    partial = False
    history = []

    for b_idx, bracket in enumerate(schedule.brackets):
        configs = bracket_configs(bracket.s, bracket.rungs[0].n)
        rung_rows = []
        for r_idx, rung in enumerate(bracket.rungs):
            configs = configs[:rung.n]
            if budget is not None and budget.exhausted():
                partial = True
                break
            if evaluator is not None:
                for cfg in configs:
                    cfg.accuracy = float(evaluator(cfg.genome, rung.r))
                    cfg.trained_epochs = rung.r
            else:
                jobs = []
                for cfg in configs:
                    if cfg.trained_epochs == 0 and not cfg.graph.weights:
                        ir.initialize_weights(cfg.graph,
                                              seed=_train_seed(seed, cfg.id, 0))
                    delta = rung.r - cfg.trained_epochs
                    jobs.append(TrainJob(
                        graph=cfg.graph, dataset=ds, optimizer=cfg.optimizer,
                        epochs=delta, patience=delta,
                        seed=_train_seed(seed, cfg.id, rung.r),
                        job_id=f"hb-s{bracket.s}-c{cfg.id}-r{rung.r}",
                        ledger=budget, log_path=log_path,
                    ))
                for cfg, result in zip(configs, run_parallel(jobs, max_workers)):
                    if isinstance(result, JobFailure):
                        cfg.accuracy = -1.0
                    else:
                        cfg.graph = result.graph
                        cfg.accuracy = float(result.best_holdout)
                        cfg.trained_epochs = rung.r

            configs.sort(key=lambda c: (-c.accuracy, c.id))
            for cfg in configs:
                if best is None or (cfg.accuracy, -cfg.id) > (best.accuracy, -best.id):
                    best = cfg
            rung_rows.append({
                "n": rung.n, "r": rung.r,
                "entries": [{"id": c.id, "accuracy": c.accuracy} for c in configs],
                "survivors": [c.id for c in configs[:rung.n // schedule.eta]],
            })
            if budget is not None and budget.exhausted():
                last = (b_idx == len(schedule.brackets) - 1
                        and r_idx == len(bracket.rungs) - 1)
                partial = partial or not last
                break
        history.append({"s": bracket.s, "rungs": rung_rows})
        if partial:
            break

    if best is None:
        raise StateError("budget exhausted before any configuration ran")
    return HyperbandResult(
        genome=best.genome, optimizer=best.optimizer, graph=best.graph,
        accuracy=best.accuracy, config_id=best.id, partial=partial,
        history=history,
    )
