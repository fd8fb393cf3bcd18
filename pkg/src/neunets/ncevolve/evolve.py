"""The evolution loop: tournament, mutate, short retrain, repeat."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from neunets import ir, nn
from neunets.ncevolve.mutations import MUTATION_KINDS, mutate
from neunets.ncevolve.population import Individual, Population, tournament_select
from neunets.trainer import JobFailure, TrainJob, run_parallel, train


@dataclass
class EvolveConfig:
    generations: int = 10
    tournament_fraction: float = 0.25  # the selection pressure knob
    epochs_per_mutation: int = 3
    finetune_epochs: int = 10
    patience: int = 3
    initial_filters: int = 32
    slots: int = 3
    embed_dim: int = 64
    optimizer: nn.OptimizerConfig = field(default_factory=nn.OptimizerConfig)
    mutations: tuple = MUTATION_KINDS
    seed: int = 0
    max_workers: int = 2
    augment: bool = False
    verify_children: bool = True
    retry_cap: int = 10
    log_path: object = None

    def __post_init__(self):
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.slots < 1:
            raise ValueError("need at least one cell slot")


@dataclass
class EvolveResult:
    graph: ir.NetworkGraph  # hall-of-fame best after final fine-tuning
    best: Individual
    population: Population
    history: list
    finetuned_fitness: float = None


def _template_meta(dataset, config: EvolveConfig) -> dict:
    if hasattr(dataset, "images"):
        return {"input_shape": dataset.input_shape,
                "n_classes": dataset.n_classes}
    return {"input_shape": (dataset.max_len,), "n_classes": dataset.n_classes,
            "vocab_size": dataset.vocab_size, "embed_dim": config.embed_dim}


def _log(path, event) -> None:
    if path is None:
        return
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(event) + "\n")


def evolve(dataset, budget=None, config: EvolveConfig = None) -> EvolveResult:
    """Evolve a cell-based classifier for the dataset under a time budget.

    Starts from the one-convolution template, then per generation selects
    two parents by tournament (with replacement), mutates each with a
    function-preserving edit, retrains the children briefly in parallel,
    and appends them to the population.  The all-time best individual is
    fine-tuned with early stopping before being returned.  If the budget
    runs out before the first generation, the trained seed comes back.
    """
    config = config or EvolveConfig()
    rng = np.random.default_rng(config.seed)
    meta = _template_meta(dataset, config)
    cell_kernel = (3, 1) if len(meta["input_shape"]) == 1 else (3, 3)

    seed_graph = ir.instantiate_template(
        ir.initial_cell(config.initial_filters, kernel=cell_kernel),
        meta, slots=config.slots,
    )
    ir.initialize_weights(seed_graph, seed=int(rng.integers(2**31)))
    seed_result = train(TrainJob(
        graph=seed_graph, dataset=dataset, optimizer=config.optimizer,
        epochs=config.epochs_per_mutation, patience=config.epochs_per_mutation,
        seed=int(rng.integers(2**31)), augment=config.augment,
        job_id="seed", ledger=budget, log_path=config.log_path,
    ))

    population = Population()
    population.add(Individual(
        graph=seed_result.graph, fitness=seed_result.best_holdout,
        epochs_trained=seed_result.epochs_run,
    ))
    history = [{"generation": 0, "id": 0, "parent": None, "mutation": None,
                "fitness": seed_result.best_holdout}]
    _log(config.log_path, history[-1])

    for generation in range(1, config.generations + 1):
        if budget is not None and budget.exhausted():
            break
        parents, kinds, jobs = [], [], []
        for slot in range(2):  # two children per generation, with replacement
            parent = tournament_select(population, config.tournament_fraction, rng)
            child_graph, kind = mutate(
                parent.graph, rng, kinds=config.mutations,
                retry_cap=config.retry_cap, verify=config.verify_children,
            )
            parents.append(parent)
            kinds.append(kind)
            jobs.append(TrainJob(
                graph=child_graph, dataset=dataset, optimizer=config.optimizer,
                epochs=config.epochs_per_mutation,
                patience=config.epochs_per_mutation,
                seed=int(rng.integers(2**31)), augment=config.augment,
                job_id=f"g{generation}c{slot}", ledger=budget,
                log_path=config.log_path,
            ))
        results = run_parallel(jobs, max_workers=config.max_workers)
        for parent, kind, job, res in zip(parents, kinds, jobs, results):
            if isinstance(res, JobFailure):
                child = Individual(graph=job.graph, fitness=0.0,
                                   parent=parent.id, mutation=kind)
                event_extra = {"failed": res.error}
            else:
                child = Individual(graph=res.graph, fitness=res.best_holdout,
                                   parent=parent.id, mutation=kind,
                                   epochs_trained=res.epochs_run)
                event_extra = {}
            population.add(child)
            event = {"generation": generation, "id": child.id,
                     "parent": parent.id, "mutation": kind,
                     "fitness": child.fitness, **event_extra}
            history.append(event)
            _log(config.log_path, event)

    best = population.best()
    final = best.graph.clone()
    finetuned = None
    if config.finetune_epochs > 0 and not (budget is not None and budget.exhausted()):
        tuned = train(TrainJob(
            graph=final, dataset=dataset, optimizer=config.optimizer,
            epochs=config.finetune_epochs, patience=config.patience,
            seed=int(rng.integers(2**31)), augment=config.augment,
            job_id="finetune", ledger=budget, log_path=config.log_path,
        ))
        finetuned = tuned.best_holdout
        if finetuned < best.fitness:
            final = best.graph.clone()  # tuning hurt; keep the known-good weights
    return EvolveResult(graph=final, best=best, population=population,
                        history=history, finetuned_fitness=finetuned)
