"""Append-only populations and tournament selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from neunets import ir


@dataclass
class Individual:
    """One candidate network plus its evaluation and lineage."""

    graph: ir.NetworkGraph
    fitness: float = None
    id: int = -1  # assigned by Population.add
    parent: int = None
    mutation: str = None
    epochs_trained: int = 0

    def __post_init__(self):
        if self.fitness is not None and not 0.0 <= self.fitness <= 1.0:
            raise ValueError(f"fitness {self.fitness} outside [0, 1]")


class Population:
    """Individuals are only ever added; ids are their insertion order."""

    def __init__(self):
        self.members: list[Individual] = []

    def add(self, individual: Individual) -> Individual:
        individual.id = len(self.members)
        self.members.append(individual)
        return individual

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, idx: int) -> Individual:
        return self.members[idx]

    def best(self) -> Individual:
        """Highest fitness over the whole history; ties go to the older id."""
        evaluated = [m for m in self.members if m.fitness is not None]
        if not evaluated:
            raise ValueError("population has no evaluated member")
        return max(evaluated, key=lambda m: (m.fitness, -m.id))

    def best_fitness_history(self) -> list:
        """Running best fitness in insertion order (the hall-of-fame curve)."""
        out, cur = [], -1.0
        for m in self.members:
            if m.fitness is not None:
                cur = max(cur, m.fitness)
            out.append(cur)
        return out


def tournament_select(population: Population, k: float, rng=None) -> Individual:
    """Best individual of a uniform ⌈k·|P|⌉-subset drawn without replacement.

    Ties on fitness go to the lower id, so selection is deterministic
    given the sampled subset.
    """
    if len(population) == 0:
        raise ValueError("cannot select from an empty population")
    if not 0.0 < k <= 1.0:
        raise ValueError(f"tournament fraction must be in (0, 1], got {k}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    size = math.ceil(k * len(population))
    picked = rng.choice(len(population), size=size, replace=False)
    entrants = [population[int(i)] for i in picked]
    if any(m.fitness is None for m in entrants):
        raise ValueError("tournament entrants must be evaluated")
    return max(entrants, key=lambda m: (m.fitness, -m.id))
