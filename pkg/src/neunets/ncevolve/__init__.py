"""Cell-based neuro-evolution with function-preserving mutations."""

from neunets.ncevolve.evolve import EvolveConfig, EvolveResult, evolve
from neunets.ncevolve.mutations import MUTATION_KINDS, mutate
from neunets.ncevolve.population import Individual, Population, tournament_select

__all__ = [
    "EvolveConfig",
    "EvolveResult",
    "evolve",
    "MUTATION_KINDS",
    "mutate",
    "Individual",
    "Population",
    "tournament_select",
]
