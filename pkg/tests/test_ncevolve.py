"""Cell-based evolution: selection, the mutation catalogue, the loop."""

import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neunets import data, ir, morphisms as mo, ncevolve, nn, trainer
from neunets.errors import MorphismError
from neunets.ncevolve.mutations import _APPLY


def make_population(fitnesses):
    pop = ncevolve.Population()
    for f in fitnesses:
        g = ir.NetworkGraph(metadata={})
        pop.add(ncevolve.Individual(graph=g, fitness=f))
    return pop


def small_template(filters=6, in_shape=(16, 16, 3), n_classes=3, slots=3, seed=0):
    g = ir.instantiate_template(
        ir.initial_cell(filters),
        {"input_shape": in_shape, "n_classes": n_classes},
        slots=slots,
    )
    ir.initialize_weights(g, seed=seed)
    return g


def tiny_dataset(n=90, n_classes=3, size=12, seed=1, noise=30.0):
    raw = data.striped_image_dataset(n=n, n_classes=n_classes, size=size,
                                     seed=seed, noise=noise)
    return data.ImageDataset(
        images=(raw.images.astype(np.float32) - 127.0) / 128.0,
        labels=raw.labels, n_classes=n_classes, splits=raw.splits,
    )


class TestTournament:
    def test_full_tournament_returns_global_best(self):
        pop = make_population([0.2, 0.9, 0.5, 0.7])
        for seed in range(10):
            assert ncevolve.tournament_select(pop, 1.0, seed).id == 1

    def test_singleton_population(self):
        pop = make_population([0.4])
        assert ncevolve.tournament_select(pop, 0.25, 0).id == 0

    def test_ties_break_toward_lower_id(self):
        pop = make_population([0.8, 0.8, 0.8])
        winners = {ncevolve.tournament_select(pop, 1.0, s).id for s in range(5)}
        assert winners == {0}

    def test_empirical_frequencies_match_enumeration(self):
        # five distinct fitnesses, subsets of size ceil(0.6 * 5) = 3: the
        # chance that member i wins equals the share of 3-subsets in which
        # it is the fittest member
        fits = [0.1, 0.3, 0.5, 0.7, 0.9]
        pop = make_population(fits)
        size = math.ceil(0.6 * len(fits))
        subsets = list(itertools.combinations(range(5), size))
        exact = np.zeros(5)
        for sub in subsets:
            exact[max(sub, key=lambda i: fits[i])] += 1.0 / len(subsets)

        rng = np.random.default_rng(0)
        counts = np.zeros(5)
        draws = 10_000
        for _ in range(draws):
            counts[ncevolve.tournament_select(pop, 0.6, rng).id] += 1
        assert np.abs(counts / draws - exact).max() < 0.02

    def test_validation(self):
        with pytest.raises(ValueError):
            ncevolve.tournament_select(ncevolve.Population(), 0.5)
        pop = make_population([0.5])
        with pytest.raises(ValueError):
            ncevolve.tournament_select(pop, 0.0)
        with pytest.raises(ValueError):
            ncevolve.tournament_select(pop, 1.5)


class TestPopulation:
    def test_ids_follow_insertion_order(self):
        pop = make_population([0.1, 0.2, 0.3])
        assert [m.id for m in pop] == [0, 1, 2]

    def test_best_prefers_older_individual_on_tie(self):
        pop = make_population([0.5, 0.9, 0.9])
        assert pop.best().id == 1

    def test_hall_of_fame_curve_is_nondecreasing(self):
        pop = make_population([0.3, 0.1, 0.6, 0.2, 0.8])
        curve = pop.best_fitness_history()
        assert curve == [0.3, 0.3, 0.6, 0.6, 0.8]
        assert all(a <= b for a, b in zip(curve, curve[1:]))

    def test_fitness_range_enforced(self):
        with pytest.raises(ValueError):
            ncevolve.Individual(graph=None, fitness=1.5)


class TestMutations:
    @pytest.mark.parametrize("kind", [k for k in ncevolve.MUTATION_KINDS
                                      if k != "alter_units"])
    def test_each_kind_preserves_the_parent_function(self, kind):
        parent = small_template()
        child = _APPLY[kind](parent, np.random.default_rng(7))
        report = mo.verify_function_preserving(parent, child, trials=30, tol=1e-5)
        assert report["passed"], f"{kind}: deviation {report['max_abs_diff']:.3g}"
        assert ir.cell_instances_identical(child)

    def test_alter_kernel_grows_three_to_five(self):
        parent = small_template()
        child = _APPLY["alter_kernel"](parent, np.random.default_rng(0))
        for inst in child.metadata["cells"]:
            kernels = [child.layer(lid).kernel for lid in inst
                       if child.layer(lid).kind == "conv"]
            assert kernels == [(5, 5)]

    def test_alter_filters_factor_range(self):
        # widening by a factor in [1.2, 2] takes 10 filters to 12..20
        parent = small_template(filters=10)
        widths = set()
        for seed in range(25):
            child = _APPLY["alter_filters"](parent, np.random.default_rng(seed))
            conv = next(s for s in child.layers if s.kind == "conv")
            widths.add(int(conv.attrs["filters"]))
        assert widths <= set(range(12, 21))
        assert len(widths) > 3  # the factor really is sampled

    def test_insert_conv_matches_input_width(self):
        parent = small_template(filters=6)
        child = _APPLY["insert_conv"](parent, np.random.default_rng(1))
        for inst in child.metadata["cells"]:
            new_conv = child.layer(inst[-2])
            assert new_conv.kind == "conv"
            assert int(new_conv.attrs["filters"]) == 6

    def test_branch_insert_adds_concat_and_two_convolutions(self):
        parent = small_template()
        child = _APPLY["branch_insert_conv"](parent, np.random.default_rng(2))
        canon = child.metadata["cells"][0]
        kinds = [child.layer(lid).kind for lid in canon]
        assert kinds.count("concat") == 1
        assert kinds.count("conv") == 3  # two halves plus the inserted one

    def test_alter_units_widens_hidden_dense_only(self):
        g = ir.NetworkGraph(metadata={"input_shape": (1, 1, 4), "n_classes": 2,
                                      "cells": []})
        i = g.add("input", [])
        d1 = g.add("dense", [i], units=10)
        r = g.add("relu", [d1])
        d2 = g.add("dense", [r], units=2)
        g.add("softmax", [d2])
        ir.initialize_weights(g, seed=0)
        child, kind = ncevolve.mutate(g, np.random.default_rng(0),
                                      kinds=("alter_units",))
        assert kind == "alter_units"
        assert int(child.layer(d1).attrs["units"]) in range(12, 21)
        assert int(child.layer(d2).attrs["units"]) == 2  # readout untouched
        report = mo.verify_function_preserving(g, child, trials=30, tol=1e-5)
        assert report["passed"]

    def test_alter_units_resamples_out_on_cell_template(self):
        parent = small_template()
        with pytest.raises(MorphismError, match="no applicable mutation"):
            ncevolve.mutate(parent, np.random.default_rng(0),
                            kinds=("alter_units",), retry_cap=3)

    def test_mutate_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            ncevolve.mutate(small_template(), 0, kinds=("grow_wings",))

    @given(seed=st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=25, deadline=None)
    def test_random_chains_keep_cells_identical(self, seed):
        rng = np.random.default_rng(seed)
        current = small_template(filters=4, in_shape=(8, 8, 3), slots=2,
                                 seed=seed % 7)
        for _ in range(3):
            current, _ = ncevolve.mutate(current, rng, verify=False)
            assert ir.cell_instances_identical(current)

    def test_two_hundred_mutations_preserve_function(self):
        # broad sweep: many seeds, chains of children, each verified
        # against its immediate parent
        checked = 0
        for seed in range(40):
            rng = np.random.default_rng(seed)
            parent = small_template(filters=4, in_shape=(8, 8, 3), slots=2,
                                    seed=seed)
            for _ in range(5):
                child, kind = ncevolve.mutate(parent, rng, verify=False)
                report = mo.verify_function_preserving(parent, child,
                                                       trials=4, tol=1e-4)
                assert report["passed"], (
                    f"seed {seed}, {kind}: deviation {report['max_abs_diff']:.3g}"
                )
                checked += 1
                parent = child
        assert checked >= 200


class TestEvolve:
    def _config(self, **overrides):
        base = dict(
            generations=2, epochs_per_mutation=1, finetune_epochs=0,
            patience=1, initial_filters=4, slots=2, seed=0,
            optimizer=nn.OptimizerConfig(learning_rate=0.05, batch_size=16),
        )
        base.update(overrides)
        return ncevolve.EvolveConfig(**base)

    def test_population_size_is_one_plus_two_g(self):
        result = ncevolve.evolve(tiny_dataset(), config=self._config(generations=3))
        assert len(result.population) == 1 + 2 * 3

    def test_hall_of_fame_never_drops(self):
        result = ncevolve.evolve(tiny_dataset(), config=self._config(generations=3))
        curve = result.population.best_fitness_history()
        assert all(a <= b for a, b in zip(curve, curve[1:]))
        assert result.best.fitness == curve[-1]

    def test_insert_only_evolution_strictly_deepens(self):
        result = ncevolve.evolve(
            tiny_dataset(), config=self._config(mutations=("insert_conv",)),
        )

        def conv_count(ind):
            return sum(1 for s in ind.graph.layers if s.kind == "conv")

        for child in list(result.population)[1:]:
            parent = result.population[child.parent]
            assert conv_count(child) == conv_count(parent) + 2  # one per slot

    def test_budget_exhausted_returns_trained_seed(self):
        budget = trainer.BudgetLedger(cap_seconds=1e-9)
        result = ncevolve.evolve(tiny_dataset(), budget=budget,
                                 config=self._config(generations=5))
        assert len(result.population) == 1
        assert result.best.id == 0
        assert result.best.fitness is not None

    def test_seeded_runs_repeat(self):
        fits = lambda r: [h["fitness"] for h in r.history]
        a = ncevolve.evolve(tiny_dataset(), config=self._config())
        b = ncevolve.evolve(tiny_dataset(), config=self._config())
        assert fits(a) == fits(b)

    def test_history_logged_as_jsonl(self, tmp_path):
        log = tmp_path / "evolution.jsonl"
        result = ncevolve.evolve(tiny_dataset(),
                                 config=self._config(log_path=log))
        lines = [json.loads(l) for l in log.read_text().splitlines()
                 if "mutation" in json.loads(l)]
        assert len(lines) == len(result.history)
        assert {"generation", "parent", "mutation", "fitness"} <= lines[-1].keys()

    def test_evolved_best_at_least_matches_seed_across_runs(self):
        wins = 0
        for seed in range(10):
            result = ncevolve.evolve(
                tiny_dataset(seed=seed, noise=60.0),
                config=self._config(seed=seed),
            )
            if result.best.fitness >= result.population[0].fitness:
                wins += 1
        assert wins >= 8
