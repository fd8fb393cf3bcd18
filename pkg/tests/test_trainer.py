"""Training executor: early stopping, fitness, incremental and parallel runs."""

import json

import numpy as np
import pytest

from neunets import data, ir, nn, trainer
from neunets.errors import DivergenceError, GraphValidationError


def toy_points(n=200, seed=0, gap=2.0):
    """Two linearly separable clusters as (n, 1, 1, 2) float images."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    pts = rng.normal(0, 0.5, (n, 2)) + np.where(labels[:, None] == 1, gap, -gap)
    return data.ImageDataset(
        images=pts.reshape(n, 1, 1, 2).astype(np.float32),
        labels=labels, n_classes=2, splits=data.assign_splits(n, seed=seed + 1),
    )


def fc_graph(units=8, n_classes=2, in_shape=(1, 1, 2), seed=0):
    g = ir.NetworkGraph(metadata={"input_shape": in_shape, "n_classes": n_classes})
    i = g.add("input", [])
    d1 = g.add("dense", [i], units=units)
    r = g.add("relu", [d1])
    d2 = g.add("dense", [r], units=n_classes)
    g.add("softmax", [d2])
    ir.initialize_weights(g, seed=seed)
    return g


def conv_chain(depth=3, filters=4, in_shape=(8, 8, 1), n_classes=2):
    g = ir.NetworkGraph(metadata={"input_shape": in_shape, "n_classes": n_classes})
    tip = g.add("input", [])
    for _ in range(depth):
        tip = g.add("conv", [tip], filters=filters, kernel=[3, 3],
                    stride=2, padding="same")
    return g


def tiny_images(n=60, seed=0):
    ds = data.separable_image_dataset(n=n, size=8, channels=1, seed=seed)
    return data.ImageDataset(
        images=(ds.images.astype(np.float32) - 127.0) / 128.0,
        labels=ds.labels, n_classes=ds.n_classes, splits=ds.splits,
    )


class TestTrain:
    def test_separable_toy_reaches_95_percent(self):
        ds = toy_points()
        job = trainer.TrainJob(
            graph=fc_graph(), dataset=ds, epochs=20, patience=20, seed=0,
            optimizer=nn.OptimizerConfig(learning_rate=0.1, batch_size=32),
        )
        assert trainer.train(job).best_holdout >= 0.95

    def test_zero_learning_rate_stops_after_two_epochs(self):
        job = trainer.TrainJob(
            graph=fc_graph(), dataset=toy_points(), epochs=20, patience=1,
            seed=0, optimizer=nn.OptimizerConfig(learning_rate=0.0),
        )
        result = trainer.train(job)
        assert result.epochs_run == 2
        assert result.stopped_early
        assert result.holdout_curve[0] == result.holdout_curve[1]

    def test_identical_seeds_identical_curves(self):
        def run(seed):
            job = trainer.TrainJob(graph=fc_graph(seed=3), dataset=toy_points(),
                                   epochs=5, patience=5, seed=seed)
            res = trainer.train(job)
            return res.train_curve, res.holdout_curve
        assert run(11) == run(11)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_loss_reports_epoch(self):
        job = trainer.TrainJob(
            graph=fc_graph(), dataset=toy_points(), epochs=5, seed=0,
            optimizer=nn.OptimizerConfig(learning_rate=1e12),
        )
        with np.errstate(all="ignore"), pytest.raises(DivergenceError) as err:
            trainer.train(job)
        assert err.value.epoch >= 1

    def test_best_weights_are_restored(self):
        ds = toy_points(n=120, gap=0.4)  # noisy enough that accuracy wobbles
        job = trainer.TrainJob(
            graph=fc_graph(), dataset=ds, epochs=12, patience=12, seed=2,
            optimizer=nn.OptimizerConfig(learning_rate=0.2, batch_size=16),
        )
        result = trainer.train(job)
        assert result.best_holdout == max(result.holdout_curve)
        assert result.best_epoch == result.holdout_curve.index(result.best_holdout) + 1
        # the returned graph really carries the best epoch's weights
        xh, yh = ds.subset("holdout")
        assert trainer.evaluate_fitness(result.graph, xh, yh) == result.best_holdout

    def test_curve_length_matches_epochs(self):
        job = trainer.TrainJob(graph=fc_graph(), dataset=toy_points(),
                               epochs=4, patience=10, seed=0)
        result = trainer.train(job)
        assert len(result.train_curve) == result.epochs_run == 4
        assert all(0.0 <= a <= 1.0 for a in result.train_curve + result.holdout_curve)

    def test_frozen_layers_do_not_move(self):
        g = fc_graph(seed=1)
        first_dense = g.topological_order()[1]
        kept = {k: v.copy() for k, v in g.weights[first_dense].items()}
        job = trainer.TrainJob(graph=g, dataset=toy_points(), epochs=3,
                               seed=0, freeze={first_dense})
        trainer.train(job)
        for slot, arr in kept.items():
            np.testing.assert_array_equal(g.weights[first_dense][slot], arr)

    def test_job_validation(self):
        with pytest.raises(ValueError):
            trainer.TrainJob(graph=fc_graph(), dataset=toy_points(), epochs=0)
        with pytest.raises(ValueError):
            trainer.TrainJob(graph=fc_graph(), dataset=toy_points(), patience=0)

    def test_missing_split_rejected(self):
        ds = toy_points()
        ds.splits.pop("holdout")
        with pytest.raises(ValueError, match="split"):
            trainer.train(trainer.TrainJob(graph=fc_graph(), dataset=ds))

    def test_jsonl_log(self, tmp_path):
        log = tmp_path / "train.jsonl"
        job = trainer.TrainJob(graph=fc_graph(), dataset=toy_points(),
                               epochs=3, patience=5, seed=0, log_path=log,
                               job_id="demo")
        result = trainer.train(job)
        events = [json.loads(line) for line in log.read_text().splitlines()]
        assert len(events) == result.epochs_run
        assert events[0]["job"] == "demo"
        assert {"epoch", "loss", "train_acc", "holdout_acc"} <= events[0].keys()


class TestEvaluateFitness:
    def _constant_predictor(self, n_classes=10):
        g = ir.NetworkGraph(metadata={"input_shape": (1, 1, 4), "n_classes": n_classes})
        i = g.add("input", [])
        d = g.add("dense", [i], units=n_classes)
        g.add("softmax", [d])
        ir.initialize_weights(g, seed=0)
        g.weights[d]["w"][:] = 0.0
        g.weights[d]["b"][:] = 0.0
        g.weights[d]["b"][0] = 5.0  # always argues for class 0
        return g

    def test_constant_model_scores_chance_on_balanced_labels(self):
        g = self._constant_predictor()
        x = np.random.default_rng(0).random((200, 1, 1, 4)).astype(np.float32)
        labels = np.repeat(np.arange(10), 20)
        assert trainer.evaluate_fitness(g, x, labels) == pytest.approx(0.10)

    def test_memorizer_scores_one(self):
        # one-hot inputs through a scaled identity readout: always correct
        n, k = 50, 10
        labels = np.random.default_rng(1).integers(0, k, n)
        x = np.zeros((n, 1, 1, k), dtype=np.float32)
        x[np.arange(n), 0, 0, labels] = 1.0
        g = ir.NetworkGraph(metadata={"input_shape": (1, 1, k), "n_classes": k})
        i = g.add("input", [])
        d = g.add("dense", [i], units=k)
        g.add("softmax", [d])
        ir.initialize_weights(g, seed=0)
        g.weights[d]["w"][:] = 10.0 * np.eye(k, dtype=np.float32)
        g.weights[d]["b"][:] = 0.0
        assert trainer.evaluate_fitness(g, x, labels) == 1.0

    def test_matches_confusion_matrix_recount(self):
        ds = toy_points(n=150, seed=5)
        g = fc_graph(seed=4)
        trainer.train(trainer.TrainJob(graph=g, dataset=ds, epochs=3, seed=0))
        xh, yh = ds.subset("holdout")
        pred = trainer.predict(g, xh)
        confusion = np.zeros((2, 2), dtype=int)
        for p, t in zip(pred, yh):
            confusion[t, p] += 1
        recount = confusion.trace() / confusion.sum()
        assert trainer.evaluate_fitness(g, xh, yh) == pytest.approx(recount)

    def test_empty_split_rejected(self):
        with pytest.raises(ValueError):
            trainer.evaluate_fitness(fc_graph(), np.zeros((0, 1, 1, 2)), [])


class TestIncremental:
    def test_depth_one_prefix_equals_direct_training(self):
        ds = tiny_images()
        chain = conv_chain(depth=3)
        accs = trainer.incremental_train(chain, ds, epochs=2, patience=2, seed=0)

        first_cut = trainer.chain_cut_points(chain)[0]
        direct = trainer.prefix_graph(chain, first_cut, ds.n_classes)
        ir.initialize_weights(direct, seed=0)
        result = trainer.train(trainer.TrainJob(
            graph=direct, dataset=ds, epochs=2, patience=2, seed=0,
        ))
        assert result.best_holdout == accs[0]

    def test_one_accuracy_per_chain_stage(self):
        ds = tiny_images()
        accs = trainer.incremental_train(conv_chain(depth=3), ds,
                                         epochs=1, patience=1, seed=1)
        assert len(accs) == 3
        assert all(0.0 <= a <= 1.0 for a in accs)

    def test_branching_graph_rejected(self):
        g = conv_chain(depth=2)
        convs = [s.id for s in g.layers if s.kind == "conv"]
        g.add("conv", [convs[0]], filters=4, kernel=[3, 3], stride=1,
              padding="same")  # second consumer -> not a chain
        with pytest.raises(GraphValidationError, match="branches"):
            trainer.chain_cut_points(g)

    def test_explicit_cut_points_must_nest(self):
        g = conv_chain(depth=3)
        convs = [s.id for s in g.layers if s.kind == "conv"]
        with pytest.raises(GraphValidationError, match="ancestor"):
            trainer.incremental_train(g, tiny_images(),
                                      cut_points=[convs[2], convs[0]])

    def test_probe_head_is_temporary(self):
        g = conv_chain(depth=2)
        kinds_before = [s.kind for s in g.layers]
        trainer.incremental_train(g, tiny_images(), epochs=1, patience=1)
        assert [s.kind for s in g.layers] == kinds_before


class TestParallel:
    def _jobs(self, seeds, ledger=None, epochs=3):
        jobs = []
        for s in seeds:
            jobs.append(trainer.TrainJob(
                graph=fc_graph(seed=s), dataset=toy_points(), epochs=epochs,
                seed=s, job_id=f"job-{s}", ledger=ledger,
            ))
        return jobs

    def test_parallel_matches_sequential(self):
        seq = [trainer.train(j) for j in self._jobs([1, 2])]
        par = trainer.run_parallel(self._jobs([1, 2]), max_workers=2)
        for a, b in zip(seq, par):
            assert a.holdout_curve == b.holdout_curve
            assert a.train_curve == b.train_curve

    def test_five_jobs_two_workers_ledger_recount(self):
        ledger = trainer.BudgetLedger(cap_seconds=1e9)
        results = trainer.run_parallel(self._jobs(range(5), ledger=ledger),
                                       max_workers=2)
        assert all(isinstance(r, trainer.TrainResult) for r in results)
        assert [r.job_id for r in results] == [f"job-{s}" for s in range(5)]
        assert ledger.total == pytest.approx(sum(r.seconds for r in results))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergent_job_does_not_poison_others(self):
        good = self._jobs([1])[0]
        bad = self._jobs([2])[0]
        bad.optimizer = nn.OptimizerConfig(learning_rate=1e12)
        results = trainer.run_parallel([bad, good], max_workers=2)
        assert isinstance(results[0], trainer.JobFailure)
        assert isinstance(results[0].exception, DivergenceError)
        assert isinstance(results[1], trainer.TrainResult)
        assert results[1].best_holdout >= 0.9

    def test_worker_count_validated(self):
        with pytest.raises(ValueError):
            trainer.run_parallel([], max_workers=0)


class TestBudgetLedger:
    def test_monotone_accumulation(self):
        ledger = trainer.BudgetLedger(cap_seconds=10.0)
        ledger.charge(3.0)
        ledger.charge(2.5)
        assert ledger.total == 5.5
        assert ledger.remaining() == 4.5
        assert not ledger.exhausted()
        ledger.charge(4.5)
        assert ledger.exhausted()

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            trainer.BudgetLedger(cap_seconds=0)
        with pytest.raises(ValueError):
            trainer.BudgetLedger(cap_seconds=1).charge(-1)

    def test_training_halts_at_cap(self):
        ledger = trainer.BudgetLedger(cap_seconds=1e-9)
        job = trainer.TrainJob(graph=fc_graph(), dataset=toy_points(),
                               epochs=10, patience=10, seed=0, ledger=ledger)
        result = trainer.train(job)
        assert result.epochs_run == 1
        assert result.budget_exhausted

    def test_pre_exhausted_budget_skips_training(self):
        ledger = trainer.BudgetLedger(cap_seconds=1.0)
        ledger.charge(2.0)
        job = trainer.TrainJob(graph=fc_graph(), dataset=toy_points(),
                               epochs=10, seed=0, ledger=ledger)
        result = trainer.train(job)
        assert result.epochs_run == 0
        assert result.budget_exhausted
        assert result.best_epoch == 0
        assert 0.0 <= result.best_holdout <= 1.0
