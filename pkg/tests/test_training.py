import warnings

import numpy as np
import pytest

from molmoe import autodiff as ad
from molmoe.autodiff import Tensor
from molmoe.brics import brics_decompose
from molmoe.graph import featurize
from molmoe.scaffold import murcko_scaffold
from molmoe.smiles import SmilesWarning, parse_smiles
from molmoe.training import (Adam, Dataset, MoleculeRecord, SGD, TrainConfig,
                             evaluate, random_split, roc_auc, scaffold_split,
                             task_loss, train)


def record(smiles, labels):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmilesWarning)
        g = featurize(parse_smiles(smiles))
    return MoleculeRecord(g, np.asarray(labels, dtype=float),
                          murcko_scaffold(g), brics_decompose(g), smiles)


SMILES_POOL = [
    "CC(=O)NC", "CCOC", "c1ccccc1CC", "CCC(=O)Nc1ccccc1", "CCOc1ccncc1",
    "CS(=O)(=O)NCC", "CC(C)=CCC", "OCCOCC", "c1ccc2ccccc2c1CC", "CCN(CC)CC",
    "Cc1ccc(F)cc1", "CC(C)C(=O)OC", "c1ccsc1CCN", "CCCCO", "CC(=O)Nc1ccncc1",
    "c1ccccc1-c1ccccc1", "CC(C)(C)CC(=O)NC", "COc1ccccc1", "CCCC(=O)OCC",
    "CN(C)C(=O)c1ccccc1",
]


@pytest.fixture(scope="module")
def toy_dataset():
    records = [record(s, [float(i % 2)]) for i, s in enumerate(SMILES_POOL)]
    return Dataset(records, ["y"])


class TestSplits:
    def test_scaffold_groups_never_split(self, toy_dataset):
        train_idx, valid_idx, test_idx = scaffold_split(
            toy_dataset, (0.8, 0.1, 0.1), seed=0)
        keys = [r.scaffold_key for r in toy_dataset.records]
        buckets = [set(keys[i] for i in part)
                   for part in (train_idx, valid_idx, test_idx)]
        assert not buckets[0] & buckets[1]
        assert not buckets[0] & buckets[2]
        assert not buckets[1] & buckets[2]

    def test_partition_covers_everything(self, toy_dataset):
        parts = scaffold_split(toy_dataset, (0.8, 0.1, 0.1), seed=0)
        combined = sorted(i for part in parts for i in part)
        assert combined == list(range(len(toy_dataset)))
        assert not set(parts[0]) & set(parts[1])
        assert not set(parts[0]) & set(parts[2])
        assert not set(parts[1]) & set(parts[2])

    def test_ten_singleton_scaffolds_split_8_1_1(self):
        # ten distinct ring systems, one molecule each
        smiles = ["c1ccccc1", "c1ccncc1", "c1ccsc1", "c1ccoc1", "C1CCCCC1",
                  "C1CCCC1", "C1CCNCC1", "c1ccc2ccccc2c1", "C1CCOC1",
                  "c1cncnc1"]
        ds = Dataset([record(s, [1.0 if i % 2 else 0.0])
                      for i, s in enumerate(smiles)], ["y"])
        parts = scaffold_split(ds, (0.8, 0.1, 0.1), seed=0)
        assert [len(p) for p in parts] == [8, 1, 1]

    def test_single_scaffold_falls_back_to_random(self, caplog):
        ds = Dataset([record("c1ccccc1C" + "C" * i, [float(i % 2)])
                      for i in range(10)], ["y"])
        with caplog.at_level("WARNING"):
            parts = scaffold_split(ds, (0.8, 0.1, 0.1), seed=3)
        assert "falling back" in caplog.text
        assert sorted(i for p in parts for i in p) == list(range(10))

    def test_random_split_deterministic(self):
        a = random_split(100, (0.8, 0.1, 0.1), np.random.default_rng(5))
        b = random_split(100, (0.8, 0.1, 0.1), np.random.default_rng(5))
        assert a == b
        assert [len(p) for p in a] == [80, 10, 10]


class TestTaskLoss:
    def test_zero_logit_positive_label_is_log_two(self):
        loss = task_loss([Tensor([0.0])], [np.array([1.0])])
        assert loss.item() == pytest.approx(np.log(2.0), abs=1e-12)

    def test_large_margin_drives_loss_to_zero(self):
        loss = task_loss([Tensor([30.0, -30.0])], [np.array([1.0, 0.0])])
        assert loss.item() < 1e-12

    def test_missing_entries_do_not_change_loss(self):
        full = task_loss([Tensor([1.0, -0.5])], [np.array([1.0, 0.0])])
        padded = task_loss([Tensor([1.0, -0.5, 9.9])],
                           [np.array([1.0, 0.0, np.nan])])
        assert full.item() == pytest.approx(padded.item(), abs=1e-15)

    def test_no_observed_labels_rejected(self):
        with pytest.raises(ValueError, match="observed"):
            task_loss([Tensor([1.0])], [np.array([np.nan])])

    def test_gradient_matches_sigmoid_residual(self):
        z = Tensor([0.3, -1.2], requires_grad=True)
        y = np.array([1.0, 0.0])
        ad.backward(task_loss([z], [y]))
        expected = (1 / (1 + np.exp(-z.data)) - y) / 2
        np.testing.assert_allclose(z.grad, expected, atol=1e-12)


class TestRocAuc:
    def test_perfect_ranking(self):
        assert roc_auc(np.array([[0.9], [0.1]]), np.array([[1.0], [0.0]])) == 1.0

    def test_all_ties_half(self):
        assert roc_auc(np.array([[0.5], [0.5]]), np.array([[1.0], [0.0]])) == 0.5

    def test_enumerated_pairs(self):
        # pairs: (0.8 vs 0.6) win, (0.4 vs 0.6) loss -> 0.5
        scores = np.array([[0.8], [0.6], [0.4]])
        labels = np.array([[1.0], [0.0], [1.0]])
        assert roc_auc(scores, labels) == 0.5

    def test_single_class_task_excluded(self):
        scores = np.array([[0.8, 0.3], [0.6, 0.9]])
        labels = np.array([[1.0, 1.0], [0.0, 1.0]])
        mean, per_task = roc_auc(scores, labels, return_per_task=True)
        assert np.isnan(per_task[1])
        assert mean == per_task[0] == 1.0

    def test_no_valid_task_rejected(self):
        with pytest.raises(ValueError, match="both classes"):
            roc_auc(np.array([[0.8], [0.6]]), np.array([[1.0], [1.0]]))

    def test_missing_labels_ignored(self):
        scores = np.array([[0.9], [0.2], [0.7]])
        labels = np.array([[1.0], [0.0], [np.nan]])
        assert roc_auc(scores, labels) == 1.0

    def test_matches_trapezoidal_oracle(self, rng):
        def trapezoid_auc(s, y):
            # ROC curve sweep: one point per unique threshold, ties grouped,
            # trapezoidal integration from (0,0) to (1,1)
            xs, ys = [0.0], [0.0]
            for t in np.unique(s)[::-1]:
                xs.append(((s >= t) & (y == 0)).sum() / (y == 0).sum())
                ys.append(((s >= t) & (y == 1)).sum() / (y == 1).sum())
            return float(np.trapezoid(ys, xs))

        for _ in range(25):
            n = int(rng.integers(5, 60))
            scores = np.round(rng.random(n), 2)  # rounding forces ties
            labels = rng.integers(0, 2, n).astype(float)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            ours = roc_auc(scores.reshape(-1, 1), labels.reshape(-1, 1))
            assert abs(ours - trapezoid_auc(scores, labels)) < 1e-9


class TestOptimizers:
    def test_sgd_step(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        p.grad = np.array([0.5, -0.5])
        SGD({"p": p}, lr=0.1).step()
        np.testing.assert_allclose(p.data, [0.95, 2.05])

    def test_sgd_decoupled_weight_decay(self):
        p = Tensor([1.0], requires_grad=True)
        p.grad = np.array([0.0])
        SGD({"p": p}, lr=0.1, weight_decay=0.5).step()
        np.testing.assert_allclose(p.data, [0.95])

    def test_adam_moves_towards_minimum(self):
        p = Tensor([4.0], requires_grad=True)
        opt = Adam({"p": p}, lr=0.1)
        for _ in range(100):
            ad.backward(ad.mul(p, p))
            opt.step()
            opt.zero_grad()
        assert abs(p.data[0]) < 1.0


class TestTrain:
    def config(self, **kw):
        base = dict(seed=7, num_layers=1, hidden_dim=8, batch_size=8,
                    learning_rate=0.01, epochs_recognition=2, epochs_total=3,
                    num_experts=2, split="random")
        base.update(kw)
        return TrainConfig(**base)

    def test_same_seed_identical_reports(self, toy_dataset):
        r1 = train(toy_dataset, self.config())
        r2 = train(toy_dataset, self.config())
        assert [r.to_dict() for r in r1.reports] == \
            [r.to_dict() for r in r2.reports]
        assert r1.summary == r2.summary

    def test_different_seed_differs(self, toy_dataset):
        r1 = train(toy_dataset, self.config())
        r2 = train(toy_dataset, self.config(seed=8))
        assert r1.summary != r2.summary

    def test_loss_report_identity(self, toy_dataset):
        res = train(toy_dataset, self.config(alpha=0.3))
        for r in res.reports:
            if r.phase == 1:
                assert r.l_rec == pytest.approx(r.l_task + 0.3 * r.l_margin,
                                                abs=1e-9)
            else:
                assert r.l_total == pytest.approx(r.l_task + 0.1 * r.l_imp,
                                                  abs=1e-9)

    def test_moe_untouched_in_phase_one(self, toy_dataset):
        cfg = self.config(epochs_recognition=2, epochs_total=0)
        res = train(toy_dataset, cfg)
        fresh = train(toy_dataset, self.config(epochs_recognition=0,
                                               epochs_total=0))
        for name, p in res.model.moe_params.items():
            assert np.array_equal(p.data, fresh.model.moe_params[name].data), name

    def test_encoder_changes_in_phase_one(self, toy_dataset):
        res = train(toy_dataset, self.config(epochs_recognition=2,
                                             epochs_total=0))
        fresh = train(toy_dataset, self.config(epochs_recognition=0,
                                               epochs_total=0))
        changed = any(
            not np.array_equal(p.data, fresh.model.encoder_params[name].data)
            for name, p in res.model.encoder_params.items())
        assert changed

    def test_assignments_frozen_in_phase_two(self, toy_dataset):
        res = train(toy_dataset, self.config())
        assert res.model.phase == 2
        assert set(res.model.frozen_assignments) == set(res.splits[0])

    def test_recognition_head_frozen_in_phase_two(self, toy_dataset):
        short = train(toy_dataset, self.config(epochs_total=0))
        longer = train(toy_dataset, self.config(epochs_total=3))
        for name, p in longer.model.head_params.items():
            assert np.array_equal(p.data, short.model.head_params[name].data)

    def test_ablation_config(self):
        cfg = self.config().ablation()
        assert cfg.num_experts == 1
        assert cfg.beta == 0.0
        assert cfg.psi == 1.0

    def test_sanity_configuration_runs(self, toy_dataset):
        res = train(toy_dataset, self.config(num_experts=1, beta=0.0))
        assert res.summary["phase2_epochs"] == 3

    def test_evaluation_deterministic_after_training(self, toy_dataset):
        res = train(toy_dataset, self.config())
        idx = list(range(len(toy_dataset)))
        s1 = res.model.predict_scores(toy_dataset, idx)
        s2 = res.model.predict_scores(toy_dataset, idx)
        assert np.array_equal(s1, s2)

    def test_grid_constants_match_published_search_space(self):
        assert TrainConfig.BATCH_SIZE_GRID == (128, 256, 512)
        assert TrainConfig.LEARNING_RATE_GRID == (0.0005, 0.001, 0.005)
        assert TrainConfig.WEIGHT_DECAY_GRID == (0.0, 1e-5, 1e-4)
        assert TrainConfig.NUM_EXPERTS_GRID == (1, 3, 5, 7, 9)
        assert TrainConfig.LOSS_BALANCE_GRID == (0.01, 0.1, 1.0, 5.0)
        assert TrainConfig.PSI_GRID == (0.1, 0.2, 0.3)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(split_ratios=(0.5, 0.2, 0.2))
        with pytest.raises(ValueError):
            TrainConfig(split="cluster")
        with pytest.raises(ValueError):
            TrainConfig(optimizer="lion")

    def test_learned_model_beats_chance_on_separable_data(self):
        # planted pattern: amide present <=> positive label
        pos = ["CC(=O)NC", "CCC(=O)NC", "CC(=O)NCC", "CCCC(=O)NC",
               "CC(=O)NCCC", "CC(C)C(=O)NC", "CCC(=O)NCC", "CC(=O)NC(C)C"]
        neg = ["CCOC", "CCCC", "CCOCC", "CCCO", "CCCCC", "COC", "CCC(C)O",
               "CCCOC"]
        extend = lambda pool: pool + [s + "C" for s in pool]
        records = [record(s, [1.0]) for s in extend(pos)] + \
                  [record(s, [0.0]) for s in extend(neg)]
        ds = Dataset(records, ["amide"])
        cfg = TrainConfig(seed=3, encoder="gin", num_layers=2, hidden_dim=16,
                          batch_size=16, learning_rate=0.1,
                          epochs_recognition=5, epochs_total=25,
                          num_experts=2, split="random", weight_decay=0.0,
                          split_ratios=(0.8, 0.1, 0.1))
        res = train(ds, cfg)
        auc = evaluate(res.model, ds, res.splits[0])
        assert auc >= 0.9
