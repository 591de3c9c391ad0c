import numpy as np
import numpy.testing as npt

from mmpfn.tasks import (imbalance_task, tabular_only_view, three_signal_task,
                         xor_task)


class TestXorTask:
    def test_shapes_and_determinism(self):
        ds, enc = xor_task(seed=0, n_train=32, n_test=16)
        assert ds.n_samples == 48
        assert ds.n_train == 32
        assert ds.n_classes == 2
        assert ds.tabular_tokens.shape[0] == 48
        assert ds.embeddings["image"].shape[0] == 48
        ds2, _ = xor_task(seed=0, n_train=32, n_test=16)
        assert (ds.tabular_tokens.data == ds2.tabular_tokens.data).all()
        npt.assert_array_equal(ds.labels, ds2.labels)

    def test_label_is_xor_of_bits(self):
        # reconstruct the tabular bit from column 0 of the raw features via the
        # token sign pattern: the label must be independent of it marginally
        ds, _ = xor_task(seed=1, n_train=400, n_test=100)
        # XOR marginal: close to balanced regardless of either bit
        assert 0.35 <= ds.labels.mean() <= 0.65

    def test_latent_not_in_tabular_view(self):
        ds, _ = xor_task(seed=2, n_train=64, n_test=32)
        tab = tabular_only_view(ds)
        assert tab.embeddings == {}
        assert tab.modality_order == []
        assert (tab.tabular_tokens.data == ds.tabular_tokens.data).all()


class TestThreeSignalTask:
    def test_eight_classes_from_three_bits(self):
        ds, _ = three_signal_task(seed=0, n_train=64, n_test=32)
        assert ds.n_classes == 8
        assert set(np.unique(ds.labels)) <= set(range(8))
        assert ds.modality_order == ["image", "text"]

    def test_modalities_selectable(self):
        ds, _ = three_signal_task(seed=0, n_train=32, n_test=16,
                                  modalities=("image",))
        assert list(ds.embeddings) == ["image"]

    def test_dropping_modalities_keeps_labels(self):
        full, _ = three_signal_task(seed=3, n_train=32, n_test=16)
        img_only, _ = three_signal_task(seed=3, n_train=32, n_test=16,
                                        modalities=("image",))
        npt.assert_array_equal(full.labels, img_only.labels)
        npt.assert_array_equal(full.embeddings["image"],
                               img_only.embeddings["image"])


class TestImbalanceTask:
    def test_shapes(self):
        ds, _ = imbalance_task(seed=0, n_train=48, n_test=24)
        assert ds.n_tabular_features == 8
        assert ds.n_classes == 4
        assert ds.embeddings["image"].shape == (72, 16)

    def test_label_needs_both_views(self):
        # the label is a quartile bucket of (tabular latent + embedding
        # latent), so the four classes are balanced by construction
        ds, _ = imbalance_task(seed=1, n_train=400, n_test=100)
        assert set(np.unique(ds.labels)) <= set(range(4))
        counts = np.bincount(ds.labels, minlength=4)
        assert counts.min() >= 100  # 500 samples, quartile buckets

    def test_deterministic(self):
        a, _ = imbalance_task(seed=5)
        b, _ = imbalance_task(seed=5)
        npt.assert_array_equal(a.labels, b.labels)
        assert (a.embeddings["image"] == b.embeddings["image"]).all()
