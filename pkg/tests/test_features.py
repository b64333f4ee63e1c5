import numpy as np
import pytest

from povrate.errors import DuplicateCluster, NumericalError, TileTooSmall
from povrate.features import (
    FeatureMatrix,
    FilterBank,
    build_bank,
    featurize,
    featurize_all,
    response_grid,
    sample_patches,
    zca_whiten,
)
from povrate.imagery import RasterTile


def naive_featurize(tile, filters, stride=1):
    """Independent oracle: explicit loops over window positions and filters."""
    px = tile.pixels.astype(np.float64)
    h, w, _ = px.shape
    k = filters.shape[0]
    out = np.zeros(k)
    for f in range(k):
        filt = filters[f].reshape(3, 3, 3)
        responses = []
        for r in range(0, h - 2, stride):
            for c in range(0, w - 2, stride):
                acc = 0.0
                for dr in range(3):
                    for dc in range(3):
                        for ch in range(3):
                            acc += px[r + dr, c + dc, ch] * filt[dr, dc, ch]
                responses.append(max(acc, 0.0))
        out[f] = sum(responses) / len(responses)
    return out


def raw_bank(filters):
    """Bank wrapper around unwhitened filters (identity whitening)."""
    filters = np.asarray(filters, dtype=np.float64)
    d = filters.shape[1]
    return FilterBank(
        filters=filters, whitening=np.eye(d), mean=np.zeros(d), patch=3, eps=0.0
    )


def random_tile(rng, h=8, w=8, cid="C0"):
    return RasterTile(cid, 10.0, rng.random((h, w, 3), dtype=np.float32))


class TestFeaturize:
    def test_constant_tile_all_ones_filter(self):
        tile = RasterTile("C", 10.0, np.full((6, 6, 3), 0.5, dtype=np.float32))
        bank = raw_bank(np.ones((1, 27)))
        assert featurize(tile, bank)[0] == pytest.approx(13.5, abs=1e-12)

    def test_negated_filter_clamps_to_zero(self):
        tile = RasterTile("C", 10.0, np.full((6, 6, 3), 0.5, dtype=np.float32))
        bank = raw_bank(-np.ones((1, 27)))
        assert featurize(tile, bank)[0] == 0.0

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(5)
        tile = random_tile(rng, 8, 8)
        filters = rng.standard_normal((4, 27))
        got = featurize(tile, raw_bank(filters))
        want = naive_featurize(tile, filters)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_nonnegative_outputs(self):
        rng = np.random.default_rng(6)
        tile = random_tile(rng, 12, 9)
        bank = build_bank([tile], n_images=1, k=8, seed=0)
        assert np.all(featurize(tile, bank) >= 0.0)

    def test_stride_equals_subsampled_grid_mean(self):
        rng = np.random.default_rng(7)
        tile = random_tile(rng, 15, 11)
        bank = build_bank([tile], n_images=1, k=6, seed=1)
        grid = response_grid(tile, bank, stride=1)
        for s in (2, 3, 4):
            want = grid[::s, ::s].reshape(-1, bank.k).mean(axis=0)
            got = featurize(tile, bank, stride=s)
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-14)

    def test_rotation_consistency(self):
        # rotating the tile and the filters' spatial layout together leaves
        # the pooled features unchanged (flattening order is coherent)
        rng = np.random.default_rng(8)
        tile = random_tile(rng, 9, 9)
        filters = rng.standard_normal((5, 27))
        base = featurize(tile, raw_bank(filters))
        rot_tile = RasterTile("C", 10.0, np.ascontiguousarray(np.rot90(tile.pixels, axes=(0, 1))))
        rot_filters = np.stack(
            [np.rot90(f.reshape(3, 3, 3), axes=(0, 1)).reshape(27) for f in filters]
        )
        rotated = featurize(rot_tile, raw_bank(rot_filters))
        np.testing.assert_allclose(rotated, base, rtol=1e-12, atol=1e-14)

    def test_small_tile_rejected(self):
        tile = RasterTile("C", 10.0, np.zeros((3, 3, 3), dtype=np.float32))
        bank = raw_bank(np.ones((1, 27)))
        featurize(tile, bank)  # exactly 3x3 is fine
        with pytest.raises(TileTooSmall):
            featurize_small = RasterTile.__new__(RasterTile)
            featurize_small.cluster_id = "C"
            featurize_small.gsd = 10.0
            featurize_small.pixels = np.zeros((2, 3, 3), dtype=np.float32)
            featurize(featurize_small, bank)


class TestSamplePatches:
    def tiles(self, rng, n=20, size=16):
        return [random_tile(rng, size, size, cid=f"C{i}") for i in range(n)]

    def test_shape(self):
        rng = np.random.default_rng(9)
        patches = sample_patches(self.tiles(rng), n_images=20, k=128, seed=0)
        assert patches.shape == (128, 27)

    def test_single_minimal_tile(self):
        tile = RasterTile("C", 10.0, np.arange(27, dtype=np.float32).reshape(3, 3, 3) / 27.0)
        patches = sample_patches([tile], n_images=20, k=5, seed=1)
        expected = tile.pixels.astype(np.float64).reshape(27)
        for row in patches:
            np.testing.assert_array_equal(row, expected)

    def test_deterministic(self):
        rng = np.random.default_rng(10)
        tiles = self.tiles(rng, n=6)
        a = sample_patches(tiles, k=32, seed=42)
        b = sample_patches(tiles, k=32, seed=42)
        np.testing.assert_array_equal(a, b)
        c = sample_patches(tiles, k=32, seed=43)
        assert not np.array_equal(a, c)

    def test_channel_fastest_flattening(self):
        px = np.zeros((3, 3, 3), dtype=np.float32)
        px[0, 0, 1] = 1.0  # row 0, col 0, channel 1 -> flat index 1
        tile = RasterTile("C", 10.0, px)
        patches = sample_patches([tile], k=1, seed=0)
        assert patches[0, 1] == 1.0
        assert patches[0].sum() == 1.0

    def test_too_small_tile(self):
        bad = RasterTile.__new__(RasterTile)
        bad.cluster_id = "B"
        bad.gsd = 10.0
        bad.pixels = np.zeros((4, 2, 3), dtype=np.float32)
        with pytest.raises(TileTooSmall):
            sample_patches([bad], k=4, seed=0)


class TestZcaWhiten:
    def test_identity_covariance_gives_identity_whitening(self):
        rng = np.random.default_rng(11)
        raw = rng.standard_normal((300, 27))
        centered = raw - raw.mean(axis=0)
        cov = np.cov(centered, rowvar=False, ddof=1)
        vals, vecs = np.linalg.eigh(cov)
        pre = centered @ (vecs * vals**-0.5) @ vecs.T  # exact sample cov = I
        bank = zca_whiten(pre + 2.0, eps=0.0)
        np.testing.assert_allclose(bank.whitening, np.eye(27), atol=1e-6)
        np.testing.assert_allclose(bank.filters, pre, atol=1e-6)

    def test_two_column_diagonal_toy(self):
        # hand eigendecomposition: sample cov diag(4, 1) -> W = diag(1/2, 1)
        col1 = np.sqrt(3.0) * np.array([1.0, 1.0, -1.0, -1.0])
        col2 = (np.sqrt(3.0) / 2.0) * np.array([1.0, -1.0, 1.0, -1.0])
        patches = np.stack([col1, col2], axis=1)
        bank = zca_whiten(patches, eps=0.0)
        np.testing.assert_allclose(bank.whitening, np.diag([0.5, 1.0]), atol=1e-12)
        np.testing.assert_allclose(bank.filters[:, 0], col1 / 2.0, atol=1e-12)
        np.testing.assert_allclose(bank.filters[:, 1], col2, atol=1e-12)

    def test_whitened_gaussian_covariance_near_identity(self):
        rng = np.random.default_rng(12)
        patches = rng.standard_normal((512, 27)) * rng.uniform(0.5, 2.0, size=27)
        bank = zca_whiten(patches, eps=1e-6)
        cov = np.cov(bank.filters, rowvar=False, ddof=1)
        assert np.linalg.norm(cov - np.eye(27), "fro") < 1e-3

    def test_non_finite_rejected(self):
        patches = np.ones((4, 27))
        patches[0, 0] = np.nan
        with pytest.raises(NumericalError):
            zca_whiten(patches)

    def test_whitening_symmetric(self):
        rng = np.random.default_rng(13)
        bank = zca_whiten(rng.standard_normal((64, 27)))
        np.testing.assert_allclose(bank.whitening, bank.whitening.T, atol=1e-9)


class TestFeaturizeAll:
    def tiles(self, rng, n=3, size=10):
        return [random_tile(rng, size, size, cid=f"C{i}") for i in range(n)]

    def test_matrix_shape_and_order(self):
        rng = np.random.default_rng(14)
        tiles = self.tiles(rng)
        bank = build_bank(tiles, n_images=3, k=128, seed=0)
        fm = featurize_all(tiles, bank)
        assert fm.values.shape == (3, 128)
        assert fm.cluster_ids == ["C0", "C1", "C2"]

    def test_permutation_permutes_rows(self):
        rng = np.random.default_rng(15)
        tiles = self.tiles(rng, n=4)
        bank = build_bank(tiles, n_images=4, k=8, seed=0)
        fm = featurize_all(tiles, bank)
        perm = [2, 0, 3, 1]
        fm2 = featurize_all([tiles[i] for i in perm], bank)
        np.testing.assert_array_equal(fm2.values, fm.values[perm])

    def test_parallel_serial_identical(self):
        rng = np.random.default_rng(16)
        tiles = self.tiles(rng, n=9, size=21)
        bank = build_bank(tiles, n_images=5, k=16, seed=3)
        serial = featurize_all(tiles, bank, stride=2, workers=1)
        for workers in (2, 4, 8):
            par = featurize_all(tiles, bank, stride=2, workers=workers)
            np.testing.assert_array_equal(par.values, serial.values)

    def test_duplicate_cluster(self):
        rng = np.random.default_rng(17)
        tiles = self.tiles(rng, n=2)
        tiles[1] = RasterTile("C0", 10.0, tiles[1].pixels)
        bank = build_bank(tiles, n_images=2, k=4, seed=0)
        with pytest.raises(DuplicateCluster):
            featurize_all(tiles, bank)

    def test_feature_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(18)
        tiles = self.tiles(rng)
        bank = build_bank(tiles, n_images=3, k=6, seed=0)
        fm = featurize_all(tiles, bank)
        path = tmp_path / "features.csv"
        fm.to_csv(path)
        back = FeatureMatrix.from_csv(path)
        assert back.cluster_ids == fm.cluster_ids
        assert back.bank_fingerprint == fm.bank_fingerprint
        np.testing.assert_array_equal(back.values, fm.values)

    def test_bank_json_round_trip(self):
        rng = np.random.default_rng(19)
        tiles = self.tiles(rng)
        bank = build_bank(tiles, n_images=3, k=6, seed=4)
        back = FilterBank.from_json(bank.to_json())
        np.testing.assert_array_equal(back.filters, bank.filters)
        assert back.fingerprint() == bank.fingerprint()
