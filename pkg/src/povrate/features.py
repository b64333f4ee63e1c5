"""Single-step random-convolutional image featurization.

A bank of small filters is built by sampling raw 3x3 patches from a handful of
training tiles and ZCA-whitening them. Every tile is then featurized by
convolving with the bank (valid positions only, zero bias), applying ReLU and
average-pooling each filter's response map to one scalar. The bank is frozen
after construction; featurization is pure.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DuplicateCluster, NumericalError, TileTooSmall
from .imagery import RasterTile

# rows of windows processed per block during pooling; fixed so results do not
# depend on worker count
_BLOCK_ROWS = 64


@dataclass
class FilterBank:
    """Whitened convolution filters plus the whitening transform that made them."""

    filters: np.ndarray  # (k, patch*patch*3)
    whitening: np.ndarray  # (d, d), symmetric
    mean: np.ndarray  # (d,)
    patch: int = 3
    eps: float = 1e-6
    source_seed: int = 0

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=np.float64)
        self.whitening = np.asarray(self.whitening, dtype=np.float64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        if self.filters.ndim != 2 or self.filters.shape[0] < 1:
            raise NumericalError(f"filters must be a (k, d) matrix, got {self.filters.shape}")
        # patch > 0 marks a convolution-ready bank (d = patch*patch*3)
        if self.patch > 0 and self.filters.shape[1] != self.patch * self.patch * 3:
            raise NumericalError(
                f"filters must be (k, {self.patch * self.patch * 3}), got {self.filters.shape}"
            )
        if not np.allclose(self.whitening, self.whitening.T, atol=1e-9):
            raise NumericalError("whitening matrix must be symmetric")

    @property
    def k(self) -> int:
        return self.filters.shape[0]

    def to_json(self) -> dict:
        return {
            "seed": self.source_seed,
            "k": self.k,
            "patch": self.patch,
            "eps": self.eps,
            "mean": self.mean.tolist(),
            "whitening": self.whitening.tolist(),
            "filters": self.filters.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "FilterBank":
        return cls(
            filters=np.array(d["filters"], dtype=np.float64),
            whitening=np.array(d["whitening"], dtype=np.float64),
            mean=np.array(d["mean"], dtype=np.float64),
            patch=int(d["patch"]),
            eps=float(d["eps"]),
            source_seed=int(d["seed"]),
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class FeatureMatrix:
    """Per-cluster image feature vectors."""

    cluster_ids: list[str]
    values: np.ndarray  # (n_clusters, k)
    bank_fingerprint: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.cluster_ids) != self.values.shape[0]:
            raise DuplicateCluster(
                f"{len(self.cluster_ids)} cluster ids for {self.values.shape[0]} rows"
            )
        if len(set(self.cluster_ids)) != len(self.cluster_ids):
            raise DuplicateCluster("cluster ids must be unique")

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def row(self, cluster_id: str) -> np.ndarray:
        return self.values[self.cluster_ids.index(cluster_id)]

    def to_csv(self, path) -> None:
        header = ["cluster_id"] + [f"f{j:03d}" for j in range(self.k)]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# bank_fingerprint=" + self.bank_fingerprint + "\n")
            fh.write(",".join(header) + "\n")
            for cid, row in zip(self.cluster_ids, self.values):
                fh.write(cid + "," + ",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline().strip()
            fingerprint = first.split("=", 1)[1] if first.startswith("#") else ""
            if not first.startswith("#"):
                raise NumericalError("feature CSV missing fingerprint comment line")
            fh.readline()  # header
            ids: list[str] = []
            rows: list[list[float]] = []
            for line in fh:
                parts = line.rstrip("\n").split(",")
                ids.append(parts[0])
                rows.append([float(p) for p in parts[1:]])
        return cls(cluster_ids=ids, values=np.array(rows, dtype=np.float64), bank_fingerprint=fingerprint)


def sample_patches(
    tiles: list[RasterTile],
    n_images: int = 20,
    k: int = 128,
    patch: int = 3,
    seed: int = 0,
) -> np.ndarray:
    """Sample k raw patches from a random subset of tiles.

    Selects min(n_images, len(tiles)) tiles uniformly without replacement,
    then draws k patch locations (image chosen with replacement, position
    uniform over valid top-left corners). Patches flatten row-major with the
    channel index fastest.
    """
    if not tiles:
        raise TileTooSmall("need at least one tile to sample patches from")
    rng = np.random.default_rng(seed)
    m = min(n_images, len(tiles))
    chosen = [tiles[i] for i in rng.choice(len(tiles), size=m, replace=False)]
    for t in chosen:
        if t.height < patch or t.width < patch:
            raise TileTooSmall(
                f"tile {t.cluster_id!r} is {t.height}x{t.width}, smaller than {patch}x{patch}"
            )
    d = patch * patch * 3
    out = np.empty((k, d), dtype=np.float64)
    for row in range(k):
        t = chosen[int(rng.integers(0, m))]
        r = int(rng.integers(0, t.height - patch + 1))
        c = int(rng.integers(0, t.width - patch + 1))
        out[row] = t.pixels[r : r + patch, c : c + patch, :].astype(np.float64).reshape(d)
    return out


def zca_whiten(patches: np.ndarray, eps: float = 1e-6, seed: int = 0) -> FilterBank:
    """Build a FilterBank by ZCA-whitening raw patches.

    Computes the patch mean and covariance, forms W = E (L + eps)^(-1/2) E^T
    from the eigendecomposition, and stores centered-and-whitened patches as
    the filters.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 2 or patches.shape[0] < 2:
        raise NumericalError("need at least 2 patches to whiten")
    if not np.all(np.isfinite(patches)):
        raise NumericalError("patches contain non-finite values")
    mean = patches.mean(axis=0)
    cov = np.cov(patches, rowvar=False, ddof=1)
    try:
        eigvals, eigvecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"eigendecomposition failed: {err}") from err
    eigvals = np.maximum(eigvals, 0.0)
    scaled = eigvals + eps
    if np.any(scaled <= 0.0):
        raise NumericalError("degenerate patch covariance; increase eps")
    whitening = (eigvecs * (scaled ** -0.5)) @ eigvecs.T
    patch = _infer_patch(patches.shape[1])
    return FilterBank(
        filters=(patches - mean) @ whitening,
        whitening=whitening,
        mean=mean,
        patch=patch,
        eps=eps,
        source_seed=seed,
    )


def _infer_patch(d: int) -> int:
    """Spatial patch side for a flattened dimension d = 3 * patch^2, else 0."""
    p = int(round((d / 3) ** 0.5))
    return p if 3 * p * p == d else 0


def response_grid(tile: RasterTile, bank: FilterBank, stride: int = 1) -> np.ndarray:
    """Full (rows, cols, k) grid of ReLU filter responses at the given stride.

    Diagnostic/teaching path; featurize() pools the same grid without
    materializing it.
    """
    patch = bank.patch
    windows = np.lib.stride_tricks.sliding_window_view(
        tile.pixels.astype(np.float64), (patch, patch, 3)
    )[::stride, ::stride, 0]
    nh, nw = windows.shape[:2]
    flat = windows.reshape(nh * nw, patch * patch * 3)
    resp = np.maximum(flat @ bank.filters.T, 0.0)
    return resp.reshape(nh, nw, bank.k)


def featurize(tile: RasterTile, bank: FilterBank, stride: int = 1) -> np.ndarray:
    """Average pooled ReLU response of every filter over the tile.

    Valid window positions only (no padding), zero bias before the ReLU.
    """
    patch = bank.patch
    if patch < 1:
        raise NumericalError("bank filters are not convolution-shaped (d != 3*patch^2)")
    if tile.height < patch or tile.width < patch:
        raise TileTooSmall(f"tile {tile.cluster_id!r} smaller than {patch}x{patch}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    windows = np.lib.stride_tricks.sliding_window_view(
        tile.pixels.astype(np.float64), (patch, patch, 3)
    )[::stride, ::stride, 0]
    nh, nw = windows.shape[:2]
    d = patch * patch * 3
    filters_t = bank.filters.T
    total = np.zeros(bank.k, dtype=np.float64)
    for r0 in range(0, nh, _BLOCK_ROWS):
        block = windows[r0 : r0 + _BLOCK_ROWS].reshape(-1, d)
        resp = np.maximum(block @ filters_t, 0.0)
        total += resp.sum(axis=0)
    return total / float(nh * nw)


def featurize_all(
    tiles: list[RasterTile],
    bank: FilterBank,
    stride: int = 1,
    workers: int = 1,
) -> FeatureMatrix:
    """Featurize one tile per cluster; row order follows the input order."""
    ids = [t.cluster_id for t in tiles]
    if len(set(ids)) != len(ids):
        dupes = sorted({c for c in ids if ids.count(c) > 1})
        raise DuplicateCluster(f"duplicate cluster ids: {dupes[:5]}")
    values = np.empty((len(tiles), bank.k), dtype=np.float64)
    if workers <= 1 or len(tiles) < 2:
        for i, tile in enumerate(tiles):
            values[i] = featurize(tile, bank, stride)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for i, row in enumerate(pool.map(lambda t: featurize(t, bank, stride), tiles)):
                values[i] = row
    return FeatureMatrix(cluster_ids=ids, values=values, bank_fingerprint=bank.fingerprint())


def build_bank(
    tiles: list[RasterTile],
    n_images: int = 20,
    k: int = 128,
    patch: int = 3,
    eps: float = 1e-6,
    seed: int = 0,
) -> FilterBank:
    """Sample patches from training tiles and whiten them into a FilterBank."""
    patches = sample_patches(tiles, n_images=n_images, k=k, patch=patch, seed=seed)
    return zca_whiten(patches, eps=eps, seed=seed)
