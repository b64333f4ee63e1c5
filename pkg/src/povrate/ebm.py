"""Additive gradient-boosted classifier built from per-feature bin functions.

Training runs cyclic rounds over features in fixed order; each step fits an
optimal contiguous partition of that feature's bins (at most n_leaves leaves)
to the current logistic residual under sample weights, damped by the learning
rate. Optional pairwise terms are screened by residual variance reduction on
2-D bin grids and boosted the same way. The final prediction is the sigmoid
of the intercept plus every retrieved bin score, which keeps each feature's
contribution directly readable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _boost
from .errors import (
    DegenerateFold,
    DegenerateLabels,
    InvalidWeight,
    NumericalError,
    ShapeError,
)

PROB_CLIP = 1e-15


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    n_leaves: int = 31
    n_interactions: int = 0
    n_rounds: int = 500
    max_bins: int = 256
    seed: int = 0
    early_stopping_rounds: int = 50
    validation_frac: float = 0.15

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.n_leaves < 2:
            raise ValueError("n_leaves must be at least 2")
        if self.n_interactions < 0 or self.n_rounds < 0:
            raise ValueError("n_interactions and n_rounds must be nonnegative")

    def to_json(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "n_leaves": self.n_leaves,
            "n_interactions": self.n_interactions,
            "n_rounds": self.n_rounds,
            "max_bins": self.max_bins,
            "seed": self.seed,
            "early_stopping_rounds": self.early_stopping_rounds,
            "validation_frac": self.validation_frac,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class BinSpec:
    """Per-feature cut points; value x falls in the first bin whose cut >= x."""

    cuts: list[np.ndarray]

    def __post_init__(self):
        self.cuts = [np.asarray(c, dtype=np.float64) for c in self.cuts]
        for c in self.cuts:
            if c.size > 1 and not np.all(np.diff(c) > 0):
                raise NumericalError("cut points must be strictly increasing")

    @property
    def n_features(self) -> int:
        return len(self.cuts)

    def n_bins(self, j: int) -> int:
        return len(self.cuts[j]) + 1

    def bin_counts(self) -> np.ndarray:
        return np.array([self.n_bins(j) for j in range(self.n_features)], dtype=np.int32)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        codes = np.empty(X.shape, dtype=np.int32)
        for j in range(self.n_features):
            codes[:, j] = np.searchsorted(self.cuts[j], X[:, j], side="left")
        return codes


def _weighted_quantile_cuts(values: np.ndarray, weights: np.ndarray, n_cuts: int) -> np.ndarray:
    """Cut points at weighted quantiles, placed midway between the boundary
    value and the next distinct value so bin membership is stable."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order]
    cum = np.cumsum(w)
    total = cum[-1]
    cuts = []
    for i in range(1, n_cuts + 1):
        target = total * i / (n_cuts + 1)
        j = int(np.searchsorted(cum, target - 1e-12 * total, side="left"))
        j = min(j, len(v) - 1)
        boundary = v[j]
        nxt = np.searchsorted(v, boundary, side="right")
        if nxt >= len(v):
            continue
        cuts.append((boundary + v[nxt]) / 2.0)
    return np.unique(np.array(cuts, dtype=np.float64))


def quantile_bin(X: np.ndarray, w: np.ndarray, max_bins: int = 256) -> BinSpec:
    """Weighted quantile bins per feature.

    Binary 0/1 features always get the single cut {0.5}; constant features get
    one bin; features with few distinct values split midway between them.
    """
    X = np.asarray(X, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ShapeError(f"expected a (n, p) matrix, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NumericalError("features contain non-finite values")
    if max_bins < 2:
        raise ValueError("max_bins must be at least 2")
    cuts = []
    for j in range(X.shape[1]):
        col = X[:, j]
        uniq = np.unique(col)
        if uniq.size == 1:
            cuts.append(np.empty(0))
        elif np.all(np.isin(uniq, (0.0, 1.0))):
            cuts.append(np.array([0.5]))
        elif uniq.size <= max_bins:
            cuts.append((uniq[:-1] + uniq[1:]) / 2.0)
        else:
            cuts.append(_weighted_quantile_cuts(col, w, max_bins - 1))
    return BinSpec(cuts=cuts)


@dataclass
class PairFunction:
    """Additive score grid over a feature pair's bins."""

    a: int
    b: int
    grid: np.ndarray  # (n_bins_a, n_bins_b)


@dataclass
class EbmModel:
    intercept: float
    bin_spec: BinSpec
    feature_functions: list[np.ndarray]
    pair_functions: list[PairFunction]
    feature_names: list[str]
    config: TrainConfig
    importance: np.ndarray
    loss_curve: np.ndarray = field(default_factory=lambda: np.empty(0))
    rounds_executed: int = 0
    best_round: int = -1

    @property
    def n_features(self) -> int:
        return len(self.feature_functions)

    def predict_logit(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        mat = X[None, :] if single else X
        if mat.ndim != 2 or mat.shape[1] != self.n_features:
            raise ShapeError(f"expected {self.n_features} features, got shape {X.shape}")
        if not np.all(np.isfinite(mat)):
            raise NumericalError("prediction input contains non-finite values")
        codes = self.bin_spec.transform(mat)
        out = np.full(mat.shape[0], self.intercept, dtype=np.float64)
        for j, ff in enumerate(self.feature_functions):
            out += ff[codes[:, j]]
        for pf in self.pair_functions:
            out += pf.grid[codes[:, pf.a], codes[:, pf.b]]
        return out[0] if single else out

    def predict_proba(self, X):
        logit = self.predict_logit(X)
        p = 1.0 / (1.0 + np.exp(-np.asarray(logit)))
        p = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
        return float(p) if np.ndim(logit) == 0 else p

    def to_json(self) -> dict:
        return {
            "intercept": self.intercept,
            "cuts": [c.tolist() for c in self.bin_spec.cuts],
            "feature_functions": [f.tolist() for f in self.feature_functions],
            "pair_functions": [
                {"a": pf.a, "b": pf.b, "grid": pf.grid.tolist()} for pf in self.pair_functions
            ],
            "feature_names": list(self.feature_names),
            "config": self.config.to_json(),
            "importance": self.importance.tolist(),
            "loss_curve": self.loss_curve.tolist(),
            "rounds_executed": self.rounds_executed,
            "best_round": self.best_round,
        }

    @classmethod
    def from_json(cls, d: dict) -> "EbmModel":
        return cls(
            intercept=float(d["intercept"]),
            bin_spec=BinSpec(cuts=[np.array(c) for c in d["cuts"]]),
            feature_functions=[np.array(f) for f in d["feature_functions"]],
            pair_functions=[
                PairFunction(a=int(p["a"]), b=int(p["b"]), grid=np.array(p["grid"]))
                for p in d["pair_functions"]
            ],
            feature_names=list(d["feature_names"]),
            config=TrainConfig.from_json(d["config"]),
            importance=np.array(d["importance"]),
            loss_curve=np.array(d["loss_curve"]),
            rounds_executed=int(d["rounds_executed"]),
            best_round=int(d["best_round"]),
        )


def predict_proba(model: EbmModel, x):
    """Probability that the label is 1 for one row (or a matrix of rows)."""
    return model.predict_proba(x)


def weighted_nll(y, p, w) -> float:
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLIP, 1.0 - PROB_CLIP)
    w = np.asarray(w, dtype=np.float64)
    return float(np.sum(w * -(y * np.log(p) + (1 - y) * np.log1p(-p))) / np.sum(w))


def _validate_training_inputs(X, y, w):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ShapeError(f"X must be (n, p) with p >= 1, got {X.shape}")
    n = X.shape[0]
    if y.shape != (n,) or w.shape != (n,):
        raise ShapeError("X, y and w must agree on the sample count")
    if n < 2:
        raise DegenerateLabels("need at least 2 samples")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(w)):
        raise NumericalError("training inputs contain non-finite values")
    if np.any(w <= 0):
        raise InvalidWeight("sample weights must be positive")
    classes = np.unique(y)
    if not np.all(np.isin(classes, (0.0, 1.0))) or classes.size != 2:
        raise DegenerateLabels(f"labels must contain both classes, got values {classes}")
    return X, y, w


def train_ebm(X, y, w, config: TrainConfig) -> EbmModel:
    """Fit the additive model; deterministic for a fixed config.

    The intercept is the weighted log-odds of the base rate over the full
    input. When early stopping is active a seeded fraction of the input is
    held out: boosting fits the remainder and rolls back to the round with
    the best holdout NLL. Feature and pair functions are finally centered to
    weighted mean zero over the full input, the displaced mass moving into
    the intercept.
    """
    X, y, w = _validate_training_inputs(X, y, w)
    n, p = X.shape

    bins = quantile_bin(X, w, config.max_bins)
    codes = bins.transform(X)
    n_bins = bins.bin_counts()

    base = float(np.sum(w * y) / np.sum(w))
    intercept = float(np.log(base / (1.0 - base)))

    use_val = (
        config.n_rounds > 0
        and config.early_stopping_rounds > 0
        and config.validation_frac > 0.0
        and n >= 20
    )
    if use_val:
        rng = np.random.default_rng([config.seed, 101])
        perm = rng.permutation(n)
        n_val = max(1, int(round(config.validation_frac * n)))
        val_idx = np.sort(perm[:n_val])
        core_idx = np.sort(perm[n_val:])
    else:
        core_idx = np.arange(n)
        val_idx = np.empty(0, dtype=np.int64)

    codes_core = np.ascontiguousarray(codes[core_idx])
    codes_val = np.ascontiguousarray(codes[val_idx]) if use_val else np.empty((0, p), dtype=np.int32)
    y_core, w_core = y[core_idx], w[core_idx]
    y_val, w_val = (y[val_idx], w[val_idx]) if use_val else (np.empty(0), np.empty(0))

    ff_off = np.zeros(p + 1, dtype=np.int64)
    ff_off[1:] = np.cumsum(n_bins)
    ff = np.zeros(int(ff_off[-1]), dtype=np.float64)
    score_core = np.full(len(core_idx), intercept, dtype=np.float64)
    score_val = np.full(len(val_idx), intercept, dtype=np.float64)
    train_curve = np.zeros(max(config.n_rounds, 1), dtype=np.float64)
    val_curve = np.zeros(max(config.n_rounds, 1), dtype=np.float64)

    executed, best_round = 0, -1
    if config.n_rounds > 0:
        executed, best_round = _boost.boost_mains(
            codes_core,
            y_core,
            w_core,
            codes_val,
            y_val,
            w_val,
            n_bins,
            ff,
            ff_off,
            score_core,
            score_val,
            config.learning_rate,
            config.n_leaves,
            config.n_rounds,
            config.early_stopping_rounds if use_val else 0,
            train_curve,
            val_curve,
        )

    pair_functions: list[PairFunction] = []
    if config.n_rounds > 0 and config.n_interactions > 0 and p >= 2:
        pair_a, pair_b = np.triu_indices(p, k=1)
        pair_a = pair_a.astype(np.int32)
        pair_b = pair_b.astype(np.int32)
        gains = np.empty(len(pair_a), dtype=np.float64)
        _boost.rank_pair_gains(codes_core, y_core, w_core, score_core, n_bins, pair_a, pair_b, gains)
        top = np.argsort(-gains, kind="stable")[: min(config.n_interactions, len(pair_a))]
        top = np.sort(top)  # keep lexicographic pair order for the cyclic pass
        sel_a, sel_b = pair_a[top], pair_b[top]
        m = len(top)
        n_cells = (n_bins[sel_a] * n_bins[sel_b]).astype(np.int64)
        pg_off = np.zeros(m + 1, dtype=np.int64)
        pg_off[1:] = np.cumsum(n_cells)
        pg = np.zeros(int(pg_off[-1]), dtype=np.float64)
        cell_core = np.empty((len(core_idx), m), dtype=np.int32)
        cell_val = np.empty((len(val_idx), m), dtype=np.int32)
        for t in range(m):
            cell_core[:, t] = codes_core[:, sel_a[t]] * n_bins[sel_b[t]] + codes_core[:, sel_b[t]]
            if use_val:
                cell_val[:, t] = codes_val[:, sel_a[t]] * n_bins[sel_b[t]] + codes_val[:, sel_b[t]]
        _boost.boost_pairs(
            cell_core,
            y_core,
            w_core,
            cell_val,
            y_val,
            w_val,
            n_cells,
            pg,
            pg_off,
            score_core,
            score_val,
            config.learning_rate,
            config.n_rounds,
            config.early_stopping_rounds if use_val else 0,
        )
        for t in range(m):
            grid = pg[pg_off[t] : pg_off[t + 1]].reshape(n_bins[sel_a[t]], n_bins[sel_b[t]])
            pair_functions.append(PairFunction(a=int(sel_a[t]), b=int(sel_b[t]), grid=grid))

    # center every term to weighted mean zero over the full input
    feature_functions = []
    total_w = float(np.sum(w))
    for j in range(p):
        fj = ff[ff_off[j] : ff_off[j + 1]].copy()
        bw = np.bincount(codes[:, j], weights=w, minlength=n_bins[j])
        mean = float(np.dot(fj, bw) / total_w)
        fj -= mean
        intercept += mean
        feature_functions.append(fj)
    for pf in pair_functions:
        cell_w = np.zeros(pf.grid.shape, dtype=np.float64)
        np.add.at(cell_w, (codes[:, pf.a], codes[:, pf.b]), w)
        mean = float(np.sum(pf.grid * cell_w) / total_w)
        pf.grid -= mean
        intercept += mean

    model = EbmModel(
        intercept=intercept,
        bin_spec=bins,
        feature_functions=feature_functions,
        pair_functions=pair_functions,
        feature_names=[f"x{j}" for j in range(p)],
        config=config,
        importance=np.zeros(p),
        loss_curve=train_curve[:executed].copy(),
        rounds_executed=executed,
        best_round=best_round,
    )
    model.importance = feature_importance(model, X, w)
    return model


def feature_importance(model: EbmModel, X, w) -> np.ndarray:
    """Weighted mean absolute contribution of each feature over the rows of X.

    Pair terms contribute half of their absolute score to each member.
    """
    X = np.asarray(X, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features or X.shape[0] != w.shape[0]:
        raise ShapeError(f"importance input shape {X.shape} does not match the model")
    codes = model.bin_spec.transform(X)
    total_w = float(np.sum(w))
    imp = np.zeros(model.n_features, dtype=np.float64)
    for j, ff in enumerate(model.feature_functions):
        imp[j] = float(np.sum(w * np.abs(ff[codes[:, j]])) / total_w)
    for pf in model.pair_functions:
        share = 0.5 * float(np.sum(w * np.abs(pf.grid[codes[:, pf.a], codes[:, pf.b]])) / total_w)
        imp[pf.a] += share
        imp[pf.b] += share
    return imp


def _stratified_folds(y: np.ndarray, k: int, seed: int) -> list[np.ndarray]:
    """Deal both classes round-robin (continuing across strata) into k folds."""
    rng = np.random.default_rng([seed, 211])
    folds: list[list[int]] = [[] for _ in range(k)]
    cursor = 0
    for cls in (1.0, 0.0):
        idx = np.flatnonzero(y == cls)
        idx = rng.permutation(idx)
        for i in idx:
            folds[cursor % k].append(int(i))
            cursor += 1
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


def cross_validate(
    X,
    y,
    w,
    grid: list[TrainConfig],
    k: int = 10,
    seed: int = 0,
) -> tuple[TrainConfig, np.ndarray, np.ndarray]:
    """Pick the config with the lowest mean validation NLL over k stratified folds.

    Returns (best config, per-config mean loss, per-config per-fold losses);
    the fold-loss matrix has shape (len(grid), k), so len(grid) * k fits run.
    Ties break toward the earlier grid entry.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if not grid:
        raise ValueError("grid must contain at least one config")
    if X.shape[0] < k:
        raise DegenerateFold(f"cannot make {k} folds from {X.shape[0]} samples")
    folds = _stratified_folds(y, k, seed)
    for f, fold in enumerate(folds):
        if len(np.unique(y[fold])) < 2:
            raise DegenerateFold(f"fold {f} does not contain both classes")
    fold_losses = np.zeros((len(grid), k), dtype=np.float64)
    all_idx = np.arange(X.shape[0])
    for g, config in enumerate(grid):
        for f, fold in enumerate(folds):
            train_idx = np.setdiff1d(all_idx, fold, assume_unique=False)
            model = train_ebm(X[train_idx], y[train_idx], w[train_idx], config)
            p = model.predict_proba(X[fold])
            fold_losses[g, f] = weighted_nll(y[fold], p, w[fold])
    mean_losses = fold_losses.mean(axis=1)
    best = int(np.argmin(mean_losses))
    return grid[best], mean_losses, fold_losses


def paper_default_grid(seed: int = 0, **overrides) -> list[TrainConfig]:
    """The full 27-point hyperparameter grid used by cross-validation."""
    grid = []
    for lr in (0.005, 0.0075, 0.01):
        for leaves in (10, 31, 50):
            for inter in (5, 10, 20):
                grid.append(
                    replace(
                        TrainConfig(
                            learning_rate=lr,
                            n_leaves=leaves,
                            n_interactions=inter,
                            seed=seed,
                        ),
                        **overrides,
                    )
                )
    return grid
