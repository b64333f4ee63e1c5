"""Household survey data structures, ingestion, poverty indicator and stratified split."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    DuplicateId,
    EmptyFeatureSet,
    EmptyGroup,
    InvalidExpenditure,
    InvalidWeight,
    MissingQuestion,
    StratificationFailure,
)

META_COLUMNS = ("household_id", "cluster_id", "weight", "hce", "urban")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class QuestionMap:
    """Maps encoded variable names to the parent survey question they came from."""

    entries: dict[str, str]
    question_ids: list[str]

    @classmethod
    def from_entries(cls, entries: dict[str, str]) -> "QuestionMap":
        seen: list[str] = []
        for qid in entries.values():
            if qid not in seen:
                seen.append(qid)
        return cls(entries=dict(entries), question_ids=seen)

    def question_of(self, variable: str) -> str:
        try:
            return self.entries[variable]
        except KeyError:
            raise MissingQuestion(f"variable {variable!r} has no question mapping") from None

    def variables_of(self, question_id: str) -> list[str]:
        return [v for v, q in self.entries.items() if q == question_id]

    @classmethod
    def from_csv(cls, path) -> "QuestionMap":
        frame = pd.read_csv(path, dtype=str)
        expected = ["variable", "question_id"]
        if list(frame.columns) != expected:
            raise MissingQuestion(f"question map header must be {expected}, got {list(frame.columns)}")
        return cls.from_entries(dict(zip(frame["variable"], frame["question_id"])))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("variable,question_id\n")
            for var, qid in self.entries.items():
                fh.write(f"{var},{qid}\n")


@dataclass
class Household:
    """One surveyed household (a read-only view into a SurveyDataset row)."""

    household_id: str
    cluster_id: str
    weight: float
    hce: float
    urban: bool
    responses: np.ndarray


@dataclass
class SurveyDataset:
    """Household-by-variable matrix with weights, clusters, expenditures and labels."""

    household_ids: list[str]
    cluster_ids: list[str]
    weights: np.ndarray
    hce: np.ndarray
    urban: np.ndarray
    X: np.ndarray
    variable_names: list[str]
    question_map: QuestionMap
    poverty_line: float
    labels: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        n = len(self.household_ids)
        if len(set(self.household_ids)) != n:
            dupes = sorted({h for h in self.household_ids if self.household_ids.count(h) > 1})
            raise DuplicateId(f"duplicate household_id values: {dupes[:5]}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.hce = np.asarray(self.hce, dtype=np.float64)
        self.urban = np.asarray(self.urban, dtype=bool)
        self.X = np.asarray(self.X, dtype=np.float64)
        if np.any(self.weights <= 0):
            raise InvalidWeight("sample weights must be positive")
        if self.X.shape != (n, len(self.variable_names)):
            raise EmptyFeatureSet(
                f"variable matrix shape {self.X.shape} does not match "
                f"{n} households x {len(self.variable_names)} variables"
            )
        for name in self.variable_names:
            self.question_map.question_of(name)
        if self.labels is None:
            self.labels = assign_poverty_indicator(self.hce, self.poverty_line)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def n_households(self) -> int:
        return len(self.household_ids)

    @property
    def n_variables(self) -> int:
        return len(self.variable_names)

    def household(self, i: int) -> Household:
        return Household(
            household_id=self.household_ids[i],
            cluster_id=self.cluster_ids[i],
            weight=float(self.weights[i]),
            hce=float(self.hce[i]),
            urban=bool(self.urban[i]),
            responses=self.X[i],
        )

    @property
    def households(self) -> list[Household]:
        return [self.household(i) for i in range(self.n_households)]

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.variable_names.index(name)]

    def national_rate(self) -> float:
        return poverty_rate(self.labels, self.weights)

    def subset(self, indices) -> "SurveyDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return SurveyDataset(
            household_ids=[self.household_ids[i] for i in idx],
            cluster_ids=[self.cluster_ids[i] for i in idx],
            weights=self.weights[idx],
            hce=self.hce[idx],
            urban=self.urban[idx],
            X=self.X[idx],
            variable_names=list(self.variable_names),
            question_map=self.question_map,
            poverty_line=self.poverty_line,
            labels=self.labels[idx],
        )

    def design_matrix(self, variables: list[str]) -> np.ndarray:
        cols = [self.variable_names.index(v) for v in variables]
        return self.X[:, cols]

    def to_csv(self, survey_path, qmap_path=None) -> None:
        """Write the canonical survey CSV (and optionally the question map CSV)."""
        with open(survey_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(META_COLUMNS + tuple(self.variable_names)) + "\n")
            for i in range(self.n_households):
                row = [
                    self.household_ids[i],
                    self.cluster_ids[i],
                    repr(float(self.weights[i])),
                    repr(float(self.hce[i])),
                    "1" if self.urban[i] else "0",
                ]
                row.extend(repr(float(v)) for v in self.X[i])
                fh.write(",".join(row) + "\n")
        if qmap_path is not None:
            self.question_map.to_csv(qmap_path)


@dataclass
class SplitResult:
    """Outcome of the stratified train/test split."""

    train_ids: list[str]
    test_ids: list[str]
    train_rate: float
    test_rate: float
    national_rate: float

    def to_dict(self) -> dict:
        return {
            "train_ids": self.train_ids,
            "test_ids": self.test_ids,
            "train_rate": self.train_rate,
            "test_rate": self.test_rate,
            "national_rate": self.national_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitResult":
        return cls(
            train_ids=list(d["train_ids"]),
            test_ids=list(d["test_ids"]),
            train_rate=float(d["train_rate"]),
            test_rate=float(d["test_rate"]),
            national_rate=float(d["national_rate"]),
        )


def assign_poverty_indicator(hce, pl: float):
    """Binary poverty indicator: poor (1) iff consumption expenditure <= poverty line."""
    if pl <= 0:
        raise InvalidExpenditure("poverty line must be positive")
    arr = np.asarray(hce, dtype=np.float64)
    if np.any(arr < 0):
        raise InvalidExpenditure("consumption expenditure cannot be negative")
    out = (arr <= pl).astype(np.int64)
    if np.isscalar(hce) or arr.ndim == 0:
        return int(out)
    return out


def poverty_rate(y, w) -> float:
    """Weighted poverty rate: sum(w*y) / sum(w)."""
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if y.size == 0:
        raise EmptyGroup("cannot compute a poverty rate over an empty group")
    if y.shape != w.shape:
        raise InvalidWeight(f"y and w lengths differ: {y.shape} vs {w.shape}")
    if np.any(w <= 0):
        raise InvalidWeight("weights must be positive")
    return float(np.sum(w * y) / np.sum(w))


def weighted_median(values, weights) -> float:
    """Weighted median with the midpoint convention at exact half-mass boundaries."""
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if v.size == 0:
        raise EmptyGroup("weighted median of an empty sample")
    if np.any(w <= 0):
        raise InvalidWeight("weights must be positive")
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    cum = np.cumsum(w)
    half = cum[-1] / 2.0
    lo = v[np.searchsorted(cum, half, side="left")]
    hi = v[np.searchsorted(cum, half, side="right")]
    return float((lo + hi) / 2.0)


def load_survey(survey_csv, qmap_csv, poverty_line: float) -> SurveyDataset:
    """Load the canonical encoded survey CSV plus its question map.

    The survey file starts with the columns household_id, cluster_id, weight,
    hce, urban; every remaining column is an encoded variable and must appear
    in the question map.
    """
    frame = pd.read_csv(survey_csv, dtype={"household_id": str, "cluster_id": str})
    for col in META_COLUMNS:
        if col not in frame.columns:
            raise EmptyFeatureSet(f"survey file is missing required column {col!r}")
    qmap = QuestionMap.from_csv(qmap_csv)
    variable_names = [c for c in frame.columns if c not in META_COLUMNS]
    for name in variable_names:
        if name not in qmap.entries:
            raise MissingQuestion(f"variable {name!r} is not covered by the question map")
    ids = frame["household_id"].tolist()
    if len(set(ids)) != len(ids):
        dupes = frame["household_id"][frame["household_id"].duplicated()].tolist()
        raise DuplicateId(f"duplicate household_id values: {sorted(set(dupes))[:5]}")
    weights = frame["weight"].to_numpy(dtype=np.float64)
    if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
        raise InvalidWeight("all sample weights must be finite and positive")
    X = frame[variable_names].to_numpy(dtype=np.float64) if variable_names else np.zeros((len(ids), 0))
    return SurveyDataset(
        household_ids=ids,
        cluster_ids=frame["cluster_id"].tolist(),
        weights=weights,
        hce=frame["hce"].to_numpy(dtype=np.float64),
        urban=frame["urban"].to_numpy(dtype=np.float64) != 0,
        X=X,
        variable_names=variable_names,
        question_map=qmap,
        poverty_line=float(poverty_line),
    )


def encode_and_filter(
    raw: pd.DataFrame,
    categorical: list[str],
    exclusions: list[str] = (),
    max_missing_frac: float = 0.2,
    question_ids: dict[str, str] | None = None,
) -> tuple[pd.DataFrame, QuestionMap]:
    """Encode a raw survey table into binary/numeric variable columns.

    Categorical columns expand to one indicator column per level, named
    ``<var>=<level>``, all mapped to the source column's question. Columns in
    ``exclusions`` or with a missing fraction above ``max_missing_frac`` are
    dropped; remaining missing numeric entries are imputed to the weighted
    column median. Returns the encoded table (meta columns preserved) and the
    question map covering the encoded variables.
    """
    question_ids = question_ids or {}
    var_cols = [c for c in raw.columns if c not in META_COLUMNS]
    weights = raw["weight"].to_numpy(dtype=np.float64)

    kept: list[str] = []
    for col in var_cols:
        if col in exclusions:
            continue
        if raw[col].isna().mean() > max_missing_frac:
            continue
        kept.append(col)
    if not kept:
        raise EmptyFeatureSet("no variable columns survive exclusion and missingness filtering")

    out = raw[list(META_COLUMNS)].copy()
    entries: dict[str, str] = {}
    for col in kept:
        qid = question_ids.get(col, col)
        if col in categorical:
            observed = raw[col].notna()
            levels = sorted(raw.loc[observed, col].astype(str).unique())
            for level in levels:
                name = f"{col}={level}"
                indicator = np.zeros(len(raw))
                indicator[observed.to_numpy()] = (
                    raw.loc[observed, col].astype(str) == level
                ).to_numpy(dtype=np.float64)
                out[name] = indicator
                entries[name] = qid
        else:
            values = raw[col].to_numpy(dtype=np.float64)
            missing = ~np.isfinite(values)
            if missing.any():
                fill = weighted_median(values[~missing], weights[~missing])
                values = values.copy()
                values[missing] = fill
            out[col] = values
            entries[col] = qid
    return out, QuestionMap.from_entries(entries)


def stratified_split(
    dataset: SurveyDataset,
    train_frac: float = 0.68,
    seed: int = 0,
    tolerance: float = 0.005,
    max_attempts: int = 200,
) -> SplitResult:
    """Randomly split households into train/test, stratified on the poverty label.

    Train size is round-half-up of train_frac * N with proportional allocation
    inside the poor / non-poor strata. Re-shuffles (seeded, deterministic) until
    the weighted poverty rate of both sets is within ``tolerance`` of the
    national weighted rate.
    """
    n = dataset.n_households
    y = dataset.labels
    w = dataset.weights
    national = poverty_rate(y, w)

    poor_idx = np.flatnonzero(y == 1)
    rich_idx = np.flatnonzero(y == 0)
    if len(poor_idx) < 10 or len(rich_idx) < 10:
        raise StratificationFailure(
            f"need at least 10 households per class, got {len(poor_idx)} poor / {len(rich_idx)} non-poor",
            national_rate=national,
        )

    n_train = round_half_up(train_frac * n)
    n_train_poor = round_half_up(train_frac * len(poor_idx))
    n_train_poor = min(max(n_train_poor, n_train - len(rich_idx)), len(poor_idx), n_train)
    n_train_rich = n_train - n_train_poor

    rng = np.random.default_rng(seed)
    best: tuple[float, np.ndarray, np.ndarray] | None = None
    for _ in range(max_attempts):
        poor_perm = rng.permutation(poor_idx)
        rich_perm = rng.permutation(rich_idx)
        train_idx = np.sort(np.concatenate([poor_perm[:n_train_poor], rich_perm[:n_train_rich]]))
        test_idx = np.sort(np.concatenate([poor_perm[n_train_poor:], rich_perm[n_train_rich:]]))
        train_rate = poverty_rate(y[train_idx], w[train_idx])
        test_rate = poverty_rate(y[test_idx], w[test_idx])
        dev = max(abs(train_rate - national), abs(test_rate - national))
        if best is None or dev < best[0]:
            best = (dev, train_idx, test_idx)
        if dev <= tolerance:
            break
    else:
        dev, train_idx, test_idx = best
        train_rate = poverty_rate(y[train_idx], w[train_idx])
        test_rate = poverty_rate(y[test_idx], w[test_idx])
        raise StratificationFailure(
            f"could not reach rate tolerance {tolerance} in {max_attempts} attempts "
            f"(best deviation {dev:.4f})",
            train_rate=train_rate,
            test_rate=test_rate,
            national_rate=national,
        )

    return SplitResult(
        train_ids=[dataset.household_ids[i] for i in train_idx],
        test_ids=[dataset.household_ids[i] for i in test_idx],
        train_rate=train_rate,
        test_rate=test_rate,
        national_rate=national,
    )


def split_indices(dataset: SurveyDataset, split: SplitResult) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of the train/test households in dataset order."""
    pos = {hid: i for i, hid in enumerate(dataset.household_ids)}
    train = np.array([pos[h] for h in split.train_ids], dtype=np.int64)
    test = np.array([pos[h] for h in split.test_ids], dtype=np.int64)
    return train, test
