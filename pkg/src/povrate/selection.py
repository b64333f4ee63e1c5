"""Variable ranking and question-budgeted selection for the small survey.

Variables are ranked by trained model importance, with or without image
features joining the training design. The ranked variables map onto whole
survey questions: walking the ranking, each new parent question is collected
until the budget is reached, and every variable of a collected question is
pulled in with it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ebm import EbmModel, TrainConfig, cross_validate, train_ebm
from .errors import EmptyFeatureSet, MissingClusterFeatures
from .features import FeatureMatrix
from .survey import QuestionMap, SurveyDataset

METHOD_STANDARD = "standard"
METHOD_SURVEY = "survey_guided"
METHOD_SURVEY_IMAGE = "survey_image_guided"


@dataclass
class SelectionConfig:
    n_questions: int = 10
    grid: list[TrainConfig] = field(default_factory=lambda: [TrainConfig()])
    cv_folds: int = 10
    seed: int = 0

    def single_config(self) -> TrainConfig | None:
        return self.grid[0] if len(self.grid) == 1 else None


@dataclass
class SelectionReport:
    method: str
    ranked_variables: list[tuple[str, float]]
    selected_questions: list[str]
    selected_variables: list[str]
    excluded_variables: list[str]
    shortfall: bool
    train_config: TrainConfig | None = None

    def rank_of(self, variable: str) -> int | None:
        for i, (name, _) in enumerate(self.ranked_variables):
            if name == variable:
                return i
        return None

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "ranked_variables": [[n, s] for n, s in self.ranked_variables],
            "selected_questions": list(self.selected_questions),
            "selected_variables": list(self.selected_variables),
            "excluded_variables": list(self.excluded_variables),
            "shortfall": self.shortfall,
            "train_config": self.train_config.to_json() if self.train_config else None,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SelectionReport":
        return cls(
            method=d["method"],
            ranked_variables=[(n, float(s)) for n, s in d["ranked_variables"]],
            selected_questions=list(d["selected_questions"]),
            selected_variables=list(d["selected_variables"]),
            excluded_variables=list(d["excluded_variables"]),
            shortfall=bool(d["shortfall"]),
            train_config=TrainConfig.from_json(d["train_config"]) if d["train_config"] else None,
        )


def broadcast_features(dataset: SurveyDataset, features: FeatureMatrix) -> tuple[np.ndarray, list[str]]:
    """Per-household image feature rows (cluster features copied to members)."""
    row_of = {cid: i for i, cid in enumerate(features.cluster_ids)}
    rows = np.empty(dataset.n_households, dtype=np.int64)
    for i, cid in enumerate(dataset.cluster_ids):
        if cid not in row_of:
            raise MissingClusterFeatures(cid)
        rows[i] = row_of[cid]
    names = [f"f{j:03d}" for j in range(features.k)]
    return features.values[rows], names


def rank_variables(model: EbmModel, dataset: SurveyDataset) -> list[tuple[str, float]]:
    """Survey variables ordered by descending model importance.

    Image-feature columns in the model never appear; ties keep the original
    variable order.
    """
    survey_names = set(dataset.variable_names)
    entries = [
        (name, float(score))
        for name, score in zip(model.feature_names, model.importance)
        if name in survey_names
    ]
    if not entries:
        raise EmptyFeatureSet("model contains no survey variables to rank")
    return sorted(entries, key=lambda e: -e[1])  # stable: ties keep design order


def variables_to_questions(
    ranked: list[tuple[str, float]],
    qmap: QuestionMap,
    n_questions: int = 10,
) -> tuple[list[str], list[str], bool]:
    """Collect parent questions along the ranking until the budget is filled.

    Returns (questions, all variables of those questions, shortfall flag).
    """
    if not ranked:
        raise EmptyFeatureSet("cannot select questions from an empty ranking")
    questions: list[str] = []
    for name, _ in ranked:
        qid = qmap.question_of(name)
        if qid not in questions:
            questions.append(qid)
            if len(questions) >= n_questions:
                break
    variables: list[str] = []
    for qid in questions:
        variables.extend(qmap.variables_of(qid))
    return questions, variables, len(questions) < n_questions


def _fit_selection_model(X, y, w, names, config: SelectionConfig) -> tuple[EbmModel, TrainConfig]:
    chosen = config.single_config()
    if chosen is None:
        chosen, _, _ = cross_validate(X, y, w, config.grid, k=config.cv_folds, seed=config.seed)
    model = train_ebm(X, y, w, chosen)
    model.feature_names = list(names)
    return model, chosen


def select_survey_guided(dataset: SurveyDataset, config: SelectionConfig) -> SelectionReport:
    """Rank all survey variables by a model trained on the survey alone."""
    if dataset.n_variables == 0:
        raise EmptyFeatureSet("dataset has no survey variables")
    model, chosen = _fit_selection_model(
        dataset.X, dataset.labels.astype(np.float64), dataset.weights, dataset.variable_names, config
    )
    ranked = rank_variables(model, dataset)
    questions, variables, shortfall = variables_to_questions(
        ranked, dataset.question_map, config.n_questions
    )
    return SelectionReport(
        method=METHOD_SURVEY,
        ranked_variables=ranked,
        selected_questions=questions,
        selected_variables=variables,
        excluded_variables=[],
        shortfall=shortfall,
        train_config=chosen,
    )


def select_survey_image_guided(
    dataset: SurveyDataset,
    features: FeatureMatrix,
    config: SelectionConfig,
    exclude: list[str] = (),
) -> SelectionReport:
    """Rank survey variables by a model trained on survey plus image features.

    ``exclude`` drops variables (e.g. a regional indicator already visible to
    the imagery) before training; only survey variables are ranked.
    """
    kept = [v for v in dataset.variable_names if v not in set(exclude)]
    if not kept:
        raise EmptyFeatureSet("every survey variable was excluded")
    img, img_names = broadcast_features(dataset, features)
    X = np.hstack([dataset.design_matrix(kept), img])
    model, chosen = _fit_selection_model(
        X, dataset.labels.astype(np.float64), dataset.weights, kept + img_names, config
    )
    ranked = rank_variables(model, dataset)
    questions, variables, shortfall = variables_to_questions(
        ranked, dataset.question_map, config.n_questions
    )
    return SelectionReport(
        method=METHOD_SURVEY_IMAGE,
        ranked_variables=ranked,
        selected_questions=questions,
        selected_variables=variables,
        excluded_variables=sorted(set(exclude) & set(dataset.variable_names)),
        shortfall=shortfall,
        train_config=chosen,
    )


def standard_selection(dataset: SurveyDataset, questions: list[str]) -> SelectionReport:
    """Wrap a user-supplied standard question list in a SelectionReport."""
    variables: list[str] = []
    for qid in questions:
        vs = dataset.question_map.variables_of(qid)
        if not vs:
            raise EmptyFeatureSet(f"standard question {qid!r} has no variables in this dataset")
        variables.extend(vs)
    return SelectionReport(
        method=METHOD_STANDARD,
        ranked_variables=[],
        selected_questions=list(questions),
        selected_variables=variables,
        excluded_variables=[],
        shortfall=False,
        train_config=None,
    )
