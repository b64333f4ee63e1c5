import io

import numpy as np
import pandas as pd
import pytest

from povrate.errors import (
    DuplicateId,
    EmptyFeatureSet,
    EmptyGroup,
    InvalidExpenditure,
    InvalidWeight,
    MissingQuestion,
)
from povrate.survey import (
    QuestionMap,
    assign_poverty_indicator,
    encode_and_filter,
    load_survey,
    poverty_rate,
    round_half_up,
    split_indices,
    stratified_split,
    weighted_median,
)


def brute_force_weighted_median(values, weights):
    # Independent oracle: scan candidate medians m and pick the midpoint of the
    # interval where mass below and above are both <= half the total.
    pairs = sorted(zip(values, weights))
    total = sum(w for _, w in pairs)
    lo = None
    hi = None
    for v, _ in pairs:
        below = sum(w for u, w in pairs if u < v)
        above = sum(w for u, w in pairs if u > v)
        if below <= total / 2 and above <= total / 2:
            if lo is None:
                lo = v
            hi = v
    return (lo + hi) / 2


def make_dataset(n=40, seed=0, n_vars=3, rate=0.4):
    rng = np.random.default_rng(seed)
    qmap = QuestionMap.from_entries({f"v{j}": f"q{j // 2}" for j in range(n_vars)})
    hce = rng.uniform(0.5, 6.0, size=n)
    # force an approximate target rate against pl=3.0
    poor = rng.random(n) < rate
    hce[poor] = rng.uniform(0.5, 3.0, size=poor.sum())
    hce[~poor] = rng.uniform(3.01, 6.0, size=(~poor).sum())
    from povrate.survey import SurveyDataset

    return SurveyDataset(
        household_ids=[f"H{i}" for i in range(n)],
        cluster_ids=[f"C{i % 5}" for i in range(n)],
        weights=rng.uniform(0.5, 2.0, size=n),
        hce=hce,
        urban=rng.random(n) < 0.3,
        X=rng.integers(0, 2, size=(n, n_vars)).astype(float),
        variable_names=[f"v{j}" for j in range(n_vars)],
        question_map=qmap,
        poverty_line=3.0,
    )


class TestPovertyIndicator:
    def test_boundary_is_poor(self):
        assert assign_poverty_indicator(3.0, 3.0) == 1

    def test_zero_expenditure_is_poor(self):
        assert assign_poverty_indicator(0.0, 3.0) == 1

    def test_above_line_is_non_poor(self):
        assert assign_poverty_indicator(3.01, 3.0) == 0

    def test_negative_expenditure_rejected(self):
        with pytest.raises(InvalidExpenditure):
            assign_poverty_indicator(-0.5, 3.0)

    def test_monotone_non_increasing_in_hce(self):
        grid = np.linspace(0, 10, 101)
        out = assign_poverty_indicator(grid, 3.0)
        assert np.all(np.diff(out) <= 0)


class TestPovertyRate:
    def test_all_poor(self):
        assert poverty_rate([1, 1, 1], [1, 2, 3]) == 1.0

    def test_symmetric(self):
        assert poverty_rate([1, 0], [5, 5]) == 0.5

    def test_weighted_example(self):
        # direct evaluation of the weighted average: (2*1 + 1*0 + 1*1) / 4
        assert poverty_rate([1, 0, 1], [2, 1, 1]) == pytest.approx(0.75, abs=1e-15)

    def test_empty_group(self):
        with pytest.raises(EmptyGroup):
            poverty_rate([], [])

    def test_nonpositive_weight(self):
        with pytest.raises(InvalidWeight):
            poverty_rate([1, 0], [1, 0])

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        y = rng.integers(0, 2, size=50)
        w = rng.uniform(0.1, 4.0, size=50)
        for c in (1e-6, 0.5, 3.0, 1e6):
            assert poverty_rate(y, c * w) == pytest.approx(poverty_rate(y, w), abs=1e-12)

    def test_bounded_by_y(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            y = rng.integers(0, 2, size=30)
            w = rng.uniform(0.1, 2.0, size=30)
            r = poverty_rate(y, w)
            assert y.min() <= r <= y.max()


class TestWeightedMedian:
    def test_toy_missing_example(self):
        # column [1, missing, 3] with unit weights imputes to 2.0
        assert weighted_median([1.0, 3.0], [1.0, 1.0]) == 2.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = rng.integers(1, 12)
            v = rng.integers(0, 10, size=n).astype(float)
            w = rng.uniform(0.2, 3.0, size=n)
            assert weighted_median(v, w) == pytest.approx(
                brute_force_weighted_median(v.tolist(), w.tolist()), abs=1e-12
            )


SURVEY_CSV = """household_id,cluster_id,weight,hce,urban,q1_a,q2_b
H1,C1,1.0,2.5,0,1,0
H2,C1,2.0,3.5,1,0,1
H3,C2,1.5,1.0,0,1,1
"""

QMAP_CSV = """variable,question_id
q1_a,q1
q2_b,q2
"""


class TestLoadSurvey:
    def test_three_row_fixture(self, tmp_path):
        sp = tmp_path / "survey.csv"
        qp = tmp_path / "qmap.csv"
        sp.write_text(SURVEY_CSV)
        qp.write_text(QMAP_CSV)
        ds = load_survey(sp, qp, poverty_line=3.0)
        assert ds.n_households == 3
        assert ds.n_variables == 2
        assert ds.variable_names == ["q1_a", "q2_b"]
        assert ds.labels.tolist() == [1, 0, 1]
        assert ds.household(1).urban is True

    def test_duplicate_household_id(self, tmp_path):
        sp = tmp_path / "survey.csv"
        qp = tmp_path / "qmap.csv"
        sp.write_text(SURVEY_CSV.replace("H2", "H1"))
        qp.write_text(QMAP_CSV)
        with pytest.raises(DuplicateId):
            load_survey(sp, qp, poverty_line=3.0)

    def test_unmapped_variable(self, tmp_path):
        sp = tmp_path / "survey.csv"
        qp = tmp_path / "qmap.csv"
        sp.write_text(SURVEY_CSV.replace("q2_b", "q5_x"))
        qp.write_text(QMAP_CSV)
        with pytest.raises(MissingQuestion):
            load_survey(sp, qp, poverty_line=3.0)

    def test_nonpositive_weight(self, tmp_path):
        sp = tmp_path / "survey.csv"
        qp = tmp_path / "qmap.csv"
        sp.write_text(SURVEY_CSV.replace("H2,C1,2.0", "H2,C1,0.0"))
        qp.write_text(QMAP_CSV)
        with pytest.raises(InvalidWeight):
            load_survey(sp, qp, poverty_line=3.0)

    def test_csv_round_trip(self, tmp_path):
        ds = make_dataset(n=25, seed=11)
        sp = tmp_path / "out.csv"
        qp = tmp_path / "qm.csv"
        ds.to_csv(sp, qp)
        back = load_survey(sp, qp, poverty_line=3.0)
        assert back.household_ids == ds.household_ids
        np.testing.assert_array_equal(back.labels, ds.labels)
        np.testing.assert_allclose(back.X, ds.X, atol=0)
        np.testing.assert_allclose(back.weights, ds.weights, atol=0)


class TestEncodeAndFilter:
    def raw(self):
        return pd.DataFrame(
            {
                "household_id": ["H1", "H2", "H3"],
                "cluster_id": ["C1", "C1", "C2"],
                "weight": [1.0, 1.0, 1.0],
                "hce": [2.0, 4.0, 1.0],
                "urban": [0, 1, 0],
                "roof": ["metal", "thatch", "metal"],
                "rooms": [1.0, np.nan, 3.0],
                "season_food": [1.0, 2.0, 3.0],
            }
        )

    def test_one_hot_encoding(self):
        frame, qmap = encode_and_filter(self.raw(), categorical=["roof"])
        assert "roof=metal" in frame.columns and "roof=thatch" in frame.columns
        assert qmap.entries["roof=metal"] == "roof"
        assert qmap.entries["roof=thatch"] == "roof"
        np.testing.assert_array_equal(frame["roof=metal"], [1.0, 0.0, 1.0])
        np.testing.assert_array_equal(frame["roof=thatch"], [0.0, 1.0, 0.0])

    def test_indicators_sum_to_one_when_observed(self):
        raw = pd.DataFrame(
            {
                "household_id": ["H1", "H2", "H3", "H4"],
                "cluster_id": ["C"] * 4,
                "weight": [1.0] * 4,
                "hce": [1.0] * 4,
                "urban": [0] * 4,
                "roof": ["metal", np.nan, "thatch", "metal"],
            }
        )
        frame, _ = encode_and_filter(raw, categorical=["roof"], max_missing_frac=0.5)
        total = frame["roof=metal"] + frame["roof=thatch"]
        assert total.tolist() == [1.0, 0.0, 1.0, 1.0]

    def test_missingness_threshold_drops_column(self):
        raw = self.raw()
        raw["sparse"] = [np.nan, np.nan, 1.0]  # 67% missing
        frame, qmap = encode_and_filter(raw, categorical=["roof"], max_missing_frac=0.2)
        assert "sparse" not in frame.columns
        assert "sparse" not in qmap.entries

    def test_exclusions_dropped(self):
        frame, qmap = encode_and_filter(self.raw(), categorical=["roof"], exclusions=["season_food"])
        assert "season_food" not in frame.columns

    def test_weighted_median_imputation(self):
        raw = pd.DataFrame(
            {
                "household_id": ["H1", "H2", "H3"],
                "cluster_id": ["C", "C", "C"],
                "weight": [1.0, 1.0, 1.0],
                "hce": [1.0, 1.0, 1.0],
                "urban": [0, 0, 0],
                "rooms": [1.0, np.nan, 3.0],
            }
        )
        frame, _ = encode_and_filter(raw, categorical=[], max_missing_frac=0.5)
        assert frame["rooms"].tolist() == [1.0, 2.0, 3.0]

    def test_all_dropped_raises(self):
        raw = self.raw()[["household_id", "cluster_id", "weight", "hce", "urban", "season_food"]]
        with pytest.raises(EmptyFeatureSet):
            encode_and_filter(raw, categorical=[], exclusions=["season_food"])

    def test_question_ids_inherited(self):
        frame, qmap = encode_and_filter(
            self.raw(),
            categorical=["roof"],
            max_missing_frac=0.5,
            question_ids={"roof": "q_roof", "rooms": "q_rooms"},
        )
        assert qmap.entries["roof=metal"] == "q_roof"
        assert qmap.entries["rooms"] == "q_rooms"


class TestStratifiedSplit:
    def test_paper_scale_train_size(self):
        # 0.68 * 4954 = 3368.72 rounds half-up to 3369
        assert round_half_up(0.68 * 4954) == 3369

    def test_train_size_and_partition(self):
        ds = make_dataset(n=100, seed=1)
        res = stratified_split(ds, train_frac=0.68, seed=5)
        assert len(res.train_ids) == round_half_up(0.68 * 100)
        assert set(res.train_ids) | set(res.test_ids) == set(ds.household_ids)
        assert set(res.train_ids) & set(res.test_ids) == set()

    def test_equal_weights_even_rate(self):
        from povrate.survey import SurveyDataset

        n = 100
        qmap = QuestionMap.from_entries({"v0": "q0"})
        hce = np.array([1.0, 5.0] * 50)
        ds = SurveyDataset(
            household_ids=[f"H{i}" for i in range(n)],
            cluster_ids=["C0"] * n,
            weights=np.ones(n),
            hce=hce,
            urban=np.zeros(n, dtype=bool),
            X=np.zeros((n, 1)),
            variable_names=["v0"],
            question_map=qmap,
            poverty_line=3.0,
        )
        res = stratified_split(ds, train_frac=0.5, seed=0)
        assert res.train_rate == pytest.approx(0.5, abs=1e-12)
        assert res.test_rate == pytest.approx(0.5, abs=1e-12)

    def test_deterministic_for_seed(self):
        ds = make_dataset(n=120, seed=2)
        a = stratified_split(ds, seed=9)
        b = stratified_split(ds, seed=9)
        assert a.train_ids == b.train_ids
        assert a.test_ids == b.test_ids
        assert a.train_rate == b.train_rate

    def test_rate_tolerance_over_100_seeds(self):
        for seed in range(100):
            ds = make_dataset(n=300, seed=seed, rate=0.25 + 0.3 * (seed % 3) / 2)
            res = stratified_split(ds, train_frac=0.68, seed=seed)
            assert abs(res.train_rate - res.national_rate) <= 0.005
            assert abs(res.test_rate - res.national_rate) <= 0.005
            assert len(res.train_ids) == round_half_up(0.68 * ds.n_households)

    def test_split_indices_align(self):
        ds = make_dataset(n=60, seed=3)
        res = stratified_split(ds, seed=4)
        tr, te = split_indices(ds, res)
        assert [ds.household_ids[i] for i in tr] == res.train_ids
        assert [ds.household_ids[i] for i in te] == res.test_ids
