import numpy as np
import pytest

from influx.core import consensus_step
from influx.datastore import GameRecord
from influx.errors import DegenerateGroup, InsufficientData, InsufficientGames, MissingModel
from influx.estimation import MixtureModel
from influx.prediction import (
    PredictorSpec,
    bootstrap_ci,
    crossvalidate,
    game_features,
    null_closed_form,
    predict,
    split_halves,
    write_figure_files,
)
from influx.simulator import PopulationSpec, generate_population

POINT = MixtureModel.point((0.3, 0.2))


@pytest.fixture(scope="module")
def exact_cohort():
    data, truth = generate_population(PopulationSpec(n_participants=24, n_games=20, noise_std=0, mixture=POINT))
    return data


@pytest.fixture(scope="module")
def noisy_cohort():
    mix = MixtureModel.from_components([[0.1, 0.05], [0.6, 0.4]], 0.05)
    data, _ = generate_population(PopulationSpec(n_participants=40, n_games=20, noise_std=5, mixture=mix, initial_spread=15, seed=1))
    return data


def _game():
    j = np.array([[10.0, np.nan, np.nan], [30, 31, 32], [50, 45, 44], [70, 60, 55]])
    return GameRecord("g", "s", "gauging", 40, ("a", "b", "c", "d"), j)


def test_spec_parsing_and_validation():
    assert PredictorSpec.parse("typical_3").K == 3
    assert PredictorSpec.parse("individual_alpha").name == "individual_alpha"
    for bad in (dict(method="oracle"), dict(method="typical"), dict(others_mode="psychic"), dict(target_round=4)):
        with pytest.raises(ValueError):
            PredictorSpec(**bad)


def test_null_prediction_is_round1():
    g = _game()
    for r in (2, 3):
        assert predict(g, "a", PredictorSpec("null", target_round=r)) == 10


def test_round2_prediction_is_one_consensus_step():
    g = _game()
    pred = predict(g, "a", PredictorSpec("individual_alpha", target_round=2), couple=(0.4, 0.1))
    assert pred == pytest.approx(consensus_step(g.judgments[:, 0], 0.4)[0])


def test_round3_prediction_modes():
    g = _game()
    x1 = g.judgments[:, 0]
    a, pop = (0.4, 0.1), (0.25, 0.15)
    # simulated_typical: others advance with the population couple
    alphas = np.array([a[0], pop[0], pop[0], pop[0]])
    x2 = consensus_step(x1, alphas)
    expected = x2[0] + a[1] * (x2.mean() - x2[0])
    got = predict(g, "a", PredictorSpec("individual_alpha"), couple=a, population=pop)
    assert got == pytest.approx(expected, abs=1e-12)
    # observed: the others' recorded round-2 judgments
    x2o = np.array([x2[0], 31, 45, 60])
    expected_o = x2[0] + a[1] * (x2o.mean() - x2[0])
    got_o = predict(g, "a", PredictorSpec("individual_alpha", others_mode="observed"), couple=a)
    assert got_o == pytest.approx(expected_o, abs=1e-12)


def test_prediction_errors():
    g = _game()
    with pytest.raises(MissingModel):
        predict(g, "a", PredictorSpec("individual_alpha"))
    with pytest.raises(MissingModel):
        predict(g, "a", PredictorSpec("individual_alpha"), couple=(0.1, 0.1))
    lonely = GameRecord("g", "s", "gauging", 40, ("a", "b"), [[10, 10, 10], [np.nan, np.nan, np.nan]])
    with pytest.raises(DegenerateGroup):
        predict(lonely, "a", PredictorSpec("individual_alpha", target_round=2), couple=(0.1, 0.1))


def test_exact_data_exact_predictions(exact_cohort):
    for g in exact_cohort.games[:10]:
        for p in g.participant_ids:
            for r in (2, 3):
                spec = PredictorSpec("individual_alpha", target_round=r)
                pred = predict(g, p, spec, couple=(0.3, 0.2), population=(0.3, 0.2))
                assert pred == pytest.approx(g.judgments[g.index(p), r - 1], abs=1e-9)


def test_crossval_exact_cohort(exact_cohort):
    rep = crossvalidate(exact_cohort, ["null", "individual_alpha", "typical_1", "typical_2"], range(1, 6), iterations=20)
    assert rep.series("individual_alpha").max() <= 1e-6
    assert rep.series("typical_1").max() <= 1e-6
    assert rep.series("typical_2").max() <= 1e-6
    assert rep.series("null").min() > 1


@pytest.mark.parametrize("mode", ["simulated_typical", "observed"])
def test_null_matches_closed_form(noisy_cohort, mode):
    rep = crossvalidate(noisy_cohort, ["null"], [1, 7, 15], iterations=10, seed=3, others_mode=mode)
    expect = null_closed_form(noisy_cohort)
    for v in rep.series("null"):
        assert v == pytest.approx(expect, abs=1e-9)
    rep2 = crossvalidate(noisy_cohort, ["null"], [2], iterations=50, seed=99, target_round=2)
    assert rep2.series("null")[0] == pytest.approx(null_closed_form(noisy_cohort, 2), abs=1e-9)


def test_report_invariants_and_reproducibility(noisy_cohort):
    methods = ["null", "individual_alpha", "typical_1", "typical_2"]
    a = crossvalidate(noisy_cohort, methods, [1, 3, 8], iterations=30, seed=5)
    b = crossvalidate(noisy_cohort, methods, [1, 3, 8], iterations=30, seed=5, jobs=2)
    assert a.to_csv() == b.to_csv() and a.per_participant_csv() == b.per_participant_csv()
    for row in a.rows:
        assert row["rmse"] >= 0 and row["ci_lo"] <= row["rmse"] <= row["ci_hi"]
    for table in a.per_participant.values():
        for rmse_i, mae_i in table.values():
            assert mae_i <= rmse_i + 1e-12
    # every participant is validated exactly once, in the half opposite to training
    h0, h1 = a.halves
    assert not set(h0) & set(h1) and sorted(h0 + h1) == noisy_cohort.participants


def test_counting_is_reported_on_the_0_100_scale():
    data, _ = generate_population(PopulationSpec(n_participants=12, n_games=18, task="counting", noise_std=10, initial_spread=50, seed=0))
    rep = crossvalidate(data, ["null"], [1], iterations=5)
    assert rep.report_scale == 5
    assert rep.series("null")[0] == pytest.approx(null_closed_form(data), abs=1e-9)
    raw = np.mean([v[0] for v in rep.per_participant[("null", 1)].values()])
    assert rep.series("null")[0] == pytest.approx(raw / 5)


def test_split_keeps_groups_together(noisy_cohort):
    h0, h1 = split_halves(noisy_cohort, noisy_cohort.participants, np.random.default_rng(0))
    side = {p: 0 for p in h0} | {p: 1 for p in h1}
    for g in noisy_cohort.games:
        assert len({side[p] for p in g.participant_ids}) == 1
    assert abs(len(h0) - len(h1)) <= 6


def test_crossval_requires_enough_games(noisy_cohort):
    with pytest.raises(InsufficientGames):
        crossvalidate(noisy_cohort, ["null"], [20], iterations=2)


def test_game_features_skip_incomplete():
    f = game_features([(_game(), 0), (_game(), 1)])
    assert len(f) == 1 and f.game_ids == ("g",)


def test_bootstrap_examples():
    assert bootstrap_ci([3.0] * 10) == (3.0, 3.0)
    lo, hi = bootstrap_ci([0.0, 2.0])
    assert 0 <= lo <= hi <= 2
    with pytest.raises(InsufficientData):
        bootstrap_ci([1.0])


def test_bootstrap_width_shrinks_like_root_n():
    rng = np.random.default_rng(0)
    widths = {}
    for n in (50, 200):
        w = []
        for _ in range(40):
            lo, hi = bootstrap_ci(rng.gamma(4, 1.5, n), seed=rng)
            w.append(hi - lo)
        widths[n] = np.mean(w)
    assert widths[50] / widths[200] == pytest.approx(2.0, rel=0.25)


def test_figure_files(noisy_cohort, tmp_path):
    rep = crossvalidate(noisy_cohort, ["null", "individual_alpha", "typical_1", "typical_2"], [1, 2], iterations=5)
    paths = write_figure_files(rep, tmp_path, floor=5.0)
    assert sorted(p.name for p in paths) == ["fig2.csv", "fig3.csv", "figS1.csv", "figS2.csv"]
    assert (tmp_path / "fig2.csv").read_text().splitlines()[-1].startswith("intrinsic_floor,,5")
    assert rep.to_csv().splitlines()[0].startswith("method,training_size,rmse,mae,ci_lo,ci_hi")
