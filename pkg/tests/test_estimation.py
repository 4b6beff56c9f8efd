import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from influx.core import InfluenceabilityPair, simulate_trajectory
from influx.datastore import GameRecord
from influx.errors import DegenerateFit, InsufficientData, NoTrainingData, TooFewCouples
from influx.estimation import (
    COV_FLOOR,
    MixtureModel,
    assign_typical,
    fit_alpha_round,
    fit_individual,
    fit_mixture,
    linearity_test,
    regression_samples,
    training_sse,
)


def test_fit_alpha_round_examples():
    assert fit_alpha_round([10, -5], [5, -2.5]) == pytest.approx(0.5)
    assert fit_alpha_round([10], [0]) == 0.0
    with pytest.raises(DegenerateFit) as exc:
        fit_alpha_round([0, 0, 0], [1, -1, 2])
    assert exc.value.alpha == 0.0


@settings(max_examples=200)
@given(
    arrays(float, 8, elements=st.floats(-50, 50)),
    arrays(float, 8, elements=st.floats(-50, 50)),
    st.floats(0.01, 100) | st.floats(-100, -0.01),
)
def test_fit_alpha_round_scale_equivariant(d, y, c):
    assume(np.sum(d * d) > 1e-3)
    assert fit_alpha_round(c * d, c * y) == pytest.approx(fit_alpha_round(d, y), rel=1e-9, abs=1e-12)


@settings(max_examples=200)
@given(arrays(float, 5, elements=st.floats(-50, 50)), st.floats(-0.5, 1.5))
def test_fit_alpha_round_exact_on_model_data(d, a):
    assume(np.sum(d * d) > 1e-3)
    assert fit_alpha_round(d, a * d) == pytest.approx(a, abs=1e-9)


def _participant_games(couple, n_games, noise=0.0, seed=0, group=6):
    rng = np.random.default_rng(seed)
    games = []
    for i in range(n_games):
        x1 = rng.uniform(10, 90, group)
        pairs = [couple] + [InfluenceabilityPair(*rng.uniform(0, 0.5, 2)) for _ in range(group - 1)]
        traj = simulate_trajectory(x1, pairs, noise, rng)
        g = GameRecord(f"g{i}", "s", "gauging", 50.0, tuple(f"p{k}" for k in range(group)), traj)
        games.append((g, 0))
    return games


def test_fit_individual_exact_from_two_games():
    fit = fit_individual(_participant_games(InfluenceabilityPair(0.3, 0.2), 2))
    assert fit.alpha1 == pytest.approx(0.3, abs=1e-9) and fit.alpha2 == pytest.approx(0.2, abs=1e-9)
    assert not fit.degenerate1 and not fit.degenerate2


def test_fit_individual_keeps_negative_alpha():
    fit = fit_individual(_participant_games(InfluenceabilityPair(-0.2, 0.1), 3))
    assert fit.alpha1 == pytest.approx(-0.2, abs=1e-9)


def test_fit_individual_degenerate_when_always_at_mean():
    j = np.array([[50.0, 50, 50], [40, 45, 47], [60, 55, 53]])
    games = [(GameRecord(f"g{i}", "s", "gauging", 50, ("a", "b", "c"), j), 0) for i in range(3)]
    fit = fit_individual(games)
    assert fit.degenerate1 and fit.degenerate2 and tuple(fit) == (0.0, 0.0)


def test_regression_samples_skip_missing():
    j = np.array([[40.0, np.nan, np.nan], [60, 55, 53], [50, 50, 50]])
    g = GameRecord("g", "s", "gauging", 50, ("a", "b", "c"), j)
    assert regression_samples([(g, 0)], 1) == []
    (s,) = regression_samples([(g, 1)], 1)
    assert s.d == pytest.approx(-10) and s.y == pytest.approx(-5)
    # round 2 mean is over the two present members
    (s2,) = regression_samples([(g, 1)], 2)
    assert s2.d == pytest.approx(52.5 - 55)


def test_noisy_recovery_small():
    rng = np.random.default_rng(5)
    errs = []
    for i in range(100):
        true = InfluenceabilityPair(*rng.uniform(0, 0.6, 2))
        fit = fit_individual(_participant_games(true, 15, noise=3.0, seed=i))
        errs.append(np.abs(fit.as_array() - true.as_array()))
    assert np.all(np.mean(errs, axis=0) <= 0.08)


# --- mixture --------------------------------------------------------------------


def test_mixture_k1_is_sample_mean():
    m = fit_mixture([(0.2, 0.1), (0.4, 0.3)], 1)
    np.testing.assert_allclose(m.means[0], [0.3, 0.2])
    assert m.K == 1 and m.weights[0] == 1.0


def test_mixture_precondition_boundary():
    pts = [(0.1, 0.1), (0.2, 0.0), (0.5, 0.4), (0.55, 0.45), (0.3, 0.2)]
    assert fit_mixture(pts, 2, seed=0).K == 2
    with pytest.raises(TooFewCouples):
        fit_mixture(pts, 3)


def _two_blobs(seed, n=500):
    truth = MixtureModel.from_components([[0.05, 0.02], [0.32, 0.20]], 0.03)
    x, _ = truth.sample(n, np.random.default_rng(seed))
    return x


def test_mixture_loglik_monotone_and_invariants():
    trace = []
    m = fit_mixture(_two_blobs(1), 2, seed=4, trace=trace)
    assert len(trace) == 5
    for run in trace:
        assert np.all(np.diff(run) >= -1e-9 * np.abs(run[:-1]).max())
    assert abs(m.weights.sum() - 1) < 1e-9
    assert np.all(np.linalg.eigvalsh(m.covariances) >= COV_FLOOR * (1 - 1e-9))
    assert m.means[0, 0] <= m.means[1, 0]
    assert m.loglik == pytest.approx(m.score(_two_blobs(1)))


def test_mixture_matches_sklearn():
    from sklearn.mixture import GaussianMixture

    x = _two_blobs(2)
    ours = fit_mixture(x, 2, seed=0)
    ref = GaussianMixture(2, covariance_type="full", reg_covar=0.0, tol=1e-10, n_init=5, random_state=0).fit(x)
    order = np.argsort(ref.means_[:, 0])
    np.testing.assert_allclose(ours.means, ref.means_[order], atol=1e-4)
    np.testing.assert_allclose(ours.weights, ref.weights_[order], atol=1e-4)
    np.testing.assert_allclose(ours.covariances, ref.covariances_[order], atol=1e-6)
    assert ours.loglik == pytest.approx(ref.score(x) * len(x), rel=1e-6)


def test_mixture_deterministic_given_seed():
    x = _two_blobs(3)
    a, b = fit_mixture(x, 3, seed=11), fit_mixture(x, 3, seed=11)
    assert a.means.tobytes() == b.means.tobytes()


def test_mixture_serialisation_round_trip():
    m = fit_mixture(_two_blobs(4), 2, seed=0)
    back = MixtureModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.means, m.means)
    assert back.loglik == m.loglik


def test_mixture_validation():
    with pytest.raises(ValueError):
        MixtureModel([0.5, 0.6], [[0, 0], [1, 1]], [np.eye(2)] * 2)
    with pytest.raises(ValueError):
        MixtureModel([1.0], [[0, 0]], [[[1, 2], [0, 1]]])


# --- assignment -----------------------------------------------------------------


def test_assign_typical_examples():
    cands = [(0.05, 0.02), (0.3, 0.2), (0.6, 0.5)]
    games = _participant_games(InfluenceabilityPair(0.3, 0.2), 3)
    assert assign_typical(games, cands) == 1
    assert assign_typical([], [(0.3, 0.2)]) == 0
    with pytest.raises(NoTrainingData):
        assign_typical([], cands[:2])


def test_assign_typical_ties_to_lowest_index():
    assert assign_typical(_participant_games(InfluenceabilityPair(0.3, 0.2), 2), [(0.3, 0.2), (0.3, 0.2)]) == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.5, 1.5), st.floats(-0.5, 1.5)), min_size=2, max_size=6), st.integers(0, 10**6))
def test_training_error_non_increasing_with_more_candidates(cands, seed):
    games = _participant_games(InfluenceabilityPair(0.25, 0.1), 4, noise=3.0, seed=seed)
    sse = training_sse(games, cands)
    best = [sse[: k + 1].min() for k in range(len(cands))]
    assert np.all(np.diff(best) <= 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2), st.integers(0, 10**6))
def test_assign_recovers_true_component(k, seed):
    cands = [(0.05, 0.02), (0.32, 0.2), (0.7, 0.4)]
    games = _participant_games(InfluenceabilityPair(*cands[k]), 2, seed=seed)
    assert assign_typical(games, cands) == k


# --- linearity ------------------------------------------------------------------


def _power_data(gamma, n, noise, rng):
    d = rng.uniform(-30, 30, n)
    y = 2.0 + 0.3 * np.sign(d) * np.abs(d / 30) ** gamma * 30 + rng.normal(0, noise, n)
    return d, y


def test_linearity_not_rejected_for_linear_data():
    rng = np.random.default_rng(0)
    keep = sum(linearity_test(*_power_data(1.0, 1000, 3.0, rng)).p_value > 0.05 for _ in range(200))
    assert keep >= 180


def test_linearity_detects_quadratic():
    rng = np.random.default_rng(1)
    res = linearity_test(*_power_data(2.0, 1000, 0.5, rng))
    assert 1.8 <= res.gamma_hat <= 2.2 and res.p_value < 0.01 and not res.linear


def test_linearity_needs_thirty_samples():
    with pytest.raises(InsufficientData):
        linearity_test(np.arange(10.0), np.arange(10.0))
