"""Acceptance suite: one test per primary criterion, each printing a PASS/FAIL line."""
import itertools
import json
import math
import os
import time

import numpy as np
import pytest
from scipy import stats

from influx.analytics import ks_statistic, sign_test, wilcoxon_signed_rank, wisdom_decomposition
from influx.cli import main
from influx.core import consensus_step, group_mean
from influx.estimation import MixtureModel, fit_individual, fit_mixture
from influx.prediction import crossvalidate
from influx.simulator import ControlSpec, PopulationSpec, generate_control_cohort, generate_population
from influx.unpredictability import (
    estimate_unpredictability,
    format_schedule,
    lambda_curve,
    schedule_control_session,
)


@pytest.fixture
def report(capsys, request):
    start = time.perf_counter()

    def _report(ok, detail):
        name = request.node.name.replace("test_", "")
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({time.perf_counter() - start:.1f} s)")
        return ok

    return _report


def test_criterion_01_exact_identification(report):
    start = time.perf_counter()
    data, truth = generate_population(
        PopulationSpec(n_participants=60, n_games=30, noise_std=0, mixture=MixtureModel.point((0.3, 0.2)))
    )
    err = max(
        float(np.max(np.abs(fit_individual(data.full_games(p)).as_array() - truth.couples[p].as_array())))
        for p in data.participants
    )
    rep = crossvalidate(data, ["individual_alpha"], range(1, 16), iterations=20)
    rmse = float(rep.series("individual_alpha").max())
    elapsed = time.perf_counter() - start
    ok = err <= 1e-9 and rmse <= 1e-6 and elapsed < 5
    report(ok, f"max couple error {err:.1e} (<=1e-9), max individual RMSE {rmse:.1e} (<=1e-6), {elapsed:.1f} s (<5 s)")
    assert ok


def test_criterion_02_noisy_recovery(report):
    start = time.perf_counter()
    data, truth = generate_population(PopulationSpec(n_participants=1002, n_games=15, noise_std=3, seed=0))
    pids = data.participants[:1000]
    err = np.array(
        [np.abs(fit_individual(data.full_games(p)).as_array() - truth.couples[p].as_array()) for p in pids]
    )
    mae = err.mean(axis=0)
    elapsed = time.perf_counter() - start
    ok = len(pids) == 1000 and bool(np.all(mae <= 0.08)) and elapsed < 30
    report(ok, f"mean |alpha error| = ({mae[0]:.4f}, {mae[1]:.4f}) (<=0.08) over {len(pids)} participants, {elapsed:.1f} s (<30 s)")
    assert ok


def test_criterion_03_em_recovery(report):
    truth = MixtureModel.from_components([[0.05, 0.02], [0.32, 0.20]], 0.03)
    good = 0
    for seed in range(100):
        x, _ = truth.sample(500, np.random.default_rng(seed))
        m = fit_mixture(x, 2, seed=seed)
        good += bool(np.all(np.abs(m.means - truth.means) <= 0.05))
    ok = good >= 95
    report(ok, f"{good}/100 runs with both means within 0.05 per component (>=95)")
    assert ok


def test_criterion_04_fig2_shape(report):
    start = time.perf_counter()
    mix = MixtureModel.from_components([[0.1, 0.05], [0.6, 0.4]], 0.05)
    data, _ = generate_population(
        PopulationSpec(n_participants=100, n_games=30, noise_std=5, mixture=mix, initial_spread=15, seed=0)
    )
    # one CPU in the build sandbox; jobs only changes wall time, never the numbers
    rep = crossvalidate(data, ["null", "individual_alpha", "typical_1", "typical_2"], range(1, 16), iterations=300)
    elapsed = time.perf_counter() - start
    null, ind = rep.series("null"), rep.series("individual_alpha")
    typ = {m: rep.series(m) for m in ("typical_1", "typical_2")}
    others = np.vstack([ind, typ["typical_1"], typ["typical_2"]])
    flat = float(np.ptp(null)) <= 1e-9
    highest = bool(np.all(null >= others.max(axis=0)))
    nonincreasing = bool(np.all(np.diff(ind) <= 1e-12))
    crossing = ind[0] > typ["typical_1"][0] and ind[-1] <= typ["typical_1"][-1]
    gain = 1 - typ["typical_1"].mean() / null.mean()
    ok = flat and highest and nonincreasing and crossing and gain >= 0.15 and elapsed < 60
    beaten = [s for s, v in zip(rep.training_sizes, ind > null) if v]
    report(
        ok,
        f"(a) null flat={flat}, highest={highest} (individual above null at sizes {beaten}); "
        f"(b) individual non-increasing={nonincreasing}, {ind[0]:.2f}>{typ['typical_1'][0]:.2f} at 1 and "
        f"{ind[-1]:.2f}<={typ['typical_1'][-1]:.2f} at 15: {crossing}; "
        f"(c) typical_1 {gain:.1%} below null (>=15%); {elapsed:.1f} s",
    )
    assert ok


def test_criterion_05_unpredictability_oracle(report):
    pairs = generate_control_cohort(ControlSpec(n_pairs=500, lam=0.7, noise_std=5.0))
    est = estimate_unpredictability(pairs)
    curve = est.lambda_curve
    sq = curve[:, 1] ** 2
    convex = bool(np.all(np.diff(sq, 2) >= -1e-12 * sq.max()))
    k = int(np.argmin(curve[:, 1]))
    interior = 0 < k < len(curve) - 1
    lam_ok = abs(est.lambda_star - 0.7) <= 0.05
    std_ok = abs(est.std_eta_round2 / 5.0 - 1) <= 0.05
    ok = lam_ok and std_ok and convex and interior
    report(
        ok,
        f"lambda*={est.lambda_star:.3f} (0.7+-0.05: {lam_ok}), std(eta)={est.std_eta_round2:.3f} "
        f"(5+-5%: {std_ok}), convex={convex}, interior minimum={interior}; "
        f"{est.n_pairs} pairs used, {est.n_excluded} clamped pairs excluded",
    )
    assert ok


def _null_oracle(data, participants):
    # independent of the package: mean over participants of RMS(x(3) - x(1))
    per = []
    for p in participants:
        d = []
        for g in data.games:
            if p in g.participant_ids:
                x = g.judgments[g.participant_ids.index(p)]
                if not np.isnan(x).any() and np.count_nonzero(~np.isnan(g.judgments[:, 0])) >= 2:
                    d.append(x[2] - x[0])
        per.append(math.sqrt(sum(v * v for v in d) / len(d)))
    return sum(per) / len(per) / data.task.report_scale


def test_criterion_06_null_closed_form(report):
    data, _ = generate_population(PopulationSpec(n_participants=48, n_games=20, noise_std=5, missing_rate=0.05, seed=6))
    rep = crossvalidate(data, ["null"], [1, 5, 10], iterations=25, seed=11)
    expect = _null_oracle(data, data.participants)
    gap = float(np.max(np.abs(rep.series("null") - expect)))
    ok = gap <= 1e-9
    report(ok, f"|crossval null - closed form| = {gap:.1e} (<=1e-9), closed form {expect:.4f}")
    assert ok


def test_criterion_07_algebraic_identities(report):
    rng = np.random.default_rng(7)
    worst = dict(contraction=0.0, mean=0.0, wisdom=0.0, convexity=0.0)
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        x = rng.uniform(0, 100, n)
        a = rng.uniform(-0.5, 1.5, n)
        m = group_mean(x)
        worst["contraction"] = max(worst["contraction"], float(np.max(np.abs((consensus_step(x, a) - m) - (1 - a) * (x - m)))))
        ah = float(rng.uniform(-0.5, 1.5))
        worst["mean"] = max(worst["mean"], abs(group_mean(consensus_step(x, ah)) - m))
        t = float(rng.uniform(0, 100))
        w = wisdom_decomposition(x, t)
        worst["wisdom"] = max(worst["wisdom"], abs(abs(w.D_plus - w.D_minus) / n - abs(x.mean() - t)))
        k = int(rng.integers(1, 30))
        d1 = rng.normal(0, 10, k)
        dr = rng.uniform(0, 1) * d1 + rng.normal(0, 5, k)
        sq = lambda_curve(d1, dr)[:, 1] ** 2
        # a convex function has non-negative second differences on the grid
        worst["convexity"] = max(worst["convexity"], float(max(0.0, -np.diff(sq, 2).min())))
    ok = all(v <= 1e-12 for v in worst.values())
    report(ok, "worst violations over 1000 inputs each: " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (<=1e-12)")
    assert ok


def _ks_brute(a, b):
    pts = sorted(set(a) | set(b))
    return max(abs(sum(v <= t for v in a) / len(a) - sum(v <= t for v in b) / len(b)) for t in pts)


def _perm_p(d, n_perm, rng):
    ranks = stats.rankdata(np.abs(d))
    obs = ranks[d > 0].sum()
    mu = ranks.sum() / 2
    t = (rng.integers(0, 2, (n_perm, d.size)) * ranks).sum(axis=1)
    return float(np.mean(np.abs(t - mu) >= abs(obs - mu) - 1e-9))


def test_criterion_08_statistics_vs_oracles(report):
    # every multiset of size <= 6 over a 5-value alphabet, against a fixed panel of partners
    samples = [c for n in range(1, 7) for c in itertools.combinations_with_replacement(range(5), n)]
    ks_gap = 0.0
    for i, a in enumerate(samples):
        for b in samples[i % 37 :: 37]:
            ks_gap = max(ks_gap, abs(ks_statistic(a, b) - _ks_brute(a, b)))
    sign_gap = 0.0
    for n in range(6, 21):
        for k in range(n + 1):
            exact = min(1.0, 2 * sum(math.comb(n, j) for j in range(min(k, n - k) + 1)) / 2**n)
            sign_gap = max(sign_gap, abs(sign_test([1.0] * k + [-1.0] * (n - k)) - exact))
    rng = np.random.default_rng(8)
    wil_gap = 0.0
    for shift in (0.0, 0.3, 0.6):
        d = rng.normal(shift, 1, 30)
        wil_gap = max(wil_gap, abs(wilcoxon_signed_rank(d) - _perm_p(d, 100_000, rng)))
    ok = ks_gap <= 1e-12 and sign_gap <= 1e-12 and wil_gap <= 0.01
    report(ok, f"KS gap {ks_gap:.1e} over {len(samples)} samples, sign-test gap {sign_gap:.1e} (n<=20), "
               f"Wilcoxon vs 100k permutations gap {wil_gap:.4f} (<=0.01)")
    assert ok


ORIGINAL_ORDER = "1, 2, 11 | 3, 4, 12 | 6, 13, 5 | 14, 7, 8 | 9, 1, 15 | 4, 10, 16 | 2, 6, 17 | 7, 18, 3 | 8, 5, 19 | 10, 9, 20"


def test_criterion_09_control_schedule(report):
    order = format_schedule(schedule_control_session(10, 10))
    pairs = generate_control_cohort(ControlSpec(n_pairs=500))
    worst = 0.0
    for p in pairs:
        k = p.base_game.index(p.focal_id)
        base = np.delete(p.base_game.judgments, k, axis=0)
        rep = np.delete(p.replicate_game.judgments, k, axis=0)
        # shifted by s everywhere, except where the task range clamps the shifted value
        hi = p.base_game.task.range_max
        worst = max(worst, float(np.max(np.abs(rep - np.clip(base + p.shift, 0, hi)))))
        if not p.clamped:
            worst = max(worst, float(np.max(np.abs(rep - base - p.shift))))
    ok = order == ORIGINAL_ORDER and worst <= 1e-9
    report(ok, f"schedule string matches: {order == ORIGINAL_ORDER}; max replicate-invariant violation {worst:.1e} "
               f"over {len(pairs)} pairs ({sum(p.clamped for p in pairs)} clamped, flagged)")
    assert ok


def test_criterion_10_cli_determinism(report, tmp_path, monkeypatch, capsys):
    for k in [k for k in os.environ if k.startswith("INFLUX_")]:
        monkeypatch.delenv(k)
    a = tmp_path / "a"

    def run(*argv):
        assert main([str(v) for v in argv]) == 0

    sim = a / "sim"
    run("simulate", "--participants", 24, "--games", 20, "--missing-rate", 0.05, "--out", sim)
    data = sim / "dataset.csv"
    run("ingest", "--data", data, "--out", a / "ingested.json")
    run("filter", "--data", data, "--out", a / "filtered.csv")
    run("fit", "--data", data, "--linearity", 1, "--out", a / "couples.csv")
    run("cluster", "--couples", a / "couples.csv", "--k", "1,2", "--out", a / "mix.json")
    run("predict", "--data", data, "--couples", a / "couples.csv", "--mixtures", a / "mix.json",
        "--method", "typical_2", "--out", a / "pred.csv")
    run("crossval", "--data", data, "--training-sizes", "1-4", "--iterations", 10, "--resamples", 200,
        "--out", a / "cv.csv")
    run("control", "--n-pairs", 60, "--out", a / "ctl")
    run("unpredictability", "--pairs", a / "ctl" / "control.csv", "--out", a / "u.json")
    run("analyze", "--data", data, "--couples", a / "couples.csv", "--out", a / "an")
    manifests = sorted(a.rglob("*manifest.json"))
    checked = mismatched = 0
    for i, m in enumerate(manifests):
        doc = json.loads(m.read_text())
        rerun = tmp_path / f"re{i}"
        if m.name == "manifest.json":
            # directory output: the manifest sits inside it
            target, new_manifest = rerun, rerun / "manifest.json"
        else:
            # file output: recreate it under the same name, the manifest sits beside it
            target, new_manifest = rerun / m.name.replace(".manifest.json", ""), rerun / m.name
            target = rerun / next(p for p in doc["outputs"] if p.startswith(target.name + "."))
        run(doc["command"], "--config", m, "--out", target)
        for rel in doc["outputs"]:
            checked += 1
            mismatched += (rerun / rel).read_bytes() != (m.parent / rel).read_bytes()
        mismatched += json.loads(new_manifest.read_text())["outputs"] != doc["outputs"]
    capsys.readouterr()
    ok = len(manifests) == 10 and checked > 0 and mismatched == 0
    report(ok, f"{len(manifests)} commands rerun from their manifests, {checked} output files compared, {mismatched} differ")
    assert ok
