"""Descriptive analyses of judgment datasets and the statistical tests they use."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .datastore import Dataset
from .errors import InsufficientData, NoData, SingularControls


def _comparable(game, min_present=None) -> bool:
    """At least ``min_present`` judgments at every round (default: all but one)."""
    n = len(game.participant_ids)
    need = max(2, n - 1) if min_present is None else min_present
    return all(game.n_present(r) >= need for r in (1, 2, 3))


# --- errors to truth -----------------------------------------------------------


def error_to_truth(participant_id, r: int, dataset: Dataset) -> float:
    """Root mean square distance of a participant's round-``r`` judgments to truth."""
    diffs = [
        g.judgments[k, r - 1] - g.truth
        for g, k in dataset.games_of(participant_id)
        if not np.isnan(g.judgments[k, r - 1])
    ]
    if not diffs:
        raise NoData(f"{participant_id} has no round-{r} judgment")
    return math.sqrt(math.fsum(d * d for d in diffs) / len(diffs)) / dataset.task.report_scale


def aggregate_error(games, r: int, min_present=None) -> float:
    """Root mean square distance of the group mean to truth over comparable games."""
    games = list(games)
    diffs = []
    for g in games:
        if not _comparable(g, min_present):
            continue
        x = g.round_values(r)
        diffs.append(float(np.nanmean(x)) - g.truth)
    if not diffs:
        raise NoData("no game passes the comparability filter")
    scale = games[0].task.report_scale
    return math.sqrt(math.fsum(d * d for d in diffs) / len(diffs)) / scale


@dataclass(frozen=True)
class SuccessProfile:
    participant_id: str
    E: tuple  # (E(1), E(2), E(3)) on the 0-100 scale

    @property
    def variation12(self) -> float:
        return self.E[0] - self.E[1]

    @property
    def variation23(self) -> float:
        return self.E[1] - self.E[2]


def success_profiles(dataset: Dataset) -> list:
    out = []
    for p in dataset.participants:
        try:
            out.append(SuccessProfile(p, tuple(error_to_truth(p, r, dataset) for r in (1, 2, 3))))
        except NoData:
            continue
    return out


def success_summary(dataset: Dataset) -> dict:
    """Median errors per round and median per-participant success variations."""
    prof = success_profiles(dataset)
    if not prof:
        raise NoData("no participant with judgments at all rounds")
    E = np.array([p.E for p in prof])
    v12 = E[:, 0] - E[:, 1]
    v23 = E[:, 1] - E[:, 2]
    out = {
        "n_participants": len(prof),
        "median_E1": float(np.median(E[:, 0])),
        "median_E2": float(np.median(E[:, 1])),
        "median_E3": float(np.median(E[:, 2])),
        "success_variation_12": float(np.median(v12)),
        "success_variation_23": float(np.median(v23)),
    }
    for name, diffs in (("12", v12), ("23", v23)):
        try:
            out[f"sign_test_p_{name}"] = sign_test(diffs)
        except InsufficientData:
            out[f"sign_test_p_{name}"] = None
    return out


def group_errors(dataset: Dataset, min_present=None) -> list:
    """Per-session aggregate errors for rounds 1-3."""
    sessions: dict = {}
    for g in dataset.games:
        sessions.setdefault(g.session_id, []).append(g)
    rows = []
    for sid in sorted(sessions):
        try:
            rows.append((sid,) + tuple(aggregate_error(sessions[sid], r, min_present) for r in (1, 2, 3)))
        except NoData:
            continue
    return rows


# --- wisdom of crowds ------------------------------------------------------------


@dataclass(frozen=True)
class WisdomDecomposition:
    D_plus: float
    D_minus: float
    mean_abs_error: float
    mean_to_truth: float
    n: int


def wisdom_decomposition(opinions, truth: float) -> WisdomDecomposition:
    """Split the distance to truth into contributions above and below it.

    ``|mean - T| = |D+ - D-| / n`` while the mean individual error is
    ``(D+ + D-) / n``.
    """
    x = np.asarray(opinions, dtype=float)
    x = x[~np.isnan(x)]
    if x.size == 0:
        raise NoData("no opinion")
    dev = x - truth
    dp = math.fsum(dev[dev > 0])
    dm = math.fsum(-dev[dev < 0])
    n = x.size
    return WisdomDecomposition(dp, dm, (dp + dm) / n, abs(dp - dm) / n, n)


def round1_deviations(dataset: Dataset) -> np.ndarray:
    """Round-1 ``x - T`` pooled over games, 0-100 scale."""
    vals = [g.judgments[:, 0] - g.truth for g in dataset.games]
    v = np.concatenate(vals) if vals else np.zeros(0)
    return v[~np.isnan(v)] / dataset.task.report_scale


# --- consensus ---------------------------------------------------------------------


def distances_to_mean(dataset: Dataset, min_present=None) -> dict:
    """``{round: array of |x_i(r) - mean(r)|}`` pooled over comparable games."""
    out = {1: [], 2: [], 3: []}
    for g in dataset.games:
        if not _comparable(g, min_present):
            continue
        for r in (1, 2, 3):
            x = g.round_values(r)
            x = x[~np.isnan(x)]
            out[r].append(np.abs(x - x.mean()))
    return {r: (np.concatenate(v) if v else np.zeros(0)) / dataset.task.report_scale for r, v in out.items()}


def distance_to_mean_stats(dataset: Dataset, min_present=None) -> dict:
    """Median and quartiles of distance to the mean per round, plus contraction."""
    dist = distances_to_mean(dataset, min_present)
    if dist[1].size == 0:
        raise NoData("no game passes the comparability filter")
    summary = {}
    for r, v in dist.items():
        q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
        summary[r] = {"median": float(med), "q1": float(q1), "q3": float(q3), "mean": float(v.mean()), "n": int(v.size)}
    m1, m2, m3 = (summary[r]["median"] for r in (1, 2, 3))
    summary["contraction_12"] = m2 / m1 if m1 else math.nan
    summary["contraction_23"] = m3 / m2 if m2 else math.nan
    return summary


def pooled_regression_bins(dataset: Dataset, r: int, bins: int = 20) -> list:
    """2-D histogram of ``(mean - x(r), x(r+1) - x(r))`` pooled over all participants.

    Returns rows ``(d_lo, d_hi, y_lo, y_hi, count)`` for non-empty cells.
    """
    from .estimation import regression_samples

    d, y = [], []
    for p in dataset.participants:
        for s in regression_samples(dataset.games_of(p), r):
            d.append(s.d)
            y.append(s.y)
    if not d:
        raise NoData("no regression sample")
    scale = dataset.task.report_scale
    H, de, ye = np.histogram2d(np.array(d) / scale, np.array(y) / scale, bins=bins)
    return [
        (de[i], de[i + 1], ye[j], ye[j + 1], int(H[i, j]))
        for i in range(H.shape[0]) for j in range(H.shape[1]) if H[i, j] > 0
    ]


# --- tests ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KSResult:
    D: float
    p: float


def ks_statistic(a, b) -> float:
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a, b) -> KSResult:
    """Two-sample Kolmogorov-Smirnov distance with asymptotic p-value."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise InsufficientData("both samples need at least one value")
    D = ks_statistic(a, b)
    en = math.sqrt(a.size * b.size / (a.size + b.size))
    p = float(min(1.0, special.kolmogorov(en * D))) if D > 0 else 1.0
    return KSResult(D, p)


def sign_test(diffs, alternative: str = "two-sided") -> float:
    """Exact binomial sign test; zero differences are dropped."""
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0]
    n = d.size
    if n < 6:
        raise InsufficientData(f"{n} non-zero differences, need >= 6")
    k = int(np.count_nonzero(d > 0))
    if alternative == "greater":
        return float(stats.binom.sf(k - 1, n, 0.5))
    if alternative == "less":
        return float(stats.binom.cdf(k, n, 0.5))
    return float(min(1.0, 2.0 * stats.binom.cdf(min(k, n - k), n, 0.5)))


def signed_rank_statistic(diffs):
    """``(T+, ranks, nonzero diffs)`` with mid-ranks for ties and zeros dropped."""
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0]
    ranks = stats.rankdata(np.abs(d))
    return float(ranks[d > 0].sum()), ranks, d


def wilcoxon_signed_rank(diffs, alternative: str = "two-sided", correction: bool = True) -> float:
    """Wilcoxon signed-rank test, normal approximation with tie correction.

    Zeros are dropped; at least 20 non-zero differences are required.
    A continuity correction of 0.5 is applied by default.
    """
    tplus, ranks, d = signed_rank_statistic(diffs)
    n = d.size
    if n < 20:
        raise InsufficientData(f"{n} non-zero differences, need >= 20 for the normal approximation")
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(counts**3 - counts) / 48.0
    if var <= 0:
        return 1.0
    cc = 0.5 if correction else 0.0
    if alternative == "greater":
        z = (tplus - mean - cc) / math.sqrt(var)
        return float(stats.norm.sf(z))
    if alternative == "less":
        z = (tplus - mean + cc) / math.sqrt(var)
        return float(stats.norm.cdf(z))
    z = max(0.0, abs(tplus - mean) - cc) / math.sqrt(var)
    return float(min(1.0, 2.0 * stats.norm.sf(z)))


@dataclass(frozen=True)
class PartialCorrelation:
    rho: float
    p: float
    n: int
    dof: int


def partial_pearson(variables, target_pair, controls=()) -> PartialCorrelation:
    """Correlation of two columns after regressing both on the control columns.

    ``variables`` is an ``(n, p)`` array (or a dict of equal-length columns,
    in which case targets and controls are keys).
    """
    if isinstance(variables, dict):
        keys = list(variables)
        X = np.column_stack([np.asarray(variables[k], dtype=float) for k in keys])
        target_pair = tuple(keys.index(t) for t in target_pair)
        controls = [keys.index(c) for c in controls]
    else:
        X = np.asarray(variables, dtype=float)
    controls = list(controls)
    n = X.shape[0]
    if n <= len(controls) + 2:
        raise InsufficientData(f"n={n} too small for {len(controls)} controls")
    Z = np.column_stack([np.ones(n)] + [X[:, c] for c in controls])
    resid = []
    for t in target_pair:
        y = X[:, t]
        coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
        e = y - Z @ coef
        if math.sqrt(float(e @ e)) <= 1e-10 * max(1.0, math.sqrt(float(y @ y))):
            raise SingularControls(f"column {t} is (nearly) a linear function of the controls")
        resid.append(e - e.mean())
    a, b = resid
    rho = float(np.clip(a @ b / math.sqrt(float(a @ a) * float(b @ b)), -1.0, 1.0))
    dof = n - len(controls) - 2
    if abs(rho) >= 1.0:
        p = 0.0
    else:
        t = rho * math.sqrt(dof / (1.0 - rho * rho))
        p = float(2.0 * stats.t.sf(abs(t), dof))
    return PartialCorrelation(rho, p, n, dof)


def influence_performance_correlations(dataset: Dataset, couples: dict) -> dict:
    """Partial correlations linking influenceability and success variation.

    Each pair of variables is correlated controlling for the remaining ones
    among ``alpha1, alpha2, E1, E12, E23``.
    """
    prof = {p.participant_id: p for p in success_profiles(dataset)}
    pids = [p for p in sorted(prof) if p in couples]
    cols = {
        "alpha1": [couples[p][0] for p in pids],
        "alpha2": [couples[p][1] for p in pids],
        "E1": [prof[p].E[0] for p in pids],
        "E12": [prof[p].variation12 for p in pids],
        "E23": [prof[p].variation23 for p in pids],
    }
    pairs = [("alpha1", "E12"), ("alpha2", "E23"), ("E1", "E12"), ("E1", "E23")]
    out = {}
    for a, b in pairs:
        controls = [k for k in cols if k not in (a, b)]
        try:
            r = partial_pearson(cols, (a, b), controls)
            out[f"{a}~{b}"] = {"rho": r.rho, "p": r.p, "n": r.n}
        except (InsufficientData, SingularControls) as exc:
            out[f"{a}~{b}"] = {"error": str(exc)}
    return out
