"""Influenceability estimation.

Per-participant slopes come from through-origin least squares on the
rearranged consensus update ``x(r+1) - x(r) = alpha * (mean(r) - x(r))``.
Typical population couples come from a Gaussian mixture fitted by EM.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import InfluenceabilityPair
from .errors import DegenerateFit, InsufficientData, NoTrainingData, TooFewCouples

SLOPE_EPS = 1e-9
COV_FLOOR = 1e-6
LINEARITY_GAMMAS = np.round(np.arange(0.25, 3.0 + 1e-9, 0.05), 2)


@dataclass(frozen=True)
class RegressionSample:
    d: float  # mean(r) - x_i(r)
    y: float  # x_i(r+1) - x_i(r)
    game_id: str
    round: int


def _present_mean(values) -> float:
    v = values[~np.isnan(values)]
    return float(v.mean()) if v.size >= 2 else math.nan


def regression_samples(games, r: int) -> list:
    """Samples for the ``r -> r+1`` transition.

    ``games`` is an iterable of ``(GameRecord, member_index)``; a game
    contributes when both of the member's judgments exist and the round-``r``
    mean is defined.
    """
    out = []
    for g, k in games:
        xr, xn = g.judgments[k, r - 1], g.judgments[k, r]
        if np.isnan(xr) or np.isnan(xn):
            continue
        m = _present_mean(g.judgments[:, r - 1])
        if math.isnan(m):
            continue
        out.append(RegressionSample(m - xr, xn - xr, g.game_id, r))
    return out


def _dy(samples):
    if samples and isinstance(samples[0], RegressionSample):
        return (np.array([s.d for s in samples], dtype=float), np.array([s.y for s in samples], dtype=float))
    d, y = samples
    return np.asarray(d, dtype=float), np.asarray(y, dtype=float)


def fit_alpha_round(samples, y=None, eps: float = SLOPE_EPS) -> float:
    """Through-origin least-squares slope ``sum(d*y) / sum(d*d)``.

    ``samples`` is a sequence of :class:`RegressionSample`, or the ``d``
    array with ``y`` passed separately. Raises :class:`DegenerateFit` when
    ``sum(d*d) <= eps``.
    """
    d, yy = _dy(samples) if y is None else (np.asarray(samples, dtype=float), np.asarray(y, dtype=float))
    if d.size == 0:
        raise DegenerateFit("no samples")
    sdd = math.fsum(d * d)
    if sdd <= eps:
        raise DegenerateFit(f"sum of squared distances {sdd:g} <= {eps:g}")
    return math.fsum(d * yy) / sdd


def fit_individual(games, eps: float = SLOPE_EPS) -> InfluenceabilityPair:
    """Fit both influenceabilities of one participant independently.

    ``games`` holds ``(GameRecord, member_index)`` tuples, e.g. from
    ``Dataset.full_games(pid)``. Degenerate rounds fall back to 0 and are
    flagged on the returned pair.
    """
    games = list(games)
    alphas, flags = [], []
    for r in (1, 2):
        try:
            alphas.append(fit_alpha_round(regression_samples(games, r), eps=eps))
            flags.append(False)
        except DegenerateFit:
            alphas.append(DegenerateFit.alpha)
            flags.append(True)
    return InfluenceabilityPair(alphas[0], alphas[1], flags[0], flags[1])


# --- Gaussian mixture --------------------------------------------------------


@dataclass(frozen=True)
class MixtureModel:
    """Gaussian mixture over influenceability couples.

    Component means are the typical influenceabilities. Models used only as
    simulation sources may carry singular (even zero) covariances.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    loglik: float = math.nan
    n_iter: int = 0
    converged: bool = True

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.asarray(self.means, dtype=float).reshape(-1, 2)
        cov = np.asarray(self.covariances, dtype=float).reshape(-1, 2, 2)
        if not (len(w) == len(mu) == len(cov)) or len(w) == 0:
            raise ValueError("weights, means and covariances disagree on K")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if not np.allclose(cov, np.swapaxes(cov, 1, 2)):
            raise ValueError("covariances must be symmetric")
        if np.any(np.linalg.eigvalsh(cov) < -1e-12):
            raise ValueError("covariances must be positive semi-definite")
        for name, val in (("weights", w), ("means", mu), ("covariances", cov)):
            object.__setattr__(self, name, val)

    @property
    def K(self) -> int:
        return len(self.weights)

    @classmethod
    def from_components(cls, means, spread=0.0, weights=None) -> "MixtureModel":
        """Isotropic components with standard deviation ``spread``."""
        mu = np.asarray(means, dtype=float).reshape(-1, 2)
        k = len(mu)
        spreads = np.broadcast_to(np.asarray(spread, dtype=float), (k,))
        cov = np.array([np.eye(2) * s**2 for s in spreads])
        w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
        return cls(w / w.sum(), mu, cov)

    @classmethod
    def point(cls, couple) -> "MixtureModel":
        return cls.from_components([list(couple)], 0.0)

    def typical(self) -> list:
        return [InfluenceabilityPair(float(a), float(b)) for a, b in self.means]

    def sample(self, n: int, rng) -> tuple:
        """Draw ``n`` couples; returns ``(couples (n, 2), labels (n,))``."""
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        labels = rng.choice(self.K, size=n, p=self.weights)
        z = rng.standard_normal((n, 2))
        out = np.empty((n, 2))
        for k in range(self.K):
            sel = labels == k
            vals, vecs = np.linalg.eigh(self.covariances[k])
            root = vecs * np.sqrt(np.clip(vals, 0, None))
            out[sel] = self.means[k] + z[sel] @ root.T
        return out, labels

    def component_logpdf(self, x) -> np.ndarray:
        """``(n, K)`` log densities (no weights)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((len(x), self.K))
        for k in range(self.K):
            out[:, k] = _gauss_logpdf(x, self.means[k], self.covariances[k])
        return out

    def score(self, x) -> float:
        """Total log-likelihood of ``x``."""
        with np.errstate(divide="ignore"):
            lw = np.log(self.weights)
        return float(np.sum(_logsumexp(self.component_logpdf(x) + lw)))

    def responsibilities(self, x) -> np.ndarray:
        with np.errstate(divide="ignore"):
            a = self.component_logpdf(x) + np.log(self.weights)
        return np.exp(a - _logsumexp(a)[:, None])

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "loglik": self.loglik,
            "n_iter": self.n_iter,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureModel":
        return cls(
            d["weights"], d["means"], d["covariances"],
            d.get("loglik", math.nan), d.get("n_iter", 0), d.get("converged", True),
        )


def _logsumexp(a):
    m = np.max(a, axis=1)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(np.sum(np.exp(a - m[:, None]), axis=1))


def _gauss_logpdf(x, mean, cov):
    vals, vecs = np.linalg.eigh(cov)
    if np.any(vals <= 0):
        raise np.linalg.LinAlgError("singular covariance")
    z = (x - mean) @ vecs / np.sqrt(vals)
    return -0.5 * np.sum(z * z, axis=1) - 0.5 * np.sum(np.log(vals)) - math.log(2 * math.pi)


def _floor_cov(scatter, floor):
    """Constrained MLE: clip the eigenvalues of the scatter matrix at ``floor``."""
    scatter = 0.5 * (scatter + scatter.T)
    vals, vecs = np.linalg.eigh(scatter)
    return (vecs * np.maximum(vals, floor)) @ vecs.T


def _kmeanspp(x, k, rng):
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min(((x[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        idx = rng.integers(len(x)) if total <= 0 else rng.choice(len(x), p=d2 / total)
        centers.append(x[idx])
    return np.array(centers)


def _em_once(x, k, rng, tol, max_iter, floor, trace):
    n = len(x)
    means = _kmeanspp(x, k, rng)
    base_cov = _floor_cov(np.cov(x.T, bias=True), floor)
    covs = np.repeat(base_cov[None], k, axis=0)
    weights = np.full(k, 1.0 / k)
    prev = -math.inf
    ll = -math.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # E-step
        logp = np.column_stack([_gauss_logpdf(x, means[j], covs[j]) for j in range(k)])
        with np.errstate(divide="ignore"):
            a = logp + np.log(weights)
        norm = _logsumexp(a)
        ll = float(math.fsum(norm))
        trace.append(ll)
        if ll < prev - 1e-9 * max(1.0, abs(prev)):
            raise AssertionError(f"EM log-likelihood decreased: {prev} -> {ll}")
        if ll - prev <= tol * max(1.0, abs(ll)):
            converged = True
            break
        prev = ll
        resp = np.exp(a - norm[:, None])
        # M-step
        nk = resp.sum(axis=0)
        weights = nk / n
        for j in range(k):
            if nk[j] < 1e-10:
                continue  # empty component keeps its parameters with zero weight
            means[j] = resp[:, j] @ x / nk[j]
            diff = x - means[j]
            covs[j] = _floor_cov((resp[:, j, None] * diff).T @ diff / nk[j], floor)
        weights = weights / weights.sum()
    return MixtureModel(weights, means, covs, ll, it, converged)


def fit_mixture(couples, K: int, seed=0, tol=1e-8, max_iter=500, restarts=5, cov_floor=COV_FLOOR, trace=None):
    """Fit a K-component Gaussian mixture to influenceability couples by EM.

    Full 2x2 covariances with eigenvalues floored at ``cov_floor``,
    k-means++ seeding, best log-likelihood over ``restarts`` runs (each
    with a seed spawned from ``seed``). Components are returned sorted by
    their first coordinate. ``K == 1`` gives the sample mean and (biased)
    covariance directly. Pass a list as ``trace`` to collect the per
    iteration log-likelihoods of every restart.
    """
    x = np.array([list(c) for c in couples], dtype=float).reshape(-1, 2)
    if K < 1:
        raise ValueError("K must be >= 1")
    if len(x) < 2 * K:
        raise TooFewCouples(f"{len(x)} couples cannot support K={K} (need >= {2 * K})")
    if not np.all(np.isfinite(x)):
        raise ValueError("couples must be finite")
    if K == 1:
        mean = x.mean(axis=0)
        cov = _floor_cov(np.cov(x.T, bias=True), cov_floor)
        model = MixtureModel([1.0], mean[None], cov[None])
        return MixtureModel(model.weights, model.means, model.covariances, model.score(x), 1, True)

    best = None
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    for child in root.spawn(restarts):
        run_trace = []
        m = _em_once(x, K, np.random.default_rng(child), tol, max_iter, cov_floor, run_trace)
        if trace is not None:
            trace.append(run_trace)
        if best is None or m.loglik > best.loglik:
            best = m
    order = np.argsort(best.means[:, 0], kind="stable")
    return MixtureModel(
        best.weights[order], best.means[order], best.covariances[order], best.loglik, best.n_iter, best.converged
    )


def training_sse(games, candidates) -> np.ndarray:
    """One-step squared residuals summed over both transitions, per candidate."""
    cand = np.array([list(c) for c in candidates], dtype=float).reshape(-1, 2)
    games = list(games)
    sse = np.zeros(len(cand))
    for r in (1, 2):
        d, y = _dy(regression_samples(games, r)) if games else (np.zeros(0), np.zeros(0))
        if d.size:
            res = y[None, :] - cand[:, r - 1, None] * d[None, :]
            sse += np.sum(res * res, axis=1)
    return sse


def assign_typical(games, candidates) -> int:
    """Index of the candidate couple with the smallest training error.

    The error is the squared one-step residual of the consensus update over
    every round transition of the training games. Ties go to the lowest
    index.
    """
    cand = list(candidates)
    if not cand:
        raise ValueError("no candidates")
    games = list(games)
    if not games:
        if len(cand) == 1:
            return 0
        raise NoTrainingData(f"{len(cand)} candidates but no training games")
    return int(np.argmin(training_sse(games, cand)))


# --- linearity -----------------------------------------------------------------


@dataclass(frozen=True)
class LinearityResult:
    gamma_hat: float
    F_statistic: float
    p_value: float
    rss_linear: float
    rss_best: float
    n: int

    @property
    def linear(self) -> bool:
        """True when linearity is not rejected at the 5% level."""
        return self.p_value > 0.05


def _ols_rss(u, y):
    A = np.column_stack([np.ones_like(u), u])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    return float(r @ r)


def linearity_test(samples, y=None, gammas=LINEARITY_GAMMAS) -> LinearityResult:
    """Test ``y = b0 + a*d`` against ``y = b0 + a*sign(d)|d|**gamma``.

    ``gamma`` is profiled on a grid; the F statistic compares the residual
    sum of squares at ``gamma = 1`` to the grid minimum with (1, n - 3)
    degrees of freedom.
    """
    d, yy = _dy(samples) if y is None else (np.asarray(samples, dtype=float), np.asarray(y, dtype=float))
    n = d.size
    if n < 30:
        raise InsufficientData(f"{n} samples, need >= 30")
    gammas = np.asarray(gammas, dtype=float)
    # standardise so large powers stay well conditioned
    scale = float(np.max(np.abs(d))) or 1.0
    ds = d / scale
    rss = np.array([_ols_rss(np.sign(ds) * np.abs(ds) ** g, yy) for g in gammas])
    best = int(np.argmin(rss))
    rss1 = _ols_rss(ds, yy)
    rss_best = min(float(rss[best]), rss1)
    dof = n - 3
    if rss_best <= 0:
        F = math.inf if rss1 > 0 else 0.0
    else:
        F = max(0.0, (rss1 - rss_best) / (rss_best / dof))
    p = float(stats.f.sf(F, 1, dof)) if math.isfinite(F) else 0.0
    return LinearityResult(float(gammas[best]), float(F), p, rss1, rss_best, n)
