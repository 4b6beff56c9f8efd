"""Prediction scenarios and repeated random sub-sampling crossvalidation.

Three predictors of a participant's round-2 or round-3 judgment from the
round-1 judgments of their group:

- ``null``: the opinion never changes.
- ``individual_alpha``: the participant's own couple, fitted on training games.
- ``typical_K``: one of K typical couples (mixture means fitted on the other
  half of the cohort), the one with the smallest training error.

For round-3 targets the other members' round-2 opinions are either
forward-simulated with the population's single typical couple
(``simulated_typical``) or taken from the record (``observed``).
"""
from __future__ import annotations

import csv
import io
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .datastore import Dataset, GameRecord, format_number
from .errors import DegenerateGroup, InsufficientData, InsufficientGames, MissingModel
from .estimation import SLOPE_EPS, fit_individual, fit_mixture

OTHERS_MODES = ("simulated_typical", "observed")


@dataclass(frozen=True)
class PredictorSpec:
    method: str = "null"
    K: int | None = None
    others_mode: str = "simulated_typical"
    target_round: int = 3

    def __post_init__(self):
        if self.method not in ("null", "individual_alpha", "typical"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "typical" and (self.K is None or self.K < 1):
            raise ValueError("typical method requires K >= 1")
        if self.others_mode not in OTHERS_MODES:
            raise ValueError(f"others_mode must be one of {OTHERS_MODES}")
        if self.target_round not in (2, 3):
            raise ValueError("target_round must be 2 or 3")

    @property
    def name(self) -> str:
        return f"typical_{self.K}" if self.method == "typical" else self.method

    @classmethod
    def parse(cls, name: str, **kw) -> "PredictorSpec":
        name = name.strip()
        if name.startswith("typical_"):
            return cls("typical", int(name.split("_", 1)[1]), **kw)
        return cls(name, **kw)


# --- per-game features -------------------------------------------------------


@dataclass(frozen=True)
class GameFeatures:
    """Everything a prediction or a fit needs from a participant's games.

    All fields are arrays over the participant's usable games.
    """

    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    m1: np.ndarray  # round-1 mean over present members
    n1: np.ndarray  # members present at round 1
    osum2: np.ndarray  # sum of the others' recorded round-2 judgments
    no2: np.ndarray  # others present at round 2
    d1: np.ndarray
    y1: np.ndarray
    d2: np.ndarray
    y2: np.ndarray
    game_ids: tuple

    def __len__(self):
        return len(self.x1)


def game_features(games) -> GameFeatures:
    """Features of ``(GameRecord, member_index)`` tuples (full games expected)."""
    cols = {k: [] for k in ("x1", "x2", "x3", "m1", "n1", "osum2", "no2", "d1", "y1", "d2", "y2")}
    ids = []
    for g, k in games:
        j = g.judgments
        x = j[k]
        p1, p2 = ~np.isnan(j[:, 0]), ~np.isnan(j[:, 1])
        if np.isnan(x).any() or p1.sum() < 2:
            continue
        m1 = float(j[p1, 0].mean())
        others2 = np.delete(j[:, 1], k)
        others2 = others2[~np.isnan(others2)]
        if p2.sum() >= 2:
            m2 = float(j[p2, 1].mean())
            d2, y2 = m2 - x[1], x[2] - x[1]
        else:
            d2 = y2 = 0.0
        vals = dict(
            x1=x[0], x2=x[1], x3=x[2], m1=m1, n1=float(p1.sum()),
            osum2=float(others2.sum()), no2=float(others2.size),
            d1=m1 - x[0], y1=x[1] - x[0], d2=d2, y2=y2,
        )
        for key, v in vals.items():
            cols[key].append(v)
        ids.append(g.game_id)
    return GameFeatures(**{k: np.array(v, dtype=float) for k, v in cols.items()}, game_ids=tuple(ids))


def _predict(f: GameFeatures, a1, a2, target_round: int, others_mode: str, population=None):
    """Vectorised prediction; ``a1``/``a2`` broadcast against the game axis."""
    p2 = f.x1 + a1 * (f.m1 - f.x1)
    if target_round == 2:
        return p2
    if others_mode == "observed":
        if np.any(f.no2 < 1):
            raise DegenerateGroup("no other member recorded at round 2")
        m2 = (p2 + f.osum2) / (1.0 + f.no2)
    else:
        if population is None:
            raise MissingModel("simulated_typical mode needs the population couple")
        # mean of the target's predicted opinion and the others advanced
        # with the population couple, in closed form
        m2 = f.m1 + (a1 - population[0]) * (f.m1 - f.x1) / f.n1
    return p2 + a2 * (m2 - p2)


def _targets(f: GameFeatures, target_round: int):
    return f.x2 if target_round == 2 else f.x3


def predict(game: GameRecord, participant_id, spec: PredictorSpec, couple=None, population=None) -> float:
    """Predict one participant's judgment at ``spec.target_round``.

    Only round-1 judgments of the group are used, plus the others' recorded
    round-2 judgments in ``observed`` mode. ``couple`` is the participant's
    influenceability pair (fitted or typical); ``population`` is the
    single typical couple used to advance the other members. No noise is
    added.
    """
    k = game.index(participant_id)
    x = game.judgments[:, 0]
    if np.isnan(x[k]):
        raise ValueError(f"{participant_id} has no round-1 judgment in {game.game_id}")
    if spec.method == "null":
        return float(x[k])
    if couple is None:
        raise MissingModel(f"{spec.name} needs a fitted couple")
    present = ~np.isnan(x)
    if present.sum() < 2:
        raise DegenerateGroup(f"{game.game_id}: fewer than 2 round-1 judgments")
    m1 = float(x[present].mean())
    others2 = np.delete(game.judgments[:, 1], k)
    others2 = others2[~np.isnan(others2)]
    f = GameFeatures(
        x1=np.array([x[k]]), x2=np.array([np.nan]), x3=np.array([np.nan]),
        m1=np.array([m1]), n1=np.array([float(present.sum())]),
        osum2=np.array([others2.sum()]), no2=np.array([float(others2.size)]),
        d1=np.zeros(1), y1=np.zeros(1), d2=np.zeros(1), y2=np.zeros(1), game_ids=(game.game_id,),
    )
    pop = None if population is None else tuple(population)
    a1, a2 = tuple(couple)
    return float(_predict(f, a1, a2, spec.target_round, spec.others_mode, pop)[0])


# --- bootstrap -----------------------------------------------------------------


def bootstrap_ci(per_participant_errors, level: float = 0.95, resamples: int = 2000, seed=0):
    """Percentile bootstrap interval of the mean over participants."""
    v = np.asarray(per_participant_errors, dtype=float)
    if v.size < 2:
        raise InsufficientData("bootstrap needs at least 2 participants")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = rng.integers(0, v.size, size=(resamples, v.size))
    means = v[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [tail, 1.0 - tail])
    return float(lo), float(hi)


# --- crossvalidation -------------------------------------------------------------


@dataclass
class PredictionReport:
    """Crossvalidation results.

    ``rows`` are reported on the 0-100 scale (counting errors divided by
    5); ``per_participant`` keeps native units:
    ``{(method, size): {pid: (rmse_i, mae_i)}}``.
    """

    rows: list
    per_participant: dict
    iterations: int
    seed: int
    task: str
    target_round: int
    others_mode: str
    report_scale: float
    halves: tuple = field(default=((), ()))

    def row(self, method: str, training_size: int) -> dict:
        for r in self.rows:
            if r["method"] == method and r["training_size"] == training_size:
                return r
        raise KeyError((method, training_size))

    def series(self, method: str, column: str = "rmse") -> np.ndarray:
        return np.array([r[column] for r in self.rows if r["method"] == method])

    @property
    def methods(self) -> list:
        return list(dict.fromkeys(r["method"] for r in self.rows))

    @property
    def training_sizes(self) -> list:
        return sorted({r["training_size"] for r in self.rows})

    CSV_COLUMNS = ("method", "training_size", "rmse", "mae", "ci_lo", "ci_hi", "rmse_pooled")

    def to_csv(self, columns=CSV_COLUMNS) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(columns)
        for r in self.rows:
            w.writerow([r[c] if c in ("method", "training_size") else format_number(r[c]) for c in columns])
        return out.getvalue()

    def per_participant_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["method", "training_size", "participant_id", "rmse_i", "mae_i"])
        for (method, size), table in self.per_participant.items():
            for pid in sorted(table):
                rmse_i, mae_i = table[pid]
                w.writerow([method, size, pid, format_number(rmse_i), format_number(mae_i)])
        return out.getvalue()

    def to_json(self) -> str:
        doc = {
            "iterations": self.iterations,
            "seed": self.seed,
            "task": self.task,
            "target_round": self.target_round,
            "others_mode": self.others_mode,
            "report_scale": self.report_scale,
            "halves": [list(h) for h in self.halves],
            "rows": self.rows,
        }
        return json.dumps(doc, indent=1) + "\n"


def _derive(seed, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _components(dataset: Dataset, participants) -> list:
    """Participants linked by shared sessions, so no group straddles halves."""
    parent = {p: p for p in participants}

    def find(p):
        while parent[p] != p:
            parent[p] = parent[parent[p]]
            p = parent[p]
        return p

    by_session: dict = {}
    for p in participants:
        for g, _ in dataset.games_of(p):
            by_session.setdefault(g.session_id, []).append(p)
    for members in by_session.values():
        root = find(members[0])
        for q in members[1:]:
            parent[find(q)] = root
    comps: dict = {}
    for p in participants:
        comps.setdefault(find(p), []).append(p)
    return sorted((sorted(c) for c in comps.values()), key=lambda c: c[0])


def split_halves(dataset: Dataset, participants, rng) -> tuple:
    """Random two-way split of participants, stratified by group."""
    comps = _components(dataset, participants)
    order = rng.permutation(len(comps))
    halves = ([], [])
    for i in order:
        target = 0 if len(halves[0]) <= len(halves[1]) else 1
        halves[target].extend(comps[i])
    return tuple(sorted(h) for h in halves)


@dataclass(frozen=True)
class _PassModels:
    population: tuple
    candidates: dict  # K -> (K, 2) array


def _evaluate_participant(args):
    """Accumulate squared/absolute errors for one validation participant."""
    f, models, methods, sizes, iterations, rng_seed, target_round, others_mode = args
    G = len(f)
    y = _targets(f, target_round)
    pop = models.population
    out = {}

    def stats(err, count):
        return (math.fsum(np.ravel(err * err)), math.fsum(np.ravel(np.abs(err))), count)

    fixed = {}
    if "null" in methods:
        fixed["null"] = stats(y - f.x1, G)
    for K, cand in models.candidates.items():
        if K == 1 and f"typical_{K}" in methods:
            fixed["typical_1"] = stats(y - _predict(f, cand[0, 0], cand[0, 1], target_round, others_mode, pop), G)
    for name, s in fixed.items():
        for m in sizes:
            out[(name, m)] = s

    multi = {K: c for K, c in models.candidates.items() if K > 1 and f"typical_{K}" in methods}
    if "individual_alpha" not in methods and not multi:
        return out

    rng = np.random.default_rng(rng_seed)
    ranks = rng.random((iterations, G)).argsort(axis=1).argsort(axis=1)
    dd1, dy1, dd2, dy2 = f.d1 * f.d1, f.d1 * f.y1, f.d2 * f.d2, f.d2 * f.y2
    cand_pred, cand_sse = {}, {}
    for K, cand in multi.items():
        cand_pred[K] = np.stack([_predict(f, c[0], c[1], target_round, others_mode, pop) for c in cand])
        cand_sse[K] = np.stack([(f.y1 - c[0] * f.d1) ** 2 + (f.y2 - c[1] * f.d2) ** 2 for c in cand])
    for m in sizes:
        train = (ranks < m).astype(float)
        valid = 1.0 - train
        count = iterations * (G - m)
        if "individual_alpha" in methods:
            s11, s12, s21, s22 = train @ dd1, train @ dy1, train @ dd2, train @ dy2
            a1 = np.where(s11 > SLOPE_EPS, s12 / np.where(s11 > SLOPE_EPS, s11, 1.0), 0.0)
            a2 = np.where(s21 > SLOPE_EPS, s22 / np.where(s21 > SLOPE_EPS, s21, 1.0), 0.0)
            pred = _predict(f, a1[:, None], a2[:, None], target_round, others_mode, pop)
            out[("individual_alpha", m)] = stats((y - pred) * valid, count)
        for K in multi:
            choice = np.argmin(train @ cand_sse[K].T, axis=1)
            pred = cand_pred[K][choice]
            out[(f"typical_{K}", m)] = stats((y - pred) * valid, count)
    return out


def crossvalidate(
    dataset: Dataset,
    methods=("null", "individual_alpha", "typical_1", "typical_2"),
    training_sizes=range(1, 16),
    iterations: int = 300,
    seed: int = 0,
    target_round: int = 3,
    others_mode: str = "simulated_typical",
    restarts: int = 5,
    level: float = 0.95,
    resamples: int = 2000,
    jobs: int = 1,
) -> PredictionReport:
    """Two-pass crossvalidation over random halves of the cohort.

    Half A's individually fitted couples give the typical couples (mixture
    means for each K, plus the single population couple); half B is
    predicted, then the roles are swapped. For every validation
    participant and training size, ``iterations`` random training subsets
    are drawn (nested across sizes, so sizes share random numbers); the
    remaining games are validation games. Methods that need no training
    (``null``, ``typical_1``) are scored once on all of the participant's
    games and repeated at every size.

    ``RMSE_i`` pools a participant's validation errors over all iterations;
    the reported RMSE is the mean of ``RMSE_i`` over participants, with a
    bootstrap interval over participants. ``rmse_pooled`` pools all squared
    errors instead.
    """
    methods = [PredictorSpec.parse(m, others_mode=others_mode, target_round=target_round).name for m in methods]
    sizes = sorted(int(m) for m in training_sizes)
    if not sizes or sizes[0] < 1:
        raise ValueError("training sizes must be >= 1")
    participants = dataset.participants
    feats = {p: game_features(dataset.full_games(p)) for p in participants}
    short = [p for p in participants if len(feats[p]) <= sizes[-1]]
    if short:
        raise InsufficientGames(
            f"{len(short)} participant(s) have <= {sizes[-1]} usable full games (e.g. {short[:3]})"
        )
    if len(participants) < 4:
        raise InsufficientGames("need at least 4 participants to split into halves")
    if others_mode == "observed" and target_round == 3:
        for p in participants:
            if np.any(feats[p].no2 < 1):
                raise InsufficientGames(f"{p}: a full game has no other member at round 2")

    Ks = sorted({int(m.split("_")[1]) for m in methods if m.startswith("typical_")} | {1})
    halves = split_halves(dataset, participants, _derive(seed, 0))
    p_index = {p: i for i, p in enumerate(participants)}
    tasks = []
    for pas in (0, 1):
        train_half, test_half = halves[pas], halves[1 - pas]
        couples = [tuple(fit_individual(dataset.full_games(p))) for p in train_half]
        candidates = {}
        for K in Ks:
            mix = fit_mixture(couples, K, seed=np.random.SeedSequence(seed, spawn_key=(1, pas, K)), restarts=restarts)
            candidates[K] = mix.means.copy()
        models = _PassModels(population=tuple(candidates[1][0]), candidates=candidates)
        for p in test_half:
            rng_seed = np.random.SeedSequence(seed, spawn_key=(2, p_index[p]))
            tasks.append((p, (feats[p], models, methods, sizes, iterations, rng_seed, target_round, others_mode)))

    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_evaluate_participant, [t[1] for t in tasks], chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_evaluate_participant(t[1]) for t in tasks]
    acc = {p: res for (p, _), res in zip(tasks, results)}

    scale = dataset.task.report_scale
    rows, per_participant = [], {}
    for method in methods:
        for m in sizes:
            table = {}
            sq_tot, n_tot = [], []
            for p in sorted(acc):
                sq, ab, cnt = acc[p][(method, m)]
                table[p] = (math.sqrt(sq / cnt), ab / cnt)
                sq_tot.append(sq)
                n_tot.append(cnt)
            per_participant[(method, m)] = table
            rmse_i = np.array([v[0] for v in table.values()])
            mae_i = np.array([v[1] for v in table.values()])
            # one resampling stream per method, shared across training sizes
            lo, hi = bootstrap_ci(rmse_i, level, resamples, _derive(seed, 3, zlib.crc32(method.encode())))
            rows.append(
                {
                    "method": method,
                    "training_size": m,
                    "rmse": math.fsum(rmse_i) / len(rmse_i) / scale,
                    "mae": math.fsum(mae_i) / len(mae_i) / scale,
                    "ci_lo": lo / scale,
                    "ci_hi": hi / scale,
                    "rmse_pooled": math.sqrt(math.fsum(sq_tot) / math.fsum(n_tot)) / scale,
                    "n_participants": len(rmse_i),
                }
            )
    return PredictionReport(
        rows=rows,
        per_participant=per_participant,
        iterations=iterations,
        seed=seed,
        task=dataset.task.value,
        target_round=target_round,
        others_mode=others_mode,
        report_scale=scale,
        halves=halves,
    )


def null_closed_form(dataset: Dataset, target_round: int = 3) -> float:
    """Mean over participants of the root-mean-square of ``x(target) - x(1)``.

    Computed directly from the data, independently of :func:`crossvalidate`;
    reported on the 0-100 scale.
    """
    vals = []
    for p in dataset.participants:
        diffs = []
        for g, k in dataset.full_games(p):
            if np.count_nonzero(~np.isnan(g.judgments[:, 0])) < 2:
                continue
            diffs.append(g.judgments[k, target_round - 1] - g.judgments[k, 0])
        if diffs:
            vals.append(math.sqrt(math.fsum(d * d for d in diffs) / len(diffs)))
    return math.fsum(vals) / len(vals) / dataset.task.report_scale


FIGURES = {
    "fig2": ("null", "individual_alpha", "typical_1", "typical_2"),
    "fig3": ("typical_1", "typical_2", "typical_3", "typical_4"),
}


def write_figure_files(report: PredictionReport, outdir, floor: float | None = None) -> list:
    """Plot-ready CSVs: fig2/fig3 (RMSE), figS1 (RMSE with CIs), figS2 (MAE)."""
    from pathlib import Path

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    present = set(report.methods)

    def dump(name, methods, cols):
        rows = [r for r in report.rows if r["method"] in methods]
        if not rows:
            return
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("method", "training_size") + cols)
        for r in rows:
            w.writerow([r["method"], r["training_size"]] + [format_number(r[c]) for c in cols])
        if floor is not None and name in ("fig2", "figS1"):
            w.writerow(["intrinsic_floor", ""] + [format_number(floor)] + [""] * (len(cols) - 1))
        path = outdir / f"{name}.csv"
        path.write_text(out.getvalue(), encoding="utf-8")
        written.append(path)

    for name, methods in FIGURES.items():
        dump(name, [m for m in methods if m in present], ("rmse",))
    dump("figS1", sorted(present), ("rmse", "ci_lo", "ci_hi"))
    dump("figS2", sorted(present), ("mae",))
    return written

