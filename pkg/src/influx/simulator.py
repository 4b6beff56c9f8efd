"""Synthetic cohorts generated under the consensus model.

Seeding rule: every random stream is a ``numpy.random.SeedSequence`` built
from the master seed and a fixed spawn key, so results do not depend on the
order in which groups or games are processed.

- ``(0,)``: influenceability couples of all participants
- ``(1, group, game)``: truth, initial opinions, noise and dropouts of a game
- ``(2, pair)``: one control replicate pair
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .core import InfluenceabilityPair, TaskKind, simulate_trajectory
from .datastore import Dataset, GameRecord, format_number
from .errors import InvalidSpec
from .estimation import MixtureModel
from .unpredictability import SYNTHETIC_PREFIX, ReplicatePair, synthesize_replicate

TRUTH_BAND = (0.1, 0.9)


def _rng(seed, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def default_mixture() -> MixtureModel:
    return MixtureModel.from_components([[0.05, 0.02], [0.32, 0.20]], spread=0.03)


@dataclass(frozen=True)
class PopulationSpec:
    n_participants: int = 60
    group_size: int = 6
    n_games: int = 30
    task: TaskKind = TaskKind.GAUGING
    mixture: MixtureModel = field(default_factory=default_mixture)
    initial_bias: float = 0.0
    initial_spread: float = 10.0
    noise_std: float = 3.0
    seed: int = 0
    missing_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "task", TaskKind.parse(self.task))
        problems = []
        if self.group_size < 2:
            problems.append("group_size must be >= 2")
        if self.n_participants < 2:
            problems.append("n_participants must be >= 2")
        if self.n_games < 1:
            problems.append("n_games must be >= 1")
        if self.noise_std < 0:
            problems.append("noise_std must be >= 0")
        if not self.initial_spread > 0:
            problems.append("initial_spread must be > 0")
        if not 0.0 <= self.missing_rate < 1.0:
            problems.append("missing_rate must be in [0, 1)")
        if problems:
            raise InvalidSpec("; ".join(problems))


@dataclass(frozen=True)
class GroundTruth:
    couples: dict  # participant_id -> InfluenceabilityPair
    components: dict  # participant_id -> mixture component index
    noise_std: float

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(f"# noise_std={format_number(self.noise_std)}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["participant_id", "alpha1", "alpha2", "component"])
        for pid in sorted(self.couples):
            c = self.couples[pid]
            w.writerow([pid, format_number(c.alpha1), format_number(c.alpha2), self.components[pid]])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GroundTruth":
        lines = text.splitlines()
        noise = float(lines[0].split("=", 1)[1]) if lines and lines[0].startswith("#") else float("nan")
        body = [ln for ln in lines if not ln.startswith("#")]
        couples, comps = {}, {}
        for row in csv.DictReader(body):
            pid = row["participant_id"]
            couples[pid] = InfluenceabilityPair(float(row["alpha1"]), float(row["alpha2"]))
            comps[pid] = int(row["component"])
        return cls(couples, comps, noise)


def _groups(n: int, size: int) -> list:
    ids = [f"p{i + 1:04d}" for i in range(n)]
    groups = [ids[i : i + size] for i in range(0, n, size)]
    if len(groups) > 1 and len(groups[-1]) < 2:
        groups[-2].extend(groups.pop())
    return groups


def _dropout_mask(rng, n, rate) -> np.ndarray:
    """Uniform-at-random dropouts: a dropping member leaves at a random round.

    Dropouts are cancelled, in member order, when they would leave fewer
    than two members at some round.
    """
    mask = np.zeros((n, 3), dtype=bool)
    if rate <= 0:
        return mask
    leaves = rng.random(n) < rate
    start = rng.integers(0, 3, size=n)
    for i in np.flatnonzero(leaves):
        mask[i, start[i]:] = True
    for i in np.flatnonzero(leaves):
        if (n - mask.sum(axis=0)).min() >= 2:
            break
        mask[i] = False
    return mask


def generate_population(spec: PopulationSpec):
    """Simulate a full cohort; returns ``(Dataset, GroundTruth)``.

    Each participant draws one couple from ``spec.mixture``. Participants
    are partitioned into consecutive groups of ``group_size`` (a trailing
    singleton joins the previous group). Per game the truth is uniform in
    the central 80% of the range and round-1 opinions are
    ``truth + initial_bias + N(0, initial_spread)`` clamped to the range.
    """
    if not isinstance(spec, PopulationSpec):
        raise InvalidSpec("expected a PopulationSpec")
    task = spec.task
    couples_arr, labels = spec.mixture.sample(spec.n_participants, _rng(spec.seed, 0))
    lo, hi = -0.5, 1.5
    couples_arr = np.clip(couples_arr, lo, hi)
    groups = _groups(spec.n_participants, spec.group_size)
    pid_index = {pid: i for i, pid in enumerate(pid for g in groups for pid in g)}

    games = []
    for gi, members in enumerate(groups):
        idx = [pid_index[p] for p in members]
        pairs = couples_arr[idx]
        for game in range(spec.n_games):
            rng = _rng(spec.seed, 1, gi, game)
            truth = float(rng.uniform(TRUTH_BAND[0] * task.range_max, TRUTH_BAND[1] * task.range_max))
            x1 = task.clamp(truth + spec.initial_bias + rng.normal(0.0, spec.initial_spread, size=len(members)))
            mask = _dropout_mask(rng, len(members), spec.missing_rate)
            traj = simulate_trajectory(x1, pairs, spec.noise_std, rng, task=task, dropout=mask)
            # a member who never submitted anything is not part of the record
            seen = ~np.isnan(traj).all(axis=1)
            games.append(
                GameRecord(
                    game_id=f"g{gi + 1:03d}-{game + 1:02d}",
                    session_id=f"s{gi + 1:03d}",
                    task=task,
                    truth=truth,
                    participant_ids=tuple(m for m, keep in zip(members, seen) if keep),
                    judgments=traj[seen],
                )
            )
    truth = GroundTruth(
        couples={p: InfluenceabilityPair(float(couples_arr[i, 0]), float(couples_arr[i, 1])) for p, i in pid_index.items()},
        components={p: int(labels[i]) for p, i in pid_index.items()},
        noise_std=spec.noise_std,
    )
    return Dataset(task, games), truth


@dataclass(frozen=True)
class ControlSpec:
    """Synthetic control experiment.

    Every pair has one focal participant and ``group_size - 1`` synthetic
    members copied from a simulated game. The focal revision is
    ``x(r) = lam * g_r + (1 - lam) * h + eta`` with ``g_r`` a shift-equivariant
    consensus response to past judgments, ``h`` a picture term and ``eta``
    Gaussian of scale ``noise_std``.
    """

    n_pairs: int = 500
    task: TaskKind = TaskKind.GAUGING
    lam: float = 0.7
    noise_std: float = 5.0
    shift_std: float = 12.0
    picture_std: float = 5.0
    initial_spread: float = 10.0
    group_size: int = 6
    pairs_per_participant: int = 10
    mixture: MixtureModel = field(default_factory=default_mixture)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "task", TaskKind.parse(self.task))
        if self.n_pairs < 1 or self.group_size < 2 or self.noise_std < 0 or not 0 <= self.lam <= 1:
            raise InvalidSpec("invalid control spec")


def _focal_response(x1_focal, others1, others2, couple, lam, picture):
    """Deterministic focal judgments for rounds 2 and 3."""
    g2 = x1_focal + couple[0] * (np.mean(np.append(others1, x1_focal)) - x1_focal)
    g3 = g2 + couple[1] * (np.mean(np.append(others2, g2)) - g2)
    return lam * g2 + (1 - lam) * picture, lam * g3 + (1 - lam) * picture


def generate_control_cohort(spec: ControlSpec) -> list:
    """Simulate ``spec.n_pairs`` replicate pairs; returns :class:`ReplicatePair` list."""
    task = spec.task
    n_focal = -(-spec.n_pairs // spec.pairs_per_participant)
    focal_couples, _ = spec.mixture.sample(n_focal, _rng(spec.seed, 0))
    focal_couples = np.clip(focal_couples, -0.5, 1.5)
    out = []
    for k in range(spec.n_pairs):
        rng = _rng(spec.seed, 2, k)
        owner = k // spec.pairs_per_participant
        fid = f"p{owner + 1:04d}"
        couple = focal_couples[owner]
        truth = float(rng.uniform(TRUTH_BAND[0] * task.range_max, TRUTH_BAND[1] * task.range_max))
        n_others = spec.group_size - 1
        others1 = task.clamp(truth + rng.normal(0.0, spec.initial_spread, size=n_others))
        other_couples, _ = spec.mixture.sample(n_others, rng)
        others = simulate_trajectory(others1, np.clip(other_couples, -0.5, 1.5), spec.noise_std, rng, task=task)
        picture = truth + rng.normal(0.0, spec.picture_std)
        x1 = float(task.clamp(truth + rng.normal(0.0, spec.initial_spread)))
        s = float(rng.normal(0.0, spec.shift_std))
        eta = rng.normal(0.0, spec.noise_std, size=(2, 2))  # (replicate, round)

        ids = (fid,) + tuple(f"{SYNTHETIC_PREFIX}{j + 1}" for j in range(n_others))
        base = GameRecord(
            game_id=f"c{k + 1:04d}a",
            session_id=f"c{owner + 1:04d}",
            task=task,
            truth=truth,
            participant_ids=ids,
            judgments=np.vstack([[x1, np.nan, np.nan], others]),
        )
        pair = synthesize_replicate(base, fid, x1 + s, replicate_id=f"c{k + 1:04d}b")
        rep_others = np.delete(pair.replicate_game.judgments, 0, axis=0)
        det_b = _focal_response(x1, others[:, 0], others[:, 1], couple, spec.lam, picture)
        det_r = _focal_response(x1 + s, rep_others[:, 0], rep_others[:, 1], couple, spec.lam, picture)
        raw_b = np.array([x1, det_b[0] + eta[0, 0], det_b[1] + eta[0, 1]])
        raw_r = np.array([x1 + s, det_r[0] + eta[1, 0], det_r[1] + eta[1, 1]])
        clamped = bool(np.any(task.clamp(raw_b) != raw_b) or np.any(task.clamp(raw_r) != raw_r))
        pair = pair.with_focal(base=task.clamp(raw_b), replicate=raw_r)
        if clamped and not pair.clamped:
            pair = ReplicatePair(pair.base_game, pair.replicate_game, fid, pair.shift, True)
        out.append(pair)
    return out

