"""Intrinsic unpredictability from replicated control games.

A focal participant plays the same picture twice. In the replicate, every
other member's judgments (all rounds) are the base judgments shifted by
``s = x'_i(1) - x_i(1)``. If the part of the revision driven by past
judgments is shift-equivariant, then ``x'_i(r) - x_i(r) = lambda*s + eta' - eta``
and, for independent zero-mean ``eta, eta'`` of equal variance,
``E[eta**2] = E[(eta' - eta)**2] / 2``. The estimator never assumes a
distribution family for ``eta``.

When ``eta`` and ``eta'`` have unequal variances the estimate is their
average variance; a positive covariance would make it a lower bound. The
round-3 estimate also conditions on the others' round-2 judgments, so it
under-estimates the floor faced by predictors that only see round 1.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .datastore import Dataset, GameRecord
from .errors import IncompleteBaseGame, InfeasibleSchedule, UnidentifiableLambda

SYNTHETIC_PREFIX = "synthetic-"
LAMBDA_GRID = np.round(np.arange(0.0, 1.0 + 1e-9, 0.01), 2)

# Game order used in the original control sessions: games 1-10 are played
# twice, 11-20 are fillers; shown three at a time.
ORIGINAL_SCHEDULE = (
    1, 2, 11, 3, 4, 12, 6, 13, 5, 14, 7, 8, 9, 1, 15,
    4, 10, 16, 2, 6, 17, 7, 18, 3, 8, 5, 19, 10, 9, 20,
)


@dataclass(frozen=True)
class ReplicatePair:
    base_game: GameRecord
    replicate_game: GameRecord
    focal_id: str
    shift: float
    clamped: bool = False

    @property
    def focal_base(self) -> np.ndarray:
        return self.base_game.judgments[self.base_game.index(self.focal_id)]

    @property
    def focal_replicate(self) -> np.ndarray:
        return self.replicate_game.judgments[self.replicate_game.index(self.focal_id)]

    def delta(self, r: int) -> float:
        return float(self.focal_replicate[r - 1] - self.focal_base[r - 1])

    def with_focal(self, base=None, replicate=None) -> "ReplicatePair":
        """Fill in the focal participant's judgments (rounds 1-3)."""
        b, rp = self.base_game, self.replicate_game
        clamped = self.clamped
        if base is not None:
            j = b.judgments.copy()
            j[b.index(self.focal_id)] = base
            b = b.with_judgments(j)
        if replicate is not None:
            j = rp.judgments.copy()
            vals = np.asarray(replicate, dtype=float)
            clipped = b.task.clamp(vals)
            clamped = clamped or bool(np.any(clipped != vals))
            j[rp.index(self.focal_id)] = clipped
            rp = rp.with_judgments(j)
        return ReplicatePair(b, rp, self.focal_id, self.shift, clamped)


def synthesize_replicate(base: GameRecord, focal_id, new_focal_initial: float, replicate_id=None) -> ReplicatePair:
    """Build the shifted replicate of ``base`` for ``focal_id``.

    Every non-focal judgment, at every round, is shifted by
    ``s = new_focal_initial - x_focal(1)``. The focal member's round-1 value
    becomes ``new_focal_initial``; rounds 2-3 are left missing. Values
    pushed outside the task range are clamped and the pair is flagged.
    """
    k = base.index(focal_id)
    others = np.delete(base.judgments, k, axis=0)
    if np.isnan(others).any() or np.isnan(base.judgments[k, 0]):
        raise IncompleteBaseGame(f"game {base.game_id}: non-focal members or focal round 1 missing")
    s = float(new_focal_initial) - float(base.judgments[k, 0])
    shifted = base.judgments + s
    shifted[k] = [new_focal_initial, math.nan, math.nan]
    clipped = base.task.clamp(shifted)
    clamped = bool(np.any((clipped != shifted) & ~np.isnan(shifted)))
    rep = base.with_judgments(
        clipped,
        game_id=replicate_id or f"{base.game_id}'",
        replicate_of=base.game_id,
    )
    return ReplicatePair(base, rep, focal_id, s, clamped)


def pairs_from_dataset(dataset: Dataset) -> list:
    """Recover replicate pairs from a control dataset.

    Replicate games carry the base game id in ``replicate_of``; the focal
    member is the one participant whose id lacks the synthetic prefix.
    """
    by_id = {g.game_id: g for g in dataset.games}
    pairs = []
    for g in dataset.games:
        if not g.replicate_of:
            continue
        base = by_id[g.replicate_of]
        focal = [p for p in g.participant_ids if not str(p).startswith(SYNTHETIC_PREFIX)]
        if len(focal) != 1:
            raise ValueError(f"replicate {g.game_id}: expected one non-synthetic member, found {focal}")
        fid = focal[0]
        s = float(g.judgments[g.index(fid), 0] - base.judgments[base.index(fid), 0])
        others_b = np.delete(base.judgments, base.index(fid), axis=0)
        others_r = np.delete(g.judgments, g.index(fid), axis=0)
        # values sitting on a range boundary may be clamping artefacts
        lo, hi = 0.0, g.task.range_max
        clamped = bool(
            np.any(np.abs(others_r - others_b - s) > 1e-9)
            or np.any((g.judgments[g.index(fid)] <= lo) | (g.judgments[g.index(fid)] >= hi))
            or np.any((base.judgments[base.index(fid)] <= lo) | (base.judgments[base.index(fid)] >= hi))
        )
        pairs.append(ReplicatePair(base, g, fid, s, clamped))
    return pairs


def control_dataset(pairs) -> Dataset:
    games = []
    for p in pairs:
        games.extend([p.base_game, p.replicate_game])
    return Dataset(games[0].task, games) if games else Dataset("gauging")


# --- schedule ------------------------------------------------------------------


def separation_ok(sequence, n_replicated: int) -> bool:
    """Every replicated game has at least one filler between its two showings."""
    seq = list(sequence)
    for g in range(1, n_replicated + 1):
        pos = [i for i, v in enumerate(seq) if v == g]
        if len(pos) != 2:
            return False
        if not any(v > n_replicated for v in seq[pos[0] + 1 : pos[1]]):
            return False
    return True


def schedule_control_session(replicated_game_count: int = 10, filler_count: int = 10) -> list:
    """Order of games in a control session.

    Replicated games are numbered ``1..R`` and fillers ``R+1..R+F``. For
    ``(10, 10)`` the original session order is returned. Otherwise all
    first showings come before all second showings, with enough fillers in
    the middle that every pair is separated by at least one filler, and by
    at least three games whenever ``R + F >= 4``; the remaining fillers are
    spread evenly over the two halves.
    """
    R, F = int(replicated_game_count), int(filler_count)
    if R < 0 or F < 0:
        raise ValueError("counts must be non-negative")
    if (R, F) == (10, 10):
        return list(ORIGINAL_SCHEDULE)
    if R == 0:
        return list(range(1, F + 1))
    if F == 0:
        raise InfeasibleSchedule(f"{R} replicated games and no filler: pairs cannot be separated")
    mid = min(F, max(1, 4 - R))
    rest = F - mid
    head, tail = (rest + 1) // 2, rest // 2
    fillers = iter(range(R + 1, R + F + 1))

    def interleave(games, n_fill):
        out = list(games)
        # insert fillers at evenly spaced slots after the first game
        for j in range(n_fill):
            pos = 1 + round((j + 1) * len(games) / (n_fill + 1)) + j
            out.insert(min(pos, len(out)), next(fillers))
        return out

    first = interleave(range(1, R + 1), head)
    middle = [next(fillers) for _ in range(mid)]
    second = interleave(range(1, R + 1), tail)
    seq = first + middle + second
    assert separation_ok(seq, R)
    return seq


def format_schedule(sequence, per_block: int = 3) -> str:
    seq = list(sequence)
    blocks = [seq[i : i + per_block] for i in range(0, len(seq), per_block)]
    return " | ".join(", ".join(str(v) for v in b) for b in blocks)


def feasible_by_enumeration(replicated_game_count: int, filler_count: int) -> bool:
    """Brute-force feasibility of the separation constraint (small counts only)."""
    R, F = replicated_game_count, filler_count
    items = [g for g in range(1, R + 1) for _ in range(2)] + list(range(R + 1, R + F + 1))
    if len(items) > 10:
        raise ValueError("enumeration limited to 10 games")
    return any(separation_ok(p, R) for p in set(itertools.permutations(items)))


# --- estimator -----------------------------------------------------------------


def _deltas(pairs_or_d1, dr=None, r=2):
    if dr is not None:
        return np.asarray(pairs_or_d1, dtype=float), np.asarray(dr, dtype=float)
    items = list(pairs_or_d1)
    if items and isinstance(items[0], ReplicatePair):
        return np.array([p.delta(1) for p in items]), np.array([p.delta(r) for p in items])
    arr = np.asarray(items, dtype=float).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def lambda_star(pairs, dr=None, r: int = 2) -> float:
    """Weight of past judgments minimising the replicate residual.

    ``pairs`` is a sequence of ``(delta1, delta_r)``, of
    :class:`ReplicatePair` (deltas taken at round ``r``), or the ``delta1``
    array with ``dr`` given separately. Closed form
    ``sum(d1*dr) / sum(d1**2)``, clamped to ``[0, 1]``.
    """
    d1, drr = _deltas(pairs, dr, r)
    s11 = math.fsum(d1 * d1)
    if d1.size == 0 or s11 == 0.0:
        raise UnidentifiableLambda("all initial shifts are zero")
    return min(1.0, max(0.0, math.fsum(d1 * drr) / s11))


def intrinsic_std(pairs, lam: float, dr=None, r: int = 2) -> float:
    """Root mean of ``(delta_r - lam * delta1)**2 / 2`` over all pairs."""
    d1, drr = _deltas(pairs, dr, r)
    if d1.size == 0:
        raise ValueError("no pairs")
    e = drr - lam * d1
    return math.sqrt(math.fsum(0.5 * e * e) / d1.size)


def lambda_curve(pairs, dr=None, grid=LAMBDA_GRID, r: int = 2) -> np.ndarray:
    """``(len(grid), 2)`` array of ``(lambda, intrinsic_std)``."""
    d1, drr = _deltas(pairs, dr, r)
    return np.array([(lam, intrinsic_std(d1, lam, drr)) for lam in grid])


@dataclass(frozen=True)
class UnpredictabilityEstimate:
    lambda_star: float
    std_eta_round2: float
    std_eta_round3: float
    lambda_star_round3: float
    lambda_curve: np.ndarray
    lambda_curve_round3: np.ndarray
    n_pairs: int
    n_excluded: int

    def to_dict(self) -> dict:
        return {
            "lambda_star": self.lambda_star,
            "lambda_star_round3": self.lambda_star_round3,
            "std_eta_round2": self.std_eta_round2,
            "std_eta_round3": self.std_eta_round3,
            "n_pairs": self.n_pairs,
            "n_excluded": self.n_excluded,
            "note": (
                "Average intrinsic variance if eta and eta' differ in variance; "
                "the round-3 value under-estimates the floor for round-1-only predictors."
            ),
        }


def estimate_unpredictability(pairs) -> UnpredictabilityEstimate:
    """Fit lambda and the intrinsic std separately for rounds 2 and 3.

    Clamped pairs and pairs with missing focal judgments are excluded.
    """
    pairs = list(pairs)
    usable = [
        p for p in pairs
        if not p.clamped and not np.isnan(p.focal_base).any() and not np.isnan(p.focal_replicate).any()
    ]
    if not usable:
        raise ValueError("no usable replicate pairs")
    d1 = np.array([p.delta(1) for p in usable])
    out = {}
    for r in (2, 3):
        dr = np.array([p.delta(r) for p in usable])
        lam = lambda_star(d1, dr)
        out[r] = (lam, intrinsic_std(d1, lam, dr), lambda_curve(d1, dr))
    return UnpredictabilityEstimate(
        lambda_star=out[2][0],
        std_eta_round2=out[2][1],
        std_eta_round3=out[3][1],
        lambda_star_round3=out[3][0],
        lambda_curve=out[2][2],
        lambda_curve_round3=out[3][2],
        n_pairs=len(usable),
        n_excluded=len(pairs) - len(usable),
    )
