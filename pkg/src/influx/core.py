"""Linear consensus model with round-dependent influenceability.

Every participant revises their opinion toward the group mean:

    x_i(r+1) = x_i(r) + alpha_i(r) * (mean(r) - x_i(r))

Opinions are float arrays where ``nan`` marks a missing judgment.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateGroup

# The group mean averages over every present member, the focal one included.
INCLUDE_SELF_IN_MEAN = True

ALPHA_SANITY_BOUNDS = (-0.5, 1.5)


class TaskKind(enum.Enum):
    GAUGING = "gauging"
    COUNTING = "counting"

    @property
    def range_max(self) -> float:
        return 100.0 if self is TaskKind.GAUGING else 500.0

    @property
    def report_scale(self) -> float:
        """Divisor mapping errors onto the 0-100 scale."""
        return 1.0 if self is TaskKind.GAUGING else 5.0

    def clamp(self, values):
        return np.clip(values, 0.0, self.range_max)

    @classmethod
    def parse(cls, value) -> "TaskKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown task kind {value!r}") from None


@dataclass(frozen=True)
class InfluenceabilityPair:
    """Influenceability after round 1 and after round 2.

    Fitted pairs are never clamped; the ``degenerate`` flags record rounds
    whose slope was unidentifiable and defaulted to 0.
    """

    alpha1: float
    alpha2: float
    degenerate1: bool = False
    degenerate2: bool = False

    def __iter__(self):
        yield self.alpha1
        yield self.alpha2

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha1, self.alpha2], dtype=float)

    def __getitem__(self, r):
        return (self.alpha1, self.alpha2)[r]


@dataclass(frozen=True)
class GroupState:
    opinions: np.ndarray
    round: int = 1
    participant_ids: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "opinions", np.asarray(self.opinions, dtype=float))
        if self.round not in (1, 2, 3):
            raise ValueError(f"round must be 1, 2 or 3, got {self.round}")


def _as_opinions(state) -> np.ndarray:
    if isinstance(state, GroupState):
        return state.opinions
    return np.asarray(state, dtype=float)


def group_mean(state) -> float:
    """Mean over present opinions (missing entries are ``nan``)."""
    x = _as_opinions(state)
    present = x[~np.isnan(x)]
    if present.size < 2:
        raise DegenerateGroup(f"{present.size} present opinion(s); at least 2 required")
    return float(present.mean())


def revise(opinions, alphas, mean=None) -> np.ndarray:
    """One consensus update on a raw opinion array; ``nan`` stays ``nan``."""
    x = np.asarray(opinions, dtype=float)
    a = np.broadcast_to(np.asarray(alphas, dtype=float), x.shape)
    m = group_mean(x) if mean is None else mean
    return x + a * (m - x)


def consensus_step(state, alphas):
    """Advance a group by one round of the consensus model.

    Accepts a :class:`GroupState` (returns one with ``round`` incremented)
    or a bare opinion array (returns an array).
    """
    if isinstance(state, GroupState):
        if state.round >= 3:
            raise ValueError("the model has three rounds; cannot step past round 3")
        return replace(state, opinions=revise(state.opinions, alphas), round=state.round + 1)
    return revise(state, alphas)


def _couple_matrix(pairs, n) -> np.ndarray:
    if isinstance(pairs, InfluenceabilityPair):
        pairs = [pairs] * n
    arr = np.array([list(p) for p in pairs], dtype=float) if not isinstance(pairs, np.ndarray) else pairs.astype(float)
    arr = np.atleast_2d(arr)
    if arr.shape != (n, 2):
        raise ValueError(f"expected {n} influenceability pairs, got shape {arr.shape}")
    lo, hi = ALPHA_SANITY_BOUNDS
    if np.any(arr < lo) or np.any(arr > hi):
        raise ValueError(f"simulation influenceabilities must lie in [{lo}, {hi}]")
    return arr


def simulate_trajectory(initial, pairs, noise_std=0.0, seed=0, task=None, dropout=None):
    """Simulate rounds 2 and 3 from round-1 opinions.

    Each round applies the consensus step, then adds independent Gaussian
    noise of scale ``noise_std`` and clamps to the task range (when ``task``
    is given). ``dropout`` is an optional boolean ``(n, 3)`` mask of
    judgments that are not recorded; a missing member is excluded from the
    mean of that round and stays missing afterwards.

    Returns an ``(n, 3)`` array of opinions.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    x1 = _as_opinions(initial).copy()
    n = x1.size
    couples = _couple_matrix(pairs, n)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    task = TaskKind.parse(task) if task is not None else None

    traj = np.full((n, 3), np.nan)
    if dropout is not None:
        dropout = np.asarray(dropout, dtype=bool)
        x1[dropout[:, 0]] = np.nan
    traj[:, 0] = x1
    for r in (0, 1):
        current = traj[:, r]
        nxt = revise(current, couples[:, r])
        # draw noise for every slot so the stream does not depend on missingness
        eps = rng.normal(0.0, 1.0, size=n) * noise_std if noise_std > 0 else np.zeros(n)
        nxt = nxt + eps
        if task is not None:
            nxt = np.where(np.isnan(nxt), nxt, task.clamp(nxt))
        if dropout is not None:
            nxt[dropout[:, r + 1]] = np.nan
        traj[:, r + 1] = nxt
    return traj
