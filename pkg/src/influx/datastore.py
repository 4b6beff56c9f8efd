"""Judgment datasets: schema, CSV/JSON persistence and participant filters."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .core import TaskKind
from .errors import (
    DegenerateCorrelation,
    DegenerateMAD,
    InsufficientData,
    MixedTaskError,
    ParseError,
    SchemaError,
)

SCHEMA_VERSION = 1
COLUMNS = ("session_id", "game_id", "task", "truth", "participant_id", "round", "value")
REPLICATE_COLUMN = "replicate_of"

# Per-task correlation cut-offs derived from the original cohorts.
CORRELATION_PRESETS = {"gauging": 0.61, "counting": 0.24}

MAD_CONSTANT = 0.6745
MAD_CUTOFF = 3.5


def format_number(x: float) -> str:
    """Shortest text that round-trips to the same float."""
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


@dataclass(frozen=True, eq=False)
class GameRecord:
    """One picture played by one group over three rounds.

    ``judgments[k, r]`` is the round ``r + 1`` judgment of
    ``participant_ids[k]``; ``nan`` marks a missing judgment.
    """

    game_id: str
    session_id: str
    task: TaskKind
    truth: float
    participant_ids: tuple
    judgments: np.ndarray
    replicate_of: str = ""

    def __post_init__(self):
        j = np.array(self.judgments, dtype=float)
        if j.shape != (len(self.participant_ids), 3):
            raise ValueError(f"judgments shape {j.shape} does not match {len(self.participant_ids)} participants")
        j.setflags(write=False)
        object.__setattr__(self, "judgments", j)
        object.__setattr__(self, "participant_ids", tuple(self.participant_ids))
        object.__setattr__(self, "task", TaskKind.parse(self.task))

    def __eq__(self, other):
        if not isinstance(other, GameRecord):
            return NotImplemented
        return (
            self.game_id == other.game_id
            and self.session_id == other.session_id
            and self.task is other.task
            and self.truth == other.truth
            and self.participant_ids == other.participant_ids
            and self.replicate_of == other.replicate_of
            and np.array_equal(self.judgments, other.judgments, equal_nan=True)
        )

    __hash__ = None

    def index(self, participant_id) -> int:
        return self.participant_ids.index(participant_id)

    def round_values(self, r: int) -> np.ndarray:
        return self.judgments[:, r - 1]

    def n_present(self, r: int) -> int:
        return int(np.count_nonzero(~np.isnan(self.judgments[:, r - 1])))

    def is_full(self, participant_id) -> bool:
        return not np.isnan(self.judgments[self.index(participant_id)]).any()

    def with_judgments(self, judgments, **changes) -> "GameRecord":
        return replace(self, judgments=judgments, **changes)


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable collection of games for a single task kind.

    Participants listed in ``excluded`` stay in the games (their judgments
    still shape group means) but are no longer analysis targets.
    """

    task: TaskKind
    games: tuple = ()
    excluded: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "task", TaskKind.parse(self.task))
        object.__setattr__(self, "games", tuple(self.games))
        object.__setattr__(self, "excluded", frozenset(self.excluded))
        for g in self.games:
            if g.task is not self.task:
                raise MixedTaskError(f"game {g.game_id} is {g.task.value}, dataset is {self.task.value}")

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.task is other.task and self.excluded == other.excluded and self.games == other.games

    __hash__ = None

    def __len__(self):
        return len(self.games)

    @cached_property
    def _index(self) -> dict:
        idx: dict = {}
        for g in self.games:
            for k, pid in enumerate(g.participant_ids):
                idx.setdefault(pid, []).append((g, k))
        return idx

    @property
    def all_participants(self) -> list:
        return sorted(self._index)

    @property
    def participants(self) -> list:
        """Participants that are analysis targets (not excluded)."""
        return [p for p in self.all_participants if p not in self.excluded]

    @property
    def group_size(self) -> int:
        return max((len(g.participant_ids) for g in self.games), default=0)

    def games_of(self, participant_id) -> list:
        """``(game, member_index)`` for every game the participant belongs to."""
        return list(self._index.get(participant_id, ()))

    def full_games(self, participant_id) -> list:
        return [(g, k) for g, k in self.games_of(participant_id) if not np.isnan(g.judgments[k]).any()]

    def game(self, game_id) -> GameRecord:
        for g in self.games:
            if g.game_id == game_id:
                return g
        raise KeyError(game_id)

    def with_excluded(self, excluded) -> "Dataset":
        return Dataset(self.task, self.games, frozenset(excluded))


# --- persistence -----------------------------------------------------------


def _rows(dataset: Dataset, with_replicate: bool):
    for g in dataset.games:
        for k, pid in enumerate(g.participant_ids):
            for r in range(3):
                v = g.judgments[k, r]
                if np.isnan(v):
                    continue
                row = {
                    "session_id": g.session_id,
                    "game_id": g.game_id,
                    "task": g.task.value,
                    "truth": float(g.truth),
                    "participant_id": pid,
                    "round": r + 1,
                    "value": float(v),
                }
                if with_replicate:
                    row[REPLICATE_COLUMN] = g.replicate_of
                yield row


def _needs_replicate_column(dataset: Dataset) -> bool:
    return any(g.replicate_of for g in dataset.games)


def dumps_csv(dataset: Dataset, replicate_column: bool | None = None) -> str:
    if replicate_column is None:
        replicate_column = _needs_replicate_column(dataset)
    out = io.StringIO()
    out.write(f"# schema_version={SCHEMA_VERSION}\n")
    if dataset.excluded:
        out.write("# excluded=" + ",".join(sorted(dataset.excluded)) + "\n")
    cols = COLUMNS + ((REPLICATE_COLUMN,) if replicate_column else ())
    w = csv.writer(out, lineterminator="\n")
    w.writerow(cols)
    for row in _rows(dataset, replicate_column):
        w.writerow(
            [format_number(row[c]) if c in ("truth", "value") else row[c] for c in cols]
        )
    return out.getvalue()


def dumps_json(dataset: Dataset, replicate_column: bool | None = None) -> str:
    if replicate_column is None:
        replicate_column = _needs_replicate_column(dataset)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "task": dataset.task.value,
        "excluded": sorted(dataset.excluded),
        "rows": list(_rows(dataset, replicate_column)),
    }
    return json.dumps(doc, indent=1) + "\n"


def save_dataset(dataset: Dataset, path, format: str | None = None, replicate_column=None) -> Path:
    path = Path(path)
    fmt = format or _infer_format(path)
    text = dumps_csv(dataset, replicate_column) if fmt == "csv" else dumps_json(dataset, replicate_column)
    path.write_text(text, encoding="utf-8")
    return path


def _infer_format(path: Path) -> str:
    suffix = path.suffix.lower().lstrip(".")
    if suffix not in ("csv", "json"):
        raise ValueError(f"cannot infer format from {path.name!r}; pass format='csv' or 'json'")
    return suffix


def _parse_csv(text: str):
    """Yield ``(line_number, row_dict)`` and collect preamble metadata."""
    meta = {}
    lines = text.splitlines()
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        key, _, val = lines[start][1:].strip().partition("=")
        meta[key.strip()] = val.strip()
        start += 1
    body = lines[start:]
    if not body or not body[0].strip():
        return meta, []
    reader = csv.reader(body)
    header = [h.strip() for h in next(reader)]
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise ParseError(f"missing column(s) {missing}", line=start + 1)
    rows = []
    for offset, rec in enumerate(reader):
        line = start + 2 + offset
        if not rec or all(not f.strip() for f in rec):
            continue
        if len(rec) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(rec)}", line=line)
        rows.append((line, dict(zip(header, rec))))
    return meta, rows


def _parse_json(text: str):
    try:
        doc = json.loads(text) if text.strip() else []
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    meta = {}
    if isinstance(doc, dict):
        meta = {k: v for k, v in doc.items() if k != "rows"}
        records = doc.get("rows", [])
    else:
        records = doc
    if not isinstance(records, list):
        raise ParseError("expected an array of row objects")
    return meta, [(i + 1, r) for i, r in enumerate(records)]


def loads_dataset(text: str, format: str = "csv", group_size: int | None = 6) -> Dataset:
    """Parse and validate a dataset; see :func:`load_dataset`."""
    meta, rows = _parse_csv(text) if format == "csv" else _parse_json(text)
    version = meta.get("schema_version")
    if version is not None and int(version) != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {version}")
    excluded = meta.get("excluded", [])
    if isinstance(excluded, str):
        excluded = [e for e in excluded.split(",") if e]

    diagnostics = []
    tasks = {}
    games: dict = {}
    seen = set()
    for line, raw in rows:
        if not isinstance(raw, dict):
            raise ParseError("row is not an object", line=line)
        try:
            session = str(raw["session_id"])
            game_id = str(raw["game_id"])
            task_s = str(raw["task"])
            pid = str(raw["participant_id"])
            truth = float(raw["truth"])
            rnd = int(float(raw["round"]))
            value = float(raw["value"])
            rep = str(raw.get(REPLICATE_COLUMN, "") or "")
        except KeyError as exc:
            raise ParseError(f"missing field {exc.args[0]!r}", line=line) from None
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), line=line) from None
        try:
            task = TaskKind.parse(task_s)
        except ValueError as exc:
            diagnostics.append((line, str(exc)))
            continue
        tasks.setdefault(task, line)
        problems = []
        if rnd not in (1, 2, 3):
            problems.append(f"round={rnd} not in {{1,2,3}}")
        if not (math.isfinite(value) and 0.0 <= value <= task.range_max):
            problems.append(f"value={value} outside [0, {task.range_max:g}]")
        if not math.isfinite(truth):
            problems.append("truth is not finite")
        key = (game_id, pid, rnd)
        if key in seen:
            problems.append(f"duplicate (game_id, participant_id, round) = {key}")
        if problems:
            diagnostics.extend((line, p) for p in problems)
            continue
        seen.add(key)
        g = games.setdefault(game_id, {"session": session, "task": task, "truth": truth, "rep": rep, "members": {}, "line": line})
        if g["truth"] != truth or g["session"] != session or g["task"] is not task or g["rep"] != rep:
            diagnostics.append((line, f"game {game_id} has inconsistent session/task/truth/replicate_of"))
            continue
        g["members"].setdefault(pid, [math.nan] * 3)[rnd - 1] = value

    if len(tasks) > 1:
        raise MixedTaskError(f"dataset mixes task kinds {sorted(t.value for t in tasks)}")
    records = []
    for game_id, g in games.items():
        if group_size is not None and len(g["members"]) > group_size:
            diagnostics.append((g["line"], f"game {game_id} has {len(g['members'])} participants (> {group_size})"))
            continue
        records.append(
            GameRecord(
                game_id=game_id,
                session_id=g["session"],
                task=g["task"],
                truth=g["truth"],
                participant_ids=tuple(g["members"]),
                judgments=np.array(list(g["members"].values()), dtype=float).reshape(-1, 3),
                replicate_of=g["rep"],
            )
        )
    if diagnostics:
        raise SchemaError(sorted(diagnostics))
    task = next(iter(tasks), None) or TaskKind.parse(meta.get("task", "gauging"))
    return Dataset(task, records, frozenset(excluded))


def load_dataset(path, format: str | None = None, group_size: int | None = 6) -> Dataset:
    """Load and validate a CSV or JSON judgment file.

    Invalid rows are collected and reported together in a
    :class:`SchemaError`; malformed text raises :class:`ParseError`.
    """
    path = Path(path)
    fmt = format or _infer_format(path)
    return loads_dataset(path.read_text(encoding="utf-8"), fmt, group_size=group_size)


# --- participant filters ---------------------------------------------------


def trustworthiness(participant_id, dataset: Dataset) -> float:
    """Pearson correlation between round-1 judgments and truths."""
    pairs = [
        (g.judgments[k, 0], g.truth)
        for g, k in dataset.games_of(participant_id)
        if not np.isnan(g.judgments[k, 0])
    ]
    if len(pairs) < 3:
        raise InsufficientData(f"{participant_id}: {len(pairs)} round-1 judgments, need >= 3")
    x, t = np.array(pairs, dtype=float).T
    xc, tc = x - x.mean(), t - t.mean()
    sxx, stt = float(xc @ xc), float(tc @ tc)
    if sxx <= 1e-12 * max(1.0, float(x @ x)) or stt <= 1e-12 * max(1.0, float(t @ t)):
        raise DegenerateCorrelation(f"{participant_id}: zero variance, correlation undefined")
    return float(np.clip((xc @ tc) / math.sqrt(sxx * stt), -1.0, 1.0))


def modified_z_scores(values) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    med = np.median(x)
    mad = np.median(np.abs(x - med))
    if mad == 0:
        raise DegenerateMAD("median absolute deviation is zero")
    return MAD_CONSTANT * (x - med) / mad


def mad_outlier_threshold(values) -> float:
    """Low-side Iglewicz-Hoaglin cut, in the units of ``values``.

    Returns ``median - 3.5 * MAD / 0.6745``: values at or above the cut have a
    modified z-score of at least -3.5 and are kept.
    """
    x = np.asarray(values, dtype=float)
    if x.size < 5:
        raise InsufficientData(f"{x.size} values, need >= 5")
    med = float(np.median(x))
    mad = float(np.median(np.abs(x - med)))
    if mad == 0:
        raise DegenerateMAD("median absolute deviation is zero")
    return med - MAD_CUTOFF * mad / MAD_CONSTANT


@dataclass
class FilterReport:
    min_full_games: int
    corr_threshold: float
    threshold_source: str
    kept: list
    removed_full_games: list
    removed_correlation: list
    correlations: dict
    full_game_counts: dict

    @property
    def n_kept(self):
        return len(self.kept)

    @property
    def n_removed(self):
        return len(self.removed_full_games) + len(self.removed_correlation)

    def to_dict(self):
        return {
            "min_full_games": self.min_full_games,
            "corr_threshold": self.corr_threshold,
            "threshold_source": self.threshold_source,
            "n_kept": self.n_kept,
            "n_removed": self.n_removed,
            "kept": self.kept,
            "removed_full_games": self.removed_full_games,
            "removed_correlation": self.removed_correlation,
            "correlations": self.correlations,
            "full_game_counts": self.full_game_counts,
        }


def filter_participants(dataset: Dataset, min_full_games: int = 15, corr_threshold="auto"):
    """Apply the completion filter then the trustworthiness filter.

    A participant is kept when they completed strictly more than
    ``min_full_games`` games and their round-1 correlation with truth is at
    least ``corr_threshold``. ``"auto"`` derives the threshold with
    :func:`mad_outlier_threshold` over every participant who passes the
    completion filter (previously excluded ones included, which makes the
    filter idempotent); ``"gauging"``/``"counting"`` select the presets.

    Returns ``(filtered_dataset, FilterReport)``.
    """
    everyone = dataset.all_participants
    counts = {p: len(dataset.full_games(p)) for p in everyone}
    complete = [p for p in everyone if counts[p] > min_full_games]
    corrs = {}
    for p in complete:
        try:
            corrs[p] = trustworthiness(p, dataset)
        except InsufficientData:
            corrs[p] = math.nan

    if isinstance(corr_threshold, str) and corr_threshold in CORRELATION_PRESETS:
        threshold, source = CORRELATION_PRESETS[corr_threshold], f"preset:{corr_threshold}"
    elif corr_threshold == "auto":
        finite = [c for c in corrs.values() if math.isfinite(c)]
        try:
            threshold = mad_outlier_threshold(finite)
            source = "auto"
        except (InsufficientData, DegenerateMAD):
            threshold, source = -math.inf, "auto:unavailable"
    else:
        threshold, source = float(corr_threshold), "fixed"

    removed_full = [p for p in everyone if p not in set(complete)]
    removed_corr = [p for p in complete if not (corrs[p] >= threshold)]
    excluded = set(dataset.excluded) | set(removed_full) | set(removed_corr)
    kept = [p for p in everyone if p not in excluded]
    report = FilterReport(
        min_full_games=min_full_games,
        corr_threshold=threshold,
        threshold_source=source,
        kept=kept,
        removed_full_games=[p for p in removed_full if p not in dataset.excluded],
        removed_correlation=[p for p in removed_corr if p not in dataset.excluded],
        correlations={p: (c if math.isfinite(c) else None) for p, c in corrs.items()},
        full_game_counts=counts,
    )
    return dataset.with_excluded(excluded), report
