"""Snippet ingestion and per-subject reduction.

A snippet is one subject's short observation window: a few (time, value)
measurements. Each snippet is reduced to a single (level, slope) pair via the
within-subject mean and least-squares slope; downstream estimators only ever
see those pairs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InsufficientDataError, SnippetParseError, SnippetValidationError

REQUIRED_COLUMNS = ("subject_id", "time", "value")
PAIR_COLUMNS = ("subject_id", "level", "slope", "n_obs", "time_span", "last_level")


@dataclass(frozen=True)
class Snippet:
    """One subject's observation window, times strictly increasing."""

    subject_id: str
    times: tuple[float, ...]
    values: tuple[float, ...]
    group: str | None = None

    def __post_init__(self) -> None:
        if len(self.times) != len(self.values):
            raise ValueError(f"subject {self.subject_id!r}: times and values differ in length")
        if len(self.times) == 0:
            raise ValueError(f"subject {self.subject_id!r}: empty snippet")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise SnippetValidationError(
                f"subject {self.subject_id!r}: times must be strictly increasing"
            )

    @property
    def n_obs(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class LevelSlopePair:
    """Reduced snippet: where the subject is and how fast it is moving."""

    subject_id: str
    level: float
    slope: float
    n_obs: int
    time_span: float
    last_level: float
    group: str | None = None

    def __post_init__(self) -> None:
        if self.n_obs < 2:
            raise ValueError(f"subject {self.subject_id!r}: a pair needs n_obs >= 2")
        if not self.time_span > 0:
            raise ValueError(f"subject {self.subject_id!r}: a pair needs time_span > 0")


@dataclass(frozen=True)
class Exclusion:
    """A subject dropped during reduction, with the reason. A value, not an error."""

    subject_id: str
    reason: str


@dataclass(frozen=True)
class SnippetDataset:
    """Immutable collection of reduced pairs plus exclusion bookkeeping."""

    pairs: tuple[LevelSlopePair, ...]
    exclusions: tuple[Exclusion, ...] = ()
    levels: np.ndarray = field(init=False, repr=False)
    slopes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.pairs) < 1:
            raise InsufficientDataError("a dataset needs at least one retained pair")
        levels = np.array([p.level for p in self.pairs], dtype=float)
        slopes = np.array([p.slope for p in self.pairs], dtype=float)
        levels.flags.writeable = False
        slopes.flags.writeable = False
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "slopes", slopes)

    @property
    def n(self) -> int:
        return len(self.pairs)

    @property
    def level_range(self) -> tuple[float, float]:
        return float(self.levels.min()), float(self.levels.max())

    @property
    def slope_range(self) -> tuple[float, float]:
        return float(self.slopes.min()), float(self.slopes.max())


def parse_records(records: Iterable[Mapping[str, object]]) -> list[Snippet]:
    """Group long-format records into snippets, sorted by time within subject.

    Rows are numbered from 1 in error messages. Subject order follows first
    appearance; a duplicate timestamp within a subject is a validation error.
    """
    per_subject: dict[str, list[tuple[float, float, str | None]]] = {}
    for row_no, rec in enumerate(records, start=1):
        try:
            subject = str(rec["subject_id"])
            time = float(rec["time"])  # type: ignore[arg-type]
            value = float(rec["value"])  # type: ignore[arg-type]
        except (KeyError, TypeError, ValueError) as exc:
            raise SnippetParseError(f"row {row_no}: {exc!s}") from exc
        if not (np.isfinite(time) and np.isfinite(value)):
            raise SnippetParseError(f"row {row_no}: non-finite time or value")
        raw_group = rec.get("group")
        group = None if raw_group in (None, "") else str(raw_group)
        per_subject.setdefault(subject, []).append((time, value, group))

    snippets = []
    for subject, rows in per_subject.items():
        rows.sort(key=lambda r: r[0])
        times = tuple(r[0] for r in rows)
        if len(set(times)) != len(times):
            raise SnippetValidationError(f"subject {subject!r}: duplicate timestamps")
        groups = {r[2] for r in rows}
        if len(groups) > 1:
            raise SnippetValidationError(f"subject {subject!r}: conflicting group labels")
        snippets.append(
            Snippet(
                subject_id=subject,
                times=times,
                values=tuple(r[1] for r in rows),
                group=groups.pop(),
            )
        )
    return snippets


def read_snippets_csv(path: str) -> list[Snippet]:
    """Read a long-format CSV with columns subject_id,time,value[,group]."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise SnippetParseError(f"missing required column {col!r}")
        return parse_records(reader)


def extract_level_slope(snippet: Snippet) -> LevelSlopePair | Exclusion:
    """Reduce one snippet to (level, slope) or an exclusion.

    level is the mean value over the window; slope is the least-squares slope
    of value on time. Subjects with fewer than two observations or no time
    variance cannot support a slope and are excluded, not failed.
    """
    if snippet.n_obs < 2:
        return Exclusion(snippet.subject_id, "fewer than 2 observations")
    t = np.asarray(snippet.times, dtype=float)
    y = np.asarray(snippet.values, dtype=float)
    t_centered = t - t.mean()
    denom = float(t_centered @ t_centered)
    if denom <= 0.0:
        return Exclusion(snippet.subject_id, "zero time variance")
    slope = float(t_centered @ (y - y.mean())) / denom
    return LevelSlopePair(
        subject_id=snippet.subject_id,
        level=float(y.mean()),
        slope=slope,
        n_obs=snippet.n_obs,
        time_span=float(t[-1] - t[0]),
        last_level=float(y[-1]),
        group=snippet.group,
    )


def build_dataset(items: Iterable[LevelSlopePair | Exclusion]) -> SnippetDataset:
    """Assemble reduced items into a dataset; needs at least two retained pairs."""
    pairs: list[LevelSlopePair] = []
    exclusions: list[Exclusion] = []
    seen: set[str] = set()
    for item in items:
        if item.subject_id in seen:
            raise SnippetValidationError(f"subject {item.subject_id!r} appears more than once")
        seen.add(item.subject_id)
        if isinstance(item, LevelSlopePair):
            pairs.append(item)
        else:
            exclusions.append(item)
    if len(pairs) < 2:
        raise InsufficientDataError(
            f"need at least 2 retained pairs, have {len(pairs)} "
            f"({len(exclusions)} excluded)"
        )
    return SnippetDataset(pairs=tuple(pairs), exclusions=tuple(exclusions))


def reduce_snippets(snippets: Sequence[Snippet]) -> SnippetDataset:
    """Convenience: map extract_level_slope over snippets and build the dataset."""
    return build_dataset(extract_level_slope(s) for s in snippets)


def resample_pairs(dataset: SnippetDataset, rng: np.random.Generator) -> SnippetDataset:
    """Draw n pairs with replacement (subject-level bootstrap resample)."""
    idx = rng.integers(0, dataset.n, size=dataset.n)
    return SnippetDataset(pairs=tuple(dataset.pairs[i] for i in idx))


def write_pairs_csv(dataset: SnippetDataset, path: str) -> None:
    """Write the reduction output: subject_id,level,slope,n_obs,time_span,last_level[,group]."""
    has_group = any(p.group is not None for p in dataset.pairs)
    columns = PAIR_COLUMNS + (("group",) if has_group else ())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for p in dataset.pairs:
            row = [p.subject_id, repr(p.level), repr(p.slope), p.n_obs,
                   repr(p.time_span), repr(p.last_level)]
            if has_group:
                row.append("" if p.group is None else p.group)
            writer.writerow(row)


def write_snippets_csv(snippets: Sequence[Snippet], path: str) -> None:
    """Write long-format rows: subject_id,time,value[,group]."""
    has_group = any(s.group is not None for s in snippets)
    columns = REQUIRED_COLUMNS + (("group",) if has_group else ())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for s in snippets:
            for t, v in zip(s.times, s.values):
                row = [s.subject_id, repr(t), repr(v)]
                if has_group:
                    row.append("" if s.group is None else s.group)
                writer.writerow(row)


def read_pairs_csv(path: str) -> SnippetDataset:
    """Read a reduction CSV back into a dataset (>= 2 pairs, like ingestion)."""
    pairs: list[LevelSlopePair] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in PAIR_COLUMNS:
            if col not in header:
                raise SnippetParseError(f"missing required column {col!r}")
        for row_no, rec in enumerate(reader, start=2):
            try:
                raw_group = rec.get("group")
                pairs.append(
                    LevelSlopePair(
                        subject_id=str(rec["subject_id"]),
                        level=float(rec["level"]),
                        slope=float(rec["slope"]),
                        n_obs=int(rec["n_obs"]),
                        time_span=float(rec["time_span"]),
                        last_level=float(rec["last_level"]),
                        group=None if raw_group in (None, "") else str(raw_group),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise SnippetParseError(f"row {row_no}: {exc!s}") from exc
    return build_dataset(pairs)
