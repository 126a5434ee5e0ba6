"""Trajectory types for every pipeline stage, CDR ingestion and corpus statistics."""

from __future__ import annotations

import io
import logging
import re
from collections.abc import Hashable, Iterable, Sequence
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, NewType, TextIO

import numpy as np
import pandas as pd

from .config import CDR_FIELDS, ParseOptions
from .errors import RecordError

logger = logging.getLogger(__name__)

SymbolicLocation = NewType("SymbolicLocation", str)

_INT_RE = r"-?\d+"
_OFFSET_RE = r"(?:Z|[+-]\d{2}:?\d{2})$"
_PARSER_LINE_RE = re.compile(r"line (\d+)")
_EPOCH = pd.Timestamp("1970-01-01", tz="UTC")


@dataclass(frozen=True, slots=True)
class CdrEvent:
    user_id: str
    timestamp: int
    location: SymbolicLocation


@dataclass(frozen=True, slots=True)
class Interval:
    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError(f"interval start {self.start} after end {self.end}")


@dataclass(frozen=True)
class CdrTrajectory:
    """Temporally ordered events of one user."""

    user_id: str
    events: tuple[CdrEvent, ...]

    def __post_init__(self) -> None:
        if not self.events:
            raise ValueError(f"trajectory of {self.user_id} has no events")
        previous = None
        for event in self.events:
            if event.user_id != self.user_id:
                raise ValueError(f"event of {event.user_id} in trajectory of {self.user_id}")
            if previous is not None and event.timestamp < previous:
                raise ValueError(f"events of {self.user_id} are not sorted by time")
            previous = event.timestamp

    def __len__(self) -> int:
        return len(self.events)

    @property
    def locations(self) -> list[str]:
        return [e.location for e in self.events]

    @property
    def timestamps(self) -> list[int]:
        return [e.timestamp for e in self.events]


class NoiseKind(str, Enum):
    LOCAL = "local"
    TRANSITION = "transition"


@dataclass(frozen=True, slots=True)
class Segment:
    """A relevant location over the interval spanned by its own events."""

    interval: Interval
    location: SymbolicLocation
    n_events: int = 1


@dataclass(frozen=True)
class SummaryTrajectory:
    user_id: str
    segments: tuple[Segment, ...]
    noise_events: tuple[tuple[CdrEvent, NoiseKind], ...] = ()

    @property
    def local_noise_count(self) -> int:
        return sum(1 for _, kind in self.noise_events if kind is NoiseKind.LOCAL)

    @property
    def transition_count(self) -> int:
        return sum(1 for _, kind in self.noise_events if kind is NoiseKind.TRANSITION)

    @property
    def labels(self) -> list[str]:
        return [s.location for s in self.segments]

    def to_record(self) -> dict[str, Any]:
        return {
            "user": self.user_id,
            "segments": [[s.interval.start, s.interval.end, s.location, s.n_events] for s in self.segments],
            "noise": {"local": self.local_noise_count, "transition": self.transition_count},
            "noise_events": [[e.timestamp, e.location, kind.value] for e, kind in self.noise_events],
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> SummaryTrajectory:
        user = str(record["user"])
        segments = tuple(
            Segment(Interval(int(start), int(end)), SymbolicLocation(label), int(n))
            for start, end, label, n in record["segments"]
        )
        noise = tuple(
            (CdrEvent(user, int(ts), SymbolicLocation(label)), NoiseKind(kind))
            for ts, label, kind in record.get("noise_events", [])
        )
        return cls(user, segments, noise)


@dataclass(frozen=True)
class RankTrajectory:
    """Summary segments with locations replaced by their frequency rank."""

    user_id: str
    segments: tuple[tuple[Interval, int], ...]
    ranking: dict[str, int] = field(default_factory=dict, compare=False)

    @property
    def ranks(self) -> list[int]:
        return [rank for _, rank in self.segments]

    def to_record(self) -> dict[str, Any]:
        return {
            "user": self.user_id,
            "segments": [[interval.start, interval.end, rank] for interval, rank in self.segments],
            "ranking": self.ranking,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> RankTrajectory:
        segments = tuple((Interval(int(s), int(e)), int(r)) for s, e, r in record["segments"])
        return cls(str(record["user"]), segments, {str(k): int(v) for k, v in record.get("ranking", {}).items()})


@dataclass(frozen=True)
class WeeklyTrajectory:
    user_id: str
    week_index: int
    ranks: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.week_index < 1:
            raise ValueError(f"week_index is 1-based, got {self.week_index}")

    @property
    def seq_id(self) -> str:
        return f"{self.user_id}/{self.week_index}"

    def to_line(self) -> str:
        return f"{self.user_id}\t{self.week_index}\t{' '.join(str(r) for r in self.ranks)}"

    @classmethod
    def from_line(cls, line: str) -> WeeklyTrajectory:
        user, week, ranks = line.rstrip("\n").split("\t")
        return cls(user, int(week), tuple(int(r) for r in ranks.split()))


@dataclass(frozen=True)
class CorpusStats:
    trajectory_count: int
    symbol_count: int
    max_length: int
    avg_length: float

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def corpus_stats(corpus: Sequence[Sequence[Hashable]]) -> CorpusStats:
    """Count sequences, distinct symbols and length statistics of a corpus."""
    if len(corpus) == 0:
        raise ValueError("corpus_stats needs a non-empty corpus")
    lengths = [len(seq) for seq in corpus]
    symbols = {symbol for seq in corpus for symbol in seq}
    return CorpusStats(
        trajectory_count=len(corpus),
        symbol_count=len(symbols),
        max_length=max(lengths),
        avg_length=float(np.mean(lengths)),
    )


def _parser_line(error: Exception) -> int:
    match = _PARSER_LINE_RE.search(str(error))
    return int(match.group(1)) if match else 0


def _to_epoch_seconds(raw: pd.Series, timezone: str) -> pd.Series:
    """Integer epoch seconds or ISO-8601 strings -> epoch seconds (NaN when invalid)."""
    out = pd.Series(np.nan, index=raw.index, dtype="float64")
    is_int = raw.str.fullmatch(_INT_RE)
    out[is_int] = raw[is_int].astype("int64")

    iso = raw[~is_int]
    if len(iso):
        aware = iso.str.contains(_OFFSET_RE, regex=True)
        if aware.any():
            parsed = pd.to_datetime(iso[aware], errors="coerce", utc=True, format="ISO8601")
            out[parsed.index] = (parsed - _EPOCH) // pd.Timedelta(seconds=1)
        naive = iso[~aware]
        if len(naive):
            parsed = pd.to_datetime(naive, errors="coerce", format="ISO8601")
            parsed = parsed.dt.tz_localize(timezone, ambiguous="NaT", nonexistent="NaT").dt.tz_convert("UTC")
            out[parsed.index] = (parsed - _EPOCH) // pd.Timedelta(seconds=1)
    return out


def read_cdr_frame(source: str | Path | TextIO, options: ParseOptions) -> pd.DataFrame:
    """Read CDR records into a frame with user_id, timestamp (epoch s), location."""
    first_line = 2 if options.header else 1
    try:
        frame = pd.read_csv(
            source,
            sep=options.delimiter,
            header=0 if options.header else None,
            names=list(options.field_order),
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=list(CDR_FIELDS))
    except pd.errors.ParserError as e:
        raise RecordError(_parser_line(e), f"malformed record ({e})") from e

    frame = frame.fillna("")
    for column in CDR_FIELDS:
        frame[column] = frame[column].str.strip()
    frame["line_no"] = np.arange(len(frame)) + first_line

    blank = (frame[list(CDR_FIELDS)] == "").all(axis=1)
    frame = frame[~blank]
    missing = (frame[list(CDR_FIELDS)] == "").any(axis=1)
    if missing.any():
        row = frame[missing].iloc[0]
        absent = [c for c in CDR_FIELDS if row[c] == ""]
        raise RecordError(int(row["line_no"]), f"missing field(s) {', '.join(absent)}")

    seconds = _to_epoch_seconds(frame["timestamp"], options.timezone)
    bad = seconds.isna()
    if bad.any():
        row = frame[bad].iloc[0]
        raise RecordError(int(row["line_no"]), f"malformed timestamp {row['timestamp']!r}")

    frame = frame.assign(timestamp=seconds.astype("int64"))
    return frame[["user_id", "timestamp", "location", "line_no"]]


def parse_cdr(source: str | Path | TextIO, options: ParseOptions | None = None) -> list[CdrTrajectory]:
    """
    Parse delimited CDR text into one trajectory per user.

    Records are grouped by user, sorted by time (ties keep input order) and
    exact duplicates are dropped. Events outside a configured observation
    period are discarded.
    """
    options = options or ParseOptions()
    frame = read_cdr_frame(source, options)
    if frame.empty:
        return []

    before = len(frame)
    frame = frame.drop_duplicates(subset=["user_id", "timestamp", "location"], keep="first")
    if len(frame) < before:
        logger.info(f"Dropped {before - len(frame)} duplicate CDR records")

    if options.period_start or options.period_end:
        keep = pd.Series(True, index=frame.index)
        if options.period_start:
            start = pd.Timestamp(options.period_start).tz_localize(options.timezone)
            keep &= frame["timestamp"] >= int(start.timestamp())
        if options.period_end:
            end = pd.Timestamp(options.period_end).tz_localize(options.timezone)
            keep &= frame["timestamp"] < int(end.timestamp())
        if not keep.all():
            logger.warning(f"Dropped {int((~keep).sum())} records outside the observation period")
        frame = frame[keep]

    frame = frame.sort_values(["user_id", "timestamp"], kind="stable")
    trajectories = []
    for user_id, group in frame.groupby("user_id", sort=True):
        events = tuple(
            CdrEvent(str(user_id), int(ts), SymbolicLocation(loc))
            for ts, loc in zip(group["timestamp"].to_numpy(), group["location"].to_numpy())
        )
        if events:
            trajectories.append(CdrTrajectory(str(user_id), events))
    return trajectories


def cdr_frame(trajectories: Iterable[CdrTrajectory]) -> pd.DataFrame:
    rows = [(e.user_id, e.timestamp, e.location) for t in trajectories for e in t.events]
    return pd.DataFrame(rows, columns=list(CDR_FIELDS))


def serialize_cdr(
    trajectories: Iterable[CdrTrajectory],
    options: ParseOptions | None = None,
    iso: bool = False,
) -> str:
    """Render trajectories in the layout `parse_cdr` reads."""
    options = options or ParseOptions()
    frame = cdr_frame(trajectories)
    if iso and not frame.empty:
        local = pd.to_datetime(frame["timestamp"], unit="s", utc=True).dt.tz_convert(options.timezone)
        text = local.dt.strftime("%Y-%m-%dT%H:%M:%S%z")
        frame["timestamp"] = text.str[:-2] + ":" + text.str[-2:]
    buffer = io.StringIO()
    frame[list(options.field_order)].to_csv(
        buffer, sep=options.delimiter, header=options.header, index=False, lineterminator="\n"
    )
    return buffer.getvalue()


def write_cdr(trajectories: Iterable[CdrTrajectory], path: Path, options: ParseOptions | None = None, iso: bool = False) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_cdr(trajectories, options, iso=iso), encoding="utf-8")
