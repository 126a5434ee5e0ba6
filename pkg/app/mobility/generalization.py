"""Rank generalization of summary trajectories and Monday-Sunday weekly splitting."""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from datetime import date
from typing import Any, TypeVar

import numpy as np
import pandas as pd

from .trajectories import CdrTrajectory, RankTrajectory, SummaryTrajectory, WeeklyTrajectory

logger = logging.getLogger(__name__)

T = TypeVar("T")

_EPOCH = pd.Timestamp("1970-01-01", tz="UTC")


def rank_map(labels: Sequence[str]) -> dict[str, int]:
    """Rank labels by occurrence count; equal counts rank by first appearance."""
    counts = Counter(labels)
    first_seen: dict[str, int] = {}
    for i, label in enumerate(labels):
        first_seen.setdefault(label, i)
    order = sorted(counts, key=lambda label: (-counts[label], first_seen[label]))
    return {label: rank for rank, label in enumerate(order, start=1)}


def to_rank(summary: SummaryTrajectory) -> RankTrajectory:
    """
    Replace each segment's location by its frequency rank in the trajectory.

    Raises:
        ValueError: If the summary has no segments.
    """
    if not summary.segments:
        raise ValueError(f"summary of {summary.user_id} has no segments to rank")
    ranking = rank_map(summary.labels)
    segments = tuple((s.interval, ranking[s.location]) for s in summary.segments)
    return RankTrajectory(summary.user_id, segments, ranking)


def rank_corpus(summaries: Iterable[SummaryTrajectory]) -> list[RankTrajectory]:
    ranked = []
    skipped = 0
    for summary in summaries:
        if not summary.segments:
            skipped += 1
            continue
        ranked.append(to_rank(summary))
    if skipped:
        logger.warning(f"Skipped {skipped} summaries without segments")
    return ranked


@dataclass(frozen=True)
class WeekCalendar:
    """Whole Monday 00:00 to Sunday 24:00 weeks of an observation period."""

    timezone: str
    boundaries: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.boundaries) < 2:
            raise ValueError("observation period is shorter than one whole week")

    @property
    def n_weeks(self) -> int:
        return len(self.boundaries) - 1

    @property
    def start(self) -> int:
        return self.boundaries[0]

    @property
    def end(self) -> int:
        return self.boundaries[-1]

    def week_of(self, timestamps: Sequence[int] | np.ndarray) -> np.ndarray:
        """1-based week index per timestamp, 0 outside the trimmed period."""
        edges = np.asarray(self.boundaries, dtype=np.int64)
        idx = np.searchsorted(edges, np.asarray(timestamps, dtype=np.int64), side="right")
        return np.where((idx >= 1) & (idx <= self.n_weeks), idx, 0)

    @classmethod
    def from_period(cls, start: pd.Timestamp, end: pd.Timestamp, timezone: str) -> WeekCalendar:
        """Trim [start, end) to the first Monday 00:00 >= start and the last Monday 00:00 <= end."""
        mondays = pd.date_range(start=start, end=end, freq="W-MON", normalize=True)
        mondays = mondays[(mondays >= start) & (mondays <= end)]
        edges = ((mondays.tz_convert("UTC") - _EPOCH) // pd.Timedelta(seconds=1)).to_numpy(dtype=np.int64)
        if len(edges) < 2:
            raise ValueError(
                f"observation period {start} .. {end} is shorter than one whole Monday-Sunday week"
            )
        return cls(timezone, tuple(int(e) for e in edges))

    def to_dict(self) -> dict[str, Any]:
        return {"timezone": self.timezone, "boundaries": list(self.boundaries)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> WeekCalendar:
        return cls(str(data["timezone"]), tuple(int(b) for b in data["boundaries"]))


def observation_calendar(
    trajectories: Sequence[CdrTrajectory],
    timezone: str = "UTC",
    period_start: date | None = None,
    period_end: date | None = None,
) -> WeekCalendar:
    """
    Calendar shared by all users of a dataset.

    The period runs from local midnight of the earliest event's day to the
    midnight after the latest event's day, unless given explicitly.
    """
    if not trajectories:
        raise ValueError("observation_calendar needs at least one trajectory")
    first = min(t.events[0].timestamp for t in trajectories)
    last = max(t.events[-1].timestamp for t in trajectories)

    if period_start is not None:
        start = pd.Timestamp(period_start).tz_localize(timezone)
    else:
        start = pd.Timestamp(first, unit="s", tz="UTC").tz_convert(timezone).normalize()
    if period_end is not None:
        end = pd.Timestamp(period_end).tz_localize(timezone)
    else:
        end = pd.Timestamp(last, unit="s", tz="UTC").tz_convert(timezone).normalize() + pd.DateOffset(days=1)
    return WeekCalendar.from_period(start, end, timezone)


def split_tokens(starts: Sequence[int], tokens: Sequence[T], calendar: WeekCalendar) -> list[list[T]]:
    """Assign tokens to weeks by their start time; out-of-period tokens are dropped."""
    weeks: list[list[T]] = [[] for _ in range(calendar.n_weeks)]
    for week, token in zip(calendar.week_of(starts), tokens):
        if week:
            weeks[week - 1].append(token)
    return weeks


def split_weeks(rank: RankTrajectory, calendar: WeekCalendar) -> list[WeeklyTrajectory]:
    """
    Split a rank trajectory into one weekly trajectory per calendar week.

    A segment belongs to the week containing its interval start, whatever
    its end. Weeks without segments come back as empty trajectories.
    """
    starts = [interval.start for interval, _ in rank.segments]
    weeks = split_tokens(starts, rank.ranks, calendar)
    dropped = len(starts) - sum(len(w) for w in weeks)
    if dropped:
        logger.debug(f"{rank.user_id}: {dropped} segments outside the trimmed period")
    return [WeeklyTrajectory(rank.user_id, j, tuple(ranks)) for j, ranks in enumerate(weeks, start=1)]


def split_corpus(ranks: Iterable[RankTrajectory], calendar: WeekCalendar) -> list[WeeklyTrajectory]:
    weekly = [w for rank in ranks for w in split_weeks(rank, calendar)]
    empty = sum(1 for w in weekly if not w.ranks)
    if empty:
        logger.warning(f"{empty} of {len(weekly)} weekly trajectories are empty (silent weeks)")
    return weekly
