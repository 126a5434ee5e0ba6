"""Symbolic segmentation of CDR trajectories into relevant-location segments."""

from __future__ import annotations

import logging
import time
from collections.abc import Iterable

from .config import SeqScanParams
from .trajectories import (
    CdrTrajectory,
    Interval,
    NoiseKind,
    Segment,
    SummaryTrajectory,
)

logger = logging.getLogger(__name__)


def _grow_window(locations: list[str], timestamps: list[int], start: int) -> tuple[int, int, float]:
    """
    Grow the window of the symbol found at `start`.

    The window closes as soon as another symbol is observed twice in a row;
    inside it, only the window symbol accumulates presence. Returns the last
    index at which the window symbol is dominant, with its count and presence
    there. Thresholds play no part, so the windows of a trajectory are the
    same for every N and delta_presence.
    """
    label = locations[start]
    counts: dict[str, int] = {label: 1}
    presence = 0.0
    best_other = 0
    best = (start, 1, 0.0)

    for i in range(start + 1, len(locations)):
        symbol = locations[i]
        repeated = locations[i - 1] == symbol
        if symbol != label and repeated:
            break
        counts[symbol] = counts.get(symbol, 0) + 1
        if symbol != label:
            best_other = max(best_other, counts[symbol])
            continue
        if repeated:
            presence += timestamps[i] - timestamps[i - 1]
        # Other symbols carry no presence here; ties go to the window symbol.
        if (presence, counts[label]) >= (0.0, best_other):
            best = (i, counts[label], presence)
    return best


def segment(trajectory: CdrTrajectory, params: SeqScanParams | None = None) -> SummaryTrajectory:
    """
    Segment a trajectory into maximal relevant-location segments.

    The scan cuts the trajectory into consecutive windows, each grown from its
    first event as far as that symbol stays dominant. A window whose symbol has
    at least `min_count` occurrences and `delta_presence` seconds of presence
    becomes a segment and its other events local noise; every event of any
    other window is a transition. Raising either threshold can only drop
    segments.

    Args:
        trajectory: Non-empty CDR trajectory.
        params: Relevance thresholds; defaults to N=4 and 15 minutes.

    Returns:
        SummaryTrajectory whose segments, local noise and transitions
        partition the input events.
    """
    params = params or SeqScanParams()
    events = trajectory.events
    locations = [e.location for e in events]
    timestamps = [e.timestamp for e in events]
    n = len(events)

    segments: list[Segment] = []
    noise: list[tuple] = []
    start = 0
    while start < n:
        end, count, presence = _grow_window(locations, timestamps, start)
        label = locations[start]
        if count >= params.min_count and presence >= params.delta_presence:
            noise.extend(
                (events[i], NoiseKind.LOCAL) for i in range(start + 1, end) if locations[i] != label
            )
            segments.append(Segment(Interval(timestamps[start], timestamps[end]), label, count))
        else:
            noise.extend((events[i], NoiseKind.TRANSITION) for i in range(start, end + 1))
        start = end + 1

    return SummaryTrajectory(trajectory.user_id, tuple(segments), tuple(noise))


def segment_corpus(
    trajectories: Iterable[CdrTrajectory],
    params: SeqScanParams | None = None,
) -> list[SummaryTrajectory]:
    """Segment every trajectory and log corpus-level counts."""
    t0 = time.perf_counter()
    summaries = [segment(t, params) for t in trajectories]
    n_segments = sum(len(s.segments) for s in summaries)
    n_local = sum(s.local_noise_count for s in summaries)
    n_transition = sum(s.transition_count for s in summaries)
    empty = sum(1 for s in summaries if not s.segments)
    if empty:
        logger.warning(f"{empty} trajectories have no valid segment")
    logger.info(
        f"Segmented {len(summaries)} trajectories -> {n_segments} segments, "
        f"{n_local} local noise, {n_transition} transitions "
        f"({round((time.perf_counter() - t0) * 1000, 1)}ms)"
    )
    return summaries
