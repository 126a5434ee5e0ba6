"""Synthetic CDR corpora with commuter, homebody and roamer users."""

from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np
import pandas as pd

from .config import ParseOptions, SynthConfig
from .trajectories import CdrEvent, CdrTrajectory, SymbolicLocation, write_cdr

logger = logging.getLogger(__name__)

ARCHETYPES = ("commuter", "homebody", "roamer")

_HOUR = 3600
_DAY = 24 * _HOUR

# Two-peak daily activity: late morning and evening, plus a flat floor.
_PEAKS = ((11.0 * _HOUR, 2.5 * _HOUR, 0.45), (19.0 * _HOUR, 2.5 * _HOUR, 0.45))
_FLOOR_WEIGHT = 0.10

# Roamers wander between these hours and are home outside them.
_ROAM_START = 8 * _HOUR
_ROAM_END = 22 * _HOUR


def location_label(index: int) -> str:
    return f"LA{index:03d}"


def zipf_weights(n: int, exponent: float) -> np.ndarray:
    """Normalized weights proportional to 1 / rank**exponent for ranks 1..n."""
    w = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** exponent
    return w / w.sum()


def _day_starts(config: SynthConfig) -> np.ndarray:
    """Epoch seconds of every local midnight of the period, plus the closing one."""
    days = pd.date_range(
        pd.Timestamp(config.start_date), periods=config.n_weeks * 7 + 1, freq="D"
    ).tz_localize(config.timezone, nonexistent="shift_forward")
    return (days.asi8 // 10**9).astype(np.int64)


def _event_times(rng: np.random.Generator, n_days: int, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Day index and second-of-day of every event, Poisson count per day."""
    counts = rng.poisson(lam, size=n_days)
    if counts.sum() == 0:
        counts[rng.integers(n_days)] = 1
    days = np.repeat(np.arange(n_days), counts)
    total = int(counts.sum())
    component = rng.choice(3, size=total, p=[_PEAKS[0][2], _PEAKS[1][2], _FLOOR_WEIGHT])
    seconds = rng.uniform(0.0, _DAY, size=total)
    for c, (mu, sigma, _) in enumerate(_PEAKS):
        mask = component == c
        seconds[mask] = rng.normal(mu, sigma, size=int(mask.sum()))
    seconds = np.clip(np.floor(seconds), 0, _DAY - 1).astype(np.int64)
    return days, seconds


def _commuter_locations(
    rng: np.random.Generator, days: np.ndarray, seconds: np.ndarray, weekdays: np.ndarray, home: int, work: int
) -> np.ndarray:
    start = 8 * _HOUR + int(rng.integers(-1800, 1801))
    end = 17 * _HOUR + 1800 + int(rng.integers(-1800, 1801))
    at_work = (weekdays[days] < 5) & (seconds >= start) & (seconds < end)
    return np.where(at_work, work, home)


def _roamer_locations(
    rng: np.random.Generator,
    days: np.ndarray,
    seconds: np.ndarray,
    n_days: int,
    home: int,
    places: np.ndarray,
    weights: np.ndarray,
) -> np.ndarray:
    out = np.full(days.shape, home, dtype=np.int64)
    for day in range(n_days):
        mask = days == day
        if not mask.any():
            continue
        # Stays of 2-4 hours back to back between the roaming hours.
        durations = rng.uniform(2 * _HOUR, 4 * _HOUR, size=8)
        edges = _ROAM_START + np.concatenate([[0.0], np.cumsum(durations)])
        stay_places = rng.choice(places, size=len(durations), p=weights)
        secs = seconds[mask]
        stay = np.searchsorted(edges, secs, side="right") - 1
        roaming = (secs >= _ROAM_START) & (secs < _ROAM_END) & (stay < len(durations))
        loc = np.full(secs.shape, home, dtype=np.int64)
        loc[roaming] = stay_places[stay[roaming]]
        out[mask] = loc
    return out


def _generate_user(
    seed: np.random.SeedSequence,
    user_id: str,
    archetype: str,
    config: SynthConfig,
    day_starts: np.ndarray,
    weekdays: np.ndarray,
    popularity: np.ndarray,
) -> CdrTrajectory:
    rng = np.random.default_rng(seed)
    n_days = config.n_weeks * 7
    n_loc = config.n_locations

    home, work = (int(i) for i in rng.choice(n_loc, size=2, replace=False, p=popularity))
    days, seconds = _event_times(rng, n_days, config.events_per_day)

    if archetype == "commuter":
        locations = _commuter_locations(rng, days, seconds, weekdays, home, work)
    elif archetype == "homebody":
        locations = np.full(days.shape, home, dtype=np.int64)
    else:
        n_places = min(n_loc - 1, int(rng.integers(8, 16)))
        others = np.delete(np.arange(n_loc), home)
        others_p = np.delete(popularity, home)
        places = rng.choice(others, size=n_places, replace=False, p=others_p / others_p.sum())
        locations = _roamer_locations(
            rng, days, seconds, n_days, home, places, zipf_weights(n_places, config.zipf_exponent)
        )

    if config.noise_rate > 0:
        flip = rng.random(locations.shape[0]) < config.noise_rate
        locations = np.where(flip, rng.integers(0, n_loc, size=locations.shape[0]), locations)

    # Seconds never spill past the next local midnight (DST days are shorter).
    day_len = day_starts[days + 1] - day_starts[days]
    timestamps = day_starts[days] + np.minimum(seconds, day_len - 1)
    order = np.argsort(timestamps, kind="stable")
    events = tuple(
        CdrEvent(user_id, int(ts), SymbolicLocation(location_label(int(loc))))
        for ts, loc in zip(timestamps[order], locations[order])
    )
    return CdrTrajectory(user_id, events)


def generate_corpus(config: SynthConfig | None = None) -> tuple[list[CdrTrajectory], dict[str, str]]:
    """
    Generate one CDR trajectory per user plus the archetype of every user.

    Commuters spend weekday office hours at a work location and the rest of
    the time at home. Homebodies stay at home. Roamers move between a
    personal set of places in 2-4 hour stays during the day, visited with
    Zipf-distributed frequency, and sleep at home. Each event's location is
    then replaced by a uniformly random one with probability `noise_rate`.

    Args:
        config: Corpus shape; output is deterministic for a given seed.

    Returns:
        (trajectories sorted by user id, user id -> archetype).

    Raises:
        ValueError: If fewer than 3 locations are available.
    """
    config = config or SynthConfig()
    if config.n_locations < 3:
        raise ValueError(f"n_locations must be >= 3, got {config.n_locations}")
    t0 = time.perf_counter()

    day_starts = _day_starts(config)
    weekdays = np.asarray(
        pd.date_range(pd.Timestamp(config.start_date), periods=config.n_weeks * 7, freq="D").dayofweek
    )
    popularity = zipf_weights(config.n_locations, config.zipf_exponent)

    root, *children = np.random.SeedSequence(config.seed).spawn(config.n_users + 1)
    mix = config.archetype_mix
    archetypes = np.random.default_rng(root).choice(
        list(mix), size=config.n_users, p=list(mix.values())
    )

    trajectories: list[CdrTrajectory] = []
    labels: dict[str, str] = {}
    width = max(5, len(str(config.n_users)))
    for idx, (child, archetype) in enumerate(zip(children, archetypes)):
        user_id = f"U{idx:0{width}d}"
        trajectory = _generate_user(child, user_id, str(archetype), config, day_starts, weekdays, popularity)
        trajectories.append(trajectory)
        labels[user_id] = str(archetype)

    n_events = sum(len(t) for t in trajectories)
    logger.info(
        f"Generated {len(trajectories)} users, {n_events} events over {config.n_weeks} weeks "
        f"({round((time.perf_counter() - t0) * 1000, 1)}ms)"
    )
    return trajectories, labels


def write_labels(labels: dict[str, str], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(sorted(labels.items()), columns=["user_id", "archetype"])
    frame.to_csv(path, index=False, lineterminator="\n")


def read_labels(path: Path) -> dict[str, str]:
    frame = pd.read_csv(path, dtype=str)
    return dict(zip(frame["user_id"], frame["archetype"]))


def write_synthetic(
    config: SynthConfig,
    cdr_path: Path,
    labels_path: Path,
    options: ParseOptions | None = None,
) -> tuple[int, int]:
    """Generate and write the CDR text file and the archetype sidecar CSV."""
    options = options or ParseOptions(timezone=config.timezone)
    trajectories, labels = generate_corpus(config)
    write_cdr(trajectories, cdr_path, options, iso=True)
    write_labels(labels, labels_path)
    return len(trajectories), sum(len(t) for t in trajectories)
