from __future__ import annotations

from pathlib import Path

import numpy as np

from app.mobility.config import ParseOptions, SynthConfig
from app.mobility.synthetic import (
    ARCHETYPES,
    generate_corpus,
    read_labels,
    write_synthetic,
    zipf_weights,
)
from app.mobility.trajectories import parse_cdr
from tests.conftest import MONDAY


def only(archetype: str, **extra) -> SynthConfig:
    shares = {f"{name}_share": float(name == archetype) for name in ARCHETYPES}
    return SynthConfig(n_users=12, n_weeks=2, n_locations=40, **shares, **extra)


def test_generation_is_deterministic(tiny_synth):
    assert generate_corpus(tiny_synth) == generate_corpus(tiny_synth)


def test_seed_changes_the_corpus(tiny_synth):
    other = tiny_synth.model_copy(update={"seed": tiny_synth.seed + 1})
    assert generate_corpus(tiny_synth)[0] != generate_corpus(other)[0]


def test_users_ids_and_labels(tiny_synth):
    trajectories, labels = generate_corpus(tiny_synth)
    assert [t.user_id for t in trajectories] == [f"U{i:05d}" for i in range(tiny_synth.n_users)]
    assert set(labels) == {t.user_id for t in trajectories}
    assert set(labels.values()) <= set(ARCHETYPES)


def test_events_fall_inside_the_period(tiny_synth):
    trajectories, _ = generate_corpus(tiny_synth)
    end = MONDAY + tiny_synth.n_weeks * 7 * 86400
    for t in trajectories:
        assert MONDAY <= t.timestamps[0] and t.timestamps[-1] < end
        assert t.timestamps == sorted(t.timestamps)
        assert all(loc.startswith("LA") for loc in t.locations)


def test_event_rate_matches_events_per_day(tiny_synth):
    trajectories, _ = generate_corpus(tiny_synth)
    per_day = np.mean([len(t) for t in trajectories]) / (tiny_synth.n_weeks * 7)
    assert abs(per_day - tiny_synth.events_per_day) < 0.15 * tiny_synth.events_per_day


def test_noise_free_homebody_stays_at_one_location():
    trajectories, labels = generate_corpus(only("homebody", noise_rate=0.0))
    assert set(labels.values()) == {"homebody"}
    assert all(len(set(t.locations)) == 1 for t in trajectories)


def test_noise_free_commuter_alternates_home_and_work():
    trajectories, _ = generate_corpus(only("commuter", noise_rate=0.0))
    for t in trajectories:
        assert len(set(t.locations)) == 2
        weekend = [e.location for e in t.events if (e.timestamp - MONDAY) // 86400 % 7 >= 5]
        assert len(set(weekend)) <= 1


def test_noise_free_roamer_visits_a_personal_set_of_places():
    trajectories, _ = generate_corpus(only("roamer", noise_rate=0.0))
    for t in trajectories:
        assert 2 <= len(set(t.locations)) <= 16


def test_noise_adds_locations():
    clean, _ = generate_corpus(only("homebody", noise_rate=0.0))
    noisy, _ = generate_corpus(only("homebody", noise_rate=0.5))
    assert sum(len(set(t.locations)) for t in noisy) > sum(len(set(t.locations)) for t in clean)


def test_archetype_mix_is_respected():
    _, labels = generate_corpus(SynthConfig(n_users=400, n_weeks=1, n_locations=30, events_per_day=2.0))
    shares = {a: list(labels.values()).count(a) / 400 for a in ARCHETYPES}
    assert abs(shares["commuter"] - 0.5) < 0.1
    assert abs(shares["homebody"] - 0.2) < 0.1
    assert abs(shares["roamer"] - 0.3) < 0.1


def test_zipf_weights():
    w = zipf_weights(5, 1.2)
    assert w.sum() == np.float64(1.0) or abs(w.sum() - 1.0) < 1e-12
    assert np.all(np.diff(w) < 0)


def test_written_corpus_parses_back(tmp_path: Path, tiny_synth):
    cdr, labels_path = tmp_path / "cdr.csv", tmp_path / "labels.csv"
    n_users, n_events = write_synthetic(tiny_synth, cdr, labels_path)
    trajectories, labels = generate_corpus(tiny_synth)
    parsed = parse_cdr(cdr, ParseOptions(timezone=tiny_synth.timezone))
    assert parsed == trajectories
    assert read_labels(labels_path) == labels
    assert (n_users, n_events) == (len(trajectories), sum(len(t) for t in trajectories))
