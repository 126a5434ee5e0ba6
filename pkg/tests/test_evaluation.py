from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from app.mobility.evaluation import (
    RankDistribution,
    embedding_quality,
    js_distance,
    max_pairwise_distance,
    pairwise_js,
    pearson_r,
    perturb_trajectory,
    perturbed_weeks,
    rank_distribution,
    similarity_experiment,
    user_rank_distributions,
)
from app.mobility.generalization import rank_map
from app.mobility.trajectories import WeeklyTrajectory


def random_distribution(rng: np.random.Generator, size: int) -> RankDistribution:
    p = rng.dirichlet(np.ones(size))
    p[rng.random(size) < 0.3] = 0.0
    if p.sum() == 0:
        p[0] = 1.0
    return RankDistribution(tuple(p / p.sum()))


def closed_form_js(p: list[float], q: list[float]) -> float:
    m = [(a + b) / 2 for a, b in zip(p, q)]
    kl = lambda x, y: sum(a * math.log2(a / b) for a, b in zip(x, y) if a > 0)  # noqa: E731
    return math.sqrt(kl(p, m) / 2 + kl(q, m) / 2)


def test_rank_distribution_frequencies():
    assert rank_distribution([1, 1, 2, 2]).probabilities == (0.5, 0.5)
    assert rank_distribution([1]).probabilities == (1.0,)
    assert rank_distribution([1, 3]).probabilities == (0.5, 0.0, 0.5)


def test_rank_distribution_errors():
    with pytest.raises(ValueError):
        rank_distribution([])
    with pytest.raises(ValueError):
        rank_distribution([0, 1])
    with pytest.raises(ValueError):
        RankDistribution((0.5, 0.6))


def test_same_visiting_pattern_at_different_places_has_zero_distance():
    home_work = [1, 2, 1, 2, 1]
    ranking = rank_map(["3", "4", "3", "4", "3"])
    other = [ranking[label] for label in ["3", "4", "3", "4", "3"]]
    g1, g2 = rank_distribution(home_work), rank_distribution(other)
    assert g1.probabilities == pytest.approx((0.6, 0.4))
    assert js_distance(g1, g2) == 0.0


def test_js_distance_examples():
    assert js_distance([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert js_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)
    assert js_distance([1.0, 0.0], [0.5, 0.5]) == pytest.approx(0.5579, abs=1e-4)
    assert js_distance([1.0, 0.0], [0.5, 0.5]) == pytest.approx(closed_form_js([1.0, 0.0], [0.5, 0.5]), abs=1e-12)


def test_js_distance_pads_to_the_common_support():
    assert js_distance(RankDistribution((1.0,)), RankDistribution((0.5, 0.5))) == pytest.approx(0.5579, abs=1e-4)


def test_js_distance_rejects_mismatched_raw_supports():
    with pytest.raises(ValueError):
        js_distance([0.5, 0.5], [0.2, 0.3, 0.5])



def test_js_distance_rejects_zero_mass_and_negative_entries():
    with pytest.raises(ValueError, match="zero mass"):
        js_distance([0.0, 0.0], [0.5, 0.5])
    with pytest.raises(ValueError):
        js_distance([1.5, -0.5], [0.5, 0.5])
    with pytest.raises(ValueError):
        js_distance([float("nan"), 1.0], [0.5, 0.5])

def test_js_distance_is_a_bounded_metric():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b, c = (random_distribution(rng, 6) for _ in range(3))
        ab, bc, ac = js_distance(a, b), js_distance(b, c), js_distance(a, c)
        assert 0.0 <= ab <= 1.0
        assert ab == pytest.approx(js_distance(b, a), abs=1e-12)
        assert ac <= ab + bc + 1e-9
    assert js_distance(a, a) == 0.0


def test_pairwise_js_matches_single_pairs():
    rng = np.random.default_rng(1)
    dists = [random_distribution(rng, int(rng.integers(1, 7))) for _ in range(8)]
    expected = [js_distance(a, b) for a, b in itertools.combinations(dists, 2)]
    np.testing.assert_allclose(pairwise_js(dists), expected, atol=1e-9)


def test_pearson_examples():
    xs = [1.0, 2.0, 5.0, 7.0]
    assert pearson_r(xs, [2 * x + 1 for x in xs]) == pytest.approx(1.0)
    assert pearson_r(xs, [-x for x in xs]) == pytest.approx(-1.0)
    assert pearson_r([1, 2, 3], [2, 1, 3]) == pytest.approx(0.5)


def test_pearson_is_invariant_under_positive_affine_maps():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=30), rng.normal(size=30)
    assert pearson_r(3 * x + 4, 0.5 * y - 2) == pytest.approx(pearson_r(x, y), abs=1e-12)


def test_pearson_errors():
    with pytest.raises(ValueError):
        pearson_r([1.0, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        pearson_r([1.0], [2.0])
    with pytest.raises(ValueError):
        pearson_r([1.0, 2.0], [1.0, 2.0, 3.0])


def triangle_layout(d01: float, d02: float, d12: float) -> np.ndarray:
    x = (d01**2 + d02**2 - d12**2) / (2 * d01)
    return np.array([[0.0, 0.0], [d01, 0.0], [x, math.sqrt(max(d02**2 - x**2, 0.0))]])


def test_embedding_distances_equal_to_js_distances_give_r_one():
    distributions = {
        "a": rank_distribution([1, 1, 1, 2]),
        "b": rank_distribution([1, 2, 3, 3]),
        "c": rank_distribution([1, 2, 2, 2, 2, 4]),
    }
    d = {pair: js_distance(distributions[pair[0]], distributions[pair[1]]) for pair in [("a", "b"), ("a", "c"), ("b", "c")]}
    points = triangle_layout(d["a", "b"], d["a", "c"], d["b", "c"])
    embeddings = dict(zip("abc", points))
    report = embedding_quality(embeddings, distributions, sample=3, seed=0)
    assert report.n_pairs == 3
    assert report.pearson_r == pytest.approx(1.0)
    np.testing.assert_allclose(report.embedding_distances, report.js_distances, atol=1e-9)


def test_identical_embeddings_have_undefined_correlation():
    distributions = {u: rank_distribution(r) for u, r in {"a": [1], "b": [1, 2], "c": [1, 2, 3]}.items()}
    embeddings = {u: np.zeros(2) for u in distributions}
    with pytest.raises(ValueError):
        embedding_quality(embeddings, distributions, sample=3)


def test_embedding_quality_is_deterministic_and_checks_inputs():
    rng = np.random.default_rng(3)
    users = [f"U{i:03d}" for i in range(40)]
    distributions = {u: random_distribution(rng, 5) for u in users}
    embeddings = {u: rng.normal(size=2) for u in users}
    first = embedding_quality(embeddings, distributions, sample=20, seed=5)
    second = embedding_quality(embeddings, distributions, sample=20, seed=5)
    assert first.users == second.users
    assert first.pearson_r == second.pearson_r
    assert first.n_pairs == 190
    assert -1.0 <= first.pearson_r <= 1.0
    assert len(list(first.pair_rows())) == 190
    assert embedding_quality(embeddings, distributions, sample=20, distance="cosine", seed=5).distance == "cosine"
    with pytest.raises(ValueError):
        embedding_quality(embeddings, distributions, sample=41)
    with pytest.raises(ValueError):
        embedding_quality(embeddings, distributions, sample=1)
    with pytest.raises(ValueError):
        embedding_quality({**embeddings, "extra": np.zeros(2)}, distributions, sample=5)


def test_user_rank_distributions_concatenate_weeks():
    weekly = [WeeklyTrajectory("u", 1, (1, 2)), WeeklyTrajectory("u", 2, ()), WeeklyTrajectory("u", 3, (1, 1))]
    assert user_rank_distributions(weekly)["u"].probabilities == (0.75, 0.25)


def test_perturbation_removes_the_largest_ranks():
    week = WeeklyTrajectory("u", 2, (2, 1, 2, 8, 1, 2, 1, 7))
    assert perturb_trajectory(week, 2).ranks == (2, 1, 2, 1, 2, 1)
    assert perturb_trajectory(week, 1).ranks == (2, 1, 2, 1, 2, 1, 7)
    assert perturb_trajectory(week, 4).ranks == (1, 1, 1)
    assert perturb_trajectory(week, 9).ranks == (1, 1, 1)


def test_perturbation_keeps_rank_one_and_adds_nothing():
    rng = np.random.default_rng(4)
    for _ in range(100):
        ranks = tuple(int(r) for r in rng.integers(1, 8, size=12)) + (1, 2)
        week = WeeklyTrajectory("u", 1, ranks)
        k = int(rng.integers(1, 6))
        out = perturb_trajectory(week, k)
        assert out.ranks.count(1) == ranks.count(1)
        assert set(out.ranks) <= set(ranks)


def test_perturbation_errors():
    with pytest.raises(ValueError):
        perturb_trajectory(WeeklyTrajectory("u", 1, (1, 1)), 1)
    with pytest.raises(ValueError):
        perturb_trajectory(WeeklyTrajectory("u", 1, (2, 3)), 2)
    with pytest.raises(ValueError):
        perturb_trajectory(WeeklyTrajectory("u", 1, (1, 2)), 0)


def test_perturbed_weeks_skips_empty_and_unperturbable_weeks():
    weeks = [WeeklyTrajectory("u", 1, (1, 2)), WeeklyTrajectory("u", 2, ()), WeeklyTrajectory("u", 3, (1,))]
    assert [w.week_index for w in perturbed_weeks(weeks, 0)] == [1, 3]
    assert [w.ranks for w in perturbed_weeks(weeks, 1)] == [(1,)]


def test_max_pairwise_distance_matches_brute_force():
    points = np.random.default_rng(5).normal(size=(50, 2))
    brute = max(np.linalg.norm(p - q) for p, q in itertools.combinations(points, 2))
    assert max_pairwise_distance(points) == pytest.approx(brute)
    assert max_pairwise_distance(points[:1]) == 0.0


def test_similarity_experiment_with_no_perturbation_is_empty():
    layout = {"a": np.array([0.0, 0.0]), "b": np.array([3.0, 4.0])}
    report = similarity_experiment(None, None, None, {}, layout, k_max=0)  # type: ignore[arg-type]
    assert report.per_k == {}
    assert report.samples == []
    assert report.n_sources == 0
    assert report.global_max_distance == pytest.approx(5.0)
