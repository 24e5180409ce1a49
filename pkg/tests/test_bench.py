import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from opinionsum.bench import (
    BaseSizeMismatch,
    Candidate,
    DuplicationPattern,
    InsufficientOpinions,
    MmrConfig,
    Ordering,
    QualityCluster,
    apply_pattern,
    builtin_patterns,
    filter_quality_clusters,
    generate_benchmark,
    load_patterns,
    mmr_select,
    multiplicities,
    strategic_select,
)
from opinionsum.clustering import CohesionStats
from opinionsum.domain import GroupKey, write_jsonl

GROUP = GroupKey("hotel_a", "service", "positive")
BASE = [f"opinion {i}" for i in range(10)]

# transcribed from the published pattern table
TABLE = {
    1: [3000, 5, 5, 5, 5, 5, 5, 5, 5, 3000],
    2: [5, 5, 5, 3000, 3000, 5, 5, 5, 5, 5],
    3: [3000, 3000, 5, 5, 5, 5, 5, 5, 5, 5],
    4: [3000, 5, 5, 3000, 5, 5, 5, 5, 5, 5],
    5: [2000, 2000, 5, 5, 5, 5, 5, 5, 5, 2000],
    6: [2000, 2000, 2000, 5, 5, 5, 5, 5, 5, 5],
    7: [5, 5, 5, 5, 5, 5, 5, 2000, 2000, 2000],
    8: [2000, 2000, 5, 5, 2000, 5, 5, 5, 5, 5],
    9: [5, 5, 5, 5, 2000, 5, 5, 5, 2000, 2000],
    10: [1000, 1000, 1000, 1000, 5, 5, 5, 5, 5, 2000],
}


# --- quality filter ---------------------------------------------------------------------------

@pytest.mark.parametrize(
    "dist, sim, kept",
    [(0.0, 1.0, True), (0.25, 0.9, False), (0.1, 0.69, False), (0.1, 0.70, True), (0.20, 0.70, True), (0.21, 0.71, False)],
)
def test_quality_bounds(dist, sim, kept):
    assert filter_quality_clusters([CohesionStats(dist, sim, 5)]) == ([CohesionStats(dist, sim, 5)] if kept else [])


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(-1, 1)), max_size=20))
def test_quality_filter_is_a_pure_filter(pairs):
    stats = [CohesionStats(d, s, i + 1) for i, (d, s) in enumerate(pairs)]
    out = filter_quality_clusters(stats)
    assert [x.size for x in out] == sorted(x.size for x in out)
    assert set(out) <= set(stats)


# --- MMR ---------------------------------------------------------------------------------------

def naive_mmr(E, lam, k):
    """Straight transcription of the selection rule, loops only."""
    E = [list(map(float, v)) for v in E]
    n = len(E)

    def cos(a, b):
        return sum(x * y for x, y in zip(a, b)) / math.sqrt(sum(x * x for x in a) * sum(y * y for y in b))

    rel = [sum(cos(E[i], E[j]) for j in range(n) if j != i) / (n - 1) if n > 1 else 0.0 for i in range(n)]
    chosen = []
    while len(chosen) < min(k, n):
        best, best_score = None, -math.inf
        for i in range(n):
            if i in chosen:
                continue
            pen = max((cos(E[i], E[j]) for j in chosen), default=0.0)
            score = (1 - lam) * rel[i] - lam * pen
            if score > best_score + 1e-12:
                best, best_score = i, score
        chosen.append(best)
    return chosen


def test_mmr_hand_example():
    assert mmr_select([[1, 0], [1, 0], [0, 1]], MmrConfig(0.8)) == [0, 2, 1]


def test_mmr_lambda_zero_is_relevance_order():
    E = np.array([[1, 0], [0.9, 0.1], [0.2, 1], [0.7, 0.7]])
    rel = [(sum(np.dot(E[i], E[j]) / np.linalg.norm(E[i]) / np.linalg.norm(E[j]) for j in range(4) if j != i)) for i in range(4)]
    assert mmr_select(E, MmrConfig(0.0)) == sorted(range(4), key=lambda i: -rel[i])


def test_mmr_singleton():
    assert mmr_select([[0.3, 0.4]]) == [0]


def test_mmr_empty_pool():
    with pytest.raises(ValueError):
        mmr_select(np.zeros((0, 2)))


def test_mmr_lambda_one_picks_orthogonal_second():
    E = np.array([[1, 0, 0], [0.9, 0.1, 0], [0, 0, 1], [0.8, 0.2, 0.1]])
    picks = mmr_select(E, MmrConfig(1.0))
    assert picks[1] == 2


def test_mmr_config_validation():
    with pytest.raises(ValueError):
        MmrConfig(lam=1.5)
    with pytest.raises(ValueError):
        MmrConfig(max_selected=0)


pools = arrays(np.float64, st.tuples(st.integers(1, 12), st.just(3)), elements=st.floats(0.01, 1))


@settings(max_examples=150)
@given(pools, st.sampled_from([0.0, 0.3, 0.8, 1.0]), st.integers(1, 12))
def test_mmr_properties_and_oracle(E, lam, k):
    picks = mmr_select(E, MmrConfig(lam, k))
    assert len(picks) == len(set(picks)) == min(k, len(E))
    assert picks == mmr_select(E.copy(), MmrConfig(lam, k))
    assert picks == naive_mmr(E, lam, k)


# --- strategic selection -----------------------------------------------------------------------

def _clusters(sizes):
    return [
        QualityCluster(cid, tuple(Candidate(f"c{cid}m{j}", f"cluster {cid} member {j}") for j in range(size)))
        for cid, size in enumerate(sizes)
    ]


def _noise(n, seed=0):
    rng = np.random.default_rng(seed)
    E = rng.uniform(0.01, 1, size=(n, 6))
    return [Candidate(f"n{i}", f"noise {i}") for i in range(n)], E


def test_ten_clusters_no_fill():
    picks = strategic_select(_clusters([5] * 10), [], np.zeros((0, 3)), seed=1, group=GROUP)
    assert len(picks) == 10 and all(p.origin == "cluster" for p in picks)


def test_four_clusters_plus_twenty_noise():
    pool, E = _noise(20)
    picks = strategic_select(_clusters([6, 9, 5, 7]), pool, E, seed=3, group=GROUP)
    assert [p.cluster_id for p in picks[:4]] == [1, 3, 0, 2]
    assert [p.opinion_id for p in picks[4:]] == [pool[i].opinion_id for i in naive_mmr(E, 0.8, 20)[:6]]


def test_noise_only():
    pool, E = _noise(10)
    picks = strategic_select([], pool, E)
    assert sorted(p.opinion_id for p in picks) == sorted(c.opinion_id for c in pool)


def test_clusters_beyond_target_truncate_by_size():
    sizes = [5, 12, 7, 5, 30, 6, 8, 9, 10, 11, 5, 40]
    picks = strategic_select(_clusters(sizes), [], np.zeros((0, 2)))
    assert [p.cluster_id for p in picks] == sorted(range(12), key=lambda c: (-sizes[c], c))[:10]


def test_insufficient():
    pool, E = _noise(3)
    with pytest.raises(InsufficientOpinions) as e:
        strategic_select(_clusters([5, 5]), pool, E, group=GROUP)
    assert e.value.available == 5 and e.value.group == GROUP


def test_representative_draw_is_seeded():
    a = strategic_select(_clusters([20] * 10), [], np.zeros((0, 2)), seed=5, group=GROUP)
    b = strategic_select(_clusters([20] * 10), [], np.zeros((0, 2)), seed=5, group=GROUP)
    c = strategic_select(_clusters([20] * 10), [], np.zeros((0, 2)), seed=6, group=GROUP)
    assert a == b and a != c


# --- patterns ------------------------------------------------------------------------------------

def test_builtin_patterns_verbatim():
    pats = builtin_patterns()
    assert [p.pattern_id for p in pats] == list(range(1, 11))
    assert {p.pattern_id: list(p.counts) for p in pats} == TABLE
    assert all(len(p.counts) == 10 for p in pats)


def test_pattern_validation():
    with pytest.raises(ValueError):
        DuplicationPattern(11, (1,) * 9)
    with pytest.raises(ValueError):
        DuplicationPattern(11, (0,) + (1,) * 9)


def test_pattern_one_length_and_counts():
    p1 = builtin_patterns()[0]
    v = apply_pattern(BASE, p1, "grouped")
    assert len(v.opinion_sequence) == 6040
    assert multiplicities(v.opinion_sequence, BASE) == [3000] + [5] * 8 + [3000]
    s = apply_pattern(BASE, p1, "shuffled", seed=9)
    assert Counter(s.opinion_sequence) == Counter(v.opinion_sequence)
    assert s.opinion_sequence != v.opinion_sequence


@pytest.mark.parametrize("pattern", builtin_patterns(), ids=lambda p: f"p{p.pattern_id}")
def test_count_exactness(pattern):
    for ordering in Ordering:
        v = apply_pattern(BASE, pattern, ordering, seed=pattern.pattern_id)
        assert multiplicities(v.opinion_sequence, BASE) == list(pattern.counts)
        assert len(v.opinion_sequence) == pattern.total


def test_identity_pattern():
    assert apply_pattern(BASE, DuplicationPattern(0, (1,) * 10)).opinion_sequence == tuple(BASE)


def test_base_size_mismatch():
    with pytest.raises(BaseSizeMismatch):
        apply_pattern(BASE[:9], builtin_patterns()[0])


def test_grouped_is_blockwise():
    v = apply_pattern(BASE, builtin_patterns()[9])
    runs = [k for i, k in enumerate(v.opinion_sequence) if i == 0 or v.opinion_sequence[i - 1] != k]
    assert runs == BASE


def test_generate_benchmark_product():
    from opinionsum.bench import BaseOpinion

    base = tuple(BaseOpinion(f"o{i}", BASE[i], "mmr") for i in range(10))
    out = generate_benchmark({GROUP: base}, seed=2)
    assert len(out) == 20
    assert len({v.seed for v in out}) == 20
    assert generate_benchmark({}, seed=2) == []
    other = GroupKey("hotel_b", "service", "positive")
    two = generate_benchmark({other: base, GROUP: base}, seed=2)
    assert len({v.seed for v in two}) == 40
    assert [v.group for v in two[:20]] == [GROUP] * 20
    assert generate_benchmark({GROUP: base}, seed=2) == out


def test_patterns_file(tmp_path):
    path = tmp_path / "p.jsonl"
    write_jsonl(path, [{"id": 1, "counts": [2] * 10, "description": "flat"}])
    (p,) = load_patterns(path)
    assert p.total == 20 and p.description == "flat"
    assert DuplicationPattern.from_dict(p.to_dict()) == p
