import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from outlierseq.distributions import Gaussian, TruncatedGaussian, Uniform, sample
from outlierseq.errors import SampleTooSmall, ZeroMassCell
from outlierseq.kl_estimator import (
    FixedCells,
    FixedPoints,
    SqrtN,
    build_partition,
    estimate_kl,
    estimate_kl_batch,
    kl_scores,
)
from outlierseq.rng import CounterStream, stream_key, uniforms

GOLDEN_SEED = 20160320


def distinct_points(max_size):
    # distinct values on a 1e-3 lattice; near-ties legitimately produce empty cells
    return st.lists(st.integers(-5000, 5000), min_size=6, max_size=max_size, unique=True).map(
        lambda v: [i / 1000 for i in v])
# estimate_kl of 10**4 draws of N(0,2) against N(0,1), stream (GOLDEN_SEED, "kl-golden")
GOLDEN_KL = 0.1517132729721329


def reference_estimate(sample, q, ell, T):
    """Literal transcription of the estimator with explicit cell loops."""
    y = sorted(sample)
    n = len(y)
    edges = [-math.inf] + [y[ell * t - 1] for t in range(1, T)] + [math.inf]
    total = 0.0
    for t in range(T):
        count = ell if t < T - 1 else n - ell * (T - 1)
        lo, hi = edges[t], edges[t + 1]
        mass = float(q.cdf(hi) if math.isfinite(hi) else 1.0) - float(q.cdf(lo) if math.isfinite(lo) else 0.0)
        total += count / n * math.log((count / n) / mass)
    return total


def test_partition_hand_example():
    p = build_partition([0.9, 0.1, 0.6, 0.3], FixedPoints(2))
    assert list(p.boundaries) == [0.3]
    assert (p.cell_count, p.points_per_cell, p.last_cell_points) == (2, 2, 2)


def test_partition_sqrt_schedule():
    y = np.arange(9.0)[::-1]
    p = build_partition(y, SqrtN())
    assert (p.points_per_cell, p.cell_count, p.last_cell_points) == (3, 3, 3)
    assert list(p.boundaries) == [2.0, 5.0]


def test_single_cell_schedule_rejected():
    with pytest.raises(SampleTooSmall):
        build_partition([0.1, 0.2, 0.3], FixedCells(1))
    with pytest.raises(SampleTooSmall):
        build_partition([0.1], SqrtN())
    with pytest.raises(SampleTooSmall):
        build_partition([0.1, 0.2, 0.3], FixedPoints(2))


@pytest.mark.parametrize("n", [2, 3, 5])
def test_sqrt_schedule_too_small(n):
    with pytest.raises(SampleTooSmall):
        build_partition(np.linspace(0, 1, n), SqrtN())


@pytest.mark.parametrize("n", [4, 6, 7, 9, 10, 17, 99, 100, 101, 1000, 12345])
def test_sqrt_schedule_layout_invariants(n):
    y = np.linspace(0, 1, n)
    p = build_partition(y, SqrtN())
    ell = math.ceil(math.sqrt(n))
    assert p.points_per_cell == ell
    assert p.cell_count == n // ell
    assert ell <= p.last_cell_points < 2 * ell
    assert p.counts().sum() == n


def test_fixed_cells_gives_requested_count():
    p = build_partition(np.arange(23.0), FixedCells(4))
    assert p.cell_count == 4 and p.points_per_cell == 5 and p.last_cell_points == 8


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=6, max_size=200),
       st.sampled_from([SqrtN(), FixedPoints(2), FixedCells(2)]))
def test_cells_tile_and_hold_expected_counts(values, schedule):
    y = np.array(values)
    p = build_partition(y, schedule)
    # right-closed cells, membership by rank so ties keep the count definition
    ranks = np.argsort(np.argsort(y, kind="stable"), kind="stable")
    cell_of = np.minimum(ranks // p.points_per_cell, p.cell_count - 1)
    counts = np.bincount(cell_of, minlength=p.cell_count)
    assert list(counts) == list(p.counts())
    assert np.all(np.diff(p.boundaries) >= 0)
    masses = counts / y.size
    assert np.all(masses[:-1] == p.points_per_cell / y.size)
    assert abs(masses.sum() - 1) < 1e-15


def test_estimate_hand_example():
    got = estimate_kl([0.1, 0.3, 0.6, 0.9], Uniform(0, 1), FixedPoints(2))
    assert got == pytest.approx(0.5 * math.log(0.5 / 0.3) + 0.5 * math.log(0.5 / 0.7), abs=1e-15)
    assert got == pytest.approx(0.0871767, abs=1e-7)


def test_estimate_zero_when_cells_match_q():
    # boundaries at exact q-quantiles 0.25, 0.5, 0.75 with 2 points per cell
    y = [0.1, 0.25, 0.3, 0.5, 0.6, 0.75, 0.8, 0.9]
    assert estimate_kl(y, Uniform(0, 1), FixedPoints(2)) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("q", [Gaussian(0, 1), TruncatedGaussian(0, 1, -3, 3), Uniform(-4, 4)])
@pytest.mark.parametrize("schedule", [SqrtN(), FixedPoints(3), FixedCells(5)])
def test_estimate_matches_reference_transcription(q, schedule):
    x = sample(Uniform(-2.5, 2.5), 137, CounterStream.from_seed(5, repr(q), schedule.describe()))
    part = build_partition(x, schedule)
    ref = reference_estimate(x, q, part.points_per_cell, part.cell_count)
    assert estimate_kl(x, q, schedule) == pytest.approx(ref, abs=1e-12)


def test_golden_value_near_truth():
    x = sample(Gaussian(0, 2), 10_000, CounterStream.from_seed(GOLDEN_SEED, "kl-golden"))
    got = estimate_kl(x, Gaussian(0, 1))
    assert got == GOLDEN_KL
    assert abs(got - 0.1534264) < 0.08


def test_zero_mass_cell_raises_and_clamp_opt_in():
    x = [0.5, 1.5, 2.5, 3.5]
    with pytest.raises(ZeroMassCell):
        estimate_kl(x, Uniform(0, 1), FixedPoints(2))
    v = estimate_kl(x, Uniform(0, 1), FixedPoints(2), clamp_cell_mass=1e-6)
    assert math.isfinite(v)


@given(distinct_points(300), st.randoms())
def test_permutation_invariance_bit_exact(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    q = Gaussian(0.3, 1.7)
    assert estimate_kl(values, q) == estimate_kl(shuffled, q)


@given(distinct_points(200),
       st.integers(-3, 3))
def test_power_of_two_scaling_is_bit_exact(values, k):
    scale = 2.0**k
    x = np.array(values)
    base = estimate_kl(x, Gaussian(0, 1))
    moved = estimate_kl(x * scale, Gaussian(0, scale**2))
    assert base == moved


@given(distinct_points(200),
       st.floats(0.1, 10), st.floats(-10, 10))
def test_affine_pushforward_invariance(values, a, b):
    x = np.array(values)
    q = Gaussian(0.5, 2.0)
    moved = Gaussian(a * 0.5 + b, a * a * 2.0)
    assert estimate_kl(a * x + b, moved) == pytest.approx(estimate_kl(x, q), abs=1e-9)


def test_vectorised_scores_bit_identical_to_scalar():
    u = uniforms(stream_key(9), np.arange(12, dtype=np.uint64)[:, None], np.arange(400, dtype=np.uint64)[None, :])
    x = Gaussian(0, 1.5).quantile(u).reshape(3, 4, 400)
    scores = kl_scores(x, Gaussian(0, 1))
    for idx in np.ndindex(3, 4):
        assert scores[idx] == estimate_kl(x[idx], Gaussian(0, 1))


def test_batch():
    q = Gaussian(0, 1)
    s = list(np.linspace(-2, 2, 16))
    assert estimate_kl_batch([], q) == []
    assert estimate_kl_batch([s], q) == [estimate_kl(s, q)]
    a, b = estimate_kl_batch([s, list(s)], q)
    assert a == b


def test_batch_error_carries_index():
    with pytest.raises(ZeroMassCell) as info:
        estimate_kl_batch([[0.1, 0.2, 0.3, 0.4], [5.0, 6.0, 7.0, 8.0]], Uniform(0, 1), FixedPoints(2))
    assert info.value.index == 1
    assert "element 1" in str(info.value)


def test_consistency_null_replicates():
    hits = 0
    for r in range(100):
        x = sample(Gaussian(0, 1), 10_000, CounterStream.from_seed(GOLDEN_SEED, "kl-null", r))
        hits += abs(estimate_kl(x, Gaussian(0, 1))) < 0.05
    assert hits >= 95
