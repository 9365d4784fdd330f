import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypwalk.errors import ValidationError
from hypwalk.exact import exact_mean_distance
from hypwalk.groups import GroupModel
from hypwalk.measures import StepMeasure, log_ratio
from hypwalk.metrics import WordMetric
from hypwalk.rng import step_uniforms, stream_keys, uniform_int
from hypwalk.walk import BatchSpec, sample_batch, sample_trajectory, tilted_spec

WORD = WordMetric()


def replay(spec, i):
    """Walk trajectory i letter by letter through the scalar generator."""
    G = spec.model
    cdf = np.cumsum(spec.measure.prob)
    letters = []
    out = {}
    for j in range(spec.n + 1):
        if j in spec.checkpoints:
            x = G.from_letters(letters)
            out[j] = (np.bincount(x.word, minlength=len(G.tokens)), letters.copy())
        if j < spec.n:
            u = uniform_int(spec.seed, i, j)
            letters.append(min(int(np.searchsorted(cdf, u, side="right")), len(cdf) - 1))
    return out


@given(st.integers(0, 2**32), st.lists(st.integers(0, 10**9), min_size=1, max_size=8), st.integers(0, 500))
def test_rng_vector_matches_scalar(seed, idx, step):
    u = step_uniforms(stream_keys(seed, np.array(idx)), step)
    assert u.tolist() == [uniform_int(seed, i, step) for i in idx]
    assert np.all((u >= 0) & (u < 1))


def test_rng_uniformity():
    u = step_uniforms(stream_keys(7, np.arange(200_000)), 3)
    assert abs(u.mean() - 0.5) < 5 * math.sqrt(1 / 12 / u.size)
    hist = np.bincount((u * 10).astype(int), minlength=10)
    assert np.all(np.abs(hist - 20_000) < 5 * math.sqrt(20_000))


@pytest.mark.parametrize("group", ["free:2", "free:3", "freeproduct:3,3", "freeproduct:2,3"])
def test_positions_match_replay(group):
    G = GroupModel.parse(group)
    spec = BatchSpec(n=25, checkpoints=(0, 1, 7, 25), N=40, seed=11, measure=StepMeasure.uniform(G))
    batch = sample_batch(spec)
    for i in (0, 13, 39):
        ref = replay(spec, i)
        for c, n in enumerate(spec.checkpoints):
            assert batch.counts[i, c].tolist() == ref[n][0].tolist()


def test_small_checkpoints(uniform):
    spec = BatchSpec(n=1, checkpoints=(0, 1), N=500, seed=0, measure=uniform)
    b = sample_batch(spec)
    assert np.all(b.distances(WORD, 0) == 0)
    assert np.all(b.distances(WORD, 1) == 1)
    with pytest.raises(ValidationError):
        b.distances(WORD, 2)


def test_spec_validation(uniform, curve_b):
    with pytest.raises(ValidationError):
        BatchSpec(n=5, checkpoints=(), N=10, seed=0, measure=uniform)
    with pytest.raises(ValidationError):
        BatchSpec(n=5, checkpoints=(3, 2), N=10, seed=0, measure=uniform)
    with pytest.raises(ValidationError):
        BatchSpec(n=5, checkpoints=(6,), N=10, seed=0, measure=uniform)
    with pytest.raises(ValidationError):
        BatchSpec(n=5, checkpoints=(5,), N=0, seed=0, measure=uniform)
    with pytest.raises(ValidationError):
        BatchSpec(n=5, checkpoints=(5,), N=3, seed=0, measure=uniform, lambdas=(0.1,))


def test_determinism_and_chunking(curve_b):
    base = dict(n=60, checkpoints=(10, 60), N=3000, seed=5, measure=curve_b.base, curve=curve_b, lambdas=(0.1,))
    a = sample_batch(BatchSpec(**base))
    b = sample_batch(BatchSpec(**base))
    c = sample_batch(BatchSpec(**base, chunk_size=700), threads=3)
    for x, y in ((a, b), (a, c)):
        assert np.array_equal(x.counts, y.counts)
        assert np.array_equal(x.M, y.M)
        assert np.array_equal(x.logw, y.logw)
    # a single trajectory is a function of (seed, index) only
    rec = sample_trajectory(BatchSpec(**base), 1234, metrics=(WORD,))
    assert rec.endpoints[60].distance["word"] == a.distances(WORD, 60)[1234]
    assert rec.endpoints[60].M == a.M[1234, 1]
    other = sample_batch(BatchSpec(**{**base, "seed": 6}))
    assert not np.array_equal(a.counts, other.counts)


def test_mean_distance_n2(uniform):
    b = sample_batch(BatchSpec(n=2, checkpoints=(2,), N=20_000, seed=1, measure=uniform))
    d = b.distances(WORD)
    se = d.std(ddof=1) / math.sqrt(d.size)
    assert abs(d.mean() - 1.5) < 5 * se


def test_mean_distance_matches_exact(curve_b):
    b = sample_batch(BatchSpec(n=10, checkpoints=(10,), N=20_000, seed=2, measure=curve_b.base))
    d = b.distances(WORD)
    se = d.std(ddof=1) / math.sqrt(d.size)
    assert abs(d.mean() - exact_mean_distance(curve_b.base, 10)) < 5 * se


def test_martingale_moments(curve_b):
    n = 40
    b = sample_batch(BatchSpec(n=n, checkpoints=(20, n), N=20_000, seed=3, measure=curve_b.base, curve=curve_b))
    M = b.martingale()
    assert abs(M.mean()) < 5 * M.std(ddof=1) / math.sqrt(M.size)
    # E[M^2] = n * sum mu nu^2 = 2 E[A]
    var = float(np.dot(curve_b.base.prob, curve_b.nu**2)) * n
    A2 = 2 * b.quadratic()
    assert abs(A2.mean() - var) < 5 * A2.std(ddof=1) / math.sqrt(A2.size)
    assert abs((M**2).mean() - var) < 5 * (M**2).std(ddof=1) / math.sqrt(M.size)
    # increments after step 20 are uncorrelated with M_20
    M20 = b.martingale(20)
    inc = M - M20
    prod = inc * M20
    assert abs(prod.mean()) < 5 * prod.std(ddof=1) / math.sqrt(prod.size)


def test_girsanov_weight_mean(curve_b):
    lam = 0.2
    b = sample_batch(BatchSpec(n=30, checkpoints=(30,), N=20_000, seed=4, measure=curve_b.base,
                               curve=curve_b, lambdas=(lam,)))
    w = np.exp(b.logweight(lam))
    assert abs(w.mean() - 1) < 5 * w.std(ddof=1) / math.sqrt(w.size)
    # log weight is additive over steps: compare with the letter replay
    rec = replay(b.spec, 17)[30][1]
    lr = np.array(log_ratio(curve_b, lam))
    assert b.logweight(lam)[17] == pytest.approx(float(lr[rec].sum()), abs=1e-12)


def test_tilted_spec_shares_seed(curve_b):
    spec = BatchSpec(n=20, checkpoints=(20,), N=4000, seed=9, measure=curve_b.base, curve=curve_b)
    t = tilted_spec(spec, 0.0)
    assert np.array_equal(sample_batch(spec).counts, sample_batch(t).counts)
    plus = sample_batch(tilted_spec(spec, 0.3))
    # common random numbers: most trajectories agree for a while
    assert not np.array_equal(plus.counts, sample_batch(spec).counts)


def test_accumulators(curve_b):
    b = sample_batch(BatchSpec(n=15, checkpoints=(5, 15), N=1000, seed=8, measure=curve_b.base, curve=curve_b))
    acc = b.accumulators(WORD)
    d, M = b.distances(WORD, 15), b.martingale(15)
    assert acc[15]["mean_dM"] == pytest.approx(float((d * M).mean()))
    assert acc[5]["N"] == 1000
    assert sum(1 for _ in b.records((WORD,))) == 1000


@settings(max_examples=20)
@given(st.integers(0, 10**6), st.integers(1, 30))
def test_distance_parity(seed, n):
    # on F_2 every letter changes the length by one
    G = GroupModel.free(2)
    b = sample_batch(BatchSpec(n=n, checkpoints=(n,), N=64, seed=seed, measure=StepMeasure.uniform(G)))
    d = b.distances(WORD)
    assert np.all(d % 2 == n % 2)
    assert np.all(d <= n)
