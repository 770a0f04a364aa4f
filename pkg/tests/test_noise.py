import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from stochfsi.noise import (BrownianPath, holder_quotient, keyed_normals, refine_path,
                            refine_to, sample_path)


def test_law_of_increments():
    inc = np.array([sample_path(7, pid, 1, 1.0).increments[0] for pid in range(20_000)])
    big = sample_path(7, 0, 100_000, 1.0).increments
    assert abs(inc.mean()) <= 4 / np.sqrt(inc.size)
    assert abs(big.var(ddof=1) / 1e-5 - 1) <= 0.05
    assert abs(big.mean()) <= 4 * np.sqrt(1e-5 / big.size)


def test_determinism_and_telescoping():
    a, b = sample_path(3, 5, 64, 2.0), sample_path(3, 5, 64, 2.0)
    assert np.array_equal(a.increments, b.increments)
    assert a.increments.sum() == pytest.approx(a.values[-1], abs=1e-14)
    assert a.values[0] == 0.0
    assert not np.array_equal(a.values, sample_path(3, 6, 64, 2.0).values)


def test_order_independent_generation():
    fwd = [keyed_normals(1, pid, 0, 4) for pid in range(5)]
    rev = [keyed_normals(1, pid, 0, 4) for pid in reversed(range(5))][::-1]
    for x, y in zip(fwd, rev):
        assert np.array_equal(x, y)


def test_refinement_preserves_coarse_values():
    p = sample_path(11, 2, 16, 1.0)
    f = refine_path(p)
    assert f.N == 32 and f.T == p.T
    assert np.array_equal(f.values[::2], p.values)
    ff = refine_path(f)
    assert np.array_equal(ff.values, refine_to(p, 64).values)
    assert np.array_equal(ff.values[::4], p.values)
    assert np.array_equal(ff.coarse_values(16), p.values)


def test_refined_increment_variance():
    p = refine_to(sample_path(2, 0, 1000, 1.0), 8000)
    assert abs(p.increments.var(ddof=1) / p.dt - 1) <= 0.05


def test_bridge_midpoints_are_conditionally_correct():
    # midpoint residual should be N(0, dt/4) independent of the coarse increments
    mids = []
    for pid in range(4000):
        p = sample_path(5, pid, 1, 1.0)
        f = refine_path(p)
        mids.append(f.values[1] - 0.5 * p.values[1])
    assert stats.kstest(np.array(mids) / 0.5, "norm").pvalue > 1e-3


def test_brownian_endpoint_ks():
    w = np.array([sample_path(0, pid, 8, 2.0).values[-1] for pid in range(10_000)])
    assert stats.kstest(w / np.sqrt(2.0), "norm").pvalue >= 1e-3


def test_holder_examples():
    assert holder_quotient(BrownianPath.zero(8, 1.0)) == 0.0
    assert holder_quotient(BrownianPath.from_increments([0.3], 1.0)) == pytest.approx(0.3)
    c = 0.7
    p = BrownianPath.from_increments(c * np.array([1, -1, 1, -1.0]), 1.0)
    assert holder_quotient(p) == pytest.approx(c * np.sqrt(2), rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=12), st.floats(0.1, 10))
def test_holder_brute_force(incs, T):
    p = BrownianPath.from_increments(incs, T)
    W, t = p.values, p.times
    ref = max((abs(W[j] - W[i]) / (t[j] - t[i]) ** 0.25
               for i in range(len(W)) for j in range(i + 1, len(W))), default=0.0)
    assert holder_quotient(p) == pytest.approx(ref, rel=1e-12, abs=1e-300)


def test_holder_dyadic_for_long_paths():
    p = sample_path(0, 0, 8192, 1.0)
    q = holder_quotient(p)
    assert q > 0 and np.isfinite(q)


def test_csv_dump(tmp_path):
    p = sample_path(1, 1, 4, 1.0)
    p.to_csv(tmp_path / "path.csv")
    rows = (tmp_path / "path.csv").read_text().splitlines()
    assert rows[0] == "n,t,W" and len(rows) == 6
    assert float(rows[-1].split(",")[2]) == p.values[-1]


def test_invalid_inputs():
    with pytest.raises(ValueError):
        sample_path(0, 0, 0, 1.0)
    with pytest.raises(ValueError):
        sample_path(0, 0, 4, -1.0)
    with pytest.raises(ValueError):
        refine_path(BrownianPath.zero(4, 1.0))
    with pytest.raises(ValueError):
        refine_to(sample_path(0, 0, 4, 1.0), 12)
