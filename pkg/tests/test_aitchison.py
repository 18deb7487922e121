from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from loopprobe.aitchison import (
    Composition,
    aitchison_distance,
    aitchison_inner,
    aitchison_norm,
    clr,
    clr_inverse,
    double_sum_distance,
    helmert_basis,
    ilr,
    ilr_inverse,
    ilr_inverse_rows,
)
from loopprobe.errors import ConfigError

positive_parts = st.integers(min_value=2, max_value=6).flatmap(
    lambda m: arrays(np.float64, (m,), elements=st.floats(min_value=1e-3, max_value=1e3))
)


def _pair(m, elements=st.floats(min_value=1e-3, max_value=1e3)):
    return st.tuples(arrays(np.float64, (m,), elements=elements), arrays(np.float64, (m,), elements=elements))


pairs = st.integers(min_value=2, max_value=6).flatmap(_pair)


def _close(x):
    return x / x.sum()


def test_composition_validation():
    with pytest.raises(ConfigError):
        Composition(np.array([1.0]))
    with pytest.raises(ConfigError):
        Composition(np.array([0.5, 0.5, 0.0]))
    with pytest.raises(ConfigError):
        Composition(np.array([0.5, 0.6]))
    c = Composition.closure([1, 1, 2])
    np.testing.assert_allclose(c.parts, [0.25, 0.25, 0.5])
    assert c.m == 3
    with pytest.raises(ValueError):
        c.parts[0] = 0.9


def test_helmert_basis_orthonormal():
    for m in range(2, 8):
        h = helmert_basis(m)
        assert h.shape == (m - 1, m)
        np.testing.assert_allclose(h @ h.T, np.eye(m - 1), atol=1e-14)
        np.testing.assert_allclose(h.sum(axis=1), 0.0, atol=1e-14)
    with pytest.raises(ConfigError):
        helmert_basis(1)


def test_clr_uniform_is_zero():
    np.testing.assert_allclose(clr(Composition.uniform(5)), 0.0, atol=1e-15)
    assert aitchison_norm(Composition.uniform(4)) == pytest.approx(0.0, abs=1e-15)


def test_two_part_distance():
    # d_A((p, 1−p), (q, 1−q)) = |logit p − logit q| / √2
    p, q = 0.8, 0.3
    expected = abs(math.log(p / (1 - p)) - math.log(q / (1 - q))) / math.sqrt(2)
    assert aitchison_distance([p, 1 - p], [q, 1 - q]) == pytest.approx(expected, rel=1e-12)


@given(positive_parts)
def test_clr_roundtrip(x):
    p = _close(x)
    np.testing.assert_allclose(clr_inverse(clr(p)), p, rtol=1e-9, atol=1e-15)
    assert abs(clr(p).sum()) <= 1e-9 * max(1.0, np.abs(clr(p)).max())


@given(positive_parts)
def test_ilr_roundtrip(x):
    p = _close(x)
    back = ilr_inverse(ilr(p))
    assert isinstance(back, Composition)
    np.testing.assert_allclose(back.parts, p, rtol=1e-9, atol=1e-15)


@given(pairs)
def test_ilr_is_isometry(pq):
    p, q = _close(pq[0]), _close(pq[1])
    da = aitchison_distance(p, q)
    assert np.linalg.norm(ilr(p) - ilr(q)) == pytest.approx(da, rel=1e-9, abs=1e-12)


@given(pairs)
def test_double_sum_matches_clr(pq):
    p, q = _close(pq[0]), _close(pq[1])
    assert double_sum_distance(p, q) == pytest.approx(aitchison_distance(p, q), rel=1e-9, abs=1e-12)
    assert aitchison_inner(p, q) == pytest.approx(float(clr(p) @ clr(q)), rel=1e-9, abs=1e-9)


@given(pairs)
def test_scale_invariance(pq):
    x, y = pq
    assert aitchison_distance(x, y) == pytest.approx(aitchison_distance(_close(x), _close(y)), rel=1e-9, abs=1e-12)
    assert aitchison_distance(3.0 * x, y) == pytest.approx(aitchison_distance(x, y), rel=1e-9, abs=1e-12)


triples = st.integers(min_value=2, max_value=6).flatmap(
    lambda m: st.tuples(*[arrays(np.float64, (m,), elements=st.floats(min_value=1e-3, max_value=1e3))] * 3)
)


@settings(max_examples=50)
@given(triples)
def test_triangle_inequality(pqr):
    p, q, r = pqr
    assert aitchison_distance(p, q) <= aitchison_distance(p, r) + aitchison_distance(r, q) + 1e-9


def test_batched_isometry_on_dirichlet_pairs():
    rng = np.random.default_rng(0)
    p = rng.dirichlet(np.ones(4), size=1000)
    q = rng.dirichlet(np.ones(4), size=1000)
    da = aitchison_distance(p, q)
    assert da.shape == (1000,)
    rel = np.abs(np.linalg.norm(ilr(p) - ilr(q), axis=1) - da) / da
    assert rel.max() <= 1e-10
    np.testing.assert_allclose(aitchison_inner(p, q), np.sum(clr(p) * clr(q), axis=1), atol=1e-10)


def test_ilr_inverse_rows_stack():
    y = np.array([[0.0, 0.0], [1.0, -2.0]])
    out = ilr_inverse_rows(y)
    assert out.shape == (2, 3)
    np.testing.assert_allclose(out.sum(axis=1), 1.0)
    np.testing.assert_allclose(out[0], 1 / 3)
    with pytest.raises(ConfigError):
        ilr_inverse(y)


def test_dimension_mismatch():
    with pytest.raises(ConfigError):
        aitchison_distance([0.5, 0.5], [0.2, 0.3, 0.5])
    with pytest.raises(ConfigError):
        clr([0.5, 0.0, 0.5])
