import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from privmech.dist_models import (
    DistributionSpec,
    PrivacyLadder,
    check_hazard_order,
    inv_privacy_virtual_value,
    privacy_virtual_value,
    sample_coupled,
    spec_from_dict,
)
from privmech.errors import DomainError, RangeError, SingularityError


def ladder(*costs):
    return PrivacyLadder.even(costs)


# -- PrivacyLadder -----------------------------------------------------------


def test_ladder_validation():
    with pytest.raises(DomainError):
        PrivacyLadder((0.5, 0.5), (0.0, 0.1))
    with pytest.raises(DomainError):
        PrivacyLadder((0.2, 1.5), (0.0, 0.1))
    with pytest.raises(DomainError):
        PrivacyLadder((0.2, 0.4), (0.3, 0.1))
    with pytest.raises(DomainError):
        PrivacyLadder((0.2,), (-0.1,))
    with pytest.raises(DomainError):
        PrivacyLadder((), ())
    lad = PrivacyLadder((0.1, 0.9), (0.0, 0.2))
    assert lad.cost(2) == 0.2
    with pytest.raises(DomainError):
        lad.cost(0)
    assert lad.truncated(1).costs == (0.0,)


# -- cdf / inv_cdf -----------------------------------------------------------


def test_cdf_examples():
    assert DistributionSpec.uniform([1.0]).cdf(1, 0.25) == pytest.approx(0.25)
    assert DistributionSpec.exponential([1.0]).cdf(1, 0.0) == 0.0
    # numeric integral of the density as the oracle
    spec = DistributionSpec.exponential([2.0])
    area, _ = integrate.quad(lambda v: spec.pdf(1, v), 0, 0.5)
    assert spec.cdf(1, 0.5) == pytest.approx(area, abs=1e-12)
    assert spec.cdf(1, 0.5) == pytest.approx(0.6321, abs=1e-4)


def test_unknown_level_is_domain_error():
    spec = DistributionSpec.uniform([1.0, 2.0])
    for bad in (0, 3):
        with pytest.raises(DomainError):
            spec.cdf(bad, 0.5)


def test_inv_cdf_examples():
    assert DistributionSpec.uniform([1.0]).inv_cdf(1, 0.3679) == pytest.approx(0.3679)
    ex = DistributionSpec.exponential([1.0])
    assert ex.inv_cdf(1, 0.0) == 0.0
    assert ex.inv_cdf(1, 1 - math.exp(-2)) == pytest.approx(2.0, abs=1e-9)
    for bad in (-0.01, 1.01):
        with pytest.raises(DomainError):
            ex.inv_cdf(1, bad)


def test_scipy_agreement():
    spec = DistributionSpec.uniform([3.0, 5.0], [1.0, 1.5])
    v = np.linspace(0, 6, 41)
    np.testing.assert_allclose(spec.cdf(2, v), stats.uniform(1.5, 3.5).cdf(v), atol=1e-15)
    np.testing.assert_allclose(spec.pdf(1, v[1:-1]), stats.uniform(1.0, 2.0).pdf(v[1:-1]))
    ex = DistributionSpec.exponential([0.7])
    np.testing.assert_allclose(ex.sf(1, v), stats.expon(scale=1 / 0.7).sf(v), rtol=1e-12)
    assert ex.mean(1) == pytest.approx(1 / 0.7)


uniform_levels = st.lists(
    st.tuples(st.floats(0, 5), st.floats(0.05, 5)), min_size=1, max_size=4
).map(lambda rows: DistributionSpec.uniform([lo + w for lo, w in rows], [lo for lo, _ in rows]))
exp_levels = st.lists(st.floats(0.05, 20), min_size=1, max_size=4).map(DistributionSpec.exponential)
any_spec = st.one_of(uniform_levels, exp_levels)


@given(any_spec, st.floats(0, 1))
def test_round_trip(spec, p):
    for k in range(1, spec.levels + 1):
        assert spec.cdf(k, spec.inv_cdf(k, p)) == pytest.approx(p, abs=1e-9)


def test_round_trip_tabulated():
    spec = DistributionSpec.tabulated([([0.0, 0.5, 1.0, 2.0], [0.0, 0.4, 0.7, 1.0])], validate=False)
    p = np.linspace(0, 1, 101)
    np.testing.assert_allclose(spec.cdf(1, spec.inv_cdf(1, p)), p, atol=1e-12)


@pytest.mark.parametrize(
    "spec",
    [
        DistributionSpec.uniform([1.0, 2.0, 4.0]),
        DistributionSpec.exponential([3.0, 1.0, 0.25]),
        DistributionSpec.tabulated([([0.0, 1.0, 2.0], [0.0, 0.5, 1.0])]),
    ],
)
def test_normalization(spec):
    for k in range(1, spec.levels + 1):
        assert spec.normalization_error(k) <= 1e-6


def test_bad_tabulated_tables_rejected():
    with pytest.raises(DomainError):
        DistributionSpec.tabulated([([0.0, 1.0], [0.1, 1.0])])
    with pytest.raises(DomainError):
        DistributionSpec.tabulated([([0.0, 1.0, 0.5], [0.0, 0.5, 1.0])])


def test_irregular_level_rejected():
    # density jumps up sharply in the middle: the virtual value falls there
    with pytest.raises(DomainError, match="virtual value"):
        DistributionSpec.tabulated([([0.0, 1.0, 1.01, 2.0], [0.0, 0.05, 0.95, 1.0])])


# -- virtual values ------------------------------------------------------------


def test_virtual_value_examples():
    u = DistributionSpec.uniform([1.0])
    assert u.virtual_value(1, 0.75) == pytest.approx(0.5)
    assert u.virtual_value(1, 0.5) == pytest.approx(0.0)
    ex = DistributionSpec.exponential([2.0])
    numeric = 1 - stats.expon(scale=0.5).sf(1.0) / stats.expon(scale=0.5).pdf(1.0)
    assert ex.virtual_value(1, 1.0) == pytest.approx(0.5)
    assert ex.virtual_value(1, 1.0) == pytest.approx(numeric)


def test_virtual_value_singular_outside_support():
    with pytest.raises(SingularityError):
        DistributionSpec.uniform([1.0]).virtual_value(1, 1.5)


def test_privacy_virtual_value_examples():
    u = DistributionSpec.uniform([1.0])
    assert privacy_virtual_value(u, ladder(0.3), 1, 0.75) == pytest.approx(0.2)
    v = np.linspace(0, 1, 11)
    np.testing.assert_allclose(privacy_virtual_value(u, ladder(0.0), 1, v), u.virtual_value(1, v))
    ex = DistributionSpec.exponential([1.0])
    hazard = stats.expon().pdf(2.0) / stats.expon().sf(2.0)
    assert privacy_virtual_value(ex, ladder(0.5), 1, 2.0) == pytest.approx(2.0 - 1 / hazard - 0.5)
    assert privacy_virtual_value(ex, ladder(0.5), 1, 2.0) == pytest.approx(0.5)


def test_inv_privacy_virtual_value_examples():
    u = DistributionSpec.uniform([1.0])
    assert inv_privacy_virtual_value(u, ladder(0.3), 1, 0.0) == pytest.approx(0.65, abs=1e-9)
    assert inv_privacy_virtual_value(u, ladder(0.0), 1, 0.0) == pytest.approx(0.5, abs=1e-9)
    ex = DistributionSpec.exponential([1.0])
    assert inv_privacy_virtual_value(ex, ladder(0.2), 1, 0.3) == pytest.approx(0.3 + 1 + 0.2, abs=1e-9)


def test_inv_privacy_virtual_value_range():
    u = DistributionSpec.uniform([1.0])
    with pytest.raises(RangeError):
        inv_privacy_virtual_value(u, ladder(0.0), 1, 1.5)
    with pytest.raises(RangeError):
        inv_privacy_virtual_value(u, ladder(0.0), 1, -1.5)
    assert inv_privacy_virtual_value(u, ladder(0.0), 1, 1.5, clip=True) == pytest.approx(1.0)


@given(any_spec, st.lists(st.floats(0, 1), min_size=4, max_size=4))
def test_inverse_round_trip(spec, raw):
    costs = np.cumsum(raw[: spec.levels]) * 0.3
    lad = ladder(*costs)
    for k in range(1, spec.levels + 1):
        lo = privacy_virtual_value(spec, lad, k, spec.support(k)[0])
        hi = privacy_virtual_value(spec, lad, k, spec.upper(k))
        for x in np.linspace(lo, hi, 7):
            v = inv_privacy_virtual_value(spec, lad, k, x)
            assert privacy_virtual_value(spec, lad, k, v) == pytest.approx(x, abs=1e-9)


@given(any_spec)
def test_virtual_values_monotone(spec):
    lad = ladder(*np.linspace(0, 0.5, spec.levels))
    for k in range(1, spec.levels + 1):
        grid = spec.validation_grid(k)
        assert np.all(np.diff(spec.virtual_value(k, grid)) >= -1e-12)
        assert np.all(np.diff(privacy_virtual_value(spec, lad, k, grid)) >= -1e-12)


@given(exp_levels, st.floats(0, 10))
def test_ordering_identity(spec, v):
    lad = ladder(*np.linspace(0.1, 0.9, spec.levels))
    for k1 in range(1, spec.levels + 1):
        for k2 in range(k1 + 1, spec.levels + 1):
            lhs = privacy_virtual_value(spec, lad, k1, v) - privacy_virtual_value(spec, lad, k2, v)
            rhs = spec.virtual_value(k1, v) - spec.virtual_value(k2, v) + lad.cost(k2) - lad.cost(k1)
            assert lhs == pytest.approx(rhs, abs=1e-12)


# -- hazard order and coupling ---------------------------------------------------


def test_hazard_order_examples():
    assert check_hazard_order(DistributionSpec.exponential([2.0, 1.0]), 100).ordered
    assert check_hazard_order(DistributionSpec.uniform([1.0, 2.0]), 100).ordered
    bad = check_hazard_order(DistributionSpec.exponential([1.0, 2.0]), 100)
    assert not bad.ordered
    assert bad.level == 1
    assert bad.worst_gap == pytest.approx(-1.0)
    with pytest.raises(DomainError):
        check_hazard_order(DistributionSpec.exponential([1.0]), 1)


def hazard_ordered_uniform():
    def build(rows):
        lo, hi = [0.0], [rows[0][1]]
        for dlo, dhi in rows[1:]:
            lo.append(lo[-1] + dlo)
            hi.append(max(hi[-1] + dhi, lo[-1] + 0.05))
        return DistributionSpec.uniform(hi, lo)

    return st.lists(
        st.tuples(st.floats(0, 0.3), st.floats(0.1, 2)), min_size=1, max_size=4
    ).map(build)


@given(st.one_of(hazard_ordered_uniform(), exp_levels.map(lambda s: DistributionSpec.exponential(sorted((p[0] for p in s.params), reverse=True)))))
def test_coupled_samples_monotone(spec):
    assert check_hazard_order(spec, 200).ordered
    u = np.linspace(0, 1 - 1e-9, 201)
    values = sample_coupled(spec, u)
    assert values.shape == (201, spec.levels)
    assert np.all(np.diff(values, axis=1) >= -1e-12)


def test_sample_coupled_examples():
    spec = DistributionSpec.uniform([1.0, 2.0], [0.0, 0.0])
    np.testing.assert_allclose(sample_coupled(spec, 0.5), [0.5, 1.0])
    np.testing.assert_allclose(sample_coupled(spec, 0.0), [0.0, 0.0])
    np.testing.assert_allclose(sample_coupled(spec, 1.0), [1.0, 2.0])


def test_spec_from_dict():
    u = spec_from_dict({"family": "uniform", "low": [0, 1], "high": [1, 3]})
    assert u.support(2) == (1.0, 3.0)
    e = spec_from_dict({"family": "exponential", "rate": [2.0]})
    assert e.mean(1) == pytest.approx(0.5)
    t = spec_from_dict({"family": "tabulated", "x": [[0, 1, 2]], "cdf": [[0, 0.5, 1]]})
    assert t.cdf(1, 1.5) == pytest.approx(0.75)
    with pytest.raises(DomainError):
        spec_from_dict({"family": "pareto"})
