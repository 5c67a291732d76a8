import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from s2kan.errors import ConfigurationError
from s2kan.gates import (
    GAMMA,
    TAU,
    ZETA,
    GateParams,
    clamp_uniform,
    decisiveness,
    expectation,
    expected_gate,
    expected_gate_grad,
    gate_stats,
    is_open,
    sample,
    sample_gate,
    threshold_gate,
)

THRESHOLD = TAU * math.log(-GAMMA / ZETA)


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def test_sample_examples():
    assert sample_gate(0.0, 0.5) == pytest.approx((0.5, 1.2 * 0.25 / TAU), abs=1e-15)
    assert sample_gate(-3.0, 0.5)[0] == 0.0
    assert sample_gate(-3.0, 0.5)[1] == 0.0
    assert sample_gate(1e6, 1e-6)[0] == 1.0
    assert sample(GateParams(0.0), 0.5)[0] == pytest.approx(0.5, abs=1e-15)


def test_sample_matches_direct_formula(rng):
    u = rng.uniform(0.01, 0.99, 500)
    a = rng.normal(0, 2, 500)
    z, _ = sample_gate(a, u)
    ref = [min(1.0, max(0.0, sigmoid((math.log(ui) - math.log(1 - ui) + ai) / TAU) * 1.2 - 0.1))
           for ui, ai in zip(u, a)]
    np.testing.assert_allclose(z, ref, atol=1e-14)


@pytest.mark.parametrize("u", [0.0, 1.0, -0.1])
def test_sample_rejects_boundary_uniforms(u):
    with pytest.raises(ValueError):
        sample_gate(0.0, u)


def test_clamp_uniform():
    np.testing.assert_array_equal(clamp_uniform(np.array([0.0, 0.5, 1.0])), [1e-6, 0.5, 1 - 1e-6])


@pytest.mark.parametrize("kw", [dict(tau=0.0), dict(gamma=0.1), dict(zeta=0.9)])
def test_invalid_constants(kw):
    with pytest.raises(ConfigurationError):
        GateParams(0.0, **kw)


def test_expected_gate_examples():
    assert expected_gate(0.0) == pytest.approx(0.8318, abs=1e-4)
    assert expected_gate(THRESHOLD) == 0.5
    assert expected_gate(-10.0) == pytest.approx(2.2e-4, rel=0.05)
    assert expectation(GateParams(0.0)) == expected_gate(0.0)


def test_expected_gate_grad_examples():
    assert expected_gate_grad(THRESHOLD) == 0.25
    assert expected_gate_grad(0.0) == pytest.approx(0.1399, abs=1e-4)
    assert expected_gate_grad(60.0) < 1e-20
    assert expected_gate_grad(-60.0) < 1e-20


def test_expected_gate_grad_is_derivative(rng):
    a = rng.normal(0, 3, 100)
    h = 1e-6
    num = (expected_gate(a + h) - expected_gate(a - h)) / (2 * h)
    np.testing.assert_allclose(expected_gate_grad(a), num, rtol=1e-6, atol=1e-12)


def test_threshold_examples():
    assert threshold_gate(0.0) == 1.0
    assert threshold_gate(-1.0) == 1.0
    assert threshold_gate(-2.0) == 0.0
    assert THRESHOLD == pytest.approx(-1.5986, abs=1e-4)
    assert is_open(GateParams(-1.5)) and not is_open(GateParams(-1.7))


@pytest.mark.parametrize("alpha", [-3.0, -1.6, 0.0, 1.6, 3.0])
def test_closed_form_is_probability_gate_is_nonzero(alpha):
    u = clamp_uniform(np.random.default_rng(7).uniform(size=10**6))
    z, _ = sample_gate(alpha, u)
    assert abs((z > 0).mean() - expected_gate(alpha)) < 2e-3


def test_closed_form_is_not_the_mean_of_the_clipped_gate():
    # by symmetry of the stretch around 1/2 the mean relaxed gate at alpha=0 is 1/2
    u = clamp_uniform(np.random.default_rng(8).uniform(size=10**6))
    z, _ = sample_gate(0.0, u)
    assert z.mean() == pytest.approx(0.5, abs=2e-3)
    assert expected_gate(0.0) - z.mean() > 0.3


def test_expected_gate_strictly_increasing():
    a = np.linspace(-20, 20, 4001)
    assert np.all(np.diff(expected_gate(a)) > 0)


@given(st.floats(-40, 40))
def test_threshold_is_indicator_of_expectation(alpha):
    assert threshold_gate(alpha) == float(expected_gate(alpha) > 0.5)


@given(alpha=st.floats(-5, 5), u=st.floats(1e-4, 1 - 1e-4))
def test_pathwise_derivative_matches_fd(alpha, u):
    h = 1e-6
    z, dz = sample_gate(alpha, u)
    zp, _ = sample_gate(alpha + h, u)
    zm, _ = sample_gate(alpha - h, u)
    if not (0 < zm and zp < 1 and 0 < z < 1):
        return
    assert abs(dz - (zp - zm) / (2 * h)) < 1e-6


@given(st.floats(-100, 100), st.floats(1e-6, 1 - 1e-6))
def test_sample_range(alpha, u):
    z, dz = sample_gate(alpha, u)
    assert 0.0 <= z <= 1.0 and dz >= 0.0


def test_gate_stats_examples():
    s = gate_stats([0.5, 0.5])
    assert s.entropy_bits == 2.0 and s.decisiveness == 0.0
    assert gate_stats([0.005, 0.995, 0.5, 0.999]).decisiveness == 0.75
    s = gate_stats([0, 1, 1])
    assert s.entropy_bits == 0.0 and s.decisiveness == 1.0
    assert s.per_gate_p == [0.0, 1.0, 1.0]


def test_gate_stats_entropy_oracle(rng):
    from scipy.stats import entropy

    ps = rng.uniform(0, 1, 30)
    ref = sum(entropy([p, 1 - p], base=2) for p in ps)
    assert gate_stats(ps).entropy_bits == pytest.approx(ref, rel=1e-12)


def test_gate_stats_rejects_out_of_range():
    with pytest.raises(ValueError):
        gate_stats([0.5, 1.2])


def test_decisiveness_empty():
    assert decisiveness([]) == 1.0


@given(st.lists(st.floats(0, 1), min_size=1, max_size=40))
def test_gate_stats_bounds(ps):
    s = gate_stats(ps)
    assert 0 <= s.entropy_bits <= len(ps) + 1e-9
    assert 0 <= s.decisiveness <= 1
