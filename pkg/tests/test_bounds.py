import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multigroup.bounds import EpsilonSpec, epsilon, uc_width

FINITE = EpsilonSpec("finite_h", delta=0.05, h_size=4, group_count=2)


def test_worked_finite_h_value():
    # independent arithmetic evaluation of the same quantity
    expected = 18.0 * math.sqrt((2.0 * math.log(8) + math.log(160)) / 1000.0)
    assert expected == pytest.approx(1.7296920058624001, abs=1e-12)
    assert abs(epsilon(FINITE, 1000) - expected) < 1e-9
    assert epsilon(FINITE, 1000) == pytest.approx(1.7297, abs=5e-5)


def test_quadrupling_halves_exactly():
    for n in (10, 137, 1000, 4096):
        assert abs(epsilon(FINITE, 4 * n) - epsilon(FINITE, n) / 2.0) < 1e-12


def test_epsilon_is_twice_uc_width_finite_h():
    import numpy as np

    rng = np.random.default_rng(0)
    for _ in range(50):
        spec = EpsilonSpec(
            "finite_h",
            delta=float(rng.uniform(0.001, 0.999)),
            h_size=int(rng.integers(1, 10_000)),
            group_count=int(rng.integers(1, 10_000)),
        )
        n_g = int(rng.integers(1, 10**7))
        assert epsilon(spec, n_g) == 2.0 * uc_width(spec, n_g)


def test_uc_width_trivial_class():
    spec = EpsilonSpec("finite_h", delta=0.3, h_size=1, group_count=1)
    for n in (1, 10, 12345):
        assert uc_width(spec, n) == pytest.approx(9 * math.sqrt(math.log(8 / 0.3) / n), rel=1e-12)


def test_uc_width_vc_worked_value():
    spec = EpsilonSpec("vc", delta=0.05, vc_dim=3, group_count=54, n_total=100_000)
    expected = 9.0 * math.sqrt(
        (2.0 * 3.0 * math.log(2.0 * 54.0 * 100_000.0) + math.log(8.0 / 0.05)) / 500.0
    )
    assert expected == pytest.approx(4.069861577840662, abs=1e-12)
    assert abs(uc_width(spec, 500) - expected) < 1e-9


def test_epsilon_vc_worked_value():
    spec = EpsilonSpec("vc", delta=0.05, vc_dim=3, group_count=54, n_total=100_000)
    expected = 18.0 * math.sqrt(2.0 * 3.0 * math.log(16.0 * 54.0 * 100_000.0 / 0.05) / 500.0)
    assert expected == pytest.approx(9.09388015164552, abs=1e-12)
    assert abs(epsilon(spec, 500) - expected) < 1e-9


def test_unobserved_group_margin_is_infinite():
    assert epsilon(FINITE, 0) == math.inf
    assert uc_width(FINITE, 0) == math.inf
    assert epsilon(EpsilonSpec("constant", value=0.3), 0) == math.inf
    assert epsilon(EpsilonSpec("scaled", scale=2.0), 0) == math.inf


def test_constant_and_scaled_kinds():
    assert epsilon(EpsilonSpec("constant", value=0.25), 999) == 0.25
    assert epsilon(EpsilonSpec("constant", value=math.inf), 999) == math.inf
    assert epsilon(EpsilonSpec("scaled", scale=3.0), 9) == 1.0


def test_parameter_validation():
    with pytest.raises(ValueError, match="delta"):
        EpsilonSpec("finite_h", delta=1.2, h_size=2, group_count=2)
    with pytest.raises(ValueError, match="delta"):
        EpsilonSpec("finite_h", delta=0.0, h_size=2, group_count=2)
    with pytest.raises(ValueError, match="scale"):
        EpsilonSpec("scaled", scale=-1.0)
    with pytest.raises(ValueError, match="h_size"):
        EpsilonSpec("finite_h", h_size=0, group_count=2)
    with pytest.raises(ValueError, match="value"):
        EpsilonSpec("constant")
    with pytest.raises(ValueError, match="n_g"):
        epsilon(FINITE, -1)
    with pytest.raises(ValueError, match="needs"):
        epsilon(EpsilonSpec("finite_h", h_size=4), 10)
    with pytest.raises(ValueError, match="uc_width"):
        uc_width(EpsilonSpec("constant", value=0.5), 10)


def test_with_context_fills_only_missing():
    spec = EpsilonSpec("vc", vc_dim=2, group_count=7)
    bound = spec.with_context(group_count=99, n_total=1234)
    assert bound.group_count == 7  # explicit value wins
    assert bound.n_total == 1234


def test_monotonicity():
    base = dict(delta=0.05, h_size=16, group_count=6)
    small = epsilon(EpsilonSpec("finite_h", **base), 4000)
    assert epsilon(EpsilonSpec("finite_h", **base), 2000) > small
    assert epsilon(EpsilonSpec("finite_h", delta=0.05, h_size=32, group_count=6), 4000) > small
    assert epsilon(EpsilonSpec("finite_h", delta=0.05, h_size=16, group_count=12), 4000) > small
    assert epsilon(EpsilonSpec("finite_h", delta=0.01, h_size=16, group_count=6), 4000) > small
    vc = dict(delta=0.05, group_count=6, n_total=10_000)
    assert epsilon(EpsilonSpec("vc", vc_dim=5, **vc), 4000) > \
        epsilon(EpsilonSpec("vc", vc_dim=2, **vc), 4000)


def test_vanishing_margin_for_trivial_class():
    # with |G| = |H| = 1 only the delta term remains and the margin
    # decays like 1/sqrt(n_g)
    spec = EpsilonSpec("finite_h", delta=0.9999, h_size=1, group_count=1)
    assert epsilon(spec, 10**6) < 0.05
    assert epsilon(spec, 10**9) < 0.002
    assert epsilon(spec, 10**9) < epsilon(spec, 10**6) < epsilon(spec, 10**3)


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 10**8),
    h=st.integers(1, 10**5),
    g=st.integers(1, 10**4),
    delta=st.floats(0.0001, 0.9999),
)
def test_epsilon_positive_and_decreasing(n, h, g, delta):
    spec = EpsilonSpec("finite_h", delta=delta, h_size=h, group_count=g)
    value = epsilon(spec, n)
    assert value > 0
    assert epsilon(spec, n + 1) < value or value == epsilon(spec, n + 1)
    assert epsilon(spec, 4 * n) == pytest.approx(value / 2, abs=1e-12)
