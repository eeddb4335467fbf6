import math

import numpy as np
import pytest

from cldnudge.diagnostics import (boundary_values, check_condition, log_moment_F,
                                  moment_asymptotics_check, ratio_limits, scaled_moment,
                                  un_vn_sequences)
from cldnudge.kernel import OrientationQuadrature
from cldnudge.operator import moment_F
from cldnudge.population import GrowthLaw, PsdState, ShapeSpec, extend_domain

S1 = ShapeSpec(0.5, 0.1, 0.1, 0.2)
S2 = ShapeSpec(2.0, 0.2, 0.1, 0.2)
QUAD = OrientationQuadrature(128, 128)


def test_condition_table1():
    rep = check_condition(S1, S2)
    assert rep.lhs == pytest.approx(0.01) and rep.rhs == pytest.approx(0.04)
    assert rep.satisfied


def test_condition_examples():
    assert not check_condition(S1, S1).satisfied
    a, b = ShapeSpec(1.0, 0.1, 0.1, 0.3), ShapeSpec(1.0, 0.1, 0.2, 0.3)
    rep = check_condition(a, b)
    assert (rep.lhs, rep.rhs) == pytest.approx((0.01, 0.04)) and rep.satisfied
    # near-ties inside the 1e-9 band count as violations
    c = ShapeSpec(1.0, 0.1, 0.1 * (1 + 1e-12), 0.3)
    assert not check_condition(a, c).satisfied


def test_condition_symmetry():
    a, b = ShapeSpec(0.7, 0.1, 0.13, 0.3), ShapeSpec(1.4, 0.1, 0.1, 0.3)
    ab, ba = check_condition(a, b), check_condition(b, a)
    assert (ab.lhs, ab.rhs) == (ba.rhs, ba.lhs) and ab.satisfied == ba.satisfied


def _domain(dx=0.001):
    return extend_domain(ShapeSpec(1.0, 0.1, 0.1, 0.2), GrowthLaw(T=1.0), dx)


def test_log_moment_matches_direct_sum():
    d = _domain(0.01)
    psi = PsdState(0.0, np.sin(40 * d.grid), d)
    for n in (0, 3, 8):
        lg, sg = log_moment_F(psi, n)
        assert sg * math.exp(lg) == pytest.approx(moment_F(psi, n), rel=1e-12)
    assert log_moment_F(PsdState(0.0, np.zeros(d.n), d), 4) == (-math.inf, 0.0)


def test_sequences_zero_boundary():
    F = {2 * n + 2: (math.log(3.0) + n, 1.0) for n in range(1, 40)}
    seq = un_vn_sequences((0.0, 0.0), (0.0, 0.0), F, S1, S2, 0, range(1, 30), QUAD)
    assert np.all(seq.sign_u == 0)
    assert np.all(np.isfinite(seq.log_v))


def test_sequences_cancel_for_identical_shapes():
    F = {2 * n + 2: (float(n), 1.0) for n in range(1, 40)}
    seq = un_vn_sequences((1.0, 0.5), (0.0, 0.0), F, S1, S1, 0, range(1, 30), QUAD)
    # the moment term drops out, leaving only the boundary terms of shape 1
    r = S1.r_min
    for k, n in enumerate(seq.n):
        want = -0.5 * r ** (-2 * n) - 2 * n * r ** (-2 * n - 1)
        assert seq.sign_v[k] * math.exp(seq.log_v[k]) == pytest.approx(want, rel=1e-10)


def test_u_ratio_limit():
    F = {2 * n + 2: (0.0, 1.0) for n in range(1, 203)}
    seq = un_vn_sequences((0.0, 0.0), (1.0, 0.0), F, S1, S2, 0, range(1, 202), QUAD)
    ru, _ = seq.ratios()
    u_lim, _ = ratio_limits(S1, S2)
    assert u_lim == pytest.approx(25.0)
    assert ru[-1] == pytest.approx(u_lim, rel=0.02)


def test_sequences_index_error():
    with pytest.raises(IndexError):
        un_vn_sequences((0, 0), (0, 0), {}, S1, S2, 2, range(2, 5), QUAD)


def test_boundary_values_second_order():
    d = _domain(0.01)
    psi = PsdState(0.0, 3 + 2 * d.grid + 5 * d.grid**2, d)
    v, dv = boundary_values(psi)
    assert v == pytest.approx(3 + 0.2 + 0.05) and dv == pytest.approx(2 + 1.0, rel=1e-10)


def test_scaled_moment_exact_for_linear():
    d = _domain(0.01)
    a, b = 0.1, 0.2
    psi = PsdState(0.0, 1 + 2 * d.grid, d)
    for n in (3, 5):
        exact = ((a ** (1 - n) - b ** (1 - n)) / (n - 1)
                 + 2 * (a ** (2 - n) - b ** (2 - n)) / (n - 2))
        assert scaled_moment(psi, n) == pytest.approx(a ** (n - 1) * exact, rel=1e-12)
    exact2 = (1 / a - 1 / b) + 2 * math.log(b / a)
    assert scaled_moment(psi, 2) == pytest.approx(a * exact2, rel=1e-12)


def test_asymptotics_constant_psd():
    d = _domain()
    rep = moment_asymptotics_check(PsdState(0.0, np.ones(d.n), d), [5, 50, 200])
    assert rep.variant == "value"
    n = rep.n
    exact = 2 * n / (2 * n - 1) * (1 - 0.5 ** (2 * n - 1))
    assert np.allclose(rep.ratio, exact, rtol=1e-12)
    assert rep.deviation[-1] < 3e-3


def test_asymptotics_zero_boundary_value():
    d = _domain()
    rep = moment_asymptotics_check(PsdState(0.0, d.grid - 0.1, d), [10, 100, 200])
    assert rep.variant == "slope"
    assert rep.deviation[-1] < rep.deviation[0]
    assert rep.deviation[-1] < 0.02


def test_asymptotics_skipped_for_zero():
    d = _domain()
    assert moment_asymptotics_check(PsdState(0.0, np.zeros(d.n), d), [5]).variant == "skipped"


def test_table1_limits_separated():
    u_lim, v_lim = ratio_limits(S1, S2)
    assert abs(u_lim - v_lim) > 0.02 * max(u_lim, v_lim)
