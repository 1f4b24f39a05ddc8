"""Calibration constants and the exact GFF/excursion identities."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loopsoup_lab.identities import (
    CalibrationConstants,
    CalibrationError,
    HEIGHT_GAP,
    IdentityReport,
    _validate_constants,
    beta_of,
    calibrate,
    coupling_matrix,
    crossing_formulas,
    dynkin_check,
    excursion_laplace_direct,
    excursion_laplace_exact,
    random_current_identity,
    sinh_expression,
    spin_law,
)
from loopsoup_lab.lattice import (
    arc_mass_matrix,
    build_path_domain,
    build_rect_domain,
)

# Frozen spin marginals for two arcs coupled at m = 1:
# P(aligned config) = 1 / (2 + 2 e^{-2}), P(split config) = e^{-2} times that.
SPIN_ALIGNED_AT_1 = 0.44039853898894116
SPIN_SPLIT_AT_1 = 0.05960146101105877


def test_calibration_frozen_constants():
    c = calibrate()
    assert c.height_gap == math.sqrt(0.5)
    assert c.beta == 0.25
    assert c.u == c.height_gap
    assert c.beta_coefficient == 0.5
    assert c.local_time_unit == 1.0
    assert c.continuum_ratio == 2.0
    assert beta_of(c.u) == pytest.approx(0.25, abs=1e-15)


def test_calibrate_idempotent_and_portable():
    assert calibrate() == calibrate()
    dom = build_rect_domain(3, 3, {1: "left", 2: "right", 3: "top"})
    assert calibrate(dom) == calibrate()


def test_calibration_error_on_tampered_constants():
    bad = CalibrationConstants(height_gap=0.9, beta=0.25, u=0.9,
                               beta_coefficient=0.5, local_time_unit=1.0)
    with pytest.raises(CalibrationError):
        _validate_constants(bad)
    bad2 = CalibrationConstants(height_gap=HEIGHT_GAP, beta=0.4,
                                u=HEIGHT_GAP, beta_coefficient=0.5,
                                local_time_unit=1.0)
    with pytest.raises(CalibrationError, match="violated"):
        _validate_constants(bad2)


def test_coupling_matrix_values():
    dom = build_rect_domain(3, 3, {1: "left", 2: "right"})
    m = coupling_matrix(dom)
    mass = arc_mass_matrix(dom)
    assert m[0, 1] == pytest.approx(0.25 * mass[0, 1], abs=1e-15)
    assert m[0, 0] == 0.0 and m[1, 1] == 0.0
    assert np.allclose(m, m.T)
    stronger = coupling_matrix(dom, u=1.0)
    assert stronger[0, 1] == pytest.approx(0.5 * mass[0, 1], abs=1e-15)


def test_spin_law_frozen_two_arcs():
    m = np.array([[0.0, 1.0], [1.0, 0.0]])
    configs, probs = spin_law(m)
    assert configs == [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    assert probs[0] == pytest.approx(SPIN_ALIGNED_AT_1, abs=1e-15)
    assert probs[3] == pytest.approx(SPIN_ALIGNED_AT_1, abs=1e-15)
    assert probs[1] == pytest.approx(SPIN_SPLIT_AT_1, abs=1e-15)
    assert probs[2] == pytest.approx(SPIN_SPLIT_AT_1, abs=1e-15)
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 4), seed=st.integers(0, 10**6))
def test_spin_law_symmetries(n, seed):
    rng = np.random.default_rng(seed)
    m = rng.uniform(0.0, 1.5, size=(n, n))
    m = np.triu(m, 1) + np.triu(m, 1).T
    configs, probs = spin_law(m)
    lookup = {c: p for c, p in zip(configs, probs)}
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    for c, p in lookup.items():
        flipped = tuple(-x for x in c)
        assert p == pytest.approx(lookup[flipped], rel=1e-12)
    # flipping one spin rescales by exp(-2 a_j sum_i a_i m_ij)
    a = configs[rng.integers(len(configs))]
    j = int(rng.integers(n))
    aj = a[:j] + (-a[j],) + a[j + 1:]
    expo = -2.0 * a[j] * sum(a[i] * m[i, j] for i in range(n) if i != j)
    assert lookup[aj] / lookup[a] == pytest.approx(math.exp(expo), rel=1e-9)


def _domains_for_laplace():
    return [
        build_rect_domain(1, 1, {1: "top", 2: "bottom"}),
        build_rect_domain(3, 3, {1: "left", 2: "right"}),
        build_rect_domain(2, 2, {1: "top", 2: "bottom", 3: "left"}),
        build_path_domain(3, {1: ["L"], 2: ["R"]}),
    ]


def test_excursion_laplace_dual_route():
    rng = np.random.default_rng(99)
    for dom in _domains_for_laplace():
        k = rng.uniform(0.0, 2.0, size=dom.n_interior)
        for u in (0.4, HEIGHT_GAP, 1.3):
            for i in range(1, dom.n_arcs + 1):
                for j in range(i, dom.n_arcs + 1):
                    a = excursion_laplace_exact(dom, i, j, k, u=u)
                    b = excursion_laplace_direct(dom, i, j, k, u=u)
                    assert abs(a - b) < 1e-12, (dom.n_interior, i, j, u)


def test_excursion_laplace_limits():
    dom = build_rect_domain(1, 1, {1: "top", 2: "bottom"})
    # zero killing: back to the coupling
    v0 = excursion_laplace_exact(dom, 1, 2, 0.0)
    assert v0 == pytest.approx(0.25 * 0.25, abs=1e-14)
    # one interior vertex: v(c) = beta * K_c(top, bottom) = 0.25 / (4 + c)
    v = excursion_laplace_exact(dom, 1, 2, 1.7)
    assert v == pytest.approx(0.25 / 5.7, abs=1e-14)
    # heavy killing crushes the transformed mass
    assert excursion_laplace_exact(dom, 1, 2, 1e8) < 1e-6
    big = build_rect_domain(3, 3, {1: "left", 2: "right"})
    assert excursion_laplace_exact(big, 1, 2, 1e8) < 1e-6


def test_dynkin_exact_residuals():
    one = build_rect_domain(1, 1, {1: "top", 2: "bottom"})
    assert dynkin_check(one, 1.3).abs_err < 1e-12
    two = build_rect_domain(2, 2, {1: "top", 2: "bottom"})
    rng = np.random.default_rng(12)
    for u in (0.0, 0.5, HEIGHT_GAP, 1.2):
        k = rng.uniform(0.0, 1.5, size=two.n_interior)
        rep = dynkin_check(two, k, u=u)
        assert rep.abs_err < 1e-12, f"u={u}: {rep.abs_err:.2e}"
    three = build_rect_domain(3, 3, {1: "left", 2: "right", 3: "top"})
    k = rng.uniform(0.0, 1.5, size=three.n_interior)
    assert dynkin_check(three, k).abs_err < 1e-12
    # trivial edges of the identity
    assert dynkin_check(two, 0.0).lhs == pytest.approx(1.0, abs=1e-14)
    zero_u = dynkin_check(two, 0.7, u=0.0)
    assert zero_u.lhs == pytest.approx(1.0, abs=1e-14)
    assert zero_u.rhs == 1.0


def test_dynkin_monte_carlo():
    dom = build_rect_domain(3, 3, {1: "top", 2: "bottom"})
    rng = np.random.default_rng(17)
    k = rng.uniform(0.0, 1.0, size=dom.n_interior)
    rep = dynkin_check(dom, k, n_samples=30_000, rng=np.random.default_rng(5))
    assert rep.n_samples == 30_000
    assert abs(rep.z_score) < 4, f"dynkin MC off: z={rep.z_score:.2f}"


def test_random_current_two_arc_closed_form():
    for dom in (build_rect_domain(1, 1, {1: "top", 2: "bottom"}),
                build_rect_domain(3, 3, {1: "top", 2: "bottom"})):
        rng = np.random.default_rng(31)
        k = rng.uniform(0.2, 1.2, size=dom.n_interior)
        m = coupling_matrix(dom)[0, 1]
        v = excursion_laplace_exact(dom, 1, 2, k)
        rep = random_current_identity(dom, k)
        assert rep.abs_err == 0.0
        assert rep.rhs == pytest.approx(math.cosh(v) / math.cosh(m),
                                        abs=1e-14)
        assert rep.rhs < 1.0  # killing strictly reduces the ratio


def test_random_current_monte_carlo():
    dom2 = build_rect_domain(3, 3, {1: "top", 2: "bottom"})
    rng = np.random.default_rng(7)
    k2 = rng.uniform(0.0, 1.0, size=dom2.n_interior)
    rep2 = random_current_identity(dom2, k2, n_samples=20_000,
                                   rng=np.random.default_rng(71))
    assert abs(rep2.z_score) < 4, f"2-arc MC off: z={rep2.z_score:.2f}"
    dom3 = build_rect_domain(2, 2, {1: "top", 2: "bottom", 3: "left"})
    k3 = rng.uniform(0.0, 1.0, size=dom3.n_interior)
    rep3 = random_current_identity(dom3, k3, n_samples=20_000,
                                   rng=np.random.default_rng(72))
    assert abs(rep3.z_score) < 4, f"3-arc MC off: z={rep3.z_score:.2f}"


def test_crossing_formulas_frozen():
    out = crossing_formulas(math.log(2) / 2)
    assert out["p_even"] == pytest.approx(0.75, abs=1e-15)
    assert out["p_odd"] == pytest.approx(0.25, abs=1e-15)
    assert out["p_even_and_linked"] == out["p_odd"]
    assert out["p_even_not_linked_given_even"] == pytest.approx(
        2 / 3, abs=1e-15)
    assert out["gap"] == pytest.approx(0.5, abs=1e-15)
    trivial = crossing_formulas(0.0)
    assert trivial["p_even"] == 1.0 and trivial["p_odd"] == 0.0
    with pytest.raises(ValueError):
        crossing_formulas(-0.1)


@settings(max_examples=50, deadline=None)
@given(m=st.floats(0.0, 20.0))
def test_crossing_formulas_consistency(m):
    out = crossing_formulas(m)
    assert out["p_even"] + out["p_odd"] == pytest.approx(1.0, abs=1e-12)
    assert out["p_even"] - out["p_odd"] == pytest.approx(out["gap"],
                                                         abs=1e-12)
    assert 0.0 <= out["p_even_not_linked_given_even"] <= 1.0


def test_sinh_expression():
    dom = build_rect_domain(3, 3, {1: "left", 2: "right"})
    m = coupling_matrix(dom)[0, 1]
    assert sinh_expression(dom, 1, 2, 0.0) == pytest.approx(math.sinh(m),
                                                            abs=1e-14)
    v = excursion_laplace_exact(dom, 1, 2, 0.8)
    assert sinh_expression(dom, 1, 2, 0.8) == pytest.approx(math.sinh(v),
                                                            abs=1e-14)
    one = build_rect_domain(1, 1, {1: "top", 2: "bottom"})
    assert sinh_expression(one, 1, 2, 0.5) > sinh_expression(one, 1, 2, 2.0)


def test_identity_report_json():
    rep = IdentityReport("demo", 1.0, 1.0 + 5e-13, 5e-13, z_score=0.7,
                         n_samples=100, seed=3)
    assert rep.exact_ok
    back = json.loads(rep.to_json())
    assert back["name"] == "demo"
    assert back["lhs"] == 1.0
    assert back["z_score"] == 0.7
    assert back["n_samples"] == 100
    bad = IdentityReport("demo", 1.0, 2.0, 1.0)
    assert not bad.exact_ok
    assert json.loads(bad.to_json())["z_score"] is None
