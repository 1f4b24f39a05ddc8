"""Tests for the free field sampler and the square's Laplace transforms.

The frozen constants below were obtained by direct numerical integration
(scipy.integrate.quad / dblquad) of the explicit Gaussian densities on the
one- and two-vertex domains, independently of the determinant formulas
implemented in the module.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loopsoup_lab.gff import (
    laplace_centered_square,
    laplace_shifted_square,
    renormalized_square,
    sample_gff,
)
from loopsoup_lab.lattice import (
    ScalarField,
    build_path_domain,
    build_rect_domain,
    green,
    harmonic_extension,
)

# direct quadrature of the N(0, 1/4) density on the 1x1 grid
QUAD_CENTERED_1V_C1 = 1.0135187878624614      # E exp(-1/2 * (h^2 - 1/4))
QUAD_CENTERED_1V_C25 = 1.0722358975329502     # same with k = 2.5
QUAD_SHIFTED_1V = 0.6793819605379505          # k = 1, shift phi = 1
# dblquad for the 2-interior-vertex path, k = (0.7, 1.3)
QUAD_CENTERED_PATH2 = 1.1995049381277516
QUAD_SHIFTED_PATH2 = 1.0785088357531827       # boundary data L=1.2, R=-0.4


def test_sample_shapes_and_exact_boundary():
    dom = build_rect_domain(3, 2)
    rng = np.random.default_rng(7)
    s = sample_gff(dom, rng)
    assert s.interior.shape == (6,)
    assert s.is_zero_boundary
    batch = sample_gff(dom, rng, size=17)
    assert batch.interior.shape == (6, 17)
    bc = {v: 2.0 for v in dom.boundary_vertices}
    s2 = sample_gff(dom, rng, boundary_data=bc)
    assert np.all(s2.boundary == 2.0)
    f = s2.field()
    assert f[dom.boundary_vertices[0]] == 2.0


def test_empirical_covariance_matches_green():
    dom = build_rect_domain(2, 2)
    rng = np.random.default_rng(12345)
    n = 200_000
    batch = sample_gff(dom, rng, size=n).interior
    emp = batch @ batch.T / n
    G = green(dom).matrix
    # Var of a product-of-Gaussians estimator: (G_ij^2 + G_ii G_jj) / n
    se = np.sqrt((G**2 + np.outer(np.diag(G), np.diag(G))) / n)
    assert np.all(np.abs(emp - G) < 5 * se)


def test_empirical_mean_is_harmonic_extension():
    dom = build_rect_domain(2, 1)
    bc = {v: (1.0 if v[0] < 0 else 0.0) for v in dom.boundary_vertices}
    rng = np.random.default_rng(99)
    n = 100_000
    batch = sample_gff(dom, rng, boundary_data=bc, size=n).interior
    h = harmonic_extension(dom, bc).interior
    se = np.sqrt(np.diag(green(dom).matrix) / n)
    assert np.all(np.abs(batch.mean(axis=1) - h) < 5 * se)


def test_renormalized_square_expansion_identity():
    # [[(h + phi)^2]] = [[h^2]] + 2 phi h + phi^2, exactly, sample by sample
    dom = build_rect_domain(3, 3)
    rng = np.random.default_rng(3)
    s = sample_gff(dom, rng, size=40)
    phi = harmonic_extension(dom, {v: 0.5 * v[0] for v in dom.boundary_vertices})
    lhs = renormalized_square(s, shift=phi)
    rhs = (renormalized_square(s) + 2 * phi.interior[:, None] * s.interior
           + (phi.interior**2)[:, None])
    assert np.allclose(lhs, rhs, atol=1e-13, rtol=0)


def test_renormalized_square_mean_is_zero():
    dom = build_rect_domain(2, 2)
    rng = np.random.default_rng(41)
    n = 200_000
    sq = renormalized_square(sample_gff(dom, rng, size=n))
    # Var[h^2] = 2 G_xx^2
    se = np.sqrt(2) * np.diag(green(dom).matrix) / np.sqrt(n)
    assert np.all(np.abs(sq.mean(axis=1)) < 5 * se)


def test_renormalized_square_rejects_boundary_data():
    dom = build_rect_domain(2, 1)
    rng = np.random.default_rng(0)
    s = sample_gff(dom, rng, boundary_data={v: 1.0 for v in dom.boundary_vertices})
    with pytest.raises(ValueError, match="zero-boundary"):
        renormalized_square(s)


def test_laplace_centered_one_vertex_against_quadrature():
    dom = build_rect_domain(1, 1)
    assert laplace_centered_square(dom, 1.0) == pytest.approx(QUAD_CENTERED_1V_C1, abs=1e-12)
    assert laplace_centered_square(dom, 2.5) == pytest.approx(QUAD_CENTERED_1V_C25, abs=1e-12)


def test_laplace_shifted_one_vertex_against_quadrature():
    dom = build_rect_domain(1, 1)
    phi = ScalarField(dom, np.array([1.0]), np.zeros(dom.n_boundary))
    got = laplace_shifted_square(dom, 1.0, phi)
    assert got == pytest.approx(QUAD_SHIFTED_1V, abs=1e-12)


def test_laplace_path2_against_quadrature():
    dom = build_path_domain(2)
    k = np.array([0.7, 1.3])
    assert laplace_centered_square(dom, k) == pytest.approx(QUAD_CENTERED_PATH2, abs=1e-11)
    phi = harmonic_extension(dom, {"L": 1.2, "R": -0.4})
    got = laplace_shifted_square(dom, k, phi)
    assert got == pytest.approx(QUAD_SHIFTED_PATH2, abs=1e-11)


def test_laplace_zero_killing_is_one():
    dom = build_rect_domain(3, 2)
    phi = harmonic_extension(dom, {v: 1.0 for v in dom.boundary_vertices})
    assert laplace_centered_square(dom, 0.0) == pytest.approx(1.0, abs=1e-14)
    assert laplace_shifted_square(dom, 0.0, phi) == pytest.approx(1.0, abs=1e-14)


def test_laplace_centered_monte_carlo():
    dom = build_rect_domain(3, 3)
    k = np.linspace(0.2, 1.0, dom.n_interior)
    rng = np.random.default_rng(2024)
    n = 200_000
    sq = renormalized_square(sample_gff(dom, rng, size=n))
    vals = np.exp(-0.5 * k @ sq)
    target = laplace_centered_square(dom, k)
    se = vals.std(ddof=1) / np.sqrt(n)
    assert abs(vals.mean() - target) < 5 * se


@pytest.mark.parametrize("seed", [11, 12, 13])
def test_laplace_shifted_monte_carlo(seed):
    dom = build_rect_domain(3, 3)
    rng = np.random.default_rng(seed)
    k = rng.uniform(0.0, 1.5, dom.n_interior)
    phi = ScalarField(dom, rng.normal(0.0, 0.8, dom.n_interior),
                      np.zeros(dom.n_boundary))
    n = 100_000
    sq = renormalized_square(sample_gff(dom, rng, size=n), shift=phi)
    vals = np.exp(-0.5 * k @ sq)
    target = laplace_shifted_square(dom, k, phi)
    se = vals.std(ddof=1) / np.sqrt(n)
    assert abs(vals.mean() - target) < 4 * se


@given(c=st.floats(min_value=0.0, max_value=10.0),
       phi=st.floats(min_value=-3.0, max_value=3.0))
@settings(max_examples=60, deadline=None)
def test_one_vertex_closed_forms(c, phi):
    # hand Gaussian integrals for h ~ N(0, 1/4) on the single-vertex grid:
    #   E exp(-c/2 (h^2 - 1/4))          = (1 + c/4)^{-1/2} e^{c/8}
    #   E exp(-c/2 ((h+phi)^2 - 1/4))    = above * e^{-c phi^2 / (2 (1 + c/4))}
    dom = build_rect_domain(1, 1)
    centered = (1 + c / 4) ** -0.5 * np.exp(c / 8)
    assert laplace_centered_square(dom, c) == pytest.approx(centered, rel=1e-12)
    field = ScalarField(dom, np.array([phi]), np.zeros(dom.n_boundary))
    shifted = centered * np.exp(-0.5 * c * phi**2 / (1 + c / 4))
    assert laplace_shifted_square(dom, c, field) == pytest.approx(shifted, rel=1e-11)


@given(st.integers(min_value=1, max_value=3), st.integers(min_value=1, max_value=3),
       st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_shifted_with_zero_shift_is_centered(nx, ny, seed):
    dom = build_rect_domain(nx, ny)
    rng = np.random.default_rng(seed)
    k = rng.uniform(0.0, 2.0, dom.n_interior)
    zero = ScalarField.zeros(dom)
    assert laplace_shifted_square(dom, k, zero) == pytest.approx(
        laplace_centered_square(dom, k), rel=1e-12)
