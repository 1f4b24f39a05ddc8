"""The discrete Gaussian free field and its square's Laplace functionals.

The field h on a domain has density proportional to
``exp(-1/2 sum_edges (h(x) - h(y))^2)`` with prescribed boundary values,
i.e. precision operator (-Delta) on the interior.  Its covariance is the
zero-killing Green operator, and its mean the harmonic extension of the
boundary data.  Sampling goes through a cached Cholesky factor of the
precision: solve L^T h = xi for standard normal xi.

The "renormalized square" of a shifted sample is (h + phi)^2 - G(x, x):
on a finite graph no genuine renormalisation is needed, subtracting the
diagonal of the Green operator just centres the unshifted square.  The two
``laplace_*`` functions evaluate E[exp(-1/2 <[[.]], k>)] in closed form via
determinants; they are the Gaussian side of every identity checked in
:mod:`loopsoup_lab.identities`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .lattice import DomainGraph, ScalarField, _killing_vector, green, harmonic_extension


def _precision_cholesky(domain: DomainGraph) -> np.ndarray:
    """Upper Cholesky factor R (R^T R = -Delta), cached on the domain."""
    key = "gff-chol"
    R = domain._cache.get(key)
    if R is None:
        R = scipy.linalg.cholesky(domain.laplacian_matrix())  # upper triangular
        domain._cache[key] = R
    return R


@dataclass
class GffSample:
    """One (or a batch of) free field sample(s) on a domain.

    ``interior`` has shape (n_interior,) for a single sample or
    (n_interior, batch).  ``boundary`` is the boundary data the field was
    sampled with; the field equals it on the boundary exactly, by
    construction.
    """

    domain: DomainGraph
    interior: np.ndarray
    boundary: np.ndarray

    @property
    def is_zero_boundary(self) -> bool:
        return bool(np.all(self.boundary == 0.0))

    def field(self) -> ScalarField:
        if self.interior.ndim != 1:
            raise ValueError("field() works on single samples, not batches")
        return ScalarField(self.domain, self.interior.copy(), self.boundary.copy())


def sample_gff(domain: DomainGraph, rng: np.random.Generator,
               boundary_data=None, size: int = None) -> GffSample:
    """Sample the free field with the given boundary data (default zero).

    Returns interior values of shape (n,) or (n, size).  The sample is the
    harmonic extension of the boundary data plus a centred field with
    covariance ``green(domain).matrix``.
    """
    R = _precision_cholesky(domain)
    n = domain.n_interior
    shape = (n,) if size is None else (n, size)
    xi = rng.standard_normal(shape)
    centered = scipy.linalg.solve_triangular(R, xi, lower=False)
    if boundary_data is None:
        bnd = np.zeros(domain.n_boundary)
        interior = centered
    else:
        ext = harmonic_extension(domain, boundary_data)
        bnd = ext.boundary.copy()
        mean = ext.interior if size is None else ext.interior[:, None]
        interior = mean + centered
    return GffSample(domain, interior, bnd)


def renormalized_square(sample: GffSample, shift: ScalarField = None) -> np.ndarray:
    """[[ (h + phi)^2 ]](x) = (h(x) + phi(x))^2 - G(x, x) on the interior.

    ``sample`` must have zero boundary data -- a nonzero shift enters only
    through ``phi`` (typically a harmonic extension carrying the boundary
    condition), so the centring term stays the zero-boundary Green diagonal.
    """
    if not sample.is_zero_boundary:
        raise ValueError("renormalized_square expects a zero-boundary sample; "
                         "put boundary data into the shift field instead")
    g_diag = green(sample.domain).diagonal()
    vals = sample.interior
    if shift is not None:
        phi = shift.interior
        vals = vals + (phi if vals.ndim == 1 else phi[:, None])
    if vals.ndim == 1:
        return vals**2 - g_diag
    return vals**2 - g_diag[:, None]


def laplace_centered_square(domain: DomainGraph, k) -> float:
    """E[exp(-1/2 sum_x k(x) [[h^2]](x))] for the zero-boundary field.

    Equals det(I + G K)^{-1/2} * exp(tr(G K) / 2) with K = diag(k); evaluated
    through a log-determinant for stability.  k must be nonnegative.
    """
    kvec = _killing_vector(domain, k)
    G = green(domain).matrix
    GK = G * kvec[None, :]
    sign, logdet = np.linalg.slogdet(np.eye(domain.n_interior) + GK)
    if sign <= 0:
        raise ArithmeticError("I + GK should be positive definite")
    return float(np.exp(-0.5 * logdet + 0.5 * np.trace(GK)))


def laplace_shifted_square(domain: DomainGraph, k, shift: ScalarField) -> float:
    """E[exp(-1/2 sum_x k(x) [[(h + phi)^2]](x))], h the zero-boundary field.

    Closed Gaussian form:

        exp(-1/2 sum phi^2 k) * laplace_centered_square(domain, k)
            * exp(+1/2 (k phi)^T G_k (k phi)),

    with G_k the killed Green operator.
    """
    kvec = _killing_vector(domain, k)
    phi = shift.interior
    Gk = green(domain, kvec).matrix
    kphi = kvec * phi
    quad = float(kphi @ Gk @ kphi)
    return float(np.exp(-0.5 * np.sum(phi * phi * kvec) + 0.5 * quad)
                 * laplace_centered_square(domain, kvec))
