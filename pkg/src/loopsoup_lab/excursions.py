"""Poisson point processes of boundary-to-boundary excursions.

An excursion from boundary vertex a to boundary vertex b enters the
interior with step weight 1, walks with the killed-walk transitions
1/deg(x), and exits at b; the total mass of (a, b)-excursions is the
kernel entry K(a, b), so the mass attached to an unordered arc pair
{i, j} is the arc_pair_mass of the lattice module (with the 1/2
convention on the diagonal).  A PPP at intensity beta then has
independent Poisson(beta * mass) counts per allowed pair.  Paths are
drawn exactly by Doob conditioning, using the precomputed hitting
vectors h_b = G c_b (one linear solve per domain, reused for every
target vertex).  Interior visits carry Exp(mean 1/deg) holding times,
matching the loop-soup convention.

The parity event requires N_i := sum_{j != i} N_{i,j} to be even for
every arc i -- same-arc excursions do not count.  Conditioning on it is
implemented twice: plain rejection, and an exact-counts sampler that
draws the conditioned count matrix directly from its joint pmf via a
parity dynamic program over arc-parity states (2^n of them), then fills
in paths given counts.  The two must agree in law; tests and the
multi-arc experiment cross-validate them.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .lattice import (DomainGraph, ScalarField, arc_mass_matrix,
                      excursion_kernel, green)
from .loopsoup import _vertex_codec


@dataclass(frozen=True)
class Excursion:
    path: tuple            # (boundary a, interior visits..., boundary b)
    holding_times: tuple   # one per interior visit
    arc_pair: tuple        # (i, j), i <= j

    def __post_init__(self):
        if len(self.holding_times) != len(self.path) - 2:
            raise ValueError("one holding time per interior visit")


@dataclass(eq=False)
class ExcursionEnsemble:
    domain: DomainGraph
    beta: float
    excursions: list
    counts: np.ndarray          # symmetric n_arcs x n_arcs, N_{i,j}
    restriction: object = "all-pairs"
    conditioned: bool = False

    def count(self, i, j):
        return int(self.counts[i - 1, j - 1])


@dataclass(frozen=True)
class ParityEvent:
    satisfied: bool


def _domain_mass(domain: DomainGraph) -> np.ndarray:
    mass = domain._cache.get("arc-mass")
    if mass is None:
        mass = arc_mass_matrix(domain)
        domain._cache["arc-mass"] = mass
    return mass


def _allowed_pairs(n_arcs, restriction):
    if restriction == "all-pairs":
        return [(i, j) for i in range(1, n_arcs + 1)
                for j in range(i, n_arcs + 1)]
    if restriction == "cross-arc-only":
        return [(i, j) for i in range(1, n_arcs + 1)
                for j in range(i + 1, n_arcs + 1)]
    i, j = restriction
    if not (1 <= i <= n_arcs and 1 <= j <= n_arcs):
        raise ValueError(f"arc pair {restriction} out of range")
    return [(min(i, j), max(i, j))]


def _doob_cache(domain: DomainGraph):
    """Hitting vectors H = G C plus index plumbing for path sampling."""
    cached = domain._cache.get("doob-paths")
    if cached is None:
        G = green(domain).matrix
        C = domain.boundary_incidence()
        H = G @ C
        deg = domain.degree_vector()
        A = domain.interior_adjacency()
        nbrs = [np.flatnonzero(A[i]) for i in range(domain.n_interior)]
        cached = (H, C, deg, nbrs)
        domain._cache["doob-paths"] = cached
    return cached


def _sample_path(domain, a, b, rng):
    """One excursion path from boundary a to boundary b, Doob-conditioned."""
    H, C, deg, nbrs = _doob_cache(domain)
    bi = domain.boundary_index[b]
    h = H[:, bi]
    entry_cand = [domain.interior_index[x] for x in domain.neighbors[a]
                  if x in domain.interior_index]
    w = np.clip(h[entry_cand], 0.0, None)
    cur = entry_cand[int(np.searchsorted(np.cumsum(w),
                                         rng.uniform(0.0, w.sum())))]
    visits = [cur]
    while True:
        cand = nbrs[cur]
        w = np.empty(len(cand) + 1)
        w[:-1] = h[cand]
        w[-1] = C[cur, bi]           # step out to b, weight 1 if adjacent
        w = np.clip(w, 0.0, None)
        pick = int(np.searchsorted(np.cumsum(w), rng.uniform(0.0, w.sum())))
        if pick == len(cand):
            break
        cur = int(cand[pick])
        visits.append(cur)
    times = tuple(float(t) for t in rng.exponential(1.0 / deg[visits]))
    path = (a, *(domain.interior_vertices[i] for i in visits), b)
    return path, times


def _sample_endpoints(domain, i, j, rng):
    """Endpoint pair (a, b) with a in arc i, b in arc j, weighted by K(a,b)."""
    cached = domain._cache.setdefault("endpoint-weights", {})
    key = (i, j)
    if key not in cached:
        K = excursion_kernel(domain)
        rows = [domain.boundary_index[v] for v in sorted(domain.arcs[i], key=repr)]
        cols = [domain.boundary_index[v] for v in sorted(domain.arcs[j], key=repr)]
        W = K[np.ix_(rows, cols)]
        cached[key] = (rows, cols, np.cumsum(W.ravel()), W.shape)
    rows, cols, cum, shape = cached[key]
    flat = int(np.searchsorted(cum, rng.uniform(0.0, cum[-1])))
    r, c = divmod(flat, shape[1])
    return (domain.boundary_vertices[rows[r]],
            domain.boundary_vertices[cols[c]])


def sample_excursion_ppp(domain: DomainGraph, beta: float,
                         rng: np.random.Generator,
                         restriction="all-pairs",
                         paths: bool = True) -> ExcursionEnsemble:
    """Draw the excursion PPP: Poisson counts per allowed arc pair, then
    independent Doob-conditioned paths.  ``paths=False`` keeps only the
    count matrix (for experiments that never look at trajectories)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    n = domain.n_arcs
    if n == 0:
        raise ValueError("domain has no arcs")
    mass = _domain_mass(domain)
    counts = np.zeros((n, n), dtype=int)
    excs = []
    for (i, j) in _allowed_pairs(n, restriction):
        lam = beta * mass[i - 1, j - 1]
        nij = int(rng.poisson(lam)) if lam > 0 else 0
        counts[i - 1, j - 1] = nij
        if i != j:
            counts[j - 1, i - 1] = nij
        if paths:
            for _ in range(nij):
                a, b = _sample_endpoints(domain, i, j, rng)
                path, times = _sample_path(domain, a, b, rng)
                excs.append(Excursion(path, times, (i, j)))
    return ExcursionEnsemble(domain, beta, excs, counts,
                             restriction=restriction)


def crossing_counts(ensemble: ExcursionEnsemble):
    """(N_{i,j} matrix, N_i vector, parity event).  N_i counts cross-arc
    excursions only; same-arc ones are parity-neutral."""
    N = ensemble.counts.copy()
    cross = N - np.diag(np.diag(N))
    n_i = cross.sum(axis=1)
    return N, n_i, ParityEvent(bool(np.all(n_i % 2 == 0)))


def occupation_vector(ensemble: ExcursionEnsemble) -> np.ndarray:
    """Total local time per interior vertex over all excursion visits."""
    dom = ensemble.domain
    occ = np.zeros(dom.n_interior)
    for e in ensemble.excursions:
        for v, t in zip(e.path[1:-1], e.holding_times):
            occ[dom.interior_index[v]] += t
    return occ


def occupation_functional(ensemble: ExcursionEnsemble, k) -> float:
    """T(k) = sum over excursions and interior visits of k(x) * local time."""
    dom = ensemble.domain
    if isinstance(k, ScalarField):
        kvec = k.interior
    else:
        kvec = np.asarray(k, dtype=float)
    total = 0.0
    for e in ensemble.excursions:
        for v, t in zip(e.path[1:-1], e.holding_times):
            total += kvec[dom.interior_index[v]] * t
    return total


# ---------------------------------------------------------------------------
# parity conditioning

def _cross_pairs(n):
    return [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]


def parity_probability(domain_or_mass, beta: float) -> float:
    """P[all N_i even] for the cross-arc PPP, by the 2^n spin sum
    P = 2^{-n} sum_{a in {-1,1}^n} prod_{i<j} exp((a_i a_j - 1) beta m_{ij})."""
    if isinstance(domain_or_mass, DomainGraph):
        mass = _domain_mass(domain_or_mass)
    else:
        mass = np.asarray(domain_or_mass, dtype=float)
    n = mass.shape[0]
    total = 0.0
    for bits in range(2 ** n):
        a = np.array([1 if bits >> i & 1 else -1 for i in range(n)])
        expo = sum((a[i] * a[j] - 1) * beta * mass[i, j]
                   for i in range(n) for j in range(i + 1, n))
        total += math.exp(expo)
    return total / 2 ** n


def _parity_dp(lambdas, n_arcs):
    """Backward table W[r][state]: probability that pairs r.. of independent
    Poissons flip the arc parities from ``state`` down to all-even."""
    pairs = _cross_pairs(n_arcs)
    masks = [(1 << (i - 1)) ^ (1 << (j - 1)) for i, j in pairs]
    W = [None] * (len(pairs) + 1)
    last = np.zeros(2 ** n_arcs)
    last[0] = 1.0
    W[len(pairs)] = last
    for r in range(len(pairs) - 1, -1, -1):
        lam = lambdas[r]
        pe = math.exp(-lam) * math.cosh(lam)
        po = math.exp(-lam) * math.sinh(lam)
        prev = W[r + 1]
        states = np.arange(2 ** n_arcs)
        W[r] = pe * prev + po * prev[states ^ masks[r]]
    return pairs, masks, W


def _poisson_given_parity(lam, parity, size, rng):
    """Poisson(lam) conditioned on N mod 2 == parity, via inverse cdf.

    All entries share the same lam, so the pmf terms are scalars and the
    batch reduces to vector comparisons.
    """
    out = np.full(size, parity, dtype=int)
    if lam == 0.0:
        if parity == 1:
            raise ValueError("odd count impossible at zero intensity")
        return out
    norm = math.exp(-lam) * (math.cosh(lam) if parity == 0 else math.sinh(lam))
    u = rng.uniform(0.0, norm, size=size)
    m = parity
    term = math.exp(-lam) * lam**m / math.factorial(m)
    cum = term
    pending = u > cum
    while pending.any():
        out[pending] = m + 2
        m += 2
        term *= lam * lam / (m * (m - 1))
        cum += term
        pending = u > cum
    return out


def sample_parity_counts(domain_or_mass, beta, rng, method="exact-counts",
                         size=1):
    """Batch of conditioned cross-arc count matrices, shape (size, n, n).

    ``exact-counts`` walks the parity dynamic program pair by pair and never
    rejects; ``rejection`` redraws independent Poisson matrices until all
    arc parities are even.  Both target the same law.
    """
    if isinstance(domain_or_mass, DomainGraph):
        mass = _domain_mass(domain_or_mass)
    else:
        mass = np.asarray(domain_or_mass, dtype=float)
    n = mass.shape[0]
    if n < 2:
        raise ValueError("parity conditioning needs at least two arcs")
    pairs = _cross_pairs(n)
    lambdas = [beta * mass[i - 1, j - 1] for i, j in pairs]
    M = len(pairs)
    if method == "rejection":
        pend = np.arange(size)
        flat = np.zeros((size, M), dtype=int)
        inc = np.zeros((n, M), dtype=int)
        for r, (i, j) in enumerate(pairs):
            inc[i - 1, r] = inc[j - 1, r] = 1
        for _ in range(100_000):
            if pend.size == 0:
                break
            draw = rng.poisson(lambdas, size=(pend.size, M))
            ok = np.all((draw @ inc.T) % 2 == 0, axis=1)
            flat[pend[ok]] = draw[ok]
            pend = pend[~ok]
        else:
            raise RuntimeError("rejection sampler failed to accept")
    elif method == "exact-counts":
        pairs, masks, W = _parity_dp(lambdas, n)
        state = np.zeros(size, dtype=int)
        flat = np.zeros((size, M), dtype=int)
        for r, lam in enumerate(lambdas):
            pe = math.exp(-lam) * math.cosh(lam)
            po = math.exp(-lam) * math.sinh(lam)
            w0 = pe * W[r + 1][state]
            w1 = po * W[r + 1][state ^ masks[r]]
            odd = rng.uniform(0.0, w0 + w1) < w1
            for parity in (0, 1):
                sel = np.flatnonzero(odd == bool(parity))
                if sel.size:
                    flat[sel, r] = _poisson_given_parity(lam, parity,
                                                         sel.size, rng)
            state = np.where(odd, state ^ masks[r], state)
        assert np.all(state == 0)
    else:
        raise ValueError(f"unknown method {method!r}")
    out = np.zeros((size, n, n), dtype=int)
    for r, (i, j) in enumerate(pairs):
        out[:, i - 1, j - 1] = flat[:, r]
        out[:, j - 1, i - 1] = flat[:, r]
    return out


def sample_parity_conditioned(domain: DomainGraph, beta: float,
                              rng: np.random.Generator,
                              method: str = "exact-counts") -> ExcursionEnsemble:
    """Cross-arc PPP conditioned on every N_i being even."""
    n = domain.n_arcs
    if n < 2:
        raise ValueError("parity conditioning needs at least two arcs")
    if method == "exact-counts" and n > 20:
        warnings.warn(f"{n} arcs is beyond the 2^n exact-counts range; "
                      "falling back to rejection")
        method = "rejection"
    counts = sample_parity_counts(domain, beta, rng, method=method, size=1)[0]
    excs = []
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            for _ in range(int(counts[i - 1, j - 1])):
                a, b = _sample_endpoints(domain, i, j, rng)
                path, times = _sample_path(domain, a, b, rng)
                excs.append(Excursion(path, times, (i, j)))
    return ExcursionEnsemble(domain, beta, excs, counts,
                             restriction="cross-arc-only", conditioned=True)


# ---------------------------------------------------------------------------
# serialization (same line format as loops, with the arc pair attached)

def excursions_to_lines(ensemble: ExcursionEnsemble):
    enc, _ = _vertex_codec(ensemble.domain)
    head = {"kind": "excursion-ensemble", "beta": ensemble.beta,
            "restriction": list(ensemble.restriction)
            if isinstance(ensemble.restriction, tuple) else ensemble.restriction,
            "conditioned": ensemble.conditioned,
            "counts": ensemble.counts.tolist(),
            "n_excursions": len(ensemble.excursions)}
    lines = [json.dumps(head, sort_keys=True)]
    for e in ensemble.excursions:
        lines.append(json.dumps({"path": [enc[v] for v in e.path],
                                 "times": list(e.holding_times),
                                 "pair": list(e.arc_pair)}))
    return lines


def excursions_from_lines(domain: DomainGraph, lines) -> ExcursionEnsemble:
    _, dec = _vertex_codec(domain)
    head = json.loads(lines[0])
    if head.get("kind") != "excursion-ensemble":
        raise ValueError("not an excursion-ensemble serialization")
    counts = np.array(head["counts"], dtype=int)
    excs = []
    for line in lines[1:1 + head["n_excursions"]]:
        rec = json.loads(line)
        i, j = rec["pair"]
        excs.append(Excursion(tuple(dec[s] for s in rec["path"]),
                              tuple(rec["times"]), (i, j)))
    restriction = head["restriction"]
    if isinstance(restriction, list):
        restriction = tuple(restriction)
    return ExcursionEnsemble(domain, head["beta"], excs, counts,
                             restriction=restriction,
                             conditioned=head["conditioned"])
