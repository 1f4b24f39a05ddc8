"""Finite lattice domains with an absorbing boundary, and their potential theory.

A :class:`DomainGraph` is a finite graph split into interior vertices and
boundary vertices, with unit conductance on every edge.  The boundary is
absorbing: the simple random walk started inside jumps to a uniformly chosen
neighbour and dies the first time it steps onto a boundary vertex.  Disjoint
groups of boundary vertices can be labelled as numbered *arcs*; everything
downstream (excursion kernels, coupling matrices, parity experiments) is
phrased in terms of those arcs.

The continuum objects this mimics live on a planar domain with a smooth
boundary; here everything is exact, finite linear algebra:

* the graph Laplacian acts as ``(Delta f)(x) = sum_{y ~ x} (f(y) - f(x))``,
* the Green operator is ``G_k = (-Delta + k)^{-1}`` restricted to the
  interior, with zero (Dirichlet) values on the boundary,
* the excursion kernel between boundary vertices ``a, b`` is
  ``K(a, b) = sum_{x ~ a, x interior} P_x[walk exits at b]``, i.e. the entry
  step from the boundary carries weight one.

Everything is dense and factored directly; that is the right tool up to a
few thousand interior vertices, which covers every experiment shipped here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Hashable, Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

Vertex = Hashable


def _as_edge(u: Vertex, v: Vertex) -> Tuple[Vertex, Vertex]:
    """Normalised (sorted-by-repr) unoriented edge key."""
    return (u, v) if repr(u) <= repr(v) else (v, u)


@dataclass(frozen=True)
class DomainGraph:
    """A finite graph with absorbing boundary and labelled boundary arcs.

    Parameters
    ----------
    interior_vertices, boundary_vertices:
        Disjoint vertex collections.  Vertices may be any hashable objects;
        the rectangle builder uses integer coordinate pairs.
    edges:
        Unit-conductance edges.  No edge may join two boundary vertices and
        self-loops are not allowed.
    arcs:
        Mapping ``label -> set of boundary vertices`` with labels exactly
        ``1..n`` and pairwise disjoint vertex sets.  Boundary vertices not
        covered by any arc are legal (unlabelled absorbing boundary).
    """

    interior_vertices: Tuple[Vertex, ...]
    boundary_vertices: Tuple[Vertex, ...]
    edges: Tuple[Tuple[Vertex, Vertex], ...]
    arcs: Mapping[int, frozenset]

    # derived, filled in __post_init__
    interior_index: Dict[Vertex, int] = field(init=False, repr=False, compare=False)
    boundary_index: Dict[Vertex, int] = field(init=False, repr=False, compare=False)
    neighbors: Dict[Vertex, Tuple[Vertex, ...]] = field(init=False, repr=False, compare=False)
    _cache: Dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        interior = tuple(self.interior_vertices)
        boundary = tuple(self.boundary_vertices)
        if len(set(interior)) != len(interior) or len(set(boundary)) != len(boundary):
            raise ValueError("duplicate vertices")
        overlap = set(interior) & set(boundary)
        if overlap:
            raise ValueError(f"vertices both interior and boundary: {sorted(map(repr, overlap))}")
        if not interior:
            raise ValueError("domain needs at least one interior vertex")
        known = set(interior) | set(boundary)
        bset = set(boundary)
        adj: Dict[Vertex, List[Vertex]] = {v: [] for v in known}
        seen_edges = set()
        for u, v in self.edges:
            if u not in known or v not in known:
                raise ValueError(f"edge ({u!r}, {v!r}) references an undeclared vertex")
            if u == v:
                raise ValueError(f"self-loop at {u!r}")
            if u in bset and v in bset:
                raise ValueError(f"edge ({u!r}, {v!r}) joins two boundary vertices")
            key = _as_edge(u, v)
            if key in seen_edges:
                raise ValueError(f"duplicate edge ({u!r}, {v!r})")
            seen_edges.add(key)
            adj[u].append(v)
            adj[v].append(u)
        for b in boundary:
            if not adj[b]:
                raise ValueError(f"boundary vertex {b!r} has no interior neighbour")
        labels = sorted(self.arcs)
        if labels != list(range(1, len(labels) + 1)):
            raise ValueError(f"arc labels must be 1..n, got {labels}")
        claimed: set = set()
        bset = set(boundary)
        for lab in labels:
            verts = set(self.arcs[lab])
            if not verts:
                raise ValueError(f"arc {lab} is empty")
            if not verts <= bset:
                raise ValueError(f"arc {lab} contains non-boundary vertices")
            if verts & claimed:
                raise ValueError(f"arc {lab} overlaps another arc")
            claimed |= verts
        object.__setattr__(self, "interior_index", {v: i for i, v in enumerate(interior)})
        object.__setattr__(self, "boundary_index", {v: i for i, v in enumerate(boundary)})
        object.__setattr__(self, "neighbors", {v: tuple(ns) for v, ns in adj.items()})
        object.__setattr__(self, "_cache", {})

    # -- basic queries -------------------------------------------------

    @property
    def n_interior(self) -> int:
        return len(self.interior_vertices)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_vertices)

    @property
    def n_arcs(self) -> int:
        return len(self.arcs)

    def degree(self, v: Vertex) -> int:
        return len(self.neighbors[v])

    def is_interior(self, v: Vertex) -> bool:
        return v in self.interior_index

    def arc_of(self, b: Vertex):
        """Arc label of a boundary vertex, or None if unlabelled."""
        for lab, verts in self.arcs.items():
            if b in verts:
                return lab
        return None

    # -- matrix views ----------------------------------------------------

    def degree_vector(self) -> np.ndarray:
        return np.array([self.degree(v) for v in self.interior_vertices], dtype=float)

    def interior_adjacency(self) -> np.ndarray:
        """0/1 adjacency among interior vertices."""
        n = self.n_interior
        A = np.zeros((n, n))
        for u, v in self.edges:
            if self.is_interior(u) and self.is_interior(v):
                i, j = self.interior_index[u], self.interior_index[v]
                A[i, j] = A[j, i] = 1.0
        return A

    def boundary_incidence(self) -> np.ndarray:
        """Matrix C with C[x, a] = 1 iff interior x neighbours boundary a."""
        C = np.zeros((self.n_interior, self.n_boundary))
        for u, v in self.edges:
            if self.is_interior(u) != self.is_interior(v):
                x, a = (u, v) if self.is_interior(u) else (v, u)
                C[self.interior_index[x], self.boundary_index[a]] = 1.0
        return C

    def laplacian_matrix(self) -> np.ndarray:
        """The positive-definite operator (-Delta) on interior vertices."""
        return np.diag(self.degree_vector()) - self.interior_adjacency()

    def arc_indicator(self, label: int) -> np.ndarray:
        """0/1 vector over boundary vertices marking the given arc."""
        out = np.zeros(self.n_boundary)
        for b in self.arcs[label]:
            out[self.boundary_index[b]] = 1.0
        return out

    def arc_entry_counts(self, label: int) -> np.ndarray:
        """c_i(x) = number of arc-i boundary neighbours of interior x."""
        return self.boundary_incidence() @ self.arc_indicator(label)


@dataclass
class ScalarField:
    """A real-valued function on the vertices of a domain.

    ``interior`` is aligned with ``domain.interior_vertices``; ``boundary``
    (optional, defaults to zero) with ``domain.boundary_vertices``.  Used both
    for killing fields / test functions (interior part only matters) and for
    boundary-data carriers like harmonic extensions.
    """

    domain: DomainGraph
    interior: np.ndarray
    boundary: np.ndarray = None

    def __post_init__(self):
        self.interior = np.asarray(self.interior, dtype=float)
        if self.interior.shape != (self.domain.n_interior,):
            raise ValueError("interior values have wrong length")
        if self.boundary is None:
            self.boundary = np.zeros(self.domain.n_boundary)
        else:
            self.boundary = np.asarray(self.boundary, dtype=float)
            if self.boundary.shape != (self.domain.n_boundary,):
                raise ValueError("boundary values have wrong length")

    @classmethod
    def zeros(cls, domain: DomainGraph) -> "ScalarField":
        return cls(domain, np.zeros(domain.n_interior))

    @classmethod
    def constant(cls, domain: DomainGraph, value: float) -> "ScalarField":
        return cls(domain, np.full(domain.n_interior, float(value)),
                   np.full(domain.n_boundary, float(value)))

    @classmethod
    def from_dict(cls, domain: DomainGraph, values: Mapping[Vertex, float],
                  default: float = 0.0) -> "ScalarField":
        inte = np.full(domain.n_interior, float(default))
        boun = np.full(domain.n_boundary, float(default))
        for v, val in values.items():
            if domain.is_interior(v):
                inte[domain.interior_index[v]] = val
            elif v in domain.boundary_index:
                boun[domain.boundary_index[v]] = val
            else:
                raise KeyError(f"{v!r} is not a vertex of the domain")
        return cls(domain, inte, boun)

    def __getitem__(self, v: Vertex) -> float:
        if self.domain.is_interior(v):
            return float(self.interior[self.domain.interior_index[v]])
        return float(self.boundary[self.domain.boundary_index[v]])

    def copy(self) -> "ScalarField":
        return ScalarField(self.domain, self.interior.copy(), self.boundary.copy())


def _killing_vector(domain: DomainGraph, killing) -> np.ndarray:
    """Normalise a killing specification to a nonnegative interior vector."""
    if killing is None:
        k = np.zeros(domain.n_interior)
    elif isinstance(killing, ScalarField):
        k = killing.interior.copy()
    elif np.isscalar(killing):
        k = np.full(domain.n_interior, float(killing))
    elif isinstance(killing, Mapping):
        k = ScalarField.from_dict(domain, killing).interior
    else:
        k = np.asarray(killing, dtype=float)
        if k.shape != (domain.n_interior,):
            raise ValueError("killing vector has wrong length")
        k = k.copy()
    if np.any(k < 0):
        raise ValueError("killing field must be nonnegative")
    return k


@dataclass
class GreenOperator:
    """Dense inverse of (-Delta + k) on the interior, with its Cholesky factor.

    ``matrix[i, j]`` equals the expected local time at vertex j of the killed
    walk started at vertex i, when each visit to y lasts an exponential time
    of mean 1/deg(y) and the walk is absorbed on the boundary and killed at
    rate k.  Symmetric positive definite.
    """

    domain: DomainGraph
    killing: np.ndarray
    matrix: np.ndarray
    cho_factor: tuple = None

    def entry(self, x: Vertex, y: Vertex) -> float:
        i = self.domain.interior_index[x]
        j = self.domain.interior_index[y]
        return float(self.matrix[i, j])

    def diagonal(self) -> np.ndarray:
        return np.diag(self.matrix).copy()

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve (-Delta + k) u = rhs."""
        if self.cho_factor is not None:
            return scipy.linalg.cho_solve(self.cho_factor, rhs)
        return self.matrix @ rhs

    def to_csv(self, path) -> None:
        """Dump the dense matrix with a vertex-label header row/column."""
        import csv

        labels = [repr(v) for v in self.domain.interior_vertices]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([""] + labels)
            for lab, row in zip(labels, self.matrix):
                writer.writerow([lab] + [repr(float(val)) for val in row])


def green(domain: DomainGraph, killing=None) -> GreenOperator:
    """Green operator G_k = (-Delta + k)^{-1} with Dirichlet boundary.

    ``killing`` may be None, a scalar, a ScalarField, a vertex->rate mapping
    or an interior-aligned vector; rates must be nonnegative.  Operators are
    cached on the domain, keyed by the killing vector.
    """
    k = _killing_vector(domain, killing)
    key = ("green", k.tobytes())
    cached = domain._cache.get(key)
    if cached is not None:
        return cached
    M = domain.laplacian_matrix() + np.diag(k)
    cho = scipy.linalg.cho_factor(M)
    G = scipy.linalg.cho_solve(cho, np.eye(domain.n_interior))
    G = 0.5 * (G + G.T)  # symmetrise away roundoff
    op = GreenOperator(domain, k, G, cho)
    if len(domain._cache) < 64:
        domain._cache[key] = op
    return op


def harmonic_extension(domain: DomainGraph, boundary_data) -> ScalarField:
    """Discrete-harmonic interior extension of given boundary values.

    ``boundary_data`` is a vertex->value mapping (missing boundary vertices
    get zero) or a boundary-aligned vector.  The result satisfies the
    mean-value property at every interior vertex and equals the data on the
    boundary exactly.
    """
    if isinstance(boundary_data, Mapping):
        f = np.zeros(domain.n_boundary)
        for b, val in boundary_data.items():
            if b not in domain.boundary_index:
                raise KeyError(f"{b!r} is not a boundary vertex")
            f[domain.boundary_index[b]] = val
    else:
        f = np.asarray(boundary_data, dtype=float)
        if f.shape != (domain.n_boundary,):
            raise ValueError("boundary data has wrong length")
    rhs = domain.boundary_incidence() @ f
    interior = green(domain).solve(rhs)
    return ScalarField(domain, interior, f.copy())


def arc_harmonic(domain: DomainGraph, label: int) -> ScalarField:
    """Harmonic extension of the indicator of arc ``label`` (1 on the arc)."""
    return harmonic_extension(domain, domain.arc_indicator(label))


def excursion_kernel(domain: DomainGraph, killing=None) -> np.ndarray:
    """Boundary-to-boundary excursion kernel K_k(a, b).

    K_k(a, b) sums, over paths that enter at a (entry step has weight one),
    wander through the interior picking up the killed-walk step weights, and
    exit at b, the product of those weights.  With zero killing the row sums
    equal the number of interior neighbours of the row vertex.  Matrix is
    indexed like ``domain.boundary_vertices`` and is symmetric.
    """
    C = domain.boundary_incidence()
    G = green(domain, killing).matrix
    K = C.T @ G @ C
    return 0.5 * (K + K.T)


def arc_pair_mass(domain: DomainGraph, i: int, j: int, killing=None) -> float:
    """Total excursion mass |mu_{i,j}| between arcs i and j.

    For i != j this is sum over a in arc i, b in arc j of K(a, b); each
    unoriented excursion is counted exactly once.  For i == j the ordered sum
    double counts orientation, so it is halved.
    """
    K = excursion_kernel(domain, killing)
    ci = domain.arc_indicator(i)
    cj = domain.arc_indicator(j)
    total = float(ci @ K @ cj)
    return 0.5 * total if i == j else total


def arc_mass_matrix(domain: DomainGraph, killing=None) -> np.ndarray:
    """All arc pair masses as a symmetric n x n matrix (1-based arcs)."""
    n = domain.n_arcs
    K = excursion_kernel(domain, killing)
    ind = np.stack([domain.arc_indicator(lab) for lab in range(1, n + 1)])
    M = ind @ K @ ind.T
    out = M.copy()
    np.fill_diagonal(out, 0.5 * np.diag(M))
    return out


def dirichlet_form(f: ScalarField, g: ScalarField) -> float:
    """Sum over edges of (f(x) - f(y)) (g(x) - g(y)).

    Both fields must live on the same domain and carry boundary values.
    For harmonic extensions h_i, h_j of disjoint arc indicators this equals
    minus the excursion mass |mu_{i,j}|: the edge-difference bookkeeping
    picks up one sign relative to the boundary-flux pairing, see
    :func:`pairing_mass`.
    """
    if f.domain is not g.domain:
        raise ValueError("fields live on different domains")
    dom = f.domain
    total = 0.0
    for u, v in dom.edges:
        total += (f[u] - f[v]) * (g[u] - g[v])
    return total


def pairing_mass(domain: DomainGraph, i: int, j: int) -> float:
    """Gradient pairing of two arc harmonics, with boundary-flux sign.

    Returns -dirichlet_form(h_i, h_j) for the harmonic extensions h_i, h_j
    of the arc indicators.  For disjoint arcs (i != j) this equals the
    excursion mass |mu_{i,j}| exactly; the sign flip is the usual
    integration-by-parts bookkeeping (sum of edge products = minus the sum of
    boundary fluxes when the arcs are disjoint).
    """
    if i == j:
        raise ValueError("pairing mass is defined for distinct arcs")
    return -dirichlet_form(arc_harmonic(domain, i), arc_harmonic(domain, j))


# ---------------------------------------------------------------------------
# rectangle builder
# ---------------------------------------------------------------------------

_SIDES = ("left", "right", "top", "bottom")

ArcSpec = Union[str, Tuple[str, int, int], Sequence]


def _side_vertices(nx: int, ny: int, side: str) -> List[Tuple[int, int]]:
    if side == "left":
        return [(-1, j) for j in range(ny)]
    if side == "right":
        return [(nx, j) for j in range(ny)]
    if side == "bottom":
        return [(i, -1) for i in range(nx)]
    if side == "top":
        return [(i, ny) for i in range(nx)]
    raise ValueError(f"unknown side {side!r}; expected one of {_SIDES}")


def _resolve_arc_spec(nx: int, ny: int, spec: ArcSpec) -> List[Tuple[int, int]]:
    """A side name, a (side, start, stop) run, or a list of those."""
    if isinstance(spec, str):
        return _side_vertices(nx, ny, spec)
    if (len(spec) == 3 and isinstance(spec[0], str)
            and isinstance(spec[1], int) and isinstance(spec[2], int)):
        side, start, stop = spec
        verts = _side_vertices(nx, ny, side)
        if not (0 <= start < stop <= len(verts)):
            raise ValueError(f"arc run [{start}:{stop}] out of range for side {side!r}")
        return verts[start:stop]
    out: List[Tuple[int, int]] = []
    for part in spec:
        out.extend(_resolve_arc_spec(nx, ny, part))
    return out


def build_rect_domain(nx: int, ny: int, arc_spec: Mapping[int, ArcSpec] = None) -> DomainGraph:
    """An nx-by-ny block of interior vertices with its absorbing ring.

    Interior vertices are (i, j) with 0 <= i < nx, 0 <= j < ny.  Every
    interior vertex has degree four; boundary vertices form the surrounding
    ring with the four corner cells left out, so each boundary vertex has
    exactly one interior neighbour.  ``arc_spec`` labels parts of the ring:
    values are side names ("left", "right", "top", "bottom"), (side, start,
    stop) runs, or lists combining those.
    """
    if nx < 1 or ny < 1:
        raise ValueError("rectangle needs nx >= 1 and ny >= 1")
    interior = [(i, j) for i in range(nx) for j in range(ny)]
    boundary = (_side_vertices(nx, ny, "left") + _side_vertices(nx, ny, "right")
                + _side_vertices(nx, ny, "bottom") + _side_vertices(nx, ny, "top"))
    edges: List[Tuple[Vertex, Vertex]] = []
    for (i, j) in interior:
        if i + 1 < nx:
            edges.append(((i, j), (i + 1, j)))
        if j + 1 < ny:
            edges.append(((i, j), (i, j + 1)))
    for (i, j) in interior:
        if i == 0:
            edges.append(((-1, j), (i, j)))
        if i == nx - 1:
            edges.append(((nx, j), (i, j)))
        if j == 0:
            edges.append(((i, -1), (i, j)))
        if j == ny - 1:
            edges.append(((i, ny), (i, j)))
    arcs: Dict[int, frozenset] = {}
    if arc_spec:
        for label, spec in arc_spec.items():
            arcs[int(label)] = frozenset(_resolve_arc_spec(nx, ny, spec))
    return DomainGraph(tuple(interior), tuple(boundary), tuple(edges), arcs)


def build_path_domain(n_interior: int, arc_spec: Mapping[int, Sequence[int]] = None) -> DomainGraph:
    """A path of interior vertices with one absorbing endpoint on each side.

    Interior vertices are integers 0..n-1 in a line, each of degree two;
    boundary vertices "L" (next to 0) and "R" (next to n-1).  ``arc_spec``
    maps labels to subsets of {"L", "R"}.  Handy as the smallest non-grid
    test domain.
    """
    if n_interior < 1:
        raise ValueError("path needs at least one interior vertex")
    interior = list(range(n_interior))
    boundary = ["L", "R"]
    edges = [(i, i + 1) for i in range(n_interior - 1)]
    edges.append(("L", 0))
    edges.append((n_interior - 1, "R"))
    arcs = {}
    if arc_spec:
        for label, verts in arc_spec.items():
            arcs[int(label)] = frozenset(verts)
    return DomainGraph(tuple(interior), tuple(boundary), tuple(edges), arcs)
