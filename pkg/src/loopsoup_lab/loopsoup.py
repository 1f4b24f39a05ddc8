"""Markovian loop soup on a domain graph, with continuous local times.

The soup is a Poisson collection of discrete-skeleton loops dressed with
exponential holding times.  The skeleton measure assigns total mass
trace(P^k)/k to unrooted loops of length k, where P = D^{-1} A is the
transition matrix of the walk killed on the boundary.  Sampling draws
Poisson(alpha * sum_k trace(P^k)/k) loops, picks the length proportionally
to trace(P^k)/k, the root proportionally to P^k(x, x), and fills in the
bridge by Doob conditioning on returning in exactly k steps.  Forgetting
the root afterwards gives the unrooted measure; loops with internal
symmetry need no special-casing because the rooted measure already counts
them with the right multiplicity.

Each visit at x receives an independent Exp(mean 1/deg(x)) holding time.
On top of the skeleton loops, every vertex carries a one-point "trivial"
loop whose local time is Gamma(alpha, rate deg(x)) -- together these make
the total occupation field match the square-of-GFF identity at
alpha = 1/2 exactly on the one-vertex graph, and in law in general.

The rewiring step resamples, at a uniformly chosen vertex with at least
two passages, the way loop strands passing through that vertex are glued
together: the strand ends are matched uniformly at random (strands may be
traversed in either direction).  This merges and splits loops while
conserving the traversed-edge multiset, every holding time, and the
cluster partition, exactly.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .lattice import DomainGraph, ScalarField


@dataclass(frozen=True)
class DiscreteLoop:
    """A closed walk on interior vertices, one holding time per visit.

    ``vertices`` is the cyclic sequence (the step back to vertices[0] is
    implicit).  Length 1 means a trivial one-point loop: no steps, just
    local time sitting at the vertex.
    """

    vertices: tuple
    holding_times: tuple

    def __post_init__(self):
        if len(self.vertices) != len(self.holding_times):
            raise ValueError("one holding time per visit")
        if len(self.vertices) == 0:
            raise ValueError("empty loop")

    def __len__(self):
        return len(self.vertices)

    @property
    def is_trivial(self):
        return len(self.vertices) == 1

    def edges(self):
        """Multiset of unoriented steps, as a sorted tuple of edge keys."""
        k = len(self.vertices)
        if k == 1:
            return ()
        out = []
        for i in range(k):
            u, v = self.vertices[i], self.vertices[(i + 1) % k]
            out.append((u, v) if repr(u) <= repr(v) else (v, u))
        return tuple(sorted(out, key=repr))


@dataclass
class LoopEnsemble:
    domain: DomainGraph
    alpha: float
    loops: list
    k_max: int = 0
    truncation_error: float = 0.0
    seed_record: object = None
    # vertex rewired by the step that produced this ensemble; None = identity
    rewired_at: object = None

    def nontrivial(self):
        return [lp for lp in self.loops if not lp.is_trivial]


def _skeleton_spectrum(domain: DomainGraph):
    """Eigendecomposition of S = D^{-1/2} A D^{-1/2}, cached per domain.

    S is symmetric and similar to P = D^{-1} A, so trace(P^k) = sum of
    lam**k and P^k(x,x) = S^k(x,x).
    """
    cached = domain._cache.get("skeleton-spectrum")
    if cached is None:
        d = domain.degree_vector()
        A = domain.interior_adjacency()
        inv_sqrt = 1.0 / np.sqrt(d)
        S = A * inv_sqrt[:, None] * inv_sqrt[None, :]
        lam, U = np.linalg.eigh(S)
        nbrs = [np.flatnonzero(A[i]) for i in range(domain.n_interior)]
        cached = (lam, U, d, nbrs)
        domain._cache["skeleton-spectrum"] = cached
    return cached


def skeleton_length_masses(domain: DomainGraph, alpha: float, k_max: int):
    """Masses alpha*trace(P^k)/k for k = 2..k_max, and the exact tail mass.

    The tail alpha*sum_{k>k_max} trace(P^k)/k is computed from the
    eigenvalues via  sum_{k>=1} lam^k / k = -log(1 - lam), so the
    truncation error is reported exactly rather than bounded.
    """
    if k_max < 2:
        raise ValueError("k_max must be at least 2")
    lam = _skeleton_spectrum(domain)[0]
    ks = np.arange(2, k_max + 1)
    traces = np.sum(lam[None, :] ** ks[:, None], axis=1)
    masses = alpha * np.clip(traces, 0.0, None) / ks
    total_all = -alpha * np.sum(np.log1p(-lam))   # includes k=1, which is 0
    tail = max(float(total_all - masses.sum()), 0.0)
    return masses, tail


def sample_loopsoup(domain: DomainGraph, alpha: float, k_max: int,
                    rng: np.random.Generator, include_trivial: bool = True,
                    truncation_tol: float = 1e-8,
                    seed_record=None) -> LoopEnsemble:
    """Draw one loop-soup configuration at intensity alpha."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    lam, U, deg, nbrs = _skeleton_spectrum(domain)
    masses, tail = skeleton_length_masses(domain, alpha, k_max)
    if tail > truncation_tol:
        warnings.warn(f"k_max={k_max} leaves skeleton mass {tail:.3e} "
                      f"unsampled (tolerance {truncation_tol:.1e})")
    total = float(masses.sum())
    loops = []
    n_loops = rng.poisson(total) if total > 0 else 0
    if n_loops:
        cum = np.cumsum(masses)
        for _ in range(n_loops):
            k = 2 + int(np.searchsorted(cum, rng.uniform(0.0, cum[-1])))
            loops.append(_sample_loop(domain, k, lam, U, deg, nbrs, rng))
    if include_trivial:
        times = rng.gamma(alpha, 1.0 / deg)
        for x, t in zip(domain.interior_vertices, times):
            loops.append(DiscreteLoop((x,), (float(t),)))
    return LoopEnsemble(domain, alpha, loops, k_max=k_max,
                        truncation_error=tail, seed_record=seed_record)


def _sample_loop(domain, k, lam, U, deg, nbrs, rng):
    """One skeleton loop of length k: root ~ P^k(x,x), then a Doob bridge."""
    diag_k = np.clip(np.sum(U**2 * lam[None, :] ** k, axis=1), 0.0, None)
    root = int(np.searchsorted(np.cumsum(diag_k),
                               rng.uniform(0.0, diag_k.sum())))
    # S^m(., root) for m = 1..k-1; row index m-1
    ms = np.arange(1, k)
    cols = (lam[None, :] ** ms[:, None] * U[root][None, :]) @ U.T
    inv_sqrt_deg = 1.0 / np.sqrt(deg)
    idx = [root]
    cur = root
    for j in range(1, k):
        cand = nbrs[cur]
        # P(next=y) ~ S^{k-j}(y, root)/sqrt(deg y); the final step (m=1)
        # automatically forces a neighbor of the root.
        w = np.clip(cols[k - j - 1, cand] * inv_sqrt_deg[cand], 0.0, None)
        tot = w.sum()
        if tot <= 0.0:     # numerically extinct bridge; retry from scratch
            return _sample_loop(domain, k, lam, U, deg, nbrs, rng)
        cur = int(cand[np.searchsorted(np.cumsum(w), rng.uniform(0.0, tot))])
        idx.append(cur)
    verts = tuple(domain.interior_vertices[i] for i in idx)
    times = tuple(float(t) for t in rng.exponential(1.0 / deg[idx]))
    return DiscreteLoop(verts, times)


def occupation_field(ensemble: LoopEnsemble) -> ScalarField:
    """Total local time per vertex, over all loops (trivial included).

    Per-vertex contributions are summed in sorted order, so the result is
    bit-for-bit independent of how visits are distributed among loops --
    which is what makes exact conservation under rewiring testable.
    """
    dom = ensemble.domain
    buckets = [[] for _ in range(dom.n_interior)]
    for lp in ensemble.loops:
        for v, t in zip(lp.vertices, lp.holding_times):
            buckets[dom.interior_index[v]].append(t)
    vals = np.zeros(dom.n_interior)
    for i, b in enumerate(buckets):
        if b:
            vals[i] = float(np.sum(np.sort(np.asarray(b))))
    return ScalarField(dom, vals, np.zeros(dom.n_boundary))


def edge_multiset(ensemble: LoopEnsemble):
    """Sorted multiset of all unoriented steps traversed by the ensemble."""
    out = []
    for lp in ensemble.loops:
        out.extend(lp.edges())
    return tuple(sorted(out, key=repr))


class _UnionFind:
    """Union-find with path compression and union by rank."""

    def __init__(self, n):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, i):
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return
        if self.rank[ri] < self.rank[rj]:
            ri, rj = rj, ri
        self.parent[rj] = ri
        if self.rank[ri] == self.rank[rj]:
            self.rank[ri] += 1


@dataclass
class ClusterPartition:
    """Vertex-sharing clusters of a configuration of loops and excursions.

    ``vertex_to_cluster`` maps each visited interior vertex to its cluster
    id; ids are canonical (the smallest interior index in the cluster), so
    two partitions are equal iff the dicts are equal.  ``arc_contacts``
    records, per cluster, the arc labels the cluster touches: a cluster
    touches an arc when one of its vertices neighbours a boundary vertex
    of that arc (an excursion endpoint is covered by this rule, since the
    adjacent path vertex is in the cluster).
    """

    vertex_to_cluster: dict
    n_clusters: int
    arc_contacts: dict = field(default_factory=dict)

    def same_cluster(self, u, v):
        return (u in self.vertex_to_cluster and v in self.vertex_to_cluster
                and self.vertex_to_cluster[u] == self.vertex_to_cluster[v])

    def arcs_connected(self, i, j):
        """True if some single cluster touches both arc i and arc j."""
        return any(i in s and j in s for s in self.arc_contacts.values())


def _arc_adjacency(dom):
    """Per interior index, the frozenset of arc labels it neighbours."""
    cached = dom._cache.get("arc-adjacency")
    if cached is None:
        adj = []
        for v in dom.interior_vertices:
            labels = {dom.arc_of(w) for w in dom.neighbors[v]
                      if w not in dom.interior_index}
            adj.append(frozenset(labels - {None}))
        cached = tuple(adj)
        dom._cache["arc-adjacency"] = cached
    return cached


def _interior_edge_pairs(dom):
    """Sorted interior-interior edges as index pairs (i, j) with i < j."""
    cached = dom._cache.get("interior-edges")
    if cached is None:
        idx = dom.interior_index
        pairs = []
        for (u, v) in dom.edges:
            if u in idx and v in idx:
                i, j = idx[u], idx[v]
                pairs.append((i, j) if i < j else (j, i))
        cached = tuple(sorted(pairs))
        dom._cache["interior-edges"] = cached
    return cached


def bridge_probability(occ_x: float, occ_y: float) -> float:
    """Chance the trajectories cover an untraversed edge end to end.

    View the unit edge (x, y) as a continuous interval that the walks
    enter and partially cover from both ends without completing a jump.
    Conditionally on the discrete configuration, the covered initial and
    final segments (together with closed trajectory pieces interior to
    the edge) chain up across the whole edge with probability

        1 - exp(-2 sqrt(occ_x * occ_y)),

    independently over untraversed edges, where occ are the total local
    times at the endpoints.  The closed form is validated in the tests
    against the field representation of cluster connectivity, which is
    exact for this formula: with it, vertex clusters refined by these
    edge events have the same law as the sign components of the field.
    """
    s = occ_x * occ_y
    if s <= 0.0:
        return 0.0
    return -math.expm1(-2.0 * math.sqrt(s))


def clusters(ensemble: LoopEnsemble, excursions=None,
             metric_rng=None) -> ClusterPartition:
    """Union-find over vertex-sharing among all loops and excursions.

    Excursions (anything exposing .path and .arc_pair, e.g. from the
    excursions module) participate through their interior path vertices.
    Connectivity runs through interior vertices only -- two excursions
    sharing just a boundary endpoint are not thereby joined -- and a
    cluster's arc contacts are the arcs adjacent to its vertex set.

    When ``metric_rng`` is given, the partition is refined by the
    edge-interval covering events of :func:`bridge_probability`: each
    untraversed interior edge joins its endpoint clusters independently
    with that probability, computed from the combined occupation of
    loops and excursions.  (The closed form is exact for the loop soup
    alone; with excursions present it is applied to the total occupation,
    which never affects arc linkage since any excursion already touches
    its two arcs directly.)
    """
    dom = ensemble.domain
    uf = _UnionFind(dom.n_interior)
    seen = set()
    traversed = set()

    def visit_path(idxs, cyclic):
        seen.update(idxs)
        for a, b in zip(idxs, idxs[1:]):
            uf.union(a, b)
            traversed.add((a, b) if a < b else (b, a))
        if cyclic and len(idxs) > 1:
            a, b = idxs[-1], idxs[0]
            uf.union(a, b)
            traversed.add((a, b) if a < b else (b, a))

    for lp in ensemble.loops:
        visit_path([dom.interior_index[v] for v in lp.vertices], cyclic=True)
    exc_list = list(excursions.excursions) if excursions is not None else []
    for e in exc_list:
        visit_path([dom.interior_index[v] for v in e.path[1:-1]], cyclic=False)

    if metric_rng is not None:
        occ = occupation_field(ensemble).interior.copy()
        for e in exc_list:
            for v, t in zip(e.path[1:-1], e.holding_times):
                occ[dom.interior_index[v]] += t
        for (i, j) in _interior_edge_pairs(dom):
            if (i, j) in traversed:
                continue
            p = bridge_probability(occ[i], occ[j])
            if p > 0.0 and metric_rng.random() < p:
                uf.union(i, j)

    canonical = {}          # union-find root -> smallest member index
    for i in sorted(seen):
        r = uf.find(i)
        canonical.setdefault(r, i)
    mapping = {dom.interior_vertices[i]: canonical[uf.find(i)]
               for i in sorted(seen)}
    arc_adj = _arc_adjacency(dom)
    contacts = {}
    for i in sorted(seen):
        if arc_adj[i]:
            cid = canonical[uf.find(i)]
            contacts.setdefault(cid, set()).update(arc_adj[i])
    contacts = {cid: frozenset(s) for cid, s in contacts.items()}
    return ClusterPartition(mapping, len(canonical), contacts)


def rewire_step(ensemble: LoopEnsemble, rng: np.random.Generator) -> LoopEnsemble:
    """One rewiring move: re-glue the loop strands at a random vertex.

    A vertex v is chosen uniformly among those with >= 2 passages (visits
    by nontrivial loops).  The loops through v are cut at their v-visits
    into strands; the 2n strand ends are matched uniformly at random and
    re-glued at v, strands being traversable in either direction.  The
    returned ensemble has ``rewired_at`` set to v, or None when no vertex
    has two passages (identity step).
    """
    dom = ensemble.domain
    passages = {}
    for li, lp in enumerate(ensemble.loops):
        if lp.is_trivial:
            continue
        for v in lp.vertices:
            passages[v] = passages.get(v, 0) + 1
    candidates = sorted((v for v, c in passages.items() if c >= 2), key=repr)
    if not candidates:
        return LoopEnsemble(dom, ensemble.alpha, list(ensemble.loops),
                            k_max=ensemble.k_max,
                            truncation_error=ensemble.truncation_error,
                            seed_record=ensemble.seed_record, rewired_at=None)
    v = candidates[rng.integers(len(candidates))]

    keep, bodies, v_times = [], [], []
    for lp in ensemble.loops:
        if lp.is_trivial or v not in lp.vertices:
            keep.append(lp)
            continue
        k = len(lp)
        hits = [i for i, x in enumerate(lp.vertices) if x == v]
        for a, b in zip(hits, hits[1:] + [hits[0] + k]):
            v_times.append(lp.holding_times[a])
            body_v = tuple(lp.vertices[i % k] for i in range(a + 1, b))
            body_t = tuple(lp.holding_times[i % k] for i in range(a + 1, b))
            bodies.append((body_v, body_t))

    n = len(bodies)
    ends = [(s, side) for s in range(n) for side in (0, 1)]
    order = rng.permutation(2 * n)
    partner = {}
    junction_of = {}
    for j in range(n):
        e1, e2 = ends[order[2 * j]], ends[order[2 * j + 1]]
        partner[e1], partner[e2] = e2, e1
        junction_of[e1] = junction_of[e2] = j

    rebuilt = []
    used_junction = [False] * n
    time_iter = iter(v_times)
    for s0 in range(n):
        start = (s0, 0)
        if used_junction[junction_of[start]]:
            continue
        verts, times = [], []
        end = start
        while True:
            j = junction_of[end]
            if used_junction[j]:
                break
            used_junction[j] = True
            verts.append(v)
            times.append(next(time_iter))
            s, side = partner[end]
            bv, bt = bodies[s]
            if side == 1:
                bv, bt = bv[::-1], bt[::-1]
            verts.extend(bv)
            times.extend(bt)
            end = (s, 1 - side)
        if verts:
            rebuilt.append(DiscreteLoop(tuple(verts), tuple(times)))

    return LoopEnsemble(dom, ensemble.alpha, keep + rebuilt,
                        k_max=ensemble.k_max,
                        truncation_error=ensemble.truncation_error,
                        seed_record=ensemble.seed_record, rewired_at=v)


@dataclass
class LoopPiece:
    """One marked-set-to-marked-set strand of a cut loop."""

    loop_index: int
    vertices: tuple      # starts at a marked vertex, then the strand body
    holding_times: tuple


@dataclass
class LoopDecomposition:
    """Loops split at their visits to a marked vertex set.

    ``reassemble()`` restores the original loop list exactly (same
    rotations, same floats) from the recorded pieces and offsets.
    """

    ensemble: LoopEnsemble
    marked: frozenset
    untouched: list
    pieces: list
    _offsets: dict

    def reassemble(self):
        by_loop = {}
        for p in self.pieces:
            by_loop.setdefault(p.loop_index, []).append(p)
        loops = list(self.untouched)
        for li, ps in sorted(by_loop.items()):
            verts, times = [], []
            for p in ps:
                verts.extend(p.vertices)
                times.extend(p.holding_times)
            # concatenation starts at the loop's first marked visit; rotate
            # back so index 0 is the original root again
            loops.append(_rotate_loop(tuple(verts), tuple(times),
                                      -self._offsets[li]))
        return loops


def _rotate_loop(verts, times, shift):
    k = len(verts)
    shift %= k
    return DiscreteLoop(verts[shift:] + verts[:shift],
                        times[shift:] + times[:shift])


def decompose_boundary_loops(ensemble: LoopEnsemble, marked) -> LoopDecomposition:
    """Cut every loop at its visits to ``marked`` into S-to-S strands.

    Loops that avoid the marked set (and all trivial loops) pass through
    untouched.  The decomposition records enough bookkeeping that
    reassemble() reproduces the original loops exactly.
    """
    marked = frozenset(marked)
    untouched, pieces, offsets = [], [], {}
    for li, lp in enumerate(ensemble.loops):
        if lp.is_trivial or not any(x in marked for x in lp.vertices):
            untouched.append(lp)
            continue
        k = len(lp)
        hits = [i for i, x in enumerate(lp.vertices) if x in marked]
        offsets[li] = hits[0]
        for a, b in zip(hits, hits[1:] + [hits[0] + k]):
            verts = tuple(lp.vertices[i % k] for i in range(a, b))
            times = tuple(lp.holding_times[i % k] for i in range(a, b))
            pieces.append(LoopPiece(li, verts, times))
    return LoopDecomposition(ensemble, marked, untouched, pieces, offsets)


def _vertex_codec(domain: DomainGraph):
    """repr-string <-> vertex maps for text serialization."""
    all_vs = list(domain.interior_vertices) + list(domain.boundary_vertices)
    enc = {v: repr(v) for v in all_vs}
    dec = {repr(v): v for v in all_vs}
    return enc, dec


def ensemble_to_lines(ensemble: LoopEnsemble):
    """Line-based text form: a JSON header, then one loop per line."""
    enc, _ = _vertex_codec(ensemble.domain)
    head = {"kind": "loop-ensemble", "alpha": ensemble.alpha,
            "k_max": ensemble.k_max,
            "truncation_error": ensemble.truncation_error,
            "n_loops": len(ensemble.loops)}
    lines = [json.dumps(head, sort_keys=True)]
    for lp in ensemble.loops:
        lines.append(json.dumps({"cycle": [enc[v] for v in lp.vertices],
                                 "times": list(lp.holding_times)}))
    return lines


def ensemble_from_lines(domain: DomainGraph, lines) -> LoopEnsemble:
    _, dec = _vertex_codec(domain)
    head = json.loads(lines[0])
    if head.get("kind") != "loop-ensemble":
        raise ValueError("not a loop-ensemble serialization")
    loops = []
    for line in lines[1:1 + head["n_loops"]]:
        rec = json.loads(line)
        loops.append(DiscreteLoop(tuple(dec[s] for s in rec["cycle"]),
                                  tuple(rec["times"])))
    return LoopEnsemble(domain, head["alpha"], loops, k_max=head["k_max"],
                        truncation_error=head["truncation_error"])
