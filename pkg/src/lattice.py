"""
Square-lattice geometry for the box Λ_R = [-R, R]² ∩ ℤ².

Indexing (stable, relied on by fixtures):

    vertex (x, y)            vid = (y + R)·n + (x + R),           n = 2R + 1
    horizontal edge          e   = (y + R)·(n - 1) + (x + R)      joins (x, y)-(x+1, y)
    vertical edge            e   = H + (y + R)·n + (x + R)        joins (x, y)-(x, y+1)

with H = n·(n - 1) horizontal edges listed before the H vertical ones.

The dual lattice lives on ℤ² + (½, ½). Dual edges are listed horizontal first
(the duals of vertical primal edges) then vertical (duals of horizontal primal
edges), both row-major, which makes the primal/dual index map the involution
e ↦ (e + H) mod 2H.

Boundary conditions identify boundary vertices through virtual super-vertices
(one per partition class of size ≥ 2), so one lattice instance serves every bc.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import floor
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from numba import njit

logger = logging.getLogger(__name__)

Vertex = tuple[int, int]


class LatticeError(Exception):
    pass


# ───────────────────────────── Box lattice ─────────────────────────────

class BoxLattice:
    """Immutable geometry of Λ_R. Build through :func:`build_box`."""

    def __init__(self, R: int):
        self.R = R
        self.n = 2 * R + 1
        n = self.n
        self.n_vertices = n * n
        self.n_horizontal = n * (n - 1)
        self.n_edges = 2 * self.n_horizontal

        src = np.empty(self.n_edges, dtype=np.int64)
        dst = np.empty(self.n_edges, dtype=np.int64)
        H = self.n_horizontal
        for row in range(n):
            for col in range(n - 1):
                e = row * (n - 1) + col
                src[e] = row * n + col
                dst[e] = row * n + col + 1
        for row in range(n - 1):
            for col in range(n):
                e = H + row * n + col
                src[e] = row * n + col
                dst[e] = (row + 1) * n + col
        src.setflags(write=False)
        dst.setflags(write=False)
        self.edge_u = src
        self.edge_v = dst

        nbrs: list[list[tuple[int, int]]] = [[] for _ in range(self.n_vertices)]
        for e, (a, b) in enumerate(zip(src.tolist(), dst.tolist())):
            nbrs[a].append((b, e))
            nbrs[b].append((a, e))
        self.neighbors: tuple[tuple[tuple[int, int], ...], ...] = tuple(tuple(x) for x in nbrs)

        # the same adjacency flattened for compiled kernels: vertex w spans adj_ptr[w]:adj_ptr[w+1]
        degrees = np.array([len(x) for x in nbrs], dtype=np.int64)
        self.adj_ptr = np.concatenate(([0], np.cumsum(degrees))).astype(np.int64)
        self.adj_vertex = np.array([x for row in nbrs for x, _ in row], dtype=np.int64)
        self.adj_edge = np.array([e for row in nbrs for _, e in row], dtype=np.int64)
        for arr in (self.adj_ptr, self.adj_vertex, self.adj_edge):
            arr.setflags(write=False)

        self.boundary: tuple[int, ...] = tuple(
            v for v in range(self.n_vertices) if len(self.neighbors[v]) < 4
        )

    def __repr__(self) -> str:
        return f"BoxLattice(R={self.R})"

    def __reduce__(self):
        return (build_box, (self.R,))

    # ─── coordinates ───
    def vid(self, xy: Vertex) -> int:
        x, y = xy
        R = self.R
        if not (-R <= x <= R and -R <= y <= R):
            raise LatticeError(f"Vertex {xy} outside Λ_{R}")
        return (y + R) * self.n + (x + R)

    def coords(self, v: int) -> Vertex:
        if not 0 <= v < self.n_vertices:
            raise LatticeError(f"Vertex index {v} out of range [0, {self.n_vertices})")
        row, col = divmod(v, self.n)
        return (col - self.R, row - self.R)

    def edge_index(self, a: Vertex, b: Vertex) -> int:
        """Index of the edge joining two nearest-neighbour vertices."""
        self.vid(a)
        self.vid(b)
        (ax, ay), (bx, by) = sorted((a, b))
        R = self.R
        if ay == by and bx == ax + 1:
            return (ay + R) * (self.n - 1) + (ax + R)
        if ax == bx and by == ay + 1:
            return self.n_horizontal + (ay + R) * self.n + (ax + R)
        raise LatticeError(f"{a} and {b} are not nearest neighbours")

    def endpoints(self, e: int) -> tuple[Vertex, Vertex]:
        self._check_edge(e)
        return self.coords(int(self.edge_u[e])), self.coords(int(self.edge_v[e]))

    def is_horizontal(self, e: int) -> bool:
        self._check_edge(e)
        return e < self.n_horizontal

    def degree(self, v: int) -> int:
        return len(self.neighbors[v])

    def _check_edge(self, e: int):
        if not 0 <= e < self.n_edges:
            raise LatticeError(f"Edge index {e} out of range [0, {self.n_edges})")

    # ─── dual geometry (doubled integer coordinates) ───
    def dual_endpoints2(self, d: int) -> tuple[tuple[int, int], tuple[int, int]]:
        """Endpoints of dual edge d as doubled coordinates (2x+1, 2y+1)."""
        self._check_edge(d)
        e = dual_edge(self, d)
        (ax, ay), (bx, by) = self.endpoints(e)
        if ay == by:
            # horizontal primal edge: vertical dual edge at x + ½
            X = 2 * ax + 1
            return (X, 2 * ay - 1), (X, 2 * ay + 1)
        Y = 2 * ay + 1
        return (2 * ax - 1, Y), (2 * ax + 1, Y)


@lru_cache(maxsize=None)
def build_box(R: int) -> BoxLattice:
    if not isinstance(R, (int, np.integer)) or R < 1:
        raise LatticeError(f"Box half-side must be an integer >= 1, got {R!r}")
    logger.debug(f"Building Λ_{R}")
    return BoxLattice(int(R))


def dual_edge(lattice: BoxLattice, e: int) -> int:
    """Dual edge crossing primal edge e (and, applied to a dual index, the primal edge it crosses)."""
    lattice._check_edge(e)
    return (e + lattice.n_horizontal) % lattice.n_edges


def ring(lattice: BoxLattice, rho: int) -> list[int]:
    """Vertex ids with ‖v‖∞ = rho."""
    if not 0 <= rho <= lattice.R:
        raise LatticeError(f"Ring radius {rho} outside [0, {lattice.R}]")
    if rho == 0:
        return [lattice.vid((0, 0))]
    pts = [(x, y) for x in range(-rho, rho + 1) for y in range(-rho, rho + 1)
           if max(abs(x), abs(y)) == rho]
    return [lattice.vid(p) for p in pts]


def square_circuit(lattice: BoxLattice, rho: int) -> list[int]:
    """Edges of the square circuit {‖v‖∞ = rho}."""
    if not 1 <= rho <= lattice.R:
        raise LatticeError(f"Circuit radius {rho} outside [1, {lattice.R}]")
    edges = []
    for t in range(-rho, rho):
        edges.append(lattice.edge_index((t, -rho), (t + 1, -rho)))
        edges.append(lattice.edge_index((t, rho), (t + 1, rho)))
        edges.append(lattice.edge_index((-rho, t), (-rho, t + 1)))
        edges.append(lattice.edge_index((rho, t), (rho, t + 1)))
    return edges


def radial_edges(lattice: BoxLattice, rho: int) -> list[int]:
    """Edges joining ring rho to ring rho+1; closing them opens the dual circuit at rho + ½."""
    if not 0 <= rho < lattice.R:
        raise LatticeError(f"Radial radius {rho} outside [0, {lattice.R})")
    edges = []
    for t in range(-rho, rho + 1):
        edges.append(lattice.edge_index((t, rho), (t, rho + 1)))
        edges.append(lattice.edge_index((t, -rho), (t, -rho - 1)))
        edges.append(lattice.edge_index((rho, t), (rho + 1, t)))
        edges.append(lattice.edge_index((-rho, t), (-rho - 1, t)))
    return edges


# ───────────────────────────── Configurations ─────────────────────────────

@dataclass
class EdgeConfig:
    """One open/closed flag per edge of a lattice (ω ∈ {0,1}^E)."""
    lattice: BoxLattice
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.shape != (self.lattice.n_edges,):
            raise LatticeError(
                f"Config length {self.bits.shape} does not match edge count {self.lattice.n_edges}"
            )

    @classmethod
    def all_open(cls, lattice: BoxLattice) -> EdgeConfig:
        return cls(lattice, np.ones(lattice.n_edges, dtype=np.uint8))

    @classmethod
    def all_closed(cls, lattice: BoxLattice) -> EdgeConfig:
        return cls(lattice, np.zeros(lattice.n_edges, dtype=np.uint8))

    @classmethod
    def from_edges(cls, lattice: BoxLattice, edges: Iterable[int]) -> EdgeConfig:
        bits = np.zeros(lattice.n_edges, dtype=np.uint8)
        bits[list(edges)] = 1
        return cls(lattice, bits)

    def copy(self) -> EdgeConfig:
        return EdgeConfig(self.lattice, self.bits.copy())

    def n_open(self) -> int:
        return int(self.bits.sum())

    def dual(self) -> np.ndarray:
        """ω* indexed by dual edge: ω*[dual_edge(e)] = 1 - ω[e]."""
        return 1 - np.roll(self.bits, self.lattice.n_horizontal)

    def __le__(self, other: EdgeConfig) -> bool:
        return bool(np.all(self.bits <= other.bits))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EdgeConfig):
            return NotImplemented
        return self.lattice.R == other.lattice.R and bool(np.array_equal(self.bits, other.bits))


def dual_config(config: EdgeConfig) -> EdgeConfig:
    """The dual configuration, read back on the same index space so that dual(dual(ω)) = ω."""
    return EdgeConfig(config.lattice, config.dual())


# ───────────────────────────── Boundary conditions ─────────────────────────────

class BcTables(NamedTuple):
    """A bc as flat arrays: super-vertex per vertex (-1 if none) and class members in CSR form."""
    owner: np.ndarray
    class_ptr: np.ndarray
    class_members: np.ndarray

    @property
    def n_classes(self) -> int:
        return len(self.class_ptr) - 1


@dataclass(frozen=True)
class BoundaryCondition:
    """Partition ξ of ∂V. `classes` lists vertex coordinates for tag 'partition' only."""
    tag: str
    classes: tuple[frozenset[Vertex], ...] = field(default=())

    def __post_init__(self):
        if self.tag not in ("free", "wired", "partition"):
            raise LatticeError(f"Unknown boundary condition {self.tag!r}")
        seen: set[Vertex] = set()
        for c in self.classes:
            if seen & c:
                raise LatticeError("Partition classes must be disjoint")
            seen |= c

    @classmethod
    def free(cls) -> BoundaryCondition:
        return cls("free")

    @classmethod
    def wired(cls) -> BoundaryCondition:
        return cls("wired")

    @classmethod
    def partition(cls, classes: Sequence[Iterable[Vertex]]) -> BoundaryCondition:
        return cls("partition", tuple(frozenset(tuple(v) for v in c) for c in classes))

    def __str__(self) -> str:
        return self.tag

    def class_sets(self, lattice: BoxLattice) -> list[frozenset[int]]:
        """Classes of size >= 2 as vertex-id sets, validated against ∂V."""
        if self.tag == "free":
            return []
        if self.tag == "wired":
            return [frozenset(lattice.boundary)]
        boundary = set(lattice.boundary)
        out = []
        for c in self.classes:
            ids = frozenset(lattice.vid(v) for v in c)
            if not ids <= boundary:
                raise LatticeError(f"Partition class {sorted(c)} contains non-boundary vertices")
            if len(ids) >= 2:
                out.append(ids)
        return out

    def owners(self, lattice: BoxLattice) -> tuple[dict[int, int], dict[int, list[int]]]:
        """Map vertex -> virtual super-vertex id and virtual id -> members."""
        owner: dict[int, int] = {}
        members: dict[int, list[int]] = {}
        for k, ids in enumerate(self.class_sets(lattice)):
            sv = lattice.n_vertices + k
            members[sv] = sorted(ids)
            for v in ids:
                owner[v] = sv
        return owner, members

    def tables(self, lattice: BoxLattice) -> BcTables:
        owner = np.full(lattice.n_vertices, -1, dtype=np.int64)
        sizes = [0]
        flat: list[int] = []
        for k, ids in enumerate(self.class_sets(lattice)):
            members = sorted(ids)
            owner[members] = lattice.n_vertices + k
            flat.extend(members)
            sizes.append(len(members))
        return BcTables(owner, np.cumsum(sizes).astype(np.int64), np.array(flat, dtype=np.int64))

    def leq(self, other: BoundaryCondition, lattice: BoxLattice) -> bool:
        """ξ ≤ ξ′: every class of ξ lies inside a class of ξ′."""
        theirs = other.class_sets(lattice)
        return all(any(c <= t for t in theirs) for c in self.class_sets(lattice))


# ───────────────────────────── Connectivity ─────────────────────────────

@njit(cache=True)
def _visit(x, side, base, mark, queue, tail) -> bool:
    """Enqueue x on `side`; True when the other side has already reached it."""
    m = mark[x]
    if m < base:
        mark[x] = base + side
        queue[side, tail[side]] = x
        tail[side] += 1
        return False
    return m != base + side


@njit(cache=True)
def meet_kernel(bits, adj_ptr, adj_vertex, adj_edge, owner, class_ptr, class_members,
                u, v, excluding, mark, queue, epoch) -> bool:
    """
    Interleaved two-sided BFS on the open subgraph plus virtual super-vertices.
    Stops as soon as the two searches touch or either side runs dry, so the
    cost is bounded by twice the smaller of the two clusters. `mark` entries
    below 2·epoch count as unseen, so one workspace serves successive calls
    with rising epochs.
    """
    if u == v:
        return True
    if owner[u] >= 0 and owner[u] == owner[v]:
        return True
    n_vertices = owner.shape[0]
    base = 2 * epoch
    head = np.zeros(2, dtype=np.int64)
    tail = np.zeros(2, dtype=np.int64)
    _visit(u, 0, base, mark, queue, tail)
    _visit(v, 1, base, mark, queue, tail)
    side = 0
    while head[0] < tail[0] and head[1] < tail[1]:
        w = queue[side, head[side]]
        head[side] += 1
        if w >= n_vertices:
            k = w - n_vertices
            for i in range(class_ptr[k], class_ptr[k + 1]):
                if _visit(class_members[i], side, base, mark, queue, tail):
                    return True
        else:
            for i in range(adj_ptr[w], adj_ptr[w + 1]):
                e = adj_edge[i]
                if bits[e] and e != excluding:
                    if _visit(adj_vertex[i], side, base, mark, queue, tail):
                        return True
            if owner[w] >= 0 and _visit(owner[w], side, base, mark, queue, tail):
                return True
        side ^= 1
    return False


def meet_workspace(lattice: BoxLattice, tables: BcTables) -> tuple[np.ndarray, np.ndarray]:
    n_nodes = lattice.n_vertices + tables.n_classes
    return np.full(n_nodes, -1, dtype=np.int64), np.empty((2, n_nodes), dtype=np.int64)


def meet(bits: np.ndarray, lattice: BoxLattice, tables: BcTables, u: int, v: int, excluding: int = -1) -> bool:
    """True iff u and v are joined in the open subgraph of `bits` under the bc tables."""
    mark, queue = meet_workspace(lattice, tables)
    return bool(meet_kernel(np.asarray(bits, dtype=np.uint8), lattice.adj_ptr, lattice.adj_vertex,
                            lattice.adj_edge, *tables, u, v, excluding, mark, queue, 0))


def connected(config: EdgeConfig, bc: BoundaryCondition, u: Vertex, v: Vertex,
              excluding: int | None = None) -> bool:
    """True iff u and v share a component of ω^ξ, with `excluding` treated as closed."""
    lat = config.lattice
    a, b = lat.vid(u), lat.vid(v)
    if excluding is not None:
        lat._check_edge(excluding)
    return meet(config.bits, lat, bc.tables(lat), a, b, -1 if excluding is None else excluding)


class UnionFind:
    """Disjoint sets with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n
        self.n_sets = n

    def find(self, a: int) -> int:
        parent = self.parent
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.n_sets -= 1
        return True


def cluster_count(config: EdgeConfig, bc: BoundaryCondition) -> int:
    """k(ω^ξ) by union-find; boundary classes are merged before counting."""
    lat = config.lattice
    classes = bc.class_sets(lat)
    uf = UnionFind(lat.n_vertices)
    for ids in classes:
        first, *rest = sorted(ids)
        for w in rest:
            uf.union(first, w)
    open_edges = np.flatnonzero(config.bits)
    for a, b in zip(lat.edge_u[open_edges].tolist(), lat.edge_v[open_edges].tolist()):
        uf.union(a, b)
    return uf.n_sets


def cluster_count_bfs(config: EdgeConfig, bc: BoundaryCondition) -> int:
    """k(ω^ξ) by breadth-first search over the graph with super-vertices."""
    lat = config.lattice
    owner, members = bc.owners(lat)
    bits = config.bits.tolist()
    seen: set[int] = set()
    count = 0
    for start in range(lat.n_vertices):
        if start in seen:
            continue
        count += 1
        seen.add(start)
        queue = deque([start])
        while queue:
            w = queue.popleft()
            if w in members:
                nxt = members[w]
            else:
                nxt = [x for x, e in lat.neighbors[w] if bits[e]]
                if w in owner:
                    nxt.append(owner[w])
            for x in nxt:
                if x not in seen:
                    seen.add(x)
                    queue.append(x)
    return count


# ───────────────────────────── Annuli ─────────────────────────────

@dataclass(frozen=True)
class AnnulusSpec:
    r_inner: int
    r_outer: int

    def __post_init__(self):
        if not 1 <= self.r_inner < self.r_outer:
            raise LatticeError(
                f"Annulus needs 1 <= r_inner < r_outer, got ({self.r_inner}, {self.r_outer})"
            )

    @classmethod
    def from_delta(cls, r: int, delta) -> AnnulusSpec:
        """Λ_{r,(1+δ)r} with r_outer = ⌊(1+δ)r⌋, at least two rings wide."""
        d = Fraction(str(delta))
        if d <= 0:
            raise LatticeError(f"delta must be positive, got {delta}")
        r_outer = floor((1 + d) * r)
        if r_outer < r + 2:
            raise LatticeError(
                f"Annulus Λ_{{{r},{r_outer}}} from delta={delta} is too thin; need r_outer >= r + 2"
            )
        return cls(r, r_outer)

    def check_inside(self, lattice: BoxLattice):
        if self.r_outer > lattice.R:
            raise LatticeError(f"Annulus outer radius {self.r_outer} exceeds box half-side {lattice.R}")
