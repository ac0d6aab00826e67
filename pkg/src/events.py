"""
Observables on edge configurations: crossings, non-contractible circuits,
the annulus event A(r;δ), and the medial loop configuration with nesting levels.

Geometry here uses doubled integer coordinates: primal vertex (x, y) is
(2x, 2y), dual vertex (x+½, y+½) is (2x+1, 2y+1), and the midpoint of an edge
(a medial vertex) has exactly one odd coordinate.

Winding about the origin is detected exactly, without floating point, by a
potential attached to each vertex: crossing the ray {x > 0, y = ¼} upwards
adds one. A connected open subgraph contains a circuit of nonzero winding iff
two paths assign different potentials to the same vertex.
"""
from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np

from lattice import AnnulusSpec, BoundaryCondition, BoxLattice, EdgeConfig, UnionFind

logger = logging.getLogger(__name__)

Point2 = tuple[int, int]
OUTER = None


class EventError(Exception):
    pass


# ───────────────────────────── Cached geometry ─────────────────────────────

@dataclass(frozen=True)
class _Geometry:
    p_u: np.ndarray        # (E, 2) doubled coords of primal edge endpoints
    p_v: np.ndarray
    p_lo: np.ndarray       # min / max ∞-norm of the endpoints (lattice units)
    p_hi: np.ndarray
    d_u: np.ndarray        # (E, 2) doubled coords of dual edge endpoints, dual index
    d_v: np.ndarray
    d_lo: np.ndarray       # min / max ∞-norm of the endpoints (doubled units)
    d_hi: np.ndarray
    d_primal: np.ndarray   # primal edge crossed by each dual edge


@lru_cache(maxsize=None)
def _geometry(lattice: BoxLattice) -> _Geometry:
    R, n, H, E = lattice.R, lattice.n, lattice.n_horizontal, lattice.n_edges
    ids = np.arange(lattice.n_vertices)
    x, y = ids % n - R, ids // n - R
    ux, uy = x[lattice.edge_u], y[lattice.edge_u]
    vx, vy = x[lattice.edge_v], y[lattice.edge_v]
    nu = np.maximum(abs(ux), abs(uy))
    nv = np.maximum(abs(vx), abs(vy))

    prim = (np.arange(E) + H) % E
    ax, ay = ux[prim], uy[prim]
    horiz = (prim < H)[:, None]
    d_u = np.where(horiz, np.stack([2 * ax + 1, 2 * ay - 1], 1), np.stack([2 * ax - 1, 2 * ay + 1], 1))
    d_v = np.stack([2 * ax + 1, 2 * ay + 1], 1)
    dn_u = np.abs(d_u).max(1)
    dn_v = np.abs(d_v).max(1)
    return _Geometry(
        p_u=np.stack([2 * ux, 2 * uy], 1), p_v=np.stack([2 * vx, 2 * vy], 1),
        p_lo=np.minimum(nu, nv), p_hi=np.maximum(nu, nv),
        d_u=d_u, d_v=d_v, d_lo=np.minimum(dn_u, dn_v), d_hi=np.maximum(dn_u, dn_v),
        d_primal=prim,
    )


def _norm2(p: Point2) -> int:
    return max(abs(p[0]), abs(p[1]))


def _adjacency(a: np.ndarray, b: np.ndarray) -> dict[Point2, list[Point2]]:
    adj: dict[Point2, list[Point2]] = {}
    for (ax, ay), (bx, by) in zip(a.tolist(), b.tolist()):
        adj.setdefault((ax, ay), []).append((bx, by))
        adj.setdefault((bx, by), []).append((ax, ay))
    return adj


def _check_annulus(lattice: BoxLattice, ann: AnnulusSpec):
    if ann.r_outer > lattice.R:
        raise EventError(f"Annulus Λ_{{{ann.r_inner},{ann.r_outer}}} outside Λ_{lattice.R}")


# ───────────────────────────── Crossings ─────────────────────────────

@dataclass(frozen=True)
class Rect:
    """Lattice rectangle [x0, x1] × [y0, y1]."""
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x1 <= self.x0 or self.y1 < self.y0:
            raise EventError(f"Degenerate rectangle {self}")


def has_horizontal_crossing(config: EdgeConfig, rect: Rect) -> bool:
    """Open path inside rect from its left side to its right side (no boundary identification)."""
    lat = config.lattice
    R = lat.R
    if min(rect.x0, rect.y0) < -R or max(rect.x1, rect.y1) > R:
        raise EventError(f"{rect} not inside Λ_{R}")
    bits = config.bits
    inside = lambda v: rect.x0 <= v[0] <= rect.x1 and rect.y0 <= v[1] <= rect.y1
    seen = {lat.vid((rect.x0, y)) for y in range(rect.y0, rect.y1 + 1)}
    queue = deque(seen)
    target = rect.x1
    while queue:
        w = queue.popleft()
        if lat.coords(w)[0] == target:
            return True
        for x, e in lat.neighbors[w]:
            if bits[e] and x not in seen and inside(lat.coords(x)):
                seen.add(x)
                queue.append(x)
    return False


def crossing_box(config: EdgeConfig, r: int) -> bool:
    """𝒞(Λ_r): horizontal open crossing of the box Λ_r."""
    return has_horizontal_crossing(config, Rect(-r, -r, r, r))


# ───────────────────────────── Circuits ─────────────────────────────

def _ray_step(a: Point2, b: Point2) -> int:
    """Signed crossing of the ray {x > 0, y = ¼} when stepping a → b."""
    if a[0] != b[0] or a[0] <= 0:
        return 0
    if a[1] <= 0 < b[1]:
        return 1
    if b[1] <= 0 < a[1]:
        return -1
    return 0


def _has_winding_cycle(adj: dict[Point2, list[Point2]]) -> bool:
    potential: dict[Point2, int] = {}
    for root in adj:
        if root in potential:
            continue
        potential[root] = 0
        queue = deque([root])
        while queue:
            a = queue.popleft()
            pa = potential[a]
            for b in adj[a]:
                pb = pa + _ray_step(a, b)
                seen = potential.get(b)
                if seen is None:
                    potential[b] = pb
                    queue.append(b)
                elif seen != pb:
                    return True
    return False


def _primal_annulus_edges(config: EdgeConfig, ann: AnnulusSpec):
    g = _geometry(config.lattice)
    mask = (config.bits == 1) & (g.p_lo >= ann.r_inner) & (g.p_hi <= ann.r_outer)
    return g.p_u[mask], g.p_v[mask]


def _dual_open_edges(config: EdgeConfig, lo2: int, hi2: int):
    """Dual-open edges with both endpoints at doubled ∞-norm in [lo2, hi2]."""
    g = _geometry(config.lattice)
    dual_open = config.bits[g.d_primal] == 0
    mask = dual_open & (g.d_lo >= lo2) & (g.d_hi <= hi2)
    return g.d_u[mask], g.d_v[mask]


def has_noncontractible_circuit(config: EdgeConfig, ann: AnnulusSpec, which: str = "primal") -> bool:
    """
    Open circuit winding around the origin in the closed annulus. Primal circuits
    use vertices with r ≤ ‖v‖∞ ≤ r'; dual circuits use r + ½ ≤ ‖w‖∞ ≤ r' - ½.
    """
    _check_annulus(config.lattice, ann)
    if which == "primal":
        a, b = _primal_annulus_edges(config, ann)
    elif which == "dual":
        a, b = _dual_open_edges(config, 2 * ann.r_inner + 1, 2 * ann.r_outer - 1)
    else:
        raise EventError(f"which must be 'primal' or 'dual', got {which!r}")
    return _has_winding_cycle(_adjacency(a, b))


def _flood(adj: dict[Point2, list[Point2]], sources: Iterable[Point2], stop_norm: int | None = None):
    """BFS from sources; returns (reached set, whether a vertex of norm stop_norm was hit)."""
    seen = set(sources)
    queue = deque(seen)
    while queue:
        a = queue.popleft()
        if stop_norm is not None and _norm2(a) == stop_norm:
            return seen, True
        for b in adj.get(a, ()):
            if b not in seen:
                seen.add(b)
                queue.append(b)
    return seen, False


def has_dual_crossing(config: EdgeConfig, ann: AnnulusSpec) -> bool:
    """Dual-open path from the dual ring at r - ½ to the dual ring at r' + ½."""
    _check_annulus(config.lattice, ann)
    inner, outer = 2 * ann.r_inner - 1, 2 * ann.r_outer + 1
    adj = _adjacency(*_dual_open_edges(config, inner, outer))
    sources = [v for v in adj if _norm2(v) == inner]
    return _flood(adj, sources, stop_norm=outer)[1]


def event_A(config: EdgeConfig, ann: AnnulusSpec) -> bool:
    """
    A(r;δ): a non-contractible primal circuit in the annulus surrounding a
    non-contractible dual circuit in the annulus.

    Dual-open paths entering from outside Λ_{r'} reach exactly the dual vertices
    outside the outermost primal circuit; A holds iff a non-contractible dual
    circuit survives among the dual vertices they miss.
    """
    _check_annulus(config.lattice, ann)
    if ann.r_outer < ann.r_inner + 2:
        raise EventError(f"Annulus Λ_{{{ann.r_inner},{ann.r_outer}}} too thin for A(r;δ)")
    inner, outer = 2 * ann.r_inner - 1, 2 * ann.r_outer + 1
    adj = _adjacency(*_dual_open_edges(config, inner, outer))
    sources = [v for v in adj if _norm2(v) == outer]
    outside, crossed = _flood(adj, sources, stop_norm=inner)
    if crossed:
        return False
    lo, hi = inner + 2, outer - 2
    kept = {
        a: [b for b in nbrs if b not in outside and lo <= _norm2(b) <= hi]
        for a, nbrs in adj.items()
        if a not in outside and lo <= _norm2(a) <= hi
    }
    return _has_winding_cycle(kept)


# ───────────────────────────── Medial loops ─────────────────────────────

@dataclass
class Loop:
    points: np.ndarray           # polygon, doubled coords
    medial: list                 # [(site, face)] medial edges in traversal order
    primal: frozenset            # primal vertices adjacent to the loop (None = outer/wired ghost)
    dual: frozenset              # dual vertices adjacent to the loop (None = outer face)
    rep: tuple[float, float]     # a point on this loop and on no other
    primal_inside: bool = False

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        xs, ys = self.points[:, 0], self.points[:, 1]
        return int(xs.min()), int(xs.max()), int(ys.min()), int(ys.max())


@dataclass
class LoopSet:
    lattice: BoxLattice
    bc: BoundaryCondition
    loops: list[Loop]
    n_medial: int
    level: list[int] | None = None
    parent: list[int] | None = None
    around_origin: list[bool] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loops)


def winding_number(points: np.ndarray, pt: tuple[float, float]) -> int:
    x, y = pt
    xs, ys = points[:, 0], points[:, 1]
    xn, yn = np.roll(xs, -1), np.roll(ys, -1)
    side = (xn - xs) * (y - ys) - (x - xs) * (yn - ys)
    up = (ys <= y) & (yn > y) & (side > 0)
    down = (ys > y) & (yn <= y) & (side < 0)
    return int(up.sum()) - int(down.sum())


class _SquareGrid:
    """Sites at doubled coords lo, lo+2, …, hi on both axes; faces are the unit squares plus OUTER."""

    def __init__(self, lo: int, hi: int):
        self.lo, self.hi = lo, hi

    def inner(self, c: Point2) -> bool:
        return self.lo < c[0] < self.hi and self.lo < c[1] < self.hi

    def is_horizontal(self, mid: Point2) -> bool:
        return (mid[0] - self.lo) % 2 == 1

    def faces_of(self, mid: Point2):
        mx, my = mid
        cands = ((mx, my + 1), (mx, my - 1)) if self.is_horizontal(mid) else ((mx + 1, my), (mx - 1, my))
        return tuple(c if self.inner(c) else OUTER for c in cands)

    def ends(self, mid: Point2) -> tuple[Point2, Point2]:
        mx, my = mid
        if self.is_horizontal(mid):
            return (mx - 1, my), (mx + 1, my)
        return (mx, my - 1), (mx, my + 1)

    def outward(self, v: Point2) -> Point2:
        return ((v[0] == self.hi) - (v[0] == self.lo), (v[1] == self.hi) - (v[1] == self.lo))

    def face_edges(self, v: Point2, f) -> tuple[Point2, Point2]:
        if f is not OUTER:
            return (f[0], v[1]), (v[0], f[1])
        lo, hi = self.lo, self.hi
        vx, vy = v
        mids = []
        for mid, other in (((vx + 1, vy), vx + 2), ((vx - 1, vy), vx - 2)):
            if lo <= other <= hi and OUTER in self.faces_of(mid):
                mids.append(mid)
        for mid, other in (((vx, vy + 1), vy + 2), ((vx, vy - 1), vy - 2)):
            if lo <= other <= hi and OUTER in self.faces_of(mid):
                mids.append(mid)
        return mids[0], mids[1]

    def medial_edges(self) -> list:
        out = []
        for cy in range(self.lo + 1, self.hi, 2):
            for cx in range(self.lo + 1, self.hi, 2):
                for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
                    out.append(((cx + sx, cy + sy), (cx, cy)))
        for t in range(self.lo, self.hi + 1, 2):
            for v in ((t, self.lo), (t, self.hi), (self.lo, t), (self.hi, t)):
                out.append((v, OUTER))
        return list(dict.fromkeys(out))


def _primal_edge_at(lattice: BoxLattice, mid: Point2) -> int:
    mx, my = mid
    R = lattice.R
    if mx % 2:
        return (my // 2 + R) * (lattice.n - 1) + ((mx - 1) // 2 + R)
    return lattice.n_horizontal + ((my - 1) // 2 + R) * lattice.n + (mx // 2 + R)


def extract_loops(config: EdgeConfig, bc: BoundaryCondition, levels: bool = True) -> LoopSet:
    """
    Loop configuration of ω. Free: trace on the primal box with the outer face
    dual. Wired: trace the dual configuration on the grid of inner faces, whose
    outer face is the wired boundary cluster. At a medial vertex the walker
    follows the open edge (keeping its face) or turns around the closed one
    (keeping its site).
    """
    lat = config.lattice
    R = lat.R
    bits = config.bits.tolist()
    if bc.tag == "free":
        grid, sites_primal = _SquareGrid(-2 * R, 2 * R), True
        is_open = lambda mid: bits[_primal_edge_at(lat, mid)] == 1
    elif bc.tag == "wired":
        grid, sites_primal = _SquareGrid(-2 * R + 1, 2 * R - 1), False
        is_open = lambda mid: bits[_primal_edge_at(lat, mid)] == 0
    else:
        raise EventError(f"extract_loops supports free and wired boundary conditions, got {bc}")

    all_medial = grid.medial_edges()
    used: set = set()
    loops: list[Loop] = []
    for start in all_medial:
        if start in used:
            continue
        v, f = start
        head = grid.face_edges(v, f)[1]
        medial, pts = [], []
        while True:
            used.add((v, f))
            medial.append((v, f))
            if f is OUTER:
                ox, oy = grid.outward(v)
                pts.append((v[0] + ox, v[1] + oy))
            pts.append(head)
            fa, fb = grid.faces_of(head)
            if is_open(head):
                a, b = grid.ends(head)
                v = b if a == v else a
            else:
                f = fb if fa == f else fa
            e1, e2 = grid.face_edges(v, f)
            if (v, f) == start:
                break
            head = e2 if e1 == head else e1

        sites = frozenset(s for s, _ in medial)
        faces = frozenset(c for _, c in medial)
        s0, f0 = medial[0]
        if f0 is OUTER:
            ox, oy = grid.outward(s0)
            rep = (float(s0[0] + ox), float(s0[1] + oy))
        else:
            rep = ((s0[0] + f0[0]) / 2, (s0[1] + f0[1]) / 2)
        points = np.asarray(pts, dtype=np.int64)
        site_inside = winding_number(points, s0) != 0
        loops.append(Loop(
            points=points, medial=medial,
            primal=sites if sites_primal else faces,
            dual=faces if sites_primal else sites,
            rep=rep,
            primal_inside=site_inside == sites_primal,
        ))
    if len(used) != len(all_medial):
        raise EventError(f"Loop tracing used {len(used)} of {len(all_medial)} medial edges")
    logger.debug(f"Traced {len(loops)} loops on {lat}, bc={bc}")

    out = LoopSet(lat, bc, loops, len(all_medial))
    out.around_origin = [_surrounds_fixed_edge(l) for l in loops]
    if levels:
        nesting_levels(out)
    return out


def _surrounds_fixed_edge(loop: Loop) -> bool:
    """The loop winds around both endpoints of the edge {(0,0), (1,0)}."""
    x0, x1, y0, y1 = loop.bbox
    if not (x0 < 0 and x1 > 2 and y0 < 0 < y1):
        return False
    return winding_number(loop.points, (0, 0)) != 0 and winding_number(loop.points, (2, 0)) != 0


def nesting_levels(loopset: LoopSet) -> LoopSet:
    """level = 1 + number of loops surrounding the loop; checks the containment forest."""
    loops = loopset.loops
    L = len(loops)
    if L == 0:
        loopset.level, loopset.parent = [], []
        return loopset
    bb = np.array([l.bbox for l in loops])
    ancestors: list[list[int]] = []
    for i, loop in enumerate(loops):
        rx, ry = loop.rep
        cand = np.flatnonzero((bb[:, 0] < rx) & (bb[:, 1] > rx) & (bb[:, 2] < ry) & (bb[:, 3] > ry))
        ancestors.append([int(j) for j in cand if j != i and winding_number(loops[j].points, loop.rep) != 0])
    level = [1 + len(a) for a in ancestors]
    parent = []
    for i, anc in enumerate(ancestors):
        if sorted(level[j] for j in anc) != list(range(1, len(anc) + 1)):
            raise EventError(f"Loop {i} has inconsistent ancestors; loops cross")
        parent.append(next((j for j in anc if level[j] == len(anc)), -1))
    loopset.level, loopset.parent = level, parent
    return loopset


def loops_around_origin(loops: LoopSet) -> int:
    """ℓ_R: loops surrounding the edge next to the origin."""
    return int(sum(loops.around_origin))


def loops_around_box(loops: LoopSet, rho: int) -> int:
    """Loops lying outside Λ_rho and winding around it."""
    count = 0
    for loop in loops.loops:
        if int(np.abs(loop.points).max(axis=1).min()) <= 2 * rho:
            continue
        if winding_number(loop.points, (0, 0)) != 0:
            count += 1
    return count


def _in_annulus(loop: Loop, ann: AnnulusSpec) -> bool:
    r, r2 = ann.r_inner, ann.r_outer
    if OUTER in loop.primal or OUTER in loop.dual:
        return False
    return (all(2 * r <= _norm2(v) <= 2 * r2 for v in loop.primal)
            and all(2 * r + 1 <= _norm2(w) <= 2 * r2 - 1 for w in loop.dual))


def event_A_via_loops(config: EdgeConfig, bc: BoundaryCondition, ann: AnnulusSpec) -> bool:
    """
    A(r;δ) read off the loop configuration: a loop inside the annulus surrounding
    the origin with odd (wired) or even (free) nesting level. The annulus must
    stay off the boundary ring so boundary identification never enters.
    """
    lat = config.lattice
    _check_annulus(lat, ann)
    if ann.r_outer < ann.r_inner + 2 or ann.r_outer >= lat.R:
        raise EventError(f"Loop detector needs r_inner + 2 <= r_outer < R, got {ann} on Λ_{lat.R}")
    loopset = extract_loops(config, bc, levels=False)
    ring = [l for l, a in zip(loopset.loops, loopset.around_origin) if a]
    # every loop surrounding a loop that surrounds the origin surrounds it too,
    # so levels of these loops only depend on containment among themselves
    want_odd = bc.tag == "wired"
    for i, loop in enumerate(ring):
        if not _in_annulus(loop, ann):
            continue
        level = 1 + sum(1 for j, other in enumerate(ring)
                        if j != i and winding_number(other.points, loop.rep) != 0)
        if (level % 2 == 1) == want_odd:
            return True
    return False


def dual_cluster_count(config: EdgeConfig, bc: BoundaryCondition) -> int:
    """Clusters of ω* under the bc dual to `bc` (free ↔ wired), outer face as one vertex when wired."""
    lat = config.lattice
    R = lat.R
    m = 2 * R + 2
    index = lambda p: ((p[1] + 2 * R + 1) // 2) * m + (p[0] + 2 * R + 1) // 2
    if bc.tag == "free":
        a, b = _dual_open_edges(config, 0, 2 * R + 1)
        nodes = {index((x, y)) for x in range(-2 * R + 1, 2 * R, 2) for y in range(-2 * R + 1, 2 * R, 2)}
        outer = m * m
        uf = UnionFind(m * m + 1)
        for p, q in zip(a.tolist(), b.tolist()):
            ip = outer if _norm2(p) == 2 * R + 1 else index(p)
            iq = outer if _norm2(q) == 2 * R + 1 else index(q)
            uf.union(ip, iq)
        nodes.add(outer)
    elif bc.tag == "wired":
        a, b = _dual_open_edges(config, 0, 2 * R - 1)
        nodes = {index((x, y)) for x in range(-2 * R + 1, 2 * R, 2) for y in range(-2 * R + 1, 2 * R, 2)}
        uf = UnionFind(m * m)
        for p, q in zip(a.tolist(), b.tolist()):
            uf.union(index(p), index(q))
    else:
        raise EventError(f"dual_cluster_count supports free and wired, got {bc}")
    return len({uf.find(v) for v in nodes})


def dump_loops(loops: LoopSet, path: str):
    """Line-delimited JSON, one record per loop, coordinates in lattice units."""
    with open(path, "w", encoding="utf-8") as f:
        for i, loop in enumerate(loops.loops):
            record = {
                "id": i,
                "level": None if loops.level is None else loops.level[i],
                "around_origin": loops.around_origin[i] if loops.around_origin else None,
                "points": (loop.points / 2).tolist(),
            }
            f.write(json.dumps(record) + "\n")
