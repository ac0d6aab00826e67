"""
The random-cluster (FK) measure

    φ^ξ_{G,p,q}[ω] ∝ p^{|o(ω)|} (1-p)^{|E∖o(ω)|} q^{k(ω^ξ)}

with its samplers: single-bond heat-bath sweeps, Swendsen–Wang cluster steps
for integer q, monotone coupling-from-the-past, and brute-force enumeration
used as the correctness oracle for all of them.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from lattice import (BcTables, BoxLattice, BoundaryCondition, EdgeConfig, cluster_count, meet, meet_kernel,
                     meet_workspace)
from utils import ResourceLimitError

logger = logging.getLogger(__name__)

MAX_ENUMERATION_EDGES = 24


class RcmError(Exception):
    pass


class UnsupportedParameterError(RcmError):
    pass


# ───────────────────────────── Parameters ─────────────────────────────

def critical_p(q: float) -> float:
    """Self-dual point p_c = √q / (1 + √q)."""
    if q <= 0:
        raise RcmError(f"Cluster weight must be positive, got q={q}")
    s = math.sqrt(q)
    return s / (1.0 + s)


def kappa_of_q(q: float) -> float:
    """κ = 4π / arccos(-√q/2) for q ∈ (0, 4]."""
    if not 0 < q <= 4:
        raise RcmError(f"kappa_of_q needs q in (0, 4], got {q}")
    return 4 * math.pi / math.acos(-math.sqrt(q) / 2)


def q_of_kappa(kappa: float) -> float:
    """Inverse of kappa_of_q on κ ∈ [4, 8): q = (2cos(4π/κ - π))²."""
    if not 4 <= kappa < 8:
        raise RcmError(f"q_of_kappa needs kappa in [4, 8), got {kappa}")
    return (2 * math.cos(4 * math.pi / kappa - math.pi)) ** 2


@dataclass(frozen=True)
class RcmParams:
    q: float
    p: float

    def __post_init__(self):
        if self.q <= 0:
            raise RcmError(f"Cluster weight must be positive, got q={self.q}")
        if not 0 < self.p < 1:
            raise RcmError(f"Edge weight must lie in (0, 1), got p={self.p}")

    @classmethod
    def critical(cls, q: float) -> RcmParams:
        return cls(q=q, p=critical_p(q))

    @property
    def p_isolated(self) -> float:
        """Conditional probability of opening an edge whose endpoints are not yet connected."""
        return self.p / (self.p + (1 - self.p) * self.q)

    def require_monotone(self, what: str):
        if self.q < 1:
            raise UnsupportedParameterError(f"{what} needs q >= 1 for monotonicity, got q={self.q}")


@dataclass
class ChainState:
    config: EdgeConfig
    bc: BoundaryCondition
    params: RcmParams
    stream_id: tuple[int, int] = (0, 0)
    sweeps: int = 0


@lru_cache(maxsize=64)
def bc_tables(lattice: BoxLattice, bc: BoundaryCondition) -> BcTables:
    return bc.tables(lattice)


# ───────────────────────────── Measure ─────────────────────────────

def log_weight(config: EdgeConfig, bc: BoundaryCondition, params: RcmParams) -> float:
    n_open = config.n_open()
    n_closed = config.lattice.n_edges - n_open
    k = cluster_count(config, bc)
    return n_open * math.log(params.p) + n_closed * math.log1p(-params.p) + k * math.log(params.q)


def heat_bath_prob(config: EdgeConfig, e: int, bc: BoundaryCondition, params: RcmParams) -> float:
    """P(ω_e = 1 | ω off e) under φ^ξ_{G,p,q}."""
    lat = config.lattice
    lat._check_edge(e)
    joined = meet(config.bits, lat, bc_tables(lat, bc), int(lat.edge_u[e]), int(lat.edge_v[e]), e)
    return params.p if joined else params.p_isolated


def transition_prob(config: EdgeConfig, e: int, value: int, bc: BoundaryCondition,
                    params: RcmParams) -> float:
    """Probability that a heat-bath update of edge e sets it to `value`."""
    pe = heat_bath_prob(config, e, bc, params)
    return pe if value else 1.0 - pe


def fixed_edge(lattice: BoxLattice) -> int:
    """The edge {(0,0), (1,0)} next to the origin."""
    return lattice.edge_index((0, 0), (1, 0))


# ───────────────────────────── Heat-bath dynamics ─────────────────────────────

@njit(cache=True)
def heat_bath_kernel(bits, uniforms, edge_u, edge_v, adj_ptr, adj_vertex, adj_edge,
                     owner, class_ptr, class_members, p, p_iso, mark, queue):
    lo, hi = min(p, p_iso), max(p, p_iso)
    epoch = mark.max() // 2 + 1
    for e in range(uniforms.shape[0]):
        U = uniforms[e]
        if U <= lo:
            bits[e] = 1
        elif U > hi:
            bits[e] = 0
        else:
            joined = meet_kernel(bits, adj_ptr, adj_vertex, adj_edge, owner, class_ptr, class_members,
                                 edge_u[e], edge_v[e], e, mark, queue, epoch)
            epoch += 1
            bits[e] = 1 if U <= (p if joined else p_iso) else 0


def heat_bath_pass(bits: np.ndarray, lattice: BoxLattice, bc: BoundaryCondition, params: RcmParams,
                   uniforms: np.ndarray):
    """
    One sweep in edge-index order over a uint8 bit array, in place: ω_e = 1{U_e ≤ 𝗉_e}.
    Connectivity is only looked up when U_e falls between the two possible conditionals.
    """
    tables = bc_tables(lattice, bc)
    mark, queue = meet_workspace(lattice, tables)
    heat_bath_kernel(bits, np.asarray(uniforms, dtype=np.float64), lattice.edge_u, lattice.edge_v,
                     lattice.adj_ptr, lattice.adj_vertex, lattice.adj_edge, *tables,
                     params.p, params.p_isolated, mark, queue)


def glauber_sweep(state: ChainState, rng: np.random.Generator) -> ChainState:
    lat = state.config.lattice
    heat_bath_pass(state.config.bits, lat, state.bc, state.params, rng.random(lat.n_edges))
    state.sweeps += 1
    return state


# ───────────────────────────── Swendsen–Wang ─────────────────────────────

def cluster_labels(config: EdgeConfig, bc: BoundaryCondition) -> np.ndarray:
    """Component label per vertex of ω^ξ (boundary classes share one label)."""
    lat = config.lattice
    tables = bc_tables(lat, bc)
    open_edges = np.flatnonzero(config.bits)
    supers = np.repeat(lat.n_vertices + np.arange(tables.n_classes, dtype=np.int64), np.diff(tables.class_ptr))
    rows = np.concatenate((lat.edge_u[open_edges], supers))
    cols = np.concatenate((lat.edge_v[open_edges], tables.class_members))
    n_nodes = lat.n_vertices + tables.n_classes
    graph = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n_nodes, n_nodes))
    _, labels = connected_components(graph, directed=False)
    return labels[: lat.n_vertices]


def swendsen_wang_step(state: ChainState, rng: np.random.Generator) -> ChainState:
    q = state.params.q
    if q not in (2, 3, 4):
        raise UnsupportedParameterError(f"Swendsen–Wang needs integer q in {{2, 3, 4}}, got q={q}")
    lat = state.config.lattice
    labels = cluster_labels(state.config, state.bc)
    colors = rng.integers(int(q), size=int(labels.max()) + 1)
    spin = colors[labels]
    uniforms = rng.random(lat.n_edges)
    agree = spin[lat.edge_u] == spin[lat.edge_v]
    state.config.bits[:] = (agree & (uniforms < state.params.p)).astype(np.uint8)
    state.sweeps += 1
    return state


# ───────────────────────────── Coupling from the past ─────────────────────────────

def cftp_sample(lattice: BoxLattice, bc: BoundaryCondition, params: RcmParams,
                rng: np.random.Generator, max_sweeps: int = 1 << 16) -> EdgeConfig:
    """
    Exact sample by monotone coupling from the past. Sweep -t uses uniforms
    block t for every restart; the window doubles until the sandwich closes.
    """
    params.require_monotone("cftp_sample")
    blocks: list[np.ndarray] = []
    T = 1
    while True:
        while len(blocks) < T:
            blocks.append(rng.random(lattice.n_edges))
        top = np.ones(lattice.n_edges, dtype=np.uint8)
        bottom = np.zeros(lattice.n_edges, dtype=np.uint8)
        for t in range(T - 1, -1, -1):
            heat_bath_pass(top, lattice, bc, params, blocks[t])
            heat_bath_pass(bottom, lattice, bc, params, blocks[t])
            if np.any(bottom > top):
                raise RcmError("Sandwich order violated; heat-bath update is not monotone")
        if np.array_equal(top, bottom):
            logger.debug(f"CFTP coalesced with T={T} on {lattice}")
            return EdgeConfig(lattice, top)
        if T >= max_sweeps:
            raise ResourceLimitError(f"CFTP did not coalesce within {max_sweeps} sweeps on {lattice}")
        T = min(2 * T, max_sweeps)


# ───────────────────────────── Enumeration oracle ─────────────────────────────

@dataclass
class ExactMeasure:
    lattice: BoxLattice
    bc: BoundaryCondition
    params: RcmParams
    configs: np.ndarray
    probs: np.ndarray
    log_Z: float
    extra: dict = field(default_factory=dict)

    @property
    def Z(self) -> float:
        return math.exp(self.log_Z)

    def edge_marginals(self) -> np.ndarray:
        return self.probs @ self.configs

    def expect(self, fn) -> float:
        values = np.array([fn(EdgeConfig(self.lattice, c)) for c in self.configs], dtype=float)
        return float(self.probs @ values)


def enumerate_measure(lattice: BoxLattice, bc: BoundaryCondition, params: RcmParams) -> ExactMeasure:
    E = lattice.n_edges
    if E > MAX_ENUMERATION_EDGES:
        raise ResourceLimitError(f"Enumeration over 2^{E} configs exceeds the cap of 2^{MAX_ENUMERATION_EDGES}")
    N = 1 << E
    configs = ((np.arange(N, dtype=np.int64)[:, None] >> np.arange(E)) & 1).astype(np.uint8)
    logw = np.array([log_weight(EdgeConfig(lattice, c), bc, params) for c in configs])
    top = logw.max()
    w = np.exp(logw - top)
    total = w.sum()
    log_Z = float(top + math.log(total))
    logger.debug(f"Enumerated {N} configs on {lattice}, bc={bc}, log Z={log_Z:.12g}")
    return ExactMeasure(lattice, bc, params, configs, w / total, log_Z)


def exact_delta(lattice: BoxLattice, params: RcmParams, edge: int | None = None) -> float:
    """φ¹[ω_e] - φ⁰[ω_e] by enumeration."""
    e = fixed_edge(lattice) if edge is None else edge
    wired = enumerate_measure(lattice, BoundaryCondition.wired(), params).edge_marginals()[e]
    free = enumerate_measure(lattice, BoundaryCondition.free(), params).edge_marginals()[e]
    return float(wired - free)
