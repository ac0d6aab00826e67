"""
Monte Carlo estimators of the mixing rates and the exponent fit.

A run of n samples is split into a fixed number of chains; chain i draws from
the Philox stream keyed by (seed, i) and reports a Tally of integer counters.
Which worker runs a chain never enters the result.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from coupling import CouplingError, coupled_samples, make_coupled_state
from events import EventError, crossing_box, event_A, event_A_via_loops, extract_loops, loops_around_origin
from lattice import AnnulusSpec, BoundaryCondition, EdgeConfig, LatticeError, build_box
from rcm import ChainState, RcmParams, fixed_edge, glauber_sweep
from runner import Checkpoint, run_chains
from stats import EstimateResult, EstimatorError, Tally, integrated_autocorr, merge, summarize, summarize_ratio
from utils import make_stream

logger = logging.getLogger(__name__)

__all__ = [
    "EstimateResult", "EstimatorError", "ExponentFit", "SamplingPlan",
    "estimate_delta_R", "estimate_delta_rR", "estimate_ratio_A", "estimate_nested_sign",
    "estimate_delta_R_independent", "fit_exponent", "integrated_autocorr", "run_chain",
]

DEFAULT_CHAINS = 16
PILOT_CHAIN = 1 << 32
INDEPENDENT_OFFSET = 1 << 33
BOOTSTRAP_RESAMPLES = 10_000
PILOT_MIN_SWEEPS = 200
PILOT_MAX_SWEEPS = 1 << 18
PILOT_SPAN = 50

OBSERVABLES = ("delta-R", "delta-rR", "ratio-A", "nested-sign", "delta-R-independent")


@dataclass(frozen=True)
class SamplingPlan:
    burn_in: int
    subsample: int
    tau_pilot: float = 0.5
    pilot_sweeps: int = 0

    def __post_init__(self):
        if self.burn_in < 0 or self.subsample < 1:
            raise EstimatorError(f"Invalid sampling plan burn_in={self.burn_in}, subsample={self.subsample}")

    @classmethod
    def from_tau(cls, tau: float) -> SamplingPlan:
        """Burn in 100·τ_int sweeps, keep every ⌈2τ_int⌉-th sweep."""
        return cls(burn_in=math.ceil(100 * tau), subsample=max(1, math.ceil(2 * tau)), tau_pilot=tau)

    @classmethod
    def pilot(cls, params: RcmParams, R: int, seed: int, sweeps: int | None = None,
              burn_in: int | None = None, subsample: int | None = None,
              max_sweeps: int = PILOT_MAX_SWEEPS) -> SamplingPlan:
        """
        τ_int of the crossing indicator of Λ_{R/2} along a free-bc pilot chain;
        overrides win. The chain runs max(200, R²) sweeps (or `sweeps`), drops
        the first half and doubles its length until the kept half spans
        PILOT_SPAN·τ_int sweeps or the cap is reached.
        """
        lat = build_box(R)
        state = ChainState(EdgeConfig.all_closed(lat), BoundaryCondition.free(), params, (seed, PILOT_CHAIN))
        rng = make_stream(seed, PILOT_CHAIN)
        r = max(1, R // 2)
        target = min(max(PILOT_MIN_SWEEPS, R * R) if sweeps is None else sweeps, max_sweeps)
        series: list[int] = []
        while True:
            while len(series) < target:
                glauber_sweep(state, rng)
                series.append(int(crossing_box(state.config, r)))
            kept = series[len(series) // 2:]
            tau = integrated_autocorr(kept)
            if len(kept) >= PILOT_SPAN * tau:
                break
            if target >= max_sweeps:
                logger.warning(f"Pilot on Λ_{R} hit {max_sweeps} sweeps with tau_int={tau:.1f}; "
                               f"the kept half spans only {len(kept) / tau:.0f} tau_int")
                break
            target = min(2 * target, max_sweeps)
        plan = cls.from_tau(tau)
        logger.info(f"Pilot on Λ_{R}: {len(series)} sweeps, tau_int={tau:.2f} -> "
                    f"burn_in={plan.burn_in}, subsample={plan.subsample}")
        return cls(
            burn_in=plan.burn_in if burn_in is None else burn_in,
            subsample=plan.subsample if subsample is None else subsample,
            tau_pilot=tau,
            pilot_sweeps=len(series),
        )


@dataclass(frozen=True)
class ChainJob:
    """Everything a worker needs to run one chain; picklable."""
    observable: str
    params: RcmParams
    R: int
    seed: int
    plan: SamplingPlan
    r: int | None = None
    annulus: AnnulusSpec | None = None
    a: float = 1.0
    bc: str = "wired"

    def key(self) -> str:
        ann = None if self.annulus is None else (self.annulus.r_inner, self.annulus.r_outer)
        return (f"{self.observable}|q={self.params.q!r}|p={self.params.p!r}|R={self.R}|r={self.r}"
                f"|ann={ann}|a={self.a!r}|bc={self.bc}|seed={self.seed}"
                f"|burn={self.plan.burn_in}|sub={self.plan.subsample}")


# ───────────────────────────── Per-chain work ─────────────────────────────

def _coupled_chain(job: ChainJob, chain_id: int, n: int) -> Tally:
    lat = build_box(job.R)
    rng = make_stream(job.seed, chain_id)
    state = make_coupled_state(lat, job.params, (job.seed, chain_id))
    stream = coupled_samples(state, rng, n, job.plan.burn_in, job.plan.subsample)

    if job.observable == "delta-R":
        e = fixed_edge(lat)
        event = lambda c: bool(c.bits[e])
    elif job.observable == "delta-rR":
        event = lambda c: crossing_box(c, job.r)
    else:
        event = None

    xs = np.empty(n, dtype=np.int64)
    ys = np.zeros(n, dtype=np.int64)
    agree = 0
    use_loops = job.annulus is not None and job.annulus.r_outer < job.R
    for i, pair in enumerate(stream):
        upper, lower = pair.upper.config, pair.lower.config
        if event is not None:
            xs[i] = int(event(upper)) - int(event(lower))
            if xs[i] < 0:
                raise CouplingError(f"Increasing event gave per-sample difference {xs[i]} in chain {chain_id}")
            continue
        a_up = event_A(upper, job.annulus)
        a_lo = event_A(lower, job.annulus)
        if use_loops:
            if (a_up != event_A_via_loops(upper, pair.upper.bc, job.annulus)
                    or a_lo != event_A_via_loops(lower, pair.lower.bc, job.annulus)):
                raise EventError(f"A(r;δ) detectors disagree at sample {i} of chain {chain_id}")
            agree += 2
        xs[i] = int(a_up) - int(a_lo)
        ys[i] = int(a_lo)
    return Tally.from_values(xs, ys if event is None else None, chain_id=chain_id, agree=agree)


def _nested_sign_chain(job: ChainJob, chain_id: int, n: int) -> Tally:
    lat = build_box(job.R)
    rng = make_stream(job.seed, chain_id)
    if job.bc == "wired":
        bc, start = BoundaryCondition.wired(), EdgeConfig.all_open(lat)
    else:
        bc, start = BoundaryCondition.free(), EdgeConfig.all_closed(lat)
    state = ChainState(start, bc, job.params, (job.seed, chain_id))
    for _ in range(job.plan.burn_in):
        glauber_sweep(state, rng)
    values = np.empty(n, dtype=float)
    for i in range(n):
        for _ in range(job.plan.subsample):
            glauber_sweep(state, rng)
        ell = loops_around_origin(extract_loops(state.config, bc, levels=False))
        values[i] = job.a ** ell
    return Tally.from_values(values, chain_id=chain_id)


def _independent_chain(job: ChainJob, chain_id: int, n: int) -> Tally:
    lat = build_box(job.R)
    e = fixed_edge(lat)
    free = ChainState(EdgeConfig.all_closed(lat), BoundaryCondition.free(), job.params, (job.seed, chain_id))
    wired = ChainState(EdgeConfig.all_open(lat), BoundaryCondition.wired(), job.params,
                       (job.seed, chain_id + INDEPENDENT_OFFSET))
    rng_free = make_stream(job.seed, chain_id)
    rng_wired = make_stream(job.seed, chain_id + INDEPENDENT_OFFSET)
    for _ in range(job.plan.burn_in):
        glauber_sweep(free, rng_free)
        glauber_sweep(wired, rng_wired)
    xs = np.empty(n, dtype=np.int64)
    for i in range(n):
        for _ in range(job.plan.subsample):
            glauber_sweep(free, rng_free)
            glauber_sweep(wired, rng_wired)
        xs[i] = int(wired.config.bits[e]) - int(free.config.bits[e])
    return Tally.from_values(xs, chain_id=chain_id)


def run_chain(job: ChainJob, chain_id: int, n: int) -> Tally:
    if n == 0:
        return Tally(chain_id=chain_id)
    if job.observable in ("delta-R", "delta-rR", "ratio-A"):
        return _coupled_chain(job, chain_id, n)
    if job.observable == "nested-sign":
        return _nested_sign_chain(job, chain_id, n)
    if job.observable == "delta-R-independent":
        return _independent_chain(job, chain_id, n)
    raise EstimatorError(f"Unknown observable {job.observable!r}; expected one of {OBSERVABLES}")


# ───────────────────────────── Estimators ─────────────────────────────

def _run(job: ChainJob, n: int, chains: int, workers: int, checkpoint: Checkpoint | None) -> Tally:
    if n <= 0:
        raise EstimatorError(f"Number of samples must be positive, got n={n}")
    tallies = run_chains(run_chain, job, n, chains, workers, checkpoint)
    return merge(tallies)


def _plan(params: RcmParams, R: int, seed: int, plan: SamplingPlan | None) -> SamplingPlan:
    return plan if plan is not None else SamplingPlan.pilot(params, R, seed)


def _echo(job: ChainJob, chains: int, **extra) -> dict:
    out = {"observable": job.observable, "q": job.params.q, "p": job.params.p, "R": job.R,
           "burn_in": job.plan.burn_in, "subsample": job.plan.subsample, "chains": chains}
    out.update(extra)
    return out


def estimate_delta_R(params: RcmParams, R: int, n: int, seed: int, plan: SamplingPlan | None = None,
                     chains: int = DEFAULT_CHAINS, workers: int = 1,
                     checkpoint: Checkpoint | None = None) -> EstimateResult:
    """Δ_{p,q}(R) = φ¹[ω_e] - φ⁰[ω_e] for e = {(0,0),(1,0)} from coupled chains."""
    params.require_monotone("estimate_delta_R")
    job = ChainJob("delta-R", params, R, seed, _plan(params, R, seed, plan))
    tally = _run(job, n, chains, workers, checkpoint)
    return summarize(tally, seed, tally.tau * job.plan.subsample, _echo(job, chains))


def estimate_delta_rR(params: RcmParams, r: int, R: int, n: int, seed: int, plan: SamplingPlan | None = None,
                      chains: int = DEFAULT_CHAINS, workers: int = 1,
                      checkpoint: Checkpoint | None = None) -> EstimateResult:
    """Δ(r, R) = φ¹[𝒞(Λ_r)] - φ⁰[𝒞(Λ_r)] on Λ_R."""
    if not 1 <= r < R:
        raise EstimatorError(f"estimate_delta_rR needs 1 <= r < R, got r={r}, R={R}")
    params.require_monotone("estimate_delta_rR")
    job = ChainJob("delta-rR", params, R, seed, _plan(params, R, seed, plan), r=r)
    tally = _run(job, n, chains, workers, checkpoint)
    return summarize(tally, seed, tally.tau * job.plan.subsample, _echo(job, chains, r=r))


def estimate_ratio_A(params: RcmParams, r: int, delta, R: int, n: int, seed: int,
                     plan: SamplingPlan | None = None, chains: int = DEFAULT_CHAINS, workers: int = 1,
                     checkpoint: Checkpoint | None = None) -> EstimateResult:
    """
    (φ¹[A] - φ⁰[A]) / φ⁰[A] for A = A(r;δ). The circuit and loop-parity
    detectors are both evaluated on every sample whenever the annulus stays off
    the boundary ring, and must agree.
    """
    params.require_monotone("estimate_ratio_A")
    try:
        ann = AnnulusSpec.from_delta(r, delta)
    except LatticeError as e:
        raise EstimatorError(str(e)) from e
    if ann.r_outer > R:
        raise EstimatorError(f"Annulus outer radius {ann.r_outer} exceeds R={R}")
    if 8 * r * float(delta) < 1000:
        logger.warning(f"r={r}, delta={delta} violate r >= 1000/(8·delta); sign checks only")
    if ann.r_outer >= R:
        logger.warning(f"Annulus touches the boundary ring of Λ_{R}; loop detector cross-check skipped")
    job = ChainJob("ratio-A", params, R, seed, _plan(params, R, seed, plan), r=r, annulus=ann)
    tally = _run(job, n, chains, workers, checkpoint)
    return summarize_ratio(tally, seed, tally.tau * job.plan.subsample,
                           _echo(job, chains, r=r, delta=float(delta), r_outer=ann.r_outer,
                                 detector_checks=tally.agree, denominator=tally.sy / tally.n))


def estimate_nested_sign(params: RcmParams, R: int, a: float, n: int, seed: int,
                         plan: SamplingPlan | None = None, chains: int = DEFAULT_CHAINS, workers: int = 1,
                         checkpoint: Checkpoint | None = None, bc: str = "wired") -> EstimateResult:
    """φ^ξ[a^{ℓ_R}] with ℓ_R the number of loops surrounding the edge next to the origin; ξ wired by default."""
    if bc not in ("free", "wired"):
        raise EstimatorError(f"Nested-sign boundary condition must be free or wired, got {bc!r}")
    job = ChainJob("nested-sign", params, R, seed, _plan(params, R, seed, plan), a=float(a), bc=bc)
    tally = _run(job, n, chains, workers, checkpoint)
    return summarize(tally, seed, tally.tau * job.plan.subsample, _echo(job, chains, a=float(a), bc=bc))


def estimate_delta_R_independent(params: RcmParams, R: int, n: int, seed: int,
                                 plan: SamplingPlan | None = None, chains: int = DEFAULT_CHAINS,
                                 workers: int = 1, checkpoint: Checkpoint | None = None) -> EstimateResult:
    """Δ(R) from independent free and wired chains; reference for the coupled estimator."""
    job = ChainJob("delta-R-independent", params, R, seed, _plan(params, R, seed, plan))
    tally = _run(job, n, chains, workers, checkpoint)
    return summarize(tally, seed, tally.tau * job.plan.subsample, _echo(job, chains))


# ───────────────────────────── Exponent fit ─────────────────────────────

@dataclass
class ExponentFit:
    exponent: float
    stderr: float
    intercept: float
    ci95: tuple[float, float]
    points: list[tuple[float, float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def overlaps(self, other: ExponentFit) -> bool:
        """True when the two 95% intervals share a point."""
        return self.ci95[0] <= other.ci95[1] and other.ci95[0] <= self.ci95[1]


def _wls(x: np.ndarray, Y: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weighted least-squares line through the rows of Y; returns (slopes, intercepts)."""
    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (Y * w).sum(axis=-1) / sw
    sxx = (w * (x - xm) ** 2).sum()
    slope = ((Y - ym[..., None]) * (w * (x - xm))).sum(axis=-1) / sxx
    return slope, ym - slope * xm


def fit_exponent(points, resamples: int = BOOTSTRAP_RESAMPLES, seed: int = 0,
                 magnitude: bool = False) -> ExponentFit:
    """
    Fit estimate = c·R^{-ι} by weighted least squares on (log R, log estimate),
    weights from the relative errors. The 95% interval is the 2.5/97.5
    percentile pair of refits after redrawing every point within its own
    error bar. With `magnitude`, |estimate| is fitted, for signed observables.
    """
    pts = [(float(R), abs(float(res.mean)) if magnitude else float(res.mean), float(res.stderr))
           for R, res in points]
    if len(pts) < 3:
        raise EstimatorError(f"Exponent fit needs at least 3 points, got {len(pts)}")
    for R, mean, _ in pts:
        if mean <= 0:
            raise EstimatorError(f"Cannot fit a power law through nonpositive estimate {mean} at R={R:g}")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    sigma = np.array([p[2] / p[1] for p in pts])
    weighted = bool(np.all(sigma > 0))
    w = 1 / sigma**2 if weighted else np.ones_like(x)

    slope, intercept = _wls(x, y, w)
    xm = (w * x).sum() / w.sum()
    sxx = (w * (x - xm) ** 2).sum()
    if weighted:
        stderr = math.sqrt(1 / sxx)
    else:
        resid = y - (intercept + slope * x)
        stderr = math.sqrt(float(resid @ resid) / (len(x) - 2) / sxx)

    rng = np.random.default_rng(seed)
    Y = y + rng.standard_normal((resamples, len(x))) * sigma
    boot, _ = _wls(x, Y, w)
    lo, hi = np.percentile(-boot, [2.5, 97.5])
    exponent = float(-slope)
    ci = (float(lo), float(hi))
    if not lo <= exponent <= hi:
        logger.warning(f"Exponent {exponent:.4f} lies outside its bootstrap interval [{lo:.4f}, {hi:.4f}]")
    logger.info(f"Fitted exponent {exponent:.4f} ± {stderr:.4f}, 95% CI [{ci[0]:.4f}, {ci[1]:.4f}]")
    return ExponentFit(exponent, stderr, float(intercept), ci, pts)
