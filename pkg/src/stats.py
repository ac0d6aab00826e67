"""
Sample accounting shared by the coupled and single-chain estimators.

Per-chain sums are merged in chain-id order, so a result depends only on
(seed, config) and never on how chains were spread over workers.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

WINDOW_C = 5.0


class EstimatorError(Exception):
    pass


def integrated_autocorr(series: Sequence[float], c: float = WINDOW_C) -> float:
    """
    Integrated autocorrelation time τ_int = ½ + Σ_t ρ(t), summed up to the
    first window W with W ≥ c·τ_int(W). Constant series give ½.
    """
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < 2:
        return 0.5
    x = x - x.mean()
    var = float(x @ x) / n
    if var <= 0:
        return 0.5
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acf = np.fft.irfft(f * np.conj(f), size)[:n] / (n * var)
    tau = 0.5
    for w in range(1, n):
        tau += acf[w]
        if w >= c * tau:
            break
    return max(tau, 0.5)


@dataclass
class Tally:
    """Moments of a per-sample statistic x (and an optional companion y) from one chain."""
    chain_id: int = 0
    n: int = 0
    sx: float = 0
    sy: float = 0
    sxx: float = 0
    syy: float = 0
    sxy: float = 0
    tau: float = 0.5
    agree: int = 0

    @classmethod
    def from_values(cls, xs: Sequence[float], ys: Sequence[float] | None = None,
                    chain_id: int = 0, agree: int = 0) -> Tally:
        x = np.asarray(xs)
        y = np.zeros_like(x) if ys is None else np.asarray(ys)
        as_num = int if x.dtype.kind in "iub" and y.dtype.kind in "iub" else float
        return cls(
            chain_id=chain_id, n=len(x),
            sx=as_num(x.sum()), sy=as_num(y.sum()),
            sxx=as_num((x * x).sum()), syy=as_num((y * y).sum()), sxy=as_num((x * y).sum()),
            tau=integrated_autocorr(x), agree=agree,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def merge(tallies: Sequence[Tally]) -> Tally:
    out = Tally(chain_id=-1)
    weighted_tau = 0.0
    for t in sorted(tallies, key=lambda t: t.chain_id):
        out.n += t.n
        out.sx += t.sx
        out.sy += t.sy
        out.sxx += t.sxx
        out.syy += t.syy
        out.sxy += t.sxy
        out.agree += t.agree
        weighted_tau += t.tau * t.n
    out.tau = weighted_tau / out.n if out.n else 0.5
    return out


@dataclass
class EstimateResult:
    mean: float
    stderr: float
    n_effective: float
    tau_int: float
    n_raw: int
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stderr < 0:
            raise EstimatorError(f"Negative standard error {self.stderr}")
        if self.n_effective > self.n_raw:
            raise EstimatorError(f"n_effective={self.n_effective} exceeds n_raw={self.n_raw}")

    @property
    def relative_error(self) -> float:
        return self.stderr / abs(self.mean) if self.mean else math.inf


def effective_size(tally: Tally) -> float:
    return min(float(tally.n), max(1.0, tally.n / (2.0 * tally.tau)))


def summarize(tally: Tally, seed: int = 0, tau_int: float = 0.5, params: dict | None = None) -> EstimateResult:
    """Mean of x with stderr √(Var/n_eff); for {0,1} data Var = m(1-m)."""
    if tally.n <= 0:
        raise EstimatorError("No samples to summarize")
    n_eff = effective_size(tally)
    mean = tally.sx / tally.n
    var = max(tally.sxx / tally.n - mean * mean, 0.0)
    return EstimateResult(mean, math.sqrt(var / n_eff), n_eff, tau_int, tally.n, seed, dict(params or {}))


def summarize_ratio(tally: Tally, seed: int = 0, tau_int: float = 0.5, params: dict | None = None) -> EstimateResult:
    """E[x]/E[y] with the delta-method standard error."""
    if tally.n <= 0:
        raise EstimatorError("No samples to summarize")
    n = tally.n
    mx, my = tally.sx / n, tally.sy / n
    if my == 0:
        raise EstimatorError("Degenerate denominator: the free-chain event was never observed (increase n or delta)")
    vx = tally.sxx / n - mx * mx
    vy = tally.syy / n - my * my
    cxy = tally.sxy / n - mx * my
    ratio = mx / my
    n_eff = effective_size(tally)
    var = (vx / my**2 - 2 * mx * cxy / my**3 + mx * mx * vy / my**4) / n_eff
    return EstimateResult(ratio, math.sqrt(max(var, 0.0)), n_eff, tau_int, n, seed, dict(params or {}))
