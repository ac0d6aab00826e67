"""
Closed-form continuum quantities for CLE_κ with κ ∈ (8/3, 8): the
Radon–Nikodym ratio of odd- and even-level loop laws, the annulus partition
functions in their open (𝗊 = e^{-π/τ}) and closed (r = e^{-2πτ}) channel
expansions, the modulus densities, boundary-length moments and the Laplace
identity that ties the densities to the moments.

All theta-like sums run over the integers outward from the minimum of their
quadratic exponent and stop once the next term on both fronts, bounded by an
envelope on the term magnitude, drops below
tol·|partial sum|. Sums that cancel below the double precision floor are
re-summed with mpmath at the working precision the cancellation calls for.
"""
from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import mpmath
from scipy.integrate import quad

from rcm import RcmError, kappa_of_q
from utils import elapsed

logger = logging.getLogger(__name__)

CHANNEL_SWITCH_TAU = 0.2


class ExactError(Exception):
    pass


class AccuracyError(ExactError):
    pass


# ───────────────────────────── Parameters ─────────────────────────────

@dataclass(frozen=True)
class SeriesAccuracy:
    tol: float = 1e-14
    max_terms: int = 10_000

    def __post_init__(self):
        if not self.tol >= 1e-15:
            raise ExactError(f"Series tolerance must be >= 1e-15, got {self.tol}")
        if self.max_terms < 1:
            raise ExactError(f"max_terms must be positive, got {self.max_terms}")


DEFAULT_ACCURACY = SeriesAccuracy()


def _check_kappa(kappa: float):
    if not 8 / 3 < kappa < 8:
        raise ExactError(f"kappa must lie in (8/3, 8), got {kappa}")


@dataclass(frozen=True)
class CleParams:
    kappa: float

    def __post_init__(self):
        _check_kappa(self.kappa)

    @classmethod
    def from_q(cls, q: float) -> CleParams:
        try:
            return cls(kappa_of_q(q))
        except RcmError as e:
            raise ExactError(str(e)) from e

    @property
    def g(self) -> float:
        return 4 / self.kappa

    @property
    def chi(self) -> float:
        return math.pi * (1 - self.g)

    @property
    def central_charge(self) -> float:
        g = self.g
        return 1 - 6 * (1 - g) ** 2 / g

    @property
    def dense(self) -> bool:
        return self.kappa >= 4

    @property
    def gamma_lqg(self) -> float:
        return 4 / math.sqrt(self.kappa) if self.dense else math.sqrt(self.kappa)

    @property
    def predicted_iota(self) -> float:
        return predicted_iota(self.kappa)

    @property
    def amplitude(self) -> float:
        return predicted_amplitude(self.kappa)


def predicted_iota(kappa: float) -> float:
    """3κ/8 - 1. At κ = 6 the mixing rate vanishes identically and the exponent is vacuous."""
    _check_kappa(kappa)
    return 3 * kappa / 8 - 1


def predicted_amplitude(kappa: float) -> float:
    _check_kappa(kappa)
    return 4 * math.cos((kappa - 4) * math.pi / 4)


@dataclass(frozen=True)
class ModulusPoint:
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ExactError(f"Modulus must be positive, got tau={self.tau}")

    @classmethod
    def from_r(cls, r: float) -> ModulusPoint:
        if not 0 < r < 1:
            raise ExactError(f"r must lie in (0, 1), got {r}")
        return cls(math.log(1 / r) / (2 * math.pi))

    @property
    def r(self) -> float:
        return math.exp(-2 * math.pi * self.tau)

    @property
    def q_open(self) -> float:
        return math.exp(-math.pi / self.tau)


# ───────────────────────────── Series machinery ─────────────────────────────

MAX_DPS = 4000
_GUARD_DIGITS = 10
_DOUBLE_EPS = 1e-15


def _lift(fn, x):
    """x as a number of the field fn works in (math floats or mpmath at its working precision)."""
    return x if fn is math else fn.mpf(x)


def _symmetric_sum(term: Callable[[int], float], log_envelope: Callable[[int], float],
                   center: float, acc: SeriesAccuracy, parity: int | None = None, fn=math):
    """
    Σ term(n) over integers n (of the given parity) visited outward from `center`.
    Returns the sum together with Σ|term(n)|.
    """
    ok = (lambda n: True) if parity is None else (lambda n: n % 2 == parity)
    down, up = math.floor(center), math.floor(center) + 1
    terms = []
    partial = 0
    visited = 0
    log_tol = math.log(acc.tol)
    while True:
        while not ok(down):
            down -= 1
        while not ok(up):
            up += 1
        for n in (down, up):
            t = term(n)
            terms.append(t)
            partial += t
        visited += 2
        down -= 1
        up += 1
        while not ok(down):
            down -= 1
        while not ok(up):
            up += 1
        scale = abs(partial) if partial else max(abs(t) for t in terms)
        if scale:
            threshold = log_tol + float(fn.log(scale))
            if (log_envelope(down) < threshold and log_envelope(up) < threshold
                    and down < center < up):
                break
        if visited >= acc.max_terms:
            raise AccuracyError(f"Series did not converge within {acc.max_terms} terms")
    logger.debug(f"Series summed with {visited} terms around {center:.4g}")
    return fn.fsum(sorted(terms, key=abs)), fn.fsum(abs(t) for t in terms)


def _stable_sum(make_term, log_envelope, center: float, acc: SeriesAccuracy, parity: int | None = None):
    """
    Sum in double precision, and re-sum with mpmath at rising precision while
    cancellation leaves fewer than tol digits. `make_term(fn)` builds the term
    function over math or mpmath.mp. The escalated result is an mpmath.mpf,
    which keeps sums far below the double range representable.
    """
    total, size = _symmetric_sum(make_term(math), log_envelope, center, acc, parity)
    if size == 0 or _DOUBLE_EPS * size <= acc.tol * abs(total):
        return total
    tol_digits = -math.log10(acc.tol)
    dps = 30
    while True:
        with mpmath.workdps(dps):
            total, size = _symmetric_sum(make_term(mpmath.mp), log_envelope, center, acc, parity, mpmath.mp)
            if size == 0:
                return mpmath.mpf(0)
            lost = float(mpmath.log10(size / abs(total))) if total else dps
            needed = math.ceil(lost + tol_digits) + _GUARD_DIGITS
            if needed <= dps:
                logger.debug(f"Series re-summed at {dps} digits, {lost:.0f} lost to cancellation")
                return total
        if dps >= MAX_DPS:
            raise AccuracyError(f"Series cancels beyond {MAX_DPS} digits around {center:.4g}")
        dps = min(MAX_DPS, max(2 * dps, needed))


def _log_euler_product(x: float, acc: SeriesAccuracy) -> float:
    """log Π_{k≥1} (1 - x^k) for 0 < x < 1."""
    if not 0 <= x < 1:
        raise ExactError(f"Euler product needs 0 <= x < 1, got {x}")
    total = 0.0
    xk = x
    k = 1
    while xk >= acc.tol * (1 - x):
        total += math.log1p(-xk)
        k += 1
        if k > acc.max_terms:
            raise AccuracyError(f"Euler product at x={x} did not converge within {acc.max_terms} factors")
        xk *= x
    return total


def dedekind_eta(tau_arg: float, acc: SeriesAccuracy = DEFAULT_ACCURACY) -> float:
    """η(iτ) = e^{-πτ/12} Π (1 - e^{-2πkτ}), evaluated directly (no modular transform)."""
    if not tau_arg > 0:
        raise ExactError(f"dedekind_eta needs tau > 0, got {tau_arg}")
    x = math.exp(-2 * math.pi * tau_arg)
    return math.exp(-math.pi * tau_arg / 12 + _log_euler_product(x, acc))


def _sin_ratio(fn, num_arg, sin_chi, limit):
    if abs(sin_chi) < 1e-12:
        return limit
    return fn.sin(num_arg) / sin_chi


def _scaled(s, log_factor: float) -> float:
    """float(s·e^{log_factor}) without overflow in the intermediate."""
    if isinstance(s, float):
        return s * math.exp(log_factor)
    return float(s * mpmath.exp(log_factor))


# ───────────────────────────── Partition function sums ─────────────────────────────

def _parity(kind: str) -> int:
    if kind == "odd":
        return 0
    if kind == "even":
        return 1
    raise ExactError(f"kind must be 'odd' or 'even', got {kind!r}")


def _open_sum(kind: str, tau: float, params: CleParams, acc: SeriesAccuracy):
    """Σ_p sin((p+1)χ)/sin χ · e^{-π(gp-(1-g))²/(4gτ)}, p even (odd kind) or odd (even kind)."""
    g0 = params.g

    def make_term(fn):
        g = 4 / _lift(fn, params.kappa)
        chi = fn.pi * (1 - g)
        sin_chi = fn.sin(chi)
        scale = fn.pi / (4 * g * _lift(fn, tau))
        return lambda p: _sin_ratio(fn, (p + 1) * chi, sin_chi, _lift(fn, p + 1)) \
            * fn.exp(-scale * (g * p - (1 - g)) ** 2)

    envelope = lambda p: -math.pi / (4 * g0 * tau) * (g0 * p - (1 - g0)) ** 2 + math.log(abs(p) + 2)
    return _stable_sum(make_term, envelope, (1 - g0) / g0, acc, parity=_parity(kind))


def _closed_sum(kind: str, tau: float, params: CleParams, acc: SeriesAccuracy):
    """Σ_m (±1)^m sin((χ+πm)/g)/sin χ · e^{-τ(χ+πm)²/(πg)}, sign alternating for the odd kind."""
    g0, chi0 = params.g, params.chi
    alternate = _parity(kind) == 0

    def make_term(fn):
        g = 4 / _lift(fn, params.kappa)
        chi = fn.pi * (1 - g)
        sin_chi = fn.sin(chi)
        t = _lift(fn, tau)

        def term(m):
            value = _sin_ratio(fn, (chi + fn.pi * m) / g, sin_chi, fn.cos(fn.pi * m / g) / g) \
                * fn.exp(-t * (chi + fn.pi * m) ** 2 / (fn.pi * g))
            return -value if alternate and m % 2 else value
        return term

    # |sin((χ+πm)/g)/sin χ| <= 1/|sin χ|, or 1/g at χ = 0
    log_sin = math.log(abs(math.sin(chi0))) if abs(math.sin(chi0)) >= 1e-12 else math.log(g0)
    envelope = lambda m: -tau * (chi0 + math.pi * m) ** 2 / (math.pi * g0) + math.log(abs(m) + 2) - log_sin
    return _stable_sum(make_term, envelope, -chi0 / math.pi, acc)


# ───────────────────────────── RN ratio ─────────────────────────────

def rn_ratio(kappa: float, r: float, acc: SeriesAccuracy = DEFAULT_ACCURACY) -> float:
    """
    Σ (-1)^m sin(κ(m+1)π/4) r^{κm²/8+(κ/4-1)m}  /  Σ sin(κ(m+1)π/4) r^{κm²/8+(κ/4-1)m}.

    This is 𝒵_odd/𝒵_even at τ = log(1/r)/2π. The channel prefactors cancel, so
    the ratio of the bare sums is returned, taken in the open channel below
    CHANNEL_SWITCH_TAU where the r-series converges slowly and cancels.
    """
    _check_kappa(kappa)
    if not 0 < r < 1:
        raise ExactError(f"r must lie in (0, 1), got {r}")
    params = CleParams(kappa)
    tau = ModulusPoint.from_r(r).tau
    series = _open_sum if tau < CHANNEL_SWITCH_TAU else _closed_sum
    num = series("odd", tau, params, acc)
    den = series("even", tau, params, acc)
    if den == 0:
        raise AccuracyError(f"Even-level sum vanishes in rn_ratio at kappa={kappa}, r={r}")
    return float(num / den)


def rn_ratio_asymptotic(kappa: float, r: float) -> float:
    """1 + 4cos((κ-4)π/4) r^{3κ/8-1}."""
    return 1 + predicted_amplitude(kappa) * r ** predicted_iota(kappa)


# ───────────────────────────── Partition functions ─────────────────────────────

def _z_open(kind: str, pt: ModulusPoint, params: CleParams, acc: SeriesAccuracy) -> float:
    g, c = params.g, params.central_charge
    log_q = -math.pi / pt.tau
    s = _open_sum(kind, pt.tau, params, acc)
    # 𝗊^{-c/24} Π(1-𝗊^k)^{-1} Σ s_p 𝗊^{gp²/4-(1-g)p/2}, with 𝗊^{-(1-g)²/(4g)} pulled out of the sum
    log_prefactor = -(c / 24 + (1 - g) ** 2 / (4 * g)) * log_q - _log_euler_product(pt.q_open, acc)
    return _scaled(s, log_prefactor)


def _z_closed(kind: str, pt: ModulusPoint, params: CleParams, acc: SeriesAccuracy) -> float:
    g, c, chi = params.g, params.central_charge, params.chi
    log_r = -2 * math.pi * pt.tau
    s = _closed_sum(kind, pt.tau, params, acc)
    log_prefactor = (-c / 12 - chi * chi / (2 * math.pi ** 2 * g)) * log_r \
        - _log_euler_product(math.exp(2 * log_r), acc)
    return _scaled(s, log_prefactor) / math.sqrt(2 * g)


def z_odd_open(pt: ModulusPoint, params: CleParams, acc: SeriesAccuracy = DEFAULT_ACCURACY) -> float:
    return _z_open("odd", pt, params, acc)


def z_even_open(pt: ModulusPoint, params: CleParams, acc: SeriesAccuracy = DEFAULT_ACCURACY) -> float:
    return _z_open("even", pt, params, acc)


def z_odd_closed(pt: ModulusPoint, params: CleParams, acc: SeriesAccuracy = DEFAULT_ACCURACY) -> float:
    return _z_closed("odd", pt, params, acc)


def z_even_closed(pt: ModulusPoint, params: CleParams, acc: SeriesAccuracy = DEFAULT_ACCURACY) -> float:
    return _z_closed("even", pt, params, acc)


@dataclass
class ChannelCheck:
    kind: str
    tau: float
    z_open: float
    z_closed: float

    @property
    def residual(self) -> float:
        return abs(self.z_open - self.z_closed) / abs(self.z_open)


def verify_channels(params: CleParams, taus, acc: SeriesAccuracy = DEFAULT_ACCURACY) -> list[ChannelCheck]:
    rows = []
    for tau in taus:
        pt = ModulusPoint(tau)
        for kind in ("odd", "even"):
            rows.append(ChannelCheck(kind, tau, _z_open(kind, pt, params, acc), _z_closed(kind, pt, params, acc)))
    return rows


# ───────────────────────────── Modulus densities ─────────────────────────────

def modulus_density(kind: str, tau: float, params: CleParams, acc: SeriesAccuracy = DEFAULT_ACCURACY,
                    channel: str | None = None) -> float:
    """
    m_kind(τ) = 𝒵_kind(τ)·(2cosχ/(√2π))·η(2iτ). The eta factor cancels the
    Euler products of either channel exactly, leaving
        closed: cosχ/(π√g) · Σ_m (±1)^m sin((χ+πm)/g)/sinχ · e^{-τ(χ+πm)²/(πg)}
        open:   cosχ/(π√τ) · Σ_p sin((p+1)χ)/sinχ · e^{-π(gp-(1-g))²/(4gτ)}
    """
    if not tau > 0:
        raise ExactError(f"Modulus must be positive, got tau={tau}")
    if channel is None:
        channel = "open" if tau < CHANNEL_SWITCH_TAU else "closed"
    cos_chi = math.cos(params.chi)
    if channel == "closed":
        return float(cos_chi / (math.pi * math.sqrt(params.g)) * _closed_sum(kind, tau, params, acc))
    if channel == "open":
        return float(cos_chi / (math.pi * math.sqrt(tau)) * _open_sum(kind, tau, params, acc))
    raise ExactError(f"channel must be 'open' or 'closed', got {channel!r}")


# ───────────────────────────── Special functions ─────────────────────────────

_LANCZOS_G = 7
_LANCZOS_COEFFS = (
    0.99999999999980993, 676.5203681218851, -1259.1392167224028,
    771.32342877765313, -176.61502916214059, 12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7,
)


def complex_gamma(z: complex) -> complex:
    """Γ(z) by the Lanczos approximation (g = 7), reflected for Re z < ½."""
    z = complex(z)
    if z.imag == 0 and z.real <= 0 and z.real == math.floor(z.real):
        raise ExactError(f"Gamma has a pole at {z.real:g}")
    if z.real < 0.5:
        return cmath.pi / (cmath.sin(cmath.pi * z) * complex_gamma(1 - z))
    z -= 1
    x = _LANCZOS_COEFFS[0]
    for i, c in enumerate(_LANCZOS_COEFFS[1:], start=1):
        x += c / (z + i)
    t = z + _LANCZOS_G + 0.5
    return cmath.sqrt(2 * cmath.pi) * t ** (z + 0.5) * cmath.exp(-t) * x


def _sinh_ratio(a: float, b: float, x: float) -> float:
    """sinh(aπx)/sinh(bπx), continuous at x = 0."""
    if abs(x) < 1e-6:
        u = (math.pi * x) ** 2
        return (a / b) * (1 + (a * a - b * b) * u / 6)
    return math.sinh(a * math.pi * x) / math.sinh(b * math.pi * x)


class MomentKind(str, Enum):
    TOTAL_FORESTED = "QA_T^f"
    K_FORESTED = "QA^{k,f}"
    ODD_FORESTED = "QA_1^f"
    EVEN_FORESTED = "QA_2^f"
    ODD = "QA_1"
    EVEN = "QA_2"
    ODD_SIMPLE = "QA_1_simple"
    EVEN_SIMPLE = "QA_2_simple"


_DENSE_KINDS = (MomentKind.ODD, MomentKind.EVEN)
_SIMPLE_KINDS = (MomentKind.ODD_SIMPLE, MomentKind.EVEN_SIMPLE)


def _moment_shape(kind: MomentKind, x: float, params: CleParams, k: int) -> float:
    """The kind-specific factor multiplying t^{-ix-1}Γ(1+ix)."""
    g, chi = params.g, params.chi
    two_cos = 2 * math.cos(chi)
    if kind is MomentKind.TOTAL_FORESTED:
        return two_cos * _sinh_ratio(1 / g - 1, 1 / g, x)
    if kind is MomentKind.K_FORESTED:
        return (two_cos / (2 * math.cosh(math.pi * x))) ** k

    if kind in (MomentKind.ODD_FORESTED, MomentKind.EVEN_FORESTED, *_SIMPLE_KINDS):
        ch = 2 * math.cosh(math.pi * x)
    else:
        ch = 2 * math.cosh(g * math.pi * x)
    denom = ch * ch - two_cos * two_cos
    if denom == 0:
        raise ExactError(f"{kind.value} is singular at x={x} for kappa={params.kappa}")

    if kind is MomentKind.ODD_FORESTED:
        return two_cos * (ch / denom - _sinh_ratio(1 / g - 1, 1 / g, x))
    if kind is MomentKind.EVEN_FORESTED:
        return two_cos * two_cos / denom
    if kind is MomentKind.ODD:
        return two_cos * _sinh_ratio(1, g, x) * (ch / denom - _sinh_ratio(1 - g, 1, x))
    if kind is MomentKind.EVEN:
        return two_cos * _sinh_ratio(1, g, x) * two_cos / denom
    if kind is MomentKind.ODD_SIMPLE:
        return 2 * two_cos * math.cosh(math.pi * x) / denom
    return two_cos * two_cos / denom


def qa_moment(kind, t: float, x: float, params: CleParams, k: int = 1) -> complex:
    """Boundary-length moment kind(t, x) = t^{-ix-1} Γ(1+ix) · shape(x)."""
    kind = MomentKind(kind)
    if not t > 0:
        raise ExactError(f"t must be positive, got {t}")
    if kind in _DENSE_KINDS and not params.dense:
        raise ExactError(f"{kind.value} needs kappa in [4, 8), got {params.kappa}")
    if kind in _SIMPLE_KINDS and params.kappa >= 4:
        raise ExactError(f"{kind.value} needs kappa in (8/3, 4), got {params.kappa}")
    if kind is MomentKind.K_FORESTED and k < 1:
        raise ExactError(f"QA^{{k,f}} needs k >= 1, got {k}")
    power = cmath.exp(complex(-1, -x) * math.log(t))
    return power * complex_gamma(1 + 1j * x) * _moment_shape(kind, x, params, k)


def spine_moment_from_forested(t: float, x: float, params: CleParams) -> complex:
    """QA_1 by forest removal: Γ(-igx)/Γ(-ix) · t^{1/g-1} · QA_1^f(t^{1/g}, gx)."""
    if x == 0:
        raise ExactError("Forest removal relation is singular at x = 0")
    g = params.g
    ratio = complex_gamma(-1j * g * x) / complex_gamma(-1j * x)
    return ratio * t ** (1 / g - 1) * qa_moment(MomentKind.ODD_FORESTED, t ** (1 / g), g * x, params)


# ───────────────────────────── Laplace identity ─────────────────────────────

def laplace_rhs(kind: str, x: float, params: CleParams) -> float:
    """Closed hyperbolic form of ∫_0^∞ e^{-πγ²x²τ/4} m_kind(dτ)."""
    _parity(kind)
    if not x > 0:
        raise ExactError(f"x must be positive, got {x}")
    g, gamma, two_cos = params.g, params.gamma_lqg, 2 * math.cos(params.chi)
    if params.dense:
        ch = 2 * math.cosh(g * math.pi * x)
        denom = ch * ch - two_cos * two_cos
        pre = 2 * two_cos * math.sinh(math.pi * x) / (math.pi * gamma * x)
        if kind == "odd":
            return pre * (ch / denom - _sinh_ratio(1 - g, 1, x))
        return pre * two_cos / denom
    ch = 2 * math.cosh(math.pi * x)
    denom = ch * ch - two_cos * two_cos
    pre = 2 * math.sinh(math.pi * x / g) / (math.pi * gamma * x)
    if kind == "odd":
        return pre * 2 * two_cos * math.cosh(math.pi * x) / denom
    return pre * two_cos * two_cos / denom


def laplace_rhs_from_moments(kind: str, x: float, params: CleParams) -> float:
    """2 sinh(γ²πx/4) / (πγx Γ(1+ix)) · QA(t=1, x), with QA the phase's odd or even moment."""
    _parity(kind)
    if params.dense:
        moment = MomentKind.ODD if kind == "odd" else MomentKind.EVEN
    else:
        moment = MomentKind.ODD_SIMPLE if kind == "odd" else MomentKind.EVEN_SIMPLE
    gamma = params.gamma_lqg
    value = 2 * math.sinh(gamma * gamma * math.pi * x / 4) / (math.pi * gamma * x * complex_gamma(1 + 1j * x)) \
        * qa_moment(moment, 1.0, x, params)
    if abs(value.imag) > 1e-9 * max(abs(value.real), 1e-300):
        raise ExactError(f"Laplace right side has imaginary part {value.imag:g}")
    return value.real


def laplace_lhs(kind: str, x: float, params: CleParams, quad_tol: float = 1e-10,
                acc: SeriesAccuracy = DEFAULT_ACCURACY) -> float:
    """Adaptive Gauss–Kronrod quadrature split at the channel switch."""
    gamma = params.gamma_lqg
    rate = math.pi * gamma * gamma * x * x / 4
    integrand = lambda tau: math.exp(-rate * tau) * modulus_density(kind, tau, params, acc)
    total = 0.0
    for a, b in ((0.0, CHANNEL_SWITCH_TAU), (CHANNEL_SWITCH_TAU, math.inf)):
        out = quad(integrand, a, b, epsabs=0.0, epsrel=quad_tol, limit=200, full_output=1)
        value, err = out[0], out[1]
        if len(out) > 3 and err > 100 * quad_tol * max(abs(value), 1e-300):
            raise AccuracyError(f"Quadrature on ({a}, {b}) failed for x={x}: {out[3]}")
        total += value
    return total


@elapsed
def verify_laplace(kind: str, x: float, params: CleParams, quad_tol: float = 1e-10,
                   acc: SeriesAccuracy = DEFAULT_ACCURACY) -> float:
    """|LHS - RHS| / |RHS| for the Laplace identity; RHS from the boundary-length moments."""
    lhs = laplace_lhs(kind, x, params, quad_tol, acc)
    rhs = laplace_rhs_from_moments(kind, x, params)
    residual = abs(lhs - rhs) / abs(rhs)
    logger.info(f"Laplace {kind} kappa={params.kappa:.6g} x={x:g}: lhs={lhs:.12g} rhs={rhs:.12g} residual={residual:.3g}")
    return residual
