"""Frame error rate laws for full BP decoding.

Unlimited iterations: two independent exponential first-hit times A, B with
mean mu0 against the steady-state duration (terminated), a single wave
(unterminated), or their two-phase composition (sliding window).
Limited iterations: each wave recovers X = min(A, n_PD(I_eff)) and decoding
succeeds when X1 + X2 covers the steady state; n_PD is either a point mass
(constant propagation), an iterated OU model, or a Gaussian.
"""

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

from . import ou
from . import rng as rngmod

log = logging.getLogger(__name__)

HIST_BINS = 512
GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
PANELS = 4096


def mu0(gamma, nu, theta, N, epsilon, epsilon_star):
    """Mean first-hit time of zero for an OU process started at its mean.

    ``(sqrt(2 pi) / theta) * int_0^U Phi(z) exp(z^2 / 2) dz`` with
    ``U = gamma sqrt(N / nu) (eps* - eps)``. Split as
    ``int exp(z^2/2) - int Phi(-z) exp(z^2/2)``: the first part is a Dawson
    integral, the second is bounded and integrated numerically.
    Returns ``inf`` once the result overflows.
    """
    gap = epsilon_star - epsilon
    if gap <= 0:
        return 0.0
    if nu <= 0:
        return np.inf
    U = gamma * np.sqrt(N / nu) * gap
    s2 = np.sqrt(2.0)
    with np.errstate(over="ignore"):
        grow = s2 * np.exp(U * U / 2) * special.dawsn(U / s2)
    if not np.isfinite(grow):
        return np.inf
    tail, _ = integrate.quad(lambda z: 0.5 * special.erfcx(z / s2), 0.0, U, epsabs=0, epsrel=1e-13, limit=200)
    return float(np.sqrt(2 * np.pi) / theta * (grow - tail))


def mu_breve(p, N):
    return mu0(p.gamma_breve, p.nu_breve, p.theta_breve, N, p.epsilon, p.epsilon_star)


# ---------------------------------------------------------------- unlimited


@dataclass(frozen=True)
class TerminatedLaw:
    length: int | None = None  # chain length; None = the table's L


@dataclass(frozen=True)
class UnterminatedLaw:
    L_prime: float


@dataclass(frozen=True)
class SlidingWindowLaw:
    L: int
    W: float


def _steady_duration(p, table_L, length=None):
    delta = p.tau_end_tilde - p.tau_start_tilde
    if length is not None and length != table_L:
        # shorter chain: drop the peeling time of the missing positions
        delta -= (table_L - length) / p.v_pd
    return max(0.0, delta)


def two_wave_fer(delta, mu):
    """P{A + B <= delta} for independent Exp(mu)."""
    if delta <= 0:
        return 0.0
    if mu == 0:
        return 1.0
    if not np.isfinite(mu):
        return 0.0
    x = delta / mu
    return float(-np.expm1(-x) - x * np.exp(-x))


def one_wave_fer(p, mu, L_prime):
    arg = p.epsilon * L_prime - p.tau_start_breve
    if arg < 0:
        log.warning("eps*L'=%.3f below tau_start_breve=%.3f; exponent clamped at 0", p.epsilon * L_prime, p.tau_start_breve)
        arg = 0.0
    if mu == 0:
        return 1.0 if arg > 0 else 0.0
    if not np.isfinite(mu):
        return 0.0
    return float(-np.expm1(-arg / mu))


def fer_unlimited(params, epsilon, N, variant=None):
    p = params.at(epsilon)
    mu = mu_breve(p, N)
    variant = variant or TerminatedLaw()
    if isinstance(variant, TerminatedLaw):
        return two_wave_fer(_steady_duration(p, params.L, variant.length), mu)
    if isinstance(variant, UnterminatedLaw):
        return one_wave_fer(p, mu, variant.L_prime)
    if isinstance(variant, SlidingWindowLaw):
        pu = one_wave_fer(p, mu, variant.L - variant.W)
        pt = two_wave_fer(_steady_duration(p, params.L, variant.W), mu)
        return 1.0 - (1.0 - pu) * (1.0 - pt)
    raise TypeError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------- constant propagation


@dataclass(frozen=True)
class LimitedBudget:
    I: int
    I_eff: float
    t_eff: float
    t_start: float
    L_eff: float
    D_min: float
    tau_min: float


def limited_budget(p, I):
    gap = p.epsilon_star - p.epsilon
    I_eff = I - p.i_start - p.i_end
    L_eff = (p.tau_end_tilde - p.tau_start_tilde) * p.v_pd
    D_min = max(0.0, L_eff - p.v_bp * I_eff)
    return LimitedBudget(int(I), I_eff, I_eff * gap, p.i_start * gap, L_eff, D_min, D_min / p.v_pd)


def fer_const_propagation(params, epsilon, N, I):
    p = params.at(epsilon)
    b = limited_budget(p, I)
    if b.I_eff <= 0 or b.D_min >= b.L_eff / 2:
        return 1.0
    mu = mu_breve(p, N)
    delta = p.tau_end_tilde - p.tau_start_tilde
    if mu == 0:
        return 1.0
    if not np.isfinite(mu):
        return 0.0
    x = delta / mu
    return float(min(1.0, max(0.0, 1.0 - (1.0 + x - 2 * b.tau_min / mu) * np.exp(-x))))


# ---------------------------------------------------------------- n_PD models


class NpdKind(enum.Enum):
    HISTOGRAM = "histogram"
    GAUSSIAN = "gaussian"
    POINT = "point"


@dataclass(frozen=True)
class NpdDistribution:
    """Law of n_PD(I_eff).

    ``HISTOGRAM`` keeps ``edges``/``masses`` (piecewise-constant density),
    ``GAUSSIAN`` keeps ``mean``/``var``, ``POINT`` is an atom at ``mean``.
    """

    kind: NpdKind
    mean: float = 0.0
    var: float = 0.0
    edges: np.ndarray | None = None
    masses: np.ndarray | None = None
    samples: np.ndarray | None = None

    def __post_init__(self):
        if self.kind is NpdKind.HISTOGRAM:
            if abs(float(np.sum(self.masses)) - 1.0) > 1e-9:
                raise ValueError("histogram masses must sum to 1")
        elif self.kind is NpdKind.GAUSSIAN and self.var <= 0:
            raise ValueError("Gaussian variance must be positive")

    @classmethod
    def histogram(cls, samples, bins=HIST_BINS):
        samples = np.asarray(samples, dtype=float)
        lo, hi = float(samples.min()), float(samples.max())
        if hi - lo < 1e-12:
            return cls(NpdKind.POINT, mean=lo, samples=samples)
        counts, edges = np.histogram(samples, bins=bins, range=(lo, hi))
        masses = counts / counts.sum()
        return cls(
            NpdKind.HISTOGRAM, mean=float(samples.mean()), var=float(samples.var()),
            edges=edges, masses=masses, samples=samples,
        )

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind is NpdKind.POINT:
            return (x >= self.mean).astype(float)
        if self.kind is NpdKind.GAUSSIAN:
            return stats.norm.cdf(x, self.mean, np.sqrt(self.var))
        cum = np.concatenate([[0.0], np.cumsum(self.masses)])
        return np.interp(x, self.edges, cum, left=0.0, right=1.0)

    def breakpoints(self):
        if self.kind is NpdKind.POINT:
            return np.array([self.mean])
        if self.kind is NpdKind.HISTOGRAM:
            return self.edges
        return np.zeros(0)

    def expect(self, g, lo, hi, kinks=None):
        """Integral of ``g`` against dF over the half-open interval ``(lo, hi]``.

        ``kinks`` lists points where ``g`` is not smooth; histogram bins are split there.
        """
        if hi <= lo:
            return 0.0
        if self.kind is NpdKind.POINT:
            return float(g(np.array([self.mean]))[0]) if lo < self.mean <= hi else 0.0
        if self.kind is NpdKind.GAUSSIAN:
            sd = np.sqrt(self.var)
            a, b = max(lo, self.mean - 12 * sd), min(hi, self.mean + 12 * sd)
            if b <= a:
                return 0.0
            return _gl(lambda x: g(x) * stats.norm.pdf(x, self.mean, sd), np.array([a, b]))
        total = 0.0
        for k in range(len(self.masses)):
            a, b = max(lo, self.edges[k]), min(hi, self.edges[k + 1])
            if b <= a or self.masses[k] == 0:
                continue
            dens = self.masses[k] / (self.edges[k + 1] - self.edges[k])
            cut = [a, b] if kinks is None else [a, b, *kinks[(kinks > a) & (kinks < b)]]
            total += dens * _gl(g, np.array(cut), panels=1)
        return total


def _gl(f, breaks, panels=PANELS):
    """Composite Gauss-Legendre over ``[breaks[0], breaks[-1]]``.

    Panels never straddle an entry of ``breaks``.
    """
    breaks = np.unique(breaks)
    lo, hi = breaks[0], breaks[-1]
    if hi <= lo:
        return 0.0
    uniform = np.linspace(lo, hi, panels + 1)
    knots = np.unique(np.concatenate([uniform, breaks]))
    a, b = knots[:-1], knots[1:]
    half = (b - a)[:, None] / 2
    x = (a + b)[:, None] / 2 + half * GL_NODES[None, :]
    return float(np.sum(f(x.ravel()).reshape(x.shape) * GL_WEIGHTS[None, :] * half))


def fer_from_npd(dist, mu, delta):
    """P{X1 + X2 <= delta} with X = min(A, n), A ~ Exp(mu) independent of n ~ dist.

    Negative n is read as n = 0 (the wave is stopped immediately).
    Conditioning on X1 splits the law of X1 into the part where A hits
    first and the part where the budget ends first.
    """
    if delta <= 0:
        return 0.0
    if mu == 0:
        return 1.0
    inf_mu = not np.isfinite(mu)

    def surv_a(x):
        return np.ones_like(x) if inf_mu else np.exp(-np.asarray(x) / mu)

    def F_X(y):
        y = np.asarray(y, dtype=float)
        return np.where(y < 0, 0.0, 1.0 - surv_a(np.maximum(y, 0.0)) * (1.0 - dist.cdf(y)))

    bps = dist.breakpoints()
    bps = np.concatenate([bps, delta - bps])
    bps = bps[(bps > 0) & (bps < delta)]
    breaks = np.concatenate([[0.0, delta], bps])

    first = 0.0
    if not inf_mu:
        first = _gl(lambda x: np.exp(-x / mu) / mu * (1.0 - dist.cdf(x)) * F_X(delta - x), breaks)
    at_zero = float(dist.cdf(0.0)) * float(F_X(delta))
    second = dist.expect(lambda n: surv_a(n) * F_X(delta - n), 0.0, delta, kinks=delta - dist.breakpoints())
    return float(min(1.0, max(0.0, first + at_zero + second)))


def x_mass(dist, mu, horizon):
    """Total mass of the law of X: numerical part on [0, horizon] plus the analytic tail."""
    F0 = float(dist.cdf(0.0))
    head = 0.0
    bps = dist.breakpoints()
    breaks = np.concatenate([[0.0, horizon], bps[(bps > 0) & (bps < horizon)]])
    if np.isfinite(mu):
        head = _gl(lambda x: np.exp(-x / mu) / mu * (1.0 - dist.cdf(x)), breaks)
        surv = lambda n: np.exp(-n / mu)  # noqa: E731
    else:
        surv = np.ones_like
    head += dist.expect(surv, 0.0, horizon)
    tail = float(surv(np.array([horizon]))[0]) * (1.0 - float(dist.cdf(horizon)))
    return F0 + head + tail


def simulate_npd_iterative(params, epsilon, N, I_eff, samples=100_000, seed=0, rng=None):
    """n_PD(K) = n_PD(K-1) + r1(n_PD(K-1)) over stationary OU paths of r1.

    The OU is sampled exactly at the irregular times n_PD(K-1). Each increment
    is floored at one VN (1/N): a non-positive r1 stalls the wave without
    reversing it, and a zero floor would freeze the clock of an exact sampler.
    """
    p = params.at(epsilon)
    return npd_iterative_samples(p, N, I_eff, samples, seed, rng)


def _r1_process(p, N):
    level = p.gamma_breve * (p.epsilon_star - p.epsilon)
    return ou.OuParams.from_moments(level, p.nu_breve / N, p.theta_breve)


def npd_iterative_samples(p, N, I_eff, samples=100_000, seed=0, rng=None, floor=None):
    I_eff = int(round(I_eff))
    if I_eff < 1:
        raise ValueError("I_eff must be at least 1")
    if rng is None:
        # same stream for every budget: paths share their first steps, so FER is monotone in I
        rng = rngmod.stream(seed, rngmod.OU)
    proc = _r1_process(p, N)
    floor = 1.0 / N if floor is None else floor
    r = ou.stationary_sample(proc, samples, rng)
    n = np.zeros(samples)
    for k in range(I_eff):
        inc = np.maximum(r, floor)
        n += inc
        if k + 1 < I_eff:
            r = ou.transition(r, inc, proc, rng)
    return NpdDistribution.histogram(n)


def npd_gaussian(params, epsilon, N, I_eff, shifted=False):
    p = params.at(epsilon)
    return npd_gaussian_at(p, N, I_eff, shifted)


def npd_gaussian_at(p, N, I_eff, shifted=False):
    gap = p.epsilon_star - p.epsilon
    var = 2 * p.nu_bp * I_eff / (N * p.theta_bp * gap)
    mean = (p.c_f if shifted else p.gamma_bp * gap) * I_eff
    if I_eff <= 0:
        return NpdDistribution(NpdKind.POINT, mean=0.0)
    return NpdDistribution(NpdKind.GAUSSIAN, mean=mean, var=var)


class Model(enum.Enum):
    ITERATIVE_OU = "iterative_ou"
    GAUSSIAN = "gaussian"
    SHIFTED_GAUSSIAN = "shifted_gaussian"
    CONSTANT = "constant"


def fer_randomized(params, epsilon, N, I, model, samples=100_000, seed=0):
    p = params.at(epsilon)
    model = Model(model)
    b = limited_budget(p, I)
    if b.I_eff <= 0:
        return 1.0
    if model is Model.ITERATIVE_OU:
        dist = npd_iterative_samples(p, N, b.I_eff, samples, seed)
    elif model is Model.GAUSSIAN:
        dist = npd_gaussian_at(p, N, b.I_eff, shifted=False)
    elif model is Model.SHIFTED_GAUSSIAN:
        dist = npd_gaussian_at(p, N, b.I_eff, shifted=True)
    else:
        dist = NpdDistribution(NpdKind.POINT, mean=p.gamma_breve * (p.epsilon_star - p.epsilon) * b.I_eff)
    return fer_from_npd(dist, mu_breve(p, N), p.tau_end_tilde - p.tau_start_tilde)


def predict(params, epsilon, N, I, model, **kw):
    """Dispatch by model name; ``I=None`` means unlimited iterations."""
    if I is None or model == "unlimited":
        return fer_unlimited(params, epsilon, N)
    if model == "constant_propagation":
        return fer_const_propagation(params, epsilon, N, I)
    return fer_randomized(params, epsilon, N, I, model, **kw)
