"""Density evolution for the semi-structured ensemble over the BEC.

Per-position erasure probabilities under flooding BP in the limit of large
component codes: BP threshold, wave speed, the iteration counts before and
after the steady state, and the steady-state decoding rate.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .graph import EnsembleSpec, Terminated, Truncated

log = logging.getLogger(__name__)

MAX_ITERS = 100_000
CONVERGED = 1e-10
STALL_DELTA = 1e-12
STALL_LEVEL = 1e-3
DETECTOR_THRESHOLD = 1e-2
DETECTOR_HOLD = 5


class SearchError(RuntimeError):
    pass


class DomainError(ValueError):
    pass


@njit(cache=True)
def _step(p_msg, q, p_app, eps, dv, dc, L, C):
    # check nodes: average of incoming VN messages, out-of-chain VNs known
    for c in range(C):
        s = 0.0
        for j in range(dv):
            i = c - j
            if 0 <= i < L:
                s += p_msg[i, j]
        q[c] = 1.0 - (1.0 - s / dv) ** (dc - 1)
    # variable nodes: extrinsic products; CN positions beyond C do not exist
    for i in range(L):
        prod = eps
        for j in range(dv):
            if i + j < C:
                prod *= q[i + j]
        p_app[i] = prod
        for j in range(dv):
            ext = eps
            for jj in range(dv):
                if jj != j and i + jj < C:
                    ext *= q[i + jj]
            p_msg[i, j] = ext


@njit(cache=True)
def _run(eps, dv, dc, L, C, max_iters, keep_profiles):
    p_msg = np.full((L, dv), eps)
    q = np.ones(C)
    p_app = np.full(L, eps)
    n_keep = max_iters + 1 if keep_profiles else 1
    profiles = np.zeros((n_keep, L))
    if keep_profiles:
        profiles[0, :] = p_app
    sums = np.zeros(max_iters + 1)
    sums[0] = eps * L
    status = 0  # 1 converged, -1 stalled, 0 iteration cap
    it = 0
    while it < max_iters:
        it += 1
        _step(p_msg, q, p_app, eps, dv, dc, L, C)
        sums[it] = p_app.sum()
        if keep_profiles:
            profiles[it, :] = p_app
        if p_app.max() < CONVERGED:
            status = 1
            break
        if abs(sums[it - 1] - sums[it]) < STALL_DELTA and p_app.max() > STALL_LEVEL:
            status = -1
            break
    return status, it, sums[: it + 1], profiles[: it + 1] if keep_profiles else profiles


@dataclass
class DeState:
    """One snapshot of the recursion; ``p_msg[i, j]`` is the VN-to-CN message
    erasure probability from position ``i`` to CN position ``i + j``."""

    spec: EnsembleSpec
    p_msg: np.ndarray
    p_app: np.ndarray
    v_bp_mean: list = field(default_factory=list)
    iteration: int = 0

    @classmethod
    def initial(cls, spec, epsilon):
        L = spec.chain_length
        return cls(spec, np.full((L, spec.dv), float(epsilon)), np.full(L, float(epsilon)))


def de_step(state, epsilon, spec=None):
    spec = spec or state.spec
    p_msg = state.p_msg.copy()
    p_app = np.empty_like(state.p_app)
    q = np.ones(spec.cn_positions)
    _step(p_msg, q, p_app, float(epsilon), spec.dv, spec.dc, spec.chain_length, spec.cn_positions)
    v = float(np.sum(state.p_app - p_app))
    return DeState(spec, p_msg, p_app, state.v_bp_mean + [v], state.iteration + 1)


@dataclass
class DeRun:
    epsilon: float
    status: int
    iterations: int
    sum_p: np.ndarray  # sum_i p_i after each iteration, index 0 = channel
    profiles: np.ndarray | None  # p_i per iteration when requested

    @property
    def converged(self):
        return self.status == 1

    @property
    def v_bp(self):
        """Expected normalized number of bits recovered in iterations 1, 2, ..."""
        return -np.diff(self.sum_p)

    def write_csv(self, path):
        v = np.concatenate([[0.0], self.v_bp])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "sum_p", "v_bp_mean"])
            for k, (s, d) in enumerate(zip(self.sum_p.tolist(), v.tolist())):
                w.writerow([k, s, d])


def run(spec, epsilon, max_iters=MAX_ITERS, profiles=False):
    status, it, sums, prof = _run(
        float(epsilon), spec.dv, spec.dc, spec.chain_length, spec.cn_positions, int(max_iters), profiles
    )
    return DeRun(float(epsilon), int(status), int(it), sums, prof if profiles else None)


def de_threshold(spec, tol=1e-4, lo=None, hi=None):
    """Bisection for the largest epsilon whose recursion converges to zero."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    lo = 0.0 + 1e-6 if lo is None else lo
    hi = 1.0 if hi is None else hi
    if not run(spec, lo).converged or run(spec, hi).converged:
        raise SearchError(f"interval [{lo}, {hi}] does not bracket the threshold")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if run(spec, mid).converged:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def steady_state_bounds(y, threshold=DETECTOR_THRESHOLD, hold=DETECTOR_HOLD):
    """Indices ``(start, stop)`` of the flat stretch of ``y``.

    The second difference of ``y`` is compared with ``threshold``. ``start`` is the
    first index after which it stays below for ``hold`` consecutive samples;
    ``stop`` is found the same way scanning backwards from the last index where
    ``y`` itself is above ``threshold``. Returns ``None`` if no stretch exists.
    """
    y = np.asarray(y, dtype=float)
    live = np.flatnonzero(y >= threshold)
    if len(live) < hold + 2:
        return None
    last = live[-1]
    d2 = np.abs(np.diff(y[: last + 1], 2))
    quiet = d2 < threshold
    # quiet[k] describes the curvature at index k + 1
    run_len = 0
    start = None
    for k in range(len(quiet)):
        run_len = run_len + 1 if quiet[k] else 0
        if run_len == hold:
            start = k - hold + 2
            break
    run_len = 0
    stop = None
    for k in range(len(quiet) - 1, -1, -1):
        run_len = run_len + 1 if quiet[k] else 0
        if run_len == hold:
            stop = k + hold
            break
    if start is None or stop is None or stop <= start:
        return None
    return int(start), int(stop), int(last)


def front_position(profile, level):
    """Fractional position where ``profile`` first rises through ``level``."""
    above = np.flatnonzero(profile >= level)
    if len(above) == 0:
        return np.nan
    k = above[0]
    if k == 0:
        return 0.0
    a, b = profile[k - 1], profile[k]
    return (k - 1) + (level - a) / (b - a)


@dataclass
class DePhaseEstimates:
    epsilon: float
    epsilon_star: float
    v_bp_speed: float
    i_start: int
    i_end: int
    gamma_bp: float
    # bookkeeping for diagnostics
    ss_start_trunc: int = 0
    ss_stop_trunc: int = 0
    ss_stop_term: int = 0
    last_term: int = 0


def estimate_phase(spec, epsilon, epsilon_star):
    """Steady-state quantities of BP decoding from density evolution.

    ``i_start``/``i_end`` come from the terminated chain (iterations before the
    waves settle / from the end of the steady state until the last iteration
    with appreciable decoding); speed and ``gamma_bp`` from the truncated chain,
    which carries a single wave.
    """
    gap = epsilon_star - epsilon
    if gap <= 0:
        raise DomainError(f"epsilon={epsilon} is not below the threshold {epsilon_star}")
    term = run(spec.with_termination(Terminated()), epsilon)
    trunc = run(spec.with_termination(Truncated()), epsilon, profiles=True)
    # the low-degree tail of a truncated chain keeps a residual, so it only stalls
    if not term.converged or trunc.status == 0:
        raise DomainError(f"density evolution does not converge at epsilon={epsilon}")

    y_term = term.v_bp / gap
    b_term = steady_state_bounds(y_term)
    y_trunc = trunc.v_bp / gap
    b_trunc = steady_state_bounds(y_trunc)
    if b_term is None or b_trunc is None:
        raise DomainError(f"no steady state at epsilon={epsilon}")
    s_term, e_term, last_term = b_term
    s_tr, e_tr, _ = b_trunc
    # v_bp index k is iteration k + 1
    i_start = s_term + 1
    i_end = last_term - e_term

    iters = np.arange(s_tr, e_tr + 1) + 1
    fronts = np.array([front_position(trunc.profiles[k], epsilon / 2) for k in iters])
    ok = np.isfinite(fronts)
    speed = np.polyfit(iters[ok], fronts[ok], 1)[0]
    gamma_bp = float(np.mean(y_trunc[s_tr : e_tr + 1]))
    return DePhaseEstimates(
        float(epsilon), float(epsilon_star), float(speed), int(i_start), int(i_end), gamma_bp,
        s_tr + 1, e_tr + 1, e_term + 1, last_term + 1,
    )


def fit_speed_curve(samples):
    """Least-squares quadratic through ``(epsilon, V_BP)`` pairs; highest power first."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or len(samples) < 3:
        raise ValueError("a quadratic fit needs at least three samples")
    return np.polyfit(samples[:, 0], samples[:, 1], 2)
