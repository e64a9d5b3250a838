"""Monte-Carlo estimation of the scaling parameters.

Peeling trajectories are averaged over trials in place of mean evolution;
covariance parameters are fitted to pooled steady-state segments of r1 (for
peeling) or of v_BP (for flooding BP).
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from . import de, laws, ou
from . import rng as rngmod
from .decoders import bp_full, peel, transmit_bec
from .graph import Terminated, Truncated, sample_graph

log = logging.getLogger(__name__)

MIN_TRIALS = 50
SEGMENT_DT = 0.01  # normalized peeling time between stored r1 samples
DETECT_SMOOTH_ITERS = 3  # Gaussian smoothing width of the detector input, in BP iterations
DETECTOR_VERSION = 2  # bump when the steady-state detection changes; invalidates cached stages


class EstimationError(RuntimeError):
    pass


# ---------------------------------------------------------------- peeling


@dataclass
class PeelingRun:
    """Pooled statistics of many peeling trials at one (ensemble, epsilon)."""

    N: int
    epsilon: float
    usable: int
    attempted: int
    r1_sum: np.ndarray  # integer sums of R1 over usable trials, per step
    r1_cnt: np.ndarray  # trials still running at each step
    tracked_sum: np.ndarray
    segments: list  # r1 per usable trial subsampled every SEGMENT_DT

    def mean_r1(self, min_share=0.5):
        """Average r1 over the steps reached by at least ``min_share`` of the trials."""
        keep = self.r1_cnt >= max(1, min_share * self.usable)
        n = int(np.flatnonzero(keep)[-1]) + 1 if keep.any() else 0
        return self.r1_sum[:n] / self.r1_cnt[:n] / self.N

    def mean_tracked(self, k):
        return self.tracked_sum[k] / self.r1_cnt[k]

    def merge(self, other):
        n = max(len(self.r1_sum), len(other.r1_sum))
        pad = lambda a: np.pad(a, (0, n - len(a)))  # noqa: E731
        return PeelingRun(
            self.N, self.epsilon, self.usable + other.usable, self.attempted + other.attempted,
            pad(self.r1_sum) + pad(other.r1_sum), pad(self.r1_cnt) + pad(other.r1_cnt),
            pad(self.tracked_sum) + pad(other.tracked_sum), self.segments + other.segments,
        )


def _usable(spec, residual):
    if not residual.any():
        return True
    if isinstance(spec.termination, Terminated):
        return False
    # truncated chains keep erasures in the low-degree tail
    first = np.flatnonzero(residual)[0] // spec.N
    return first >= spec.chain_length - 2 * spec.dv


def _peel_batch(args):
    spec, epsilon, seed, trials = args
    N = spec.N
    track = spec.chain_length // 2
    step = max(1, int(round(SEGMENT_DT * N)))
    sums, cnts, tsums, segs = [], [], [], []
    usable = 0
    for t in trials:
        g = sample_graph(spec, seed, rngmod.stream(seed, rngmod.GRAPH, t))
        e = transmit_bec(g, epsilon, rngmod.stream(seed, rngmod.CHANNEL, t))
        tr = peel(g, e, rngmod.stream(seed, rngmod.PEELING, t), track_pos=track)
        if not _usable(spec, tr.residual):
            continue
        usable += 1
        counts = np.rint(tr.r1 * N).astype(np.int64)
        sums.append(counts)
        tsums.append(tr.tracked_erased)
        segs.append(tr.r1[::step].astype(np.float32))
    n = max((len(s) for s in sums), default=0)
    r1_sum = np.zeros(n, np.int64)
    r1_cnt = np.zeros(n, np.int64)
    t_sum = np.zeros(n, np.int64)
    for s, ts in zip(sums, tsums):
        r1_sum[: len(s)] += s
        r1_cnt[: len(s)] += 1
        t_sum[: len(ts)] += ts
    return PeelingRun(N, epsilon, usable, len(trials), r1_sum, r1_cnt, t_sum, segs)


def run_peeling(spec, epsilon, trials, seed, first_trial=0, workers=1):
    """Peel ``trials`` independent (graph, channel) draws; trial ``t`` uses substreams ``t``."""
    ids = list(range(first_trial, first_trial + trials))
    chunks = [ids[i::max(1, workers)] for i in range(max(1, workers))]
    jobs = [(spec, float(epsilon), seed, c) for c in chunks if c]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_peel_batch, jobs))
    else:
        parts = [_peel_batch(j) for j in jobs]
    out = parts[0]
    for p in parts[1:]:
        out = out.merge(p)
    return out


def iteration_grid(r1_mean):
    """Peeling time cleared by one BP iteration: the plateau level of the mean r1 curve.

    Every degree-one check fires once per BP iteration, so the detector sees
    the peeling curve at the resolution density evolution uses.
    """
    n = len(r1_mean)
    return float(np.median(r1_mean[n // 3 : 2 * n // 3]))


def smoothed_bounds(curve, N, grid, smooth):
    """Steady-state ``(tau_start, tau_end)`` of an averaged, gap-normalized r1 curve.

    The curve is bin-averaged onto a grid of ``grid`` normalized time units,
    smoothed with a Gaussian of width ``smooth`` and handed to the same
    second-difference detector used for density evolution.
    """
    per_bin = max(1, int(round(grid * N)))
    n_bins = len(curve) // per_bin
    if n_bins < 8:
        return None
    binned = curve[: n_bins * per_bin].reshape(n_bins, per_bin).mean(axis=1)
    sm = gaussian_filter1d(binned, smooth / grid, mode="nearest")
    b = de.steady_state_bounds(sm)
    if b is None:
        return None
    start, stop, _ = b
    return (start + 0.5) * grid, (stop + 0.5) * grid


@dataclass
class PeelingSteadyState:
    epsilon: float
    gamma: float
    tau_start: float
    tau_end: float
    v_pd: float | None
    usable: int
    run: PeelingRun


def estimate_peeling_steady_state(spec, epsilon, epsilon_star, trials=200, seed=0, first_trial=0, workers=1, run=None):
    """Steady-state level, boundaries and (terminated only) wave speed from peeling trials."""
    if epsilon >= epsilon_star:
        raise de.DomainError(f"epsilon={epsilon} is not below the threshold")
    if run is None:
        run = run_peeling(spec, epsilon, trials, seed, first_trial, workers)
    if run.usable < MIN_TRIALS:
        raise EstimationError(f"only {run.usable} usable peeling trials at epsilon={epsilon}")
    gap = epsilon_star - epsilon
    r1 = run.mean_r1()
    h = iteration_grid(r1)
    b = smoothed_bounds(r1 / gap, spec.N, h, DETECT_SMOOTH_ITERS * h)
    if b is None:
        raise EstimationError(f"no peeling steady state found at epsilon={epsilon}")
    t0, t1 = b
    k0, k1 = int(t0 * spec.N), int(t1 * spec.N)
    gamma = float(r1[k0 : k1 + 1].mean() / gap)
    v_pd = None
    if isinstance(spec.termination, Terminated):
        gamma /= 2  # two waves share the terminated plateau
        k = min(int(round((t1 - t0) / 2 * spec.N)), len(run.r1_cnt) - 1)
        v_pd = spec.N / run.mean_tracked(k)
    return PeelingSteadyState(float(epsilon), gamma, t0, t1, v_pd, run.usable, run)


def peeling_segments(state, epsilon_star):
    """Steady-state r1 segments (uniform step SEGMENT_DT) of every usable trial."""
    step = max(1, int(round(SEGMENT_DT * state.run.N)))
    dt = step / state.run.N
    i0 = int(np.ceil(state.tau_start / dt))
    i1 = int(np.floor(state.tau_end / dt))
    segs = [np.asarray(s[i0 : i1 + 1], dtype=float) for s in state.run.segments]
    return [s for s in segs if len(s) > 1], dt


# ---------------------------------------------------------------- covariance


@dataclass
class CovFit:
    nu: float
    theta: float
    lags: np.ndarray
    rho: np.ndarray
    n_segments: int


def _pooled_autocov(segments, max_lag):
    n = max(len(s) for s in segments)
    acc = np.zeros(n)
    cnt = np.zeros(n)
    for s in segments:
        acc[: len(s)] += s
        cnt[: len(s)] += 1
    mean = np.divide(acc, cnt, out=np.zeros(n), where=cnt > 0)
    cov = np.zeros(max_lag + 1)
    pairs = np.zeros(max_lag + 1)
    for s in segments:
        d = s - mean[: len(s)]
        for j in range(min(max_lag + 1, len(s))):
            cov[j] += np.dot(d[: len(d) - j], d[j:])
            pairs[j] += len(d) - j
    return np.divide(cov, pairs, out=np.full(max_lag + 1, np.nan), where=pairs > 0)


def estimate_cov_params(segments, N, dt, max_lag=None):
    """(nu, theta) of a process modeled as Var = nu/N, Cov ~ exp(-theta |lag|).

    ``nu`` is N times the pooled variance about the matched-time mean. ``theta``
    is the least-squares slope of -log(autocovariance / variance) against the
    lag, over positive-covariance lags up to 2/theta (one refinement pass).
    """
    segments = [np.asarray(s, dtype=float) for s in segments if len(s) > 1]
    if len(segments) < 2:
        raise EstimationError("need at least two segments")
    longest = max(len(s) for s in segments)
    max_lag = longest - 1 if max_lag is None else min(max_lag, longest - 1)
    cov = _pooled_autocov(segments, max_lag)
    if not cov[0] > 0:
        raise EstimationError("non-positive variance at lag 0")
    rho = cov / cov[0]
    lags = np.arange(max_lag + 1) * dt

    def fit(limit):
        ok = (np.arange(len(rho)) >= 1) & (lags <= limit) & (rho > 0) & np.isfinite(rho)
        first_bad = np.flatnonzero(~((rho > 0) & np.isfinite(rho)))
        if len(first_bad):
            ok &= np.arange(len(rho)) < first_bad[0]
        if ok.sum() < 2:
            ok = (np.arange(len(rho)) >= 1) & (np.arange(len(rho)) <= 2)
        x, z = lags[ok], -np.log(np.clip(rho[ok], 1e-300, None))
        return float(np.dot(x, z) / np.dot(x, x))

    guess = fit(np.inf if len(rho) < 4 else lags[min(len(rho) - 1, max(3, np.argmax(rho < np.exp(-1))))])
    theta = fit(2.0 / guess) if guess > 0 else guess
    if not theta > 0:
        raise EstimationError("covariance does not decay")
    return CovFit(float(N * cov[0]), theta, lags, rho, len(segments))


# ---------------------------------------------------------------- BP traces


def _bp_batch(args):
    spec, epsilon, seed, trials = args
    out = []
    for t in trials:
        g = sample_graph(spec, seed, rngmod.stream(seed, rngmod.GRAPH, t))
        e = transmit_bec(g, epsilon, rngmod.stream(seed, rngmod.CHANNEL, t))
        tr = bp_full(g, e)
        out.append((tr.v_bp_per_iter.astype(np.float32), tr.p_left.astype(np.int32), tr.success, tr.stop_iteration))
    return out


def run_bp(spec, epsilon, frames, seed, first_frame=0, workers=1):
    ids = list(range(first_frame, first_frame + frames))
    if workers > 1:
        chunks = [ids[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_bp_batch, [(spec, float(epsilon), seed, c) for c in chunks]))
        by_id = {}
        for c, part in zip(chunks, parts):
            by_id.update(zip(c, part))
        return [by_id[i] for i in ids]
    return _bp_batch((spec, float(epsilon), seed, ids))


def bp_segments(traces, i_start, i_stop, tail=0):
    """v_BP over iterations [i_start, min(i_stop, stop - tail)] per trace.

    ``tail`` drops the iterations a truncated trace spends crossing the
    low-degree end of the chain, whose arrival time varies from frame to frame.
    """
    segs = []
    for v, _, _, stop in traces:
        hi = min(i_stop, stop - tail)
        if hi - i_start >= 2:
            segs.append(np.asarray(v[i_start - 1 : hi], dtype=float))
    return segs


def estimate_bp_cov(spec, epsilon, epsilon_star, frames=1000, seed=0, workers=1):
    """(nu_BP, theta_BP) from truncated-chain flooding BP at one (epsilon, N)."""
    trunc = spec.with_termination(Truncated())
    ph = de.estimate_phase(spec, epsilon, epsilon_star)
    traces = run_bp(trunc, epsilon, frames, seed, workers=workers)
    tail = int(np.ceil(2 * spec.dv / ph.v_bp_speed))
    segs = bp_segments(traces, ph.i_start, ph.ss_stop_trunc, tail)
    if len(segs) < 100:
        raise EstimationError(f"only {len(segs)} BP segments")
    gap = epsilon_star - epsilon
    return estimate_cov_params(segs, spec.N, gap)


# ---------------------------------------------------------------- c_f and sigma2


def estimate_cf(params, epsilon, N, i_eff_ref=None, samples=100_000, seed=0):
    """Slope of the mean of the iterated-OU n_PD in I_eff."""
    p = params.at(epsilon)
    if i_eff_ref is None:
        i_eff_ref = cf_reference(p)
    dist = laws.npd_iterative_samples(p, N, i_eff_ref, samples, seed)
    return float(dist.mean / i_eff_ref)


def cf_reference(p, budget=350):
    return int(round(budget - p.i_start - p.i_end))


def race_process(p, N, V_W=0.0, sw=True):
    """OU of the wave speed in positions per iteration (minus the window speed)."""
    nu = p.nu_bp_sw if sw and hasattr(p, "nu_bp_sw") else p.nu_bp
    theta = p.theta_bp_sw if sw and hasattr(p, "theta_bp_sw") else p.theta_bp
    gap = p.epsilon_star - p.epsilon
    b = theta * gap
    s1 = np.sqrt(2 * b * p.v_pd**2 * nu / N)
    return ou.OuParams(p.c_f * p.v_pd - V_W, b, float(s1))


@dataclass
class Sigma2Estimate:
    sigma2: float
    var_sim: float
    var_model: float
    mean_sim: float
    mean_model: float
    traces: int


def model_position_moments(p, N, ell_ref, paths=100_000, seed=0):
    """Mean and variance of floor(P_L(ell_ref)) for the integrated-OU position model.

    P_L(ell) is exactly Gaussian for a stationary start, so the paths are
    drawn from that marginal directly.
    """
    proc = race_process(p, N)
    m, v = ou.integrated_moments(proc, ell_ref)
    r = rngmod.stream(seed, rngmod.SDE, int(ell_ref))
    pos = np.floor(m + np.sqrt(v) * r.standard_normal(paths))
    return float(pos.mean()), float(pos.var())


def estimate_sigma2(sim_positions, p, N, ell_ref, paths=100_000, seed=0, min_traces=200):
    """sigma_2^2 = (Var_sim - Var_model) / ell; returns sigma_2 (clamped at 0)."""
    sim_positions = np.asarray(sim_positions, dtype=float)
    if len(sim_positions) < min_traces:
        raise EstimationError(f"only {len(sim_positions)} qualifying traces")
    mm, vm = model_position_moments(p, N, ell_ref, paths, seed)
    vs = float(sim_positions.var())
    diff = (vs - vm) / ell_ref
    if diff < 0:
        log.warning("simulated position variance below the model's; sigma2 clamped to 0")
        diff = 0.0
    return Sigma2Estimate(float(np.sqrt(diff)), vs, vm, float(sim_positions.mean()), mm, len(sim_positions))


def simulated_positions(spec, epsilon, ell_ref, frames, seed=0, workers=1):
    """P_L at iteration ``ell_ref`` for truncated-chain frames still decoding then."""
    traces = run_bp(spec.with_termination(Truncated()), epsilon, frames, seed, workers=workers)
    out = []
    for _, pl, _, stop in traces:
        if stop >= ell_ref and pl[ell_ref - 1] < spec.L - 2 * spec.dv:
            out.append(int(pl[ell_ref - 1]))
    return np.asarray(out)


def split_sample_check(a, b, tol=0.10):
    """Relative disagreement between two estimates from disjoint batches."""
    rel = abs(a - b) / max(abs(a), abs(b), 1e-300)
    return rel <= tol, rel


# ---------------------------------------------------------------- pipeline


STAGES = ("de", "peeling", "peeling_cov", "bp_cov", "bp_cov_sw", "cf", "sigma2")
DEPENDS = {
    "de": (),
    "peeling": ("de",),
    "peeling_cov": ("de",),
    "bp_cov": ("de",),
    "bp_cov_sw": ("de",),
    "cf": ("de", "peeling", "peeling_cov"),
    "sigma2": ("de", "peeling", "bp_cov_sw", "cf"),
}


@dataclass(frozen=True)
class EstimateConfig:
    seed: int = 0
    workers: int = 1
    n_peel: int = 10_000
    trials: int = 200
    peel_cov_eps: float = 0.47
    bp_n: int = 5000
    bp_eps: float = 0.465
    bp_frames: int = 1000
    sw_n: int = 1000
    sw_eps: float = 0.455
    sw_frames: int = 1000
    sigma_L: int = 120
    sigma_frames: int = 6000
    ell_ref: int = 412
    cf_n: int = 1000
    cf_budget: int = 350
    cf_samples: int = 100_000
    split_tol: float = 0.03

    def stage_key(self, stage, grid):
        """Settings a stage depends on; a cached stage is reused only on an exact match."""
        g = [round(float(e), 10) for e in grid]
        keys = {
            "de": {"grid": g},
            "peeling": {"grid": g, "seed": self.seed, "n": self.n_peel, "trials": self.trials,
                        "detector": DETECTOR_VERSION},
            "peeling_cov": {"seed": self.seed, "n": self.n_peel, "trials": self.trials, "epsilon": self.peel_cov_eps,
                            "detector": DETECTOR_VERSION},
            "bp_cov": {"seed": self.seed, "n": self.bp_n, "epsilon": self.bp_eps, "frames": self.bp_frames},
            "bp_cov_sw": {"seed": self.seed, "n": self.sw_n, "epsilon": self.sw_eps, "frames": self.sw_frames},
            "cf": {"grid": g, "seed": self.seed, "n": self.cf_n, "budget": self.cf_budget, "samples": self.cf_samples},
            "sigma2": {"seed": self.seed, "n": self.sw_n, "epsilon": self.sw_eps, "L": self.sigma_L,
                       "frames": self.sigma_frames, "ell": self.ell_ref},
        }
        return keys[stage]


def _spec(params, N, term):
    from .graph import EnsembleSpec

    return EnsembleSpec(params.dv, params.dc, params.L, N, term)


def _stage_de(params, cfg):
    spec = _spec(params, params.dc, Terminated())  # N is irrelevant to density evolution
    es = de.de_threshold(spec)
    params.scalars["epsilon_star"] = es
    cols = {k: [] for k in ("v_bp", "i_start", "i_end", "gamma_bp")}
    for e in params.grid:
        ph = de.estimate_phase(spec, float(e), es)
        cols["v_bp"].append(ph.v_bp_speed)
        cols["i_start"].append(ph.i_start)
        cols["i_end"].append(ph.i_end)
        cols["gamma_bp"].append(ph.gamma_bp)
        log.info("de eps=%.4f V_BP=%.4f I_start=%d I_end=%d gamma_BP=%.3f", e, ph.v_bp_speed, ph.i_start, ph.i_end, ph.gamma_bp)
    for k, v in cols.items():
        params.tables[k] = np.asarray(v, dtype=float)


def _split_run(spec, eps, cfg):
    """Two disjoint half batches; returns the pooled run and both halves."""
    half = cfg.trials // 2
    a = run_peeling(spec, eps, half, cfg.seed, 0, cfg.workers)
    b = run_peeling(spec, eps, cfg.trials - half, cfg.seed, half, cfg.workers)
    return a.merge(b), a, b


def _stage_peeling(params, cfg):
    es = params.scalar("epsilon_star")
    cols = {k: [] for k in ("gamma_breve", "tau_start_breve", "tau_start_tilde", "tau_end_tilde", "v_pd")}
    for e in params.grid:
        e = float(e)
        tr = estimate_peeling_steady_state(_spec(params, cfg.n_peel, Truncated()), e, es, cfg.trials, cfg.seed, workers=cfg.workers)
        tspec = _spec(params, cfg.n_peel, Terminated())
        run, a, b = _split_run(tspec, e, cfg)
        te = estimate_peeling_steady_state(tspec, e, es, run=run)
        va = estimate_peeling_steady_state(tspec, e, es, run=a).v_pd if a.usable >= MIN_TRIALS else te.v_pd
        vb = estimate_peeling_steady_state(tspec, e, es, run=b).v_pd if b.usable >= MIN_TRIALS else te.v_pd
        ok, rel = split_sample_check(va, vb, cfg.split_tol)
        if not ok:
            raise EstimationError(f"V_PD split-sample disagreement {rel:.3f} at epsilon={e}")
        cols["gamma_breve"].append(tr.gamma)
        cols["tau_start_breve"].append(tr.tau_start)
        cols["tau_start_tilde"].append(te.tau_start)
        cols["tau_end_tilde"].append(te.tau_end)
        cols["v_pd"].append(te.v_pd)
        log.info(
            "peeling eps=%.4f gamma=%.3f tau_s=%.2f tau~=(%.2f, %.2f) V_PD=%.3f split=%.3f usable=%d/%d",
            e, tr.gamma, tr.tau_start, te.tau_start, te.tau_end, te.v_pd, rel, tr.usable, te.usable,
        )
    for k, v in cols.items():
        params.tables[k] = np.asarray(v, dtype=float)


def _stage_peeling_cov(params, cfg):
    es = params.scalar("epsilon_star")
    st = estimate_peeling_steady_state(
        _spec(params, cfg.n_peel, Truncated()), cfg.peel_cov_eps, es, cfg.trials, cfg.seed, workers=cfg.workers
    )
    segs, dt = peeling_segments(st, es)
    fit = estimate_cov_params(segs, cfg.n_peel, dt)
    params.scalars["nu_breve"], params.scalars["theta_breve"] = fit.nu, fit.theta
    log.info("peeling cov nu=%.4f theta=%.4f (%d segments)", fit.nu, fit.theta, fit.n_segments)


def _stage_bp(params, cfg, N, eps, frames, suffix):
    es = params.scalar("epsilon_star")
    fit = estimate_bp_cov(_spec(params, N, Terminated()), eps, es, frames, cfg.seed, cfg.workers)
    params.scalars["nu_bp" + suffix], params.scalars["theta_bp" + suffix] = fit.nu, fit.theta
    log.info("bp cov%s N=%d eps=%.4f nu=%.4f theta=%.4f (%d segments)", suffix, N, eps, fit.nu, fit.theta, fit.n_segments)


def _stage_cf(params, cfg):
    out = []
    for e in params.grid:
        p = params.at(float(e))
        ref = cf_reference(p, cfg.cf_budget)
        dist = laws.npd_iterative_samples(p, cfg.cf_n, ref, cfg.cf_samples, cfg.seed)
        out.append(dist.mean / ref)
        log.info("c_f eps=%.4f I'_eff=%d c_f=%.5f gamma*gap=%.5f", e, ref, out[-1], p.gamma_breve * (p.epsilon_star - e))
    params.tables["c_f"] = np.asarray(out)


def _stage_sigma2(params, cfg):
    p = params.at(cfg.sw_eps)
    from .graph import EnsembleSpec

    spec = EnsembleSpec(params.dv, params.dc, cfg.sigma_L, cfg.sw_n, Truncated())
    pos = simulated_positions(spec, cfg.sw_eps, cfg.ell_ref, cfg.sigma_frames, cfg.seed, cfg.workers)
    r = estimate_sigma2(pos, p, cfg.sw_n, cfg.ell_ref, seed=cfg.seed)
    params.scalars["sigma2"] = r.sigma2
    log.info(
        "sigma2=%.4f var_sim=%.3f var_model=%.3f mean_sim=%.2f mean_model=%.2f traces=%d",
        r.sigma2, r.var_sim, r.var_model, r.mean_sim, r.mean_model, r.traces,
    )


def build_params(dv, dc, L, grid, cfg=EstimateConfig(), stages=None, existing=None):
    """Run (or reuse) every estimation stage and return a complete ScalingParams.

    Without ``stages``, a stage runs unless ``existing.provenance`` records it
    with identical settings and none of its inputs were recomputed. With
    ``stages``, exactly those stages run and the rest are kept as they are.
    """
    from .table import ScalingParams

    grid = np.asarray(grid, dtype=float)
    if existing is not None and (existing.dv, existing.dc, existing.L) == (dv, dc, L) and np.array_equal(existing.grid, grid):
        params = ScalingParams(dv, dc, L, grid, dict(existing.tables), dict(existing.scalars),
                               dict(existing.provenance), dict(existing.meta))
    else:
        params = ScalingParams(dv, dc, L, grid)
    forced = set(stages or ())
    unknown = forced - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages {sorted(unknown)}")
    runners = {
        "de": lambda: _stage_de(params, cfg),
        "peeling": lambda: _stage_peeling(params, cfg),
        "peeling_cov": lambda: _stage_peeling_cov(params, cfg),
        "bp_cov": lambda: _stage_bp(params, cfg, cfg.bp_n, cfg.bp_eps, cfg.bp_frames, ""),
        "bp_cov_sw": lambda: _stage_bp(params, cfg, cfg.sw_n, cfg.sw_eps, cfg.sw_frames, "_sw"),
        "cf": lambda: _stage_cf(params, cfg),
        "sigma2": lambda: _stage_sigma2(params, cfg),
    }
    ran = set()
    for stage in STAGES:
        key = cfg.stage_key(stage, grid)
        if forced:
            run = stage in forced
        else:
            run = params.provenance.get(stage) != key or any(d in ran for d in DEPENDS[stage])
        if run:
            log.info("stage %s: running", stage)
            runners[stage]()
            params.provenance[stage] = key
            ran.add(stage)
        else:
            log.info("stage %s: cached", stage)
    params.meta = {"epsilon_grid": [float(e) for e in grid]}
    return params
