"""Sliding-window decoding with limited iterations: the wave/window race.

The left wave position relative to the window, P_L, is the integral of an OU
speed eta plus an independent diffusion:

    d eta = -b (eta - m) dtau + sigma1 dB,   dP_L = eta dtau + sigma2 dB'.

Decoding fails by overtaking once P_L reaches the absorbing barrier W_L
before tau*; the window's right edge W_R reflects. Pr{O} comes from a
finite-volume Fokker-Planck solver, cross-checked by Euler-Maruyama paths.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu
from scipy.stats import multivariate_normal

from . import laws
from . import rng as rngmod

log = logging.getLogger(__name__)

N_ETA = 200
CELLS_PER_POSITION = 20
ETA_SPAN = 4.0
FP_DT = 1.0
MASS_TOL = 1e-6
NEG_TOL = 1e-9


class StabilityError(RuntimeError):
    pass


def adjusted_window(params, epsilon, W, I_s):
    """Reach of the window W' once the wave's start-up and the window's speed are accounted for."""
    if W < 1 or I_s < 1:
        raise ValueError("W and I_s must be at least 1")
    p = params.at(epsilon)
    v_w = 1.0 / I_s
    w = (W - (p.i_start + p.i_end) * v_w) * p.v_bp / (p.v_bp + v_w)
    return float(min(max(w, 0.0), W))


@dataclass(frozen=True)
class FpProblem:
    m: float
    b: float
    sigma1_sq: float
    sigma2: float
    w_left: float
    w_right: float
    ell_star: float
    tau_star: float
    v_window: float
    init_rho: float = 0.99
    init_delta: float = 0.1

    def __post_init__(self):
        if self.b <= 0:
            raise ValueError("b must be positive")
        if self.sigma1_sq < 0 or self.sigma2 < 0:
            raise ValueError("noise intensities must be non-negative")
        if not self.w_left < self.w_right:
            raise ValueError("W_L must lie left of W_R")
        if self.tau_star <= 0:
            raise ValueError("tau* must be positive")

    @property
    def sigma_st(self):
        return math.sqrt(self.sigma1_sq / (2 * self.b))

    @property
    def W(self):
        return self.w_right - self.w_left


def build_problem(params, epsilon, N, L, cfg, rho=0.99, delta=0.1):
    """FpProblem for a (W, I_in, I_s) window at ``epsilon``.

    The speed process uses the BP covariance scalars estimated at the
    sliding-window operating point (``nu_bp_sw``/``theta_bp_sw``) when present.
    """
    p = params.at(epsilon)
    nu = getattr(p, "nu_bp_sw", p.nu_bp)
    theta = getattr(p, "theta_bp_sw", p.theta_bp)
    gap = p.epsilon_star - epsilon
    v_w = 1.0 / cfg.I_s
    speed = p.c_f * p.v_pd
    m = speed - v_w
    b = theta * gap
    s1 = 2 * b * p.v_pd**2 * nu / N
    ell = cfg.I_in - p.i_start + 1.0 / speed
    w_l = 1.0 - ell * v_w
    prob = FpProblem(
        m=m, b=b, sigma1_sq=s1, sigma2=p.sigma2, w_left=w_l, w_right=w_l + cfg.W,
        ell_star=ell, tau_star=ell + (L - 1) * cfg.I_s, v_window=v_w, init_rho=rho, init_delta=delta,
    )
    if m <= -ETA_SPAN * prob.sigma_st * b:
        log.warning("wave is deterministically slower than the window (m=%.4f)", m)
    if w_l >= 0:
        log.warning("absorbing barrier W_L=%.3f is not left of the start position", w_l)
    return prob


# ---------------------------------------------------------------- Fokker-Planck


@dataclass
class PdfField:
    eta: np.ndarray  # cell centres
    pl: np.ndarray
    density: np.ndarray  # (n_eta, n_pl) cell averages
    time: float
    mass: float
    mass_history: np.ndarray = field(default_factory=lambda: np.zeros(0))
    clipped: int = 0


def _grid(problem, n_eta, n_pl):
    s = problem.sigma_st if problem.sigma_st > 0 else 1e-9
    eta_edges = np.linspace(problem.m - ETA_SPAN * s, problem.m + ETA_SPAN * s, n_eta + 1)
    pl_edges = np.linspace(problem.w_left, problem.w_right, n_pl + 1)
    return eta_edges, pl_edges


def _bernoulli(x):
    """x / (e^x - 1), continuous at 0."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    nz = np.abs(x) > 1e-12
    out[nz] = x[nz] / np.expm1(x[nz])
    return out


def _face_rates(v, D, h):
    """Exponentially fitted (Scharfetter-Gummel) transfer rates across a face.

    Returns the rates forward (low -> high cell) and backward per unit mass.
    The scheme reduces to first-order upwind as D -> 0 and to central
    differences as v -> 0; both rates stay non-negative.
    """
    v = np.asarray(v, dtype=float)
    if D <= 0:
        return np.maximum(v, 0) / h, np.maximum(-v, 0) / h
    pe = v * h / D
    return D / h**2 * _bernoulli(-pe), D / h**2 * _bernoulli(pe)


def fp_operator(problem, eta_edges, pl_edges):
    """Sparse generator A with d(cell masses)/dtau = A @ masses.

    Fitted convection-diffusion fluxes on a uniform grid; zero flux on both
    eta edges and at W_R, p = 0 on the W_L face. Every column sums to a
    non-positive number, the deficit being the outflow through W_L.
    """
    ne, npl = len(eta_edges) - 1, len(pl_edges) - 1
    he, hp = eta_edges[1] - eta_edges[0], pl_edges[1] - pl_edges[0]
    eta_c = (eta_edges[:-1] + eta_edges[1:]) / 2
    d1, d2 = problem.sigma1_sq / 2, problem.sigma2**2 / 2
    idx = np.arange(ne * npl).reshape(ne, npl)
    rows, cols, vals = [], [], []

    def link(src, dst, rate):
        # mass moves from src to dst at ``rate`` per unit mass in src
        keep = rate > 0
        src, dst, rate = src[keep], dst[keep], rate[keep]
        rows.extend([dst, src])
        cols.extend([src, src])
        vals.extend([rate, -rate])

    # eta faces between cells i and i+1, drift -b(eta - m) at the face
    fwd, bwd = _face_rates(-problem.b * (eta_edges[1:-1] - problem.m), d1, he)
    lo, hi = idx[:-1, :], idx[1:, :]
    link(lo.ravel(), hi.ravel(), np.repeat(fwd[:, None], npl, axis=1).ravel())
    link(hi.ravel(), lo.ravel(), np.repeat(bwd[:, None], npl, axis=1).ravel())

    # P_L faces between cells j and j+1, velocity eta of the row
    fwd, bwd = _face_rates(eta_c, d2, hp)
    left, right = idx[:, :-1], idx[:, 1:]
    link(left.ravel(), right.ravel(), np.repeat(fwd[:, None], npl - 1, axis=1).ravel())
    link(right.ravel(), left.ravel(), np.repeat(bwd[:, None], npl - 1, axis=1).ravel())

    # W_L face sits half a cell from the first centre and holds p = 0
    if d2 > 0:
        leak = 2 * d2 / hp**2 * _bernoulli(eta_c * (hp / 2) / d2)
    else:
        leak = np.maximum(-eta_c, 0) / hp
    first = idx[:, 0]
    rows.append(first)
    cols.append(first)
    vals.append(-leak)

    n = ne * npl
    A = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    A.sum_duplicates()
    return A


def initial_masses(problem, eta_c, pl_c):
    """Correlated Gaussian around (m, 0), renormalized to unit mass on the grid."""
    s, d, r = problem.sigma_st, problem.init_delta, problem.init_rho
    cov = np.array([[s * s, r * d * s], [r * d * s, d * d]])
    if s <= 0:
        cov[0, 0] = 1e-18
    E, P = np.meshgrid(eta_c, pl_c, indexing="ij")
    dens = multivariate_normal(mean=[problem.m, 0.0], cov=cov, allow_singular=True).pdf(np.dstack([E, P]))
    dens = np.asarray(dens).reshape(E.shape)
    total = dens.sum()
    if not total > 0:
        raise ValueError("initial density has no mass on the grid")
    return dens / total


def _steps(tau_star, dt):
    n = max(1, int(math.ceil(tau_star / dt - 1e-9)))
    return n, tau_star / n


def fp_solve(problem, n_eta=N_ETA, n_pl=None, dt=FP_DT, record=True):
    """Implicit-Euler finite-volume solution up to tau*; returns (PdfField, Pr{O}).

    The step is fixed, so the system matrix is factorized once and reused.
    """
    if n_pl is None:
        n_pl = max(1, int(round(CELLS_PER_POSITION * problem.W)))
    eta_edges, pl_edges = _grid(problem, n_eta, n_pl)
    eta_c = (eta_edges[:-1] + eta_edges[1:]) / 2
    pl_c = (pl_edges[:-1] + pl_edges[1:]) / 2
    A = fp_operator(problem, eta_edges, pl_edges)
    n_steps, h = _steps(problem.tau_star, dt)
    lu = splu((sparse.identity(A.shape[0], format="csc") - h * A).tocsc())
    x = initial_masses(problem, eta_c, pl_c).ravel()
    history = np.empty(n_steps + 1)
    history[0] = mass = x.sum()
    clipped = 0
    for k in range(n_steps):
        x = lu.solve(x)
        neg = x < 0
        if neg.any():
            if x.min() < -NEG_TOL:
                clipped += int((x < -NEG_TOL).sum())
            x[neg] = 0.0
        new = x.sum()
        if new > mass + MASS_TOL:
            raise StabilityError(f"mass grew from {mass} to {new} at step {k + 1}")
        mass = new
        history[k + 1] = mass
    if clipped:
        log.warning("clipped %d negative density cells", clipped)
    he, hp = eta_edges[1] - eta_edges[0], pl_edges[1] - pl_edges[0]
    field_ = PdfField(
        eta_c, pl_c, x.reshape(n_eta, n_pl) / (he * hp), problem.tau_star, float(mass),
        history if record else np.zeros(0), clipped,
    )
    return field_, float(min(1.0, max(0.0, 1.0 - mass)))


# ---------------------------------------------------------------- Euler-Maruyama


def em_simulate(problem, paths=100_000, dt=0.1, rng=None, seed=0, chunk=20_000):
    """Fraction of paths absorbed at W_L by tau*; reflection at W_R is a mirror."""
    if problem.b * dt > 0.25:
        raise ValueError("dt must not exceed 0.25/b")
    if rng is None:
        rng = rngmod.stream(seed, rngmod.SDE)
    n_steps, h = _steps(problem.tau_star, dt)
    s1 = math.sqrt(problem.sigma1_sq * h)
    s2 = problem.sigma2 * math.sqrt(h)
    absorbed = 0
    for start in range(0, paths, chunk):
        n = min(chunk, paths - start)
        eta = problem.m + problem.sigma_st * rng.standard_normal(n)
        pos = np.zeros(n)
        alive = np.ones(n, dtype=bool)
        for _ in range(n_steps):
            z = rng.standard_normal((2, n))
            pos += eta * h + s2 * z[1]
            eta += -problem.b * (eta - problem.m) * h + s1 * z[0]
            over = pos > problem.w_right
            pos[over] = 2 * problem.w_right - pos[over]
            alive &= pos > problem.w_left
        absorbed += n - int(alive.sum())
    return absorbed / paths


# ---------------------------------------------------------------- FER


@dataclass
class WindowPrediction:
    epsilon: float
    N: int
    L: int
    W: int
    I_in: int
    I_s: int
    pr_overtake: float
    w_prime: float
    fer_unlimited: float
    fer_pred: float
    n_eta: int
    n_pl: int
    dt: float
    mass_history: list = field(default_factory=list)

    def to_json(self, with_history=False):
        doc = {
            "config": {k: getattr(self, k) for k in ("epsilon", "N", "L", "W", "I_in", "I_s")},
            "pr_overtake": self.pr_overtake,
            "w_prime": self.w_prime,
            "fer_unlimited": self.fer_unlimited,
            "fer_pred": self.fer_pred,
            "grid": {"n_eta": self.n_eta, "n_pl": self.n_pl, "dt": self.dt},
        }
        if with_history:
            doc["mass_history"] = list(self.mass_history)
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def predict_window(params, epsilon, N, L, cfg, n_eta=N_ETA, dt=FP_DT):
    problem = build_problem(params, epsilon, N, L, cfg)
    fld, pr_o = fp_solve(problem, n_eta=n_eta, dt=dt)
    w_prime = adjusted_window(params, epsilon, cfg.W, cfg.I_s)
    if w_prime == 0:
        log.warning("adjusted window is empty at epsilon=%.4f; only the unterminated factor remains", epsilon)
    unlimited = laws.fer_unlimited(params, epsilon, N, laws.SlidingWindowLaw(L, w_prime))
    fer = 1.0 - (1.0 - pr_o) * (1.0 - unlimited)
    return WindowPrediction(
        float(epsilon), int(N), int(L), cfg.W, cfg.I_in, cfg.I_s, pr_o, w_prime, unlimited,
        float(min(1.0, max(0.0, fer))), n_eta, fld.density.shape[1], dt, fld.mass_history.tolist(),
    )


def fer_sliding_window_limited(params, epsilon, N, L, cfg):
    return predict_window(params, epsilon, N, L, cfg).fer_pred


def problem_dict(problem):
    return asdict(problem)
