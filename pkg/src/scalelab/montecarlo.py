"""Frame-error-rate simulation with per-frame substreams.

Frame ``f`` always draws its graph from substream (seed, GRAPH, f) (or frame 0
with a fixed graph) and its channel from one vector of uniforms
(seed, CHANNEL, f) shared by every epsilon, so curves over epsilon are
paired. Outcomes depend only on (config, seed, frame index); workers and
block sizes change nothing.
"""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from . import rng as rngmod
from .decoders import UNLIMITED, WindowConfig, bp_full, bp_sliding_window, erasures_from_uniforms, frame_error
from .graph import sample_graph, termination_label

log = logging.getLogger(__name__)

CACHE_VERSION = 1


@dataclass(frozen=True)
class FullBP:
    budgets: tuple = (UNLIMITED,)  # UNLIMITED stands for no iteration limit

    @property
    def label(self):
        return "full_bp"


@dataclass(frozen=True)
class SlidingWindow:
    cfg: WindowConfig

    @property
    def budgets(self):
        return (UNLIMITED,)  # the window's schedule is its own budget

    @property
    def label(self):
        return "sliding_window"


@dataclass(frozen=True)
class SimConfig:
    spec: object
    epsilons: tuple
    decoder: object
    frames: int
    max_frame_errors: int | None = None
    seed: int = 0
    workers: int = 1
    fixed_graph: bool = False
    block: int = 64

    def __post_init__(self):
        if self.frames <= 0:
            raise ValueError("frames must be positive")
        if list(self.epsilons) != sorted(self.epsilons):
            raise ValueError("epsilon grid must be ascending")

    def key(self):
        s = self.spec
        doc = {
            "v": CACHE_VERSION, "dv": s.dv, "dc": s.dc, "L": s.L, "N": s.N,
            "termination": termination_label(s.termination),
            "epsilons": [round(float(e), 12) for e in self.epsilons],
            "decoder": self.decoder.label, "budgets": [int(b) for b in self.decoder.budgets],
            "window": _window_doc(self.decoder), "frames": self.frames,
            "max_frame_errors": self.max_frame_errors, "seed": self.seed, "fixed_graph": self.fixed_graph,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _window_doc(dec):
    if isinstance(dec, SlidingWindow):
        return {"W": dec.cfg.W, "I_in": dec.cfg.I_in, "I_s": dec.cfg.I_s}
    return None


@dataclass
class FerPoint:
    epsilon: float
    budget: int
    frames: int
    errors: int
    fer: float
    ci_low: float
    ci_high: float


@dataclass
class SimResult:
    config_key: str
    points: list = field(default_factory=list)
    outcomes: np.ndarray | None = None  # (frames_run, n_eps, n_budgets) int8, -1 = not run

    def point(self, epsilon, budget=UNLIMITED):
        for p in self.points:
            if abs(p.epsilon - epsilon) < 1e-12 and p.budget == budget:
                return p
        raise KeyError((epsilon, budget))


def wilson(errors, frames, level=0.95):
    if frames == 0:
        return 0.0, 1.0
    ci = binomtest(errors, frames).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def _frame_outcomes(spec, decoder, eps, active, seed, fixed_graph, f, graph=None):
    g = graph if graph is not None else sample_graph(spec, seed, rngmod.stream(seed, rngmod.GRAPH, 0 if fixed_graph else f))
    u = rngmod.stream(seed, rngmod.CHANNEL, f).random(g.vn_count)
    budgets = decoder.budgets
    out = np.full((len(eps), len(budgets)), -1, dtype=np.int8)
    full_mask = bool(g.eval_mask.all())
    for i, e in enumerate(eps):
        if not active[i].any():
            continue
        erased = erasures_from_uniforms(u, e)
        if isinstance(decoder, SlidingWindow):
            out[i, 0] = frame_error(bp_sliding_window(g, erased, decoder.cfg), g)
            continue
        if full_mask:
            # one unlimited run answers every budget: BP is monotone in iterations
            tr = bp_full(g, erased)
            err = frame_error(tr, g)
            for k, b in enumerate(budgets):
                if active[i, k]:
                    out[i, k] = err or (b != UNLIMITED and tr.stop_iteration > b)
        else:
            for k, b in enumerate(budgets):
                if active[i, k]:
                    out[i, k] = frame_error(bp_full(g, erased, b), g)
    return out


def _block(args):
    spec, decoder, eps, active, seed, fixed_graph, frames = args
    graph = None
    if fixed_graph:
        graph = sample_graph(spec, seed, rngmod.stream(seed, rngmod.GRAPH, 0))
    return np.stack([_frame_outcomes(spec, decoder, eps, active, seed, fixed_graph, f, graph) for f in frames])


def simulate(cfg, cache_dir=None):
    """Estimate FER at every (epsilon, budget) with early stopping and Wilson intervals."""
    key = cfg.key()
    if cache_dir is not None:
        path = Path(cache_dir) / f"sim_{key}.json"
        if path.exists():
            log.info("simulation cache hit %s", path)
            return _load(path)
    eps = np.asarray(cfg.epsilons, dtype=float)
    nb = len(cfg.decoder.budgets)
    errors = np.zeros((len(eps), nb), dtype=np.int64)
    stop_at = np.full((len(eps), nb), cfg.frames, dtype=np.int64)
    active = np.ones((len(eps), nb), dtype=bool)
    chunks = []
    done = 0
    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        while done < cfg.frames and active.any():
            span = min(cfg.block * max(1, cfg.workers), cfg.frames - done)
            ids = np.arange(done, done + span)
            parts = np.array_split(ids, max(1, cfg.workers))
            jobs = [(cfg.spec, cfg.decoder, eps, active.copy(), cfg.seed, cfg.fixed_graph, p.tolist()) for p in parts if len(p)]
            res = list(pool.map(_block, jobs)) if pool else [_block(j) for j in jobs]
            block = np.concatenate(res)
            for i in range(len(eps)):
                for k in range(nb):
                    if not active[i, k]:
                        block[:, i, k] = -1
                        continue
                    col = block[:, i, k].astype(np.int64)
                    cum = errors[i, k] + np.cumsum(col)
                    if cfg.max_frame_errors is not None and cum[-1] >= cfg.max_frame_errors:
                        j = int(np.argmax(cum >= cfg.max_frame_errors))
                        block[j + 1 :, i, k] = -1
                        errors[i, k] = cum[j]
                        stop_at[i, k] = done + j + 1
                        active[i, k] = False
                    else:
                        errors[i, k] = cum[-1]
            chunks.append(block)
            done += span
    finally:
        if pool:
            pool.shutdown()
    stop_at = np.minimum(stop_at, done)
    points = []
    for i, e in enumerate(eps):
        for k, b in enumerate(cfg.decoder.budgets):
            n, x = int(stop_at[i, k]), int(errors[i, k])
            lo, hi = wilson(x, n)
            points.append(FerPoint(float(e), int(b), n, x, x / n if n else float("nan"), lo, hi))
    result = SimResult(key, points, np.concatenate(chunks) if chunks else None)
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        _save(result, Path(cache_dir) / f"sim_{key}.json")
    return result


def _save(result, path):
    doc = {"key": result.config_key, "points": [p.__dict__ for p in result.points]}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load(path):
    doc = json.loads(Path(path).read_text())
    return SimResult(doc["key"], [FerPoint(**p) for p in doc["points"]])


def write_csv(result, path, decoder_label):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon", "decoder", "I", "frames", "errors", "fer", "ci_low", "ci_high"])
        for p in result.points:
            w.writerow([
                f"{p.epsilon:.6g}", decoder_label, "" if p.budget == UNLIMITED else p.budget,
                p.frames, p.errors, f"{p.fer:.6g}", f"{p.ci_low:.6g}", f"{p.ci_high:.6g}",
            ])
