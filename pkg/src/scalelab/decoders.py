"""BEC channel and the three erasure decoders.

Messages over the BEC carry only known/unknown status, so the all-zero
codeword is implied and only the erasure pattern is tracked.
"""

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import rng as rngmod
from .graph import SpecError, Terminated

UNLIMITED = np.iinfo(np.int64).max


class Mode(enum.Enum):
    PEELING = "peeling"
    FULL_BP = "full_bp"
    SLIDING_WINDOW = "sliding_window"


@dataclass(frozen=True)
class WindowConfig:
    W: int
    I_in: int
    I_s: int

    def __post_init__(self):
        if self.W < 1 or self.I_in < 1 or self.I_s < 1:
            raise SpecError("window size and iteration counts must be positive")

    def budget(self, L):
        """Total BP iterations spent sliding through a chain of length ``L``."""
        return self.I_in + (L - 1) * self.I_s

    @property
    def v_window(self):
        return 1.0 / self.I_s


@dataclass
class DecodingTrace:
    success: bool
    mode: Mode
    residual: np.ndarray  # bool per VN, True = still erased
    initial_erased: int
    tau_pd: np.ndarray = field(default_factory=lambda: np.zeros(0))
    r1: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v_bp_per_iter: np.ndarray = field(default_factory=lambda: np.zeros(0))
    p_left: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    w_left: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    tracked_erased: np.ndarray | None = None  # V_u(tau_pd) at one position
    overtaken: bool = False
    stop_iteration: int = 0

    @property
    def final_erased(self):
        return int(self.residual.sum())

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.mode is Mode.PEELING:
                w.writerow(["tau_pd", "r1"])
                w.writerows(zip(self.tau_pd.tolist(), self.r1.tolist()))
            else:
                w.writerow(["iter", "v_bp", "p_left"])
                for i, (v, p) in enumerate(zip(self.v_bp_per_iter.tolist(), self.p_left.tolist())):
                    w.writerow([i + 1, v, p])


def transmit_bec(graph, epsilon, rng):
    """Erase every bit independently with probability ``epsilon``."""
    if not 0.0 <= epsilon <= 1.0:
        raise SpecError(f"erasure probability {epsilon} outside [0, 1]")
    erased = rng.random(graph.vn_count) < epsilon
    erased.flags.writeable = False
    return erased


def erasures_from_uniforms(uniforms, epsilon):
    """Threshold a fixed uniform draw; coupling several epsilons on one frame."""
    return uniforms < epsilon


def _args(graph):
    return graph.vn_ptr, graph.vn_adj, graph.cn_ptr, graph.cn_adj


def peel(graph, erasures, rng, track_pos=-1):
    erasures = np.asarray(erasures, dtype=np.bool_)
    n = int(erasures.sum())
    uniforms = rng.random(n) if n else np.zeros(1)
    residual, counts, tracked = _kernels.peel(*_args(graph), erasures, uniforms, graph.N, track_pos)
    steps = len(counts) - 1
    return DecodingTrace(
        success=not residual.any(),
        mode=Mode.PEELING,
        residual=residual,
        initial_erased=n,
        tau_pd=np.arange(steps + 1) / graph.N if n else np.zeros(0),
        r1=counts / graph.N if n else np.zeros(0),
        tracked_erased=tracked if track_pos >= 0 and n else None,
        stop_iteration=steps,
    )


def bp_full(graph, erasures, max_iters=UNLIMITED):
    """Flooding BP until fixpoint, full recovery or ``max_iters`` iterations."""
    erasures = np.asarray(erasures, dtype=np.bool_)
    max_iters = UNLIMITED if max_iters is None else int(max_iters)
    residual, rec, pl = _kernels.bp_flood(*_args(graph), erasures, graph.N, max_iters)
    return DecodingTrace(
        success=not residual.any(),
        mode=Mode.FULL_BP,
        residual=residual,
        initial_erased=int(erasures.sum()),
        v_bp_per_iter=rec / graph.N,
        p_left=pl,
        stop_iteration=len(rec),
    )


def bp_sliding_window(graph, erasures, cfg):
    if not isinstance(graph.spec.termination, Terminated):
        raise SpecError("sliding-window decoding is defined on the terminated ensemble")
    if cfg.W > graph.L:
        raise SpecError(f"window W={cfg.W} exceeds chain length L={graph.L}")
    erasures = np.asarray(erasures, dtype=np.bool_)
    residual, rec, pl, wl, overtaken = _kernels.bp_window(
        *_args(graph), erasures, graph.N, graph.M, cfg.W, cfg.I_in, cfg.I_s
    )
    return DecodingTrace(
        success=not residual.any(),
        mode=Mode.SLIDING_WINDOW,
        residual=residual,
        initial_erased=int(erasures.sum()),
        v_bp_per_iter=rec / graph.N,
        p_left=pl,
        w_left=wl,
        overtaken=bool(overtaken),
        stop_iteration=len(rec),
    )


def frame_error(trace, graph):
    """True iff an erased bit survives at a position inside the evaluation mask."""
    if trace.success:
        return False
    pos = np.flatnonzero(trace.residual) // graph.N
    return bool(graph.eval_mask[pos].any())


def decode_frame(graph, epsilon, seed, frame, decoder):
    """Channel draw plus one decoder run with per-frame streams; used by the harness."""
    erased = transmit_bec(graph, epsilon, rngmod.stream(seed, rngmod.CHANNEL, frame))
    if decoder == "peeling":
        return peel(graph, erased, rngmod.stream(seed, rngmod.PEELING, frame))
    if isinstance(decoder, WindowConfig):
        return bp_sliding_window(graph, erased, decoder)
    return bp_full(graph, erased, decoder)
