"""Tanner graphs of the semi-structured (dv, dc, L, N) SC-LDPC ensemble."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from . import rng as rngmod


class SpecError(ValueError):
    """Invalid ensemble, channel or decoder configuration."""


@dataclass(frozen=True)
class Terminated:
    name = "terminated"


@dataclass(frozen=True)
class Truncated:
    name = "truncated"


@dataclass(frozen=True)
class UnterminatedEval:
    """Semi-infinite chain approximated by a truncated chain of ``L_prime + margin``
    positions; only the first ``L_prime`` positions count toward frame errors."""

    L_prime: int
    margin: int = 20
    name = "unterminated"


@dataclass(frozen=True)
class EnsembleSpec:
    dv: int
    dc: int
    L: int
    N: int
    termination: object = field(default_factory=Terminated)

    def __post_init__(self):
        for name in ("dv", "dc", "L", "N"):
            if int(getattr(self, name)) < 1:
                raise SpecError(f"{name} must be a positive integer")
        if self.dv < 2:
            raise SpecError("dv must be at least 2")
        if self.dc <= self.dv:
            raise SpecError(f"dc={self.dc} must exceed dv={self.dv}")
        if (self.N * self.dv) % self.dc:
            raise SpecError(f"M = dv*N/dc is not an integer for N={self.N}")
        t = self.termination
        if isinstance(t, UnterminatedEval):
            if t.L_prime < 1 or t.margin < 0:
                raise SpecError("UnterminatedEval needs L_prime >= 1 and margin >= 0")
            if t.L_prime > self.L:
                raise SpecError("UnterminatedEval L_prime must not exceed L")
        elif not isinstance(t, (Terminated, Truncated)):
            raise SpecError(f"unknown termination {t!r}")

    @property
    def M(self):
        return self.dv * self.N // self.dc

    @property
    def chain_length(self):
        """Number of VN positions actually materialized."""
        t = self.termination
        if isinstance(t, UnterminatedEval):
            return t.L_prime + t.margin
        return self.L

    @property
    def cn_positions(self):
        if isinstance(self.termination, Terminated):
            return self.L + self.dv - 1
        return self.chain_length

    def with_termination(self, termination):
        return EnsembleSpec(self.dv, self.dc, self.L, self.N, termination)


def parse_termination(text):
    """``terminated``, ``truncated`` or ``unterminated:<L_prime>[:<margin>]``."""
    parts = str(text).strip().lower().split(":")
    if parts[0] == "terminated":
        return Terminated()
    if parts[0] == "truncated":
        return Truncated()
    if parts[0] == "unterminated" and len(parts) in (2, 3):
        margin = int(parts[2]) if len(parts) == 3 else 20
        return UnterminatedEval(int(parts[1]), margin)
    raise SpecError(f"cannot parse termination {text!r}")


def termination_label(t):
    if isinstance(t, UnterminatedEval):
        return f"unterminated:{t.L_prime}:{t.margin}"
    return t.name


@dataclass(frozen=True, eq=False)
class TannerGraph:
    """Bipartite graph in compressed-row form from both sides.

    VN ``v`` sits at position ``v // N`` and CN ``c`` at ``c // M``. Arrays are
    read-only so one graph can be shared by concurrent decoder calls.
    """

    spec: EnsembleSpec
    seed: int
    vn_ptr: np.ndarray
    vn_adj: np.ndarray
    cn_ptr: np.ndarray
    cn_adj: np.ndarray
    eval_mask: np.ndarray  # bool per VN position

    @property
    def N(self):
        return self.spec.N

    @property
    def M(self):
        return self.spec.M

    @property
    def L(self):
        return self.spec.chain_length

    @property
    def vn_count(self):
        return len(self.vn_ptr) - 1

    @property
    def cn_count(self):
        return len(self.cn_ptr) - 1

    @property
    def edge_count(self):
        return len(self.vn_adj)

    @property
    def vn_position(self):
        return np.arange(self.vn_count) // self.N

    @property
    def cn_position(self):
        return np.arange(self.cn_count) // self.M

    def vn_degrees(self):
        return np.diff(self.vn_ptr)

    def cn_degrees(self):
        return np.diff(self.cn_ptr)

    def edges(self):
        """(vn, cn) arrays, one entry per edge, VN-major."""
        vn = np.repeat(np.arange(self.vn_count), self.vn_degrees())
        return vn, self.vn_adj.copy()

    def write_edge_list(self, path):
        vn, cn = self.edges()
        s = self.spec
        header = f"{s.dv} {s.dc} {s.L} {s.N} {termination_label(s.termination)} {self.seed}"
        body = "\n".join(f"{a} {b}" for a, b in zip(vn.tolist(), cn.tolist()))
        Path(path).write_text(header + "\n" + body + ("\n" if body else ""))


def _csr(rows, cols, n_rows):
    ptr, adj = _kernels.csr(rows, cols, n_rows)
    adj.flags.writeable = False
    ptr.flags.writeable = False
    return ptr, adj


def sample_graph(spec, seed, rng=None):
    """Draw one graph from the ensemble.

    Every CN position ``j`` owns ``M*dc`` sockets. The edges arriving from VN
    positions ``j-dv+1 .. j`` (one per VN per position) are placed into a
    uniformly random subset of those sockets, which is the permutation block
    of the ensemble. Each VN thus meets one uniformly chosen CN per position.
    Truncated chains simply lack CN positions ``>= L``.
    """
    if rng is None:
        rng = rngmod.stream(seed, rngmod.GRAPH)
    dv, dc, N, M = spec.dv, spec.dc, spec.N, spec.M
    L = spec.chain_length
    n_cpos = spec.cn_positions
    sockets = M * dc

    vn_parts, cn_parts = [], []
    for j in range(n_cpos):
        lo, hi = max(0, j - dv + 1), min(j, L - 1)
        if lo > hi:
            continue
        k = (hi - lo + 1) * N
        slots = rng.permutation(sockets)[:k]
        vn_parts.append(np.arange(lo * N, (hi + 1) * N, dtype=np.int64))
        cn_parts.append(j * M + slots // dc)
    vn = np.concatenate(vn_parts)
    cn = np.concatenate(cn_parts).astype(np.int64)

    vn_ptr, vn_adj = _csr(vn, cn, L * N)
    cn_ptr, cn_adj = _csr(cn, vn, n_cpos * M)

    mask = np.ones(L, dtype=bool)
    if isinstance(spec.termination, UnterminatedEval):
        mask[spec.termination.L_prime:] = False
    mask.flags.writeable = False
    return TannerGraph(spec, int(seed), vn_ptr, vn_adj, cn_ptr, cn_adj, mask)


@dataclass
class GraphAudit:
    vn_degree_hist: dict  # position -> {degree: count}
    cn_degree_hist: dict
    edge_count: int
    mean_cn_degree: float
    locality_ok: bool


def _hist(values):
    d, c = np.unique(values, return_counts=True)
    return {int(a): int(b) for a, b in zip(d, c)}


def audit_graph(graph):
    vdeg, cdeg = graph.vn_degrees(), graph.cn_degrees()
    vpos, cpos = graph.vn_position, graph.cn_position
    vn_hist = {int(p): _hist(vdeg[vpos == p]) for p in range(graph.L)}
    cn_hist = {int(p): _hist(cdeg[cpos == p]) for p in range(graph.spec.cn_positions)}
    vn, cn = graph.edges()
    d = cn // graph.M - vn // graph.N
    locality = bool(np.all((d >= 0) & (d <= graph.spec.dv - 1)))
    mean_cn = graph.edge_count / graph.cn_count if graph.cn_count else 0.0
    return GraphAudit(vn_hist, cn_hist, graph.edge_count, mean_cn, locality)
