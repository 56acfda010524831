"""Grid abstraction of the sampled system and safety synthesis on the finite graph."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
import itertools

import networkx as nx
import numpy as np

from .flow import induced_inf_norm
from .policy import DEFAULT_POLICY

__all__ = [
    "AbstractGraph",
    "BisimCertificate",
    "CertificateError",
    "EmptyGridError",
    "Grid",
    "SafetyResult",
    "SwitchingPattern",
    "build_abstract_graph",
    "certificate",
    "find_patterns",
    "nearest_grid_point",
    "safety_synthesis",
]


class EmptyGridError(ValueError):
    """The safe box contains no lattice point."""


class CertificateError(ArithmeticError):
    """The flow maps do not contract in the infinity norm (beta >= 1)."""

    def __init__(self, beta):
        self.beta = beta
        super().__init__(f"beta_tau = {beta:.6g} >= 1, no precision certificate")


@dataclass(frozen=True)
class Grid:
    """Lattice ``{pitch * k : k integer}`` with ``pitch = pitch_factor * eta``.

    The default factor 2 makes the infinity-norm cells of radius ``eta``
    tile the space without overlap.  Any factor in ``(0, 2]`` keeps every
    state within ``eta`` of its nearest lattice point.
    """

    eta: float
    n: int
    pitch_factor: float = 2.0

    def __post_init__(self):
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ValueError(f"eta must be positive, got {self.eta!r}")
        if not 0 < self.pitch_factor <= 2:
            raise ValueError("pitch_factor must lie in (0, 2]")
        if self.n < 1:
            raise ValueError("dimension must be positive")

    @property
    def pitch(self):
        return self.pitch_factor * self.eta

    def state(self, k):
        return np.asarray(k, dtype=float) * self.pitch

    def index_range(self, box, snap=DEFAULT_POLICY.lattice_snap):
        """Smallest and largest lattice indices inside the closed box."""
        lo = np.ceil(box.lower / self.pitch - snap).astype(np.int64)
        hi = np.floor(box.upper / self.pitch + snap).astype(np.int64)
        return lo, hi


def nearest_grid_point(x, grid):
    """Index vector of the lattice point nearest to ``x``.

    Exact ties round toward +infinity, coordinate by coordinate.
    """
    x = np.asarray(x, dtype=float)
    return np.floor(x / grid.pitch + 0.5).astype(np.int64)


@dataclass(frozen=True)
class BisimCertificate:
    """Contraction factor and the precision it certifies for ``eta``."""

    beta: float
    eta: float
    epsilon: float

    def __post_init__(self):
        if not self.beta < 1:
            raise ValueError("beta must be below 1")
        if self.beta * self.epsilon + self.eta > self.epsilon + DEFAULT_POLICY.certificate_slack:
            raise ValueError("beta * epsilon + eta exceeds epsilon")


def contraction_factor(sys):
    """Largest infinity norm among the one-period flow matrices."""
    return max(induced_inf_norm(f.E) for f in sys.flows)


def certificate(sys, eta):
    """Certify precision ``epsilon = eta / (1 - beta)``.

    Raises
    ------
    CertificateError
        When ``beta >= 1``; the abstraction can still be built but its
        distance to the concrete system is not bounded.
    """
    beta = contraction_factor(sys)
    if beta >= 1:
        raise CertificateError(beta)
    return BisimCertificate(beta, eta, eta / (1 - beta))


@dataclass(frozen=True, eq=False)
class AbstractGraph:
    """Deterministic mode-labelled graph on the lattice points of a box.

    ``succ[p - 1, i]`` is the node reached from node ``i`` under mode ``p``
    or ``-1`` when that lattice point lies outside the box.
    """

    grid: Grid
    box: object
    k_lo: np.ndarray
    shape: tuple
    succ: np.ndarray

    @property
    def num_nodes(self):
        return int(np.prod(self.shape))

    @property
    def num_modes(self):
        return self.succ.shape[0]

    @cached_property
    def nodes(self):
        """Lattice index vectors of all nodes, row ``i`` for node ``i``."""
        idx = np.indices(self.shape).reshape(len(self.shape), -1).T
        out = idx + self.k_lo
        out.setflags(write=False)
        return out

    def node_index(self, k):
        off = np.asarray(k, dtype=np.int64) - self.k_lo
        if np.any(off < 0) or np.any(off >= self.shape):
            raise KeyError(tuple(int(v) for v in k))
        return int(np.ravel_multi_index(off, self.shape))

    def node_key(self, i):
        return tuple(int(v) for v in self.nodes[i])

    def states(self):
        return self.grid.state(self.nodes)

    def exits(self, i, mode_id):
        return bool(self.succ[mode_id - 1, i] < 0)

    def edges(self):
        """Yield ``(source, mode, target)`` node indices for in-box successors."""
        for p in range(self.num_modes):
            for i in np.nonzero(self.succ[p] >= 0)[0]:
                yield int(i), p + 1, int(self.succ[p, i])

    def to_text(self):
        """Edge list: ``<k> <mode> <k'|EXIT>`` with comma-joined index vectors."""
        out = []
        for i in range(self.num_nodes):
            src = ",".join(str(v) for v in self.nodes[i])
            for p in range(self.num_modes):
                j = self.succ[p, i]
                dst = "EXIT" if j < 0 else ",".join(str(v) for v in self.nodes[j])
                out.append(f"{src} {p + 1} {dst}")
        return "\n".join(out) + "\n"

    def to_dot(self, winning=None):
        out = ["digraph abstraction {"]
        for i in range(self.num_nodes):
            style = "" if winning is None or winning[i] else ' style="dashed"'
            out.append(f'  n{i} [label="{",".join(str(v) for v in self.nodes[i])}"{style}];')
        for i, p, j in self.edges():
            out.append(f'  n{i} -> n{j} [label="{p}"];')
        out.append("}")
        return "\n".join(out) + "\n"


def _successors(flow, states, grid, k_lo, shape):
    k = nearest_grid_point(flow.post(states), grid)
    off = k - k_lo
    inside = np.all((off >= 0) & (off < np.asarray(shape)), axis=1)
    out = np.full(len(states), -1, dtype=np.int64)
    if inside.any():
        out[inside] = np.ravel_multi_index(off[inside].T, shape)
    return out


def build_abstract_graph(sys, box, grid, threads=None):
    """Abstract each lattice point of ``box`` by the lattice point nearest its image.

    Successors are computed per mode, concurrently when ``threads > 1``;
    results are merged in mode order so the graph does not depend on
    scheduling.
    """
    if box.n != sys.n or grid.n != sys.n:
        raise ValueError("dimension mismatch between system, box and grid")
    k_lo, k_hi = grid.index_range(box)
    if np.any(k_hi < k_lo):
        raise EmptyGridError(
            f"no lattice point of pitch {grid.pitch:g} lies in {box!r}")
    shape = tuple(int(v) for v in k_hi - k_lo + 1)
    idx = np.indices(shape).reshape(len(shape), -1).T + k_lo
    states = grid.state(idx)
    work = [(f, states, grid, k_lo, shape) for f in sys.flows]
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda a: _successors(*a), work))
    else:
        rows = [_successors(*a) for a in work]
    succ = np.vstack(rows)
    succ.setflags(write=False)
    k_lo.setflags(write=False)
    return AbstractGraph(grid, box, k_lo, shape, succ)


@dataclass(frozen=True, eq=False)
class SafetyResult:
    """Winning nodes and, for each of them, the modes that stay winning."""

    graph: AbstractGraph
    winning: np.ndarray
    safe_modes: np.ndarray  # bool, shape (m, N)
    iterations: int

    @property
    def size(self):
        return int(self.winning.sum())

    def mode_map(self):
        return {self.graph.node_key(i): tuple(int(p) + 1 for p in np.nonzero(self.safe_modes[:, i])[0])
                for i in np.nonzero(self.winning)[0]}

    def winning_keys(self):
        return [self.graph.node_key(i) for i in np.nonzero(self.winning)[0]]


def safety_synthesis(graph):
    """Greatest set of nodes from which some mode always stays in the set."""
    succ = graph.succ
    win = np.ones(graph.num_nodes, dtype=bool)
    iterations = 0
    while True:
        iterations += 1
        ok = (succ >= 0) & win[np.maximum(succ, 0)]
        new = win & ok.any(axis=0)
        if np.array_equal(new, win):
            break
        win = new
    safe = ((succ >= 0) & win[np.maximum(succ, 0)]) & win
    win.setflags(write=False)
    safe.setflags(write=False)
    return SafetyResult(graph, win, safe, iterations)


@dataclass(frozen=True)
class SwitchingPattern:
    """Mode sequence applied periodically, one mode per sampling step."""

    modes: tuple

    def __post_init__(self):
        modes = tuple(int(p) for p in self.modes)
        if not modes or min(modes) < 1:
            raise ValueError("a pattern is a non-empty sequence of mode ids")
        object.__setattr__(self, "modes", modes)

    @classmethod
    def parse(cls, text):
        text = text.strip()
        toks = text.replace(",", " ").replace(".", " ").split()
        if len(toks) == 1 and len(toks[0]) > 1:
            toks = list(toks[0])
        try:
            return cls(tuple(int(t) for t in toks))
        except ValueError:
            raise ValueError(f"bad pattern {text!r}") from None

    def __len__(self):
        return len(self.modes)

    def __getitem__(self, k):
        return self.modes[k % len(self.modes)]

    def canonical(self):
        """Lexicographically smallest rotation."""
        m = self.modes
        return SwitchingPattern(min(m[i:] + m[:i] for i in range(len(m))))

    def is_rotation_of(self, other):
        return len(self) == len(other) and self.canonical() == other.canonical()

    def __str__(self):
        sep = "" if max(self.modes) < 10 else " "
        return sep.join(str(p) for p in self.modes)


def find_patterns(result, max_len=12):
    """Periodic mode sequences read off elementary cycles of the winning subgraph.

    Every edge ``i --p--> j`` with ``p`` a safe mode of ``i`` is kept.  Each
    elementary cycle of length at most ``max_len`` contributes the label
    sequences of its edges (several when parallel edges carry different
    modes).  Rotations are merged, and the result is sorted by length and
    then lexicographically.
    """
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    graph = result.graph
    labels = {}
    for p in range(graph.num_modes):
        for i in np.nonzero(result.safe_modes[p])[0]:
            j = int(graph.succ[p, i])
            labels.setdefault((int(i), j), []).append(p + 1)
    dg = nx.DiGraph()
    dg.add_edges_from(labels)
    found = set()
    for cycle in nx.simple_cycles(dg, length_bound=max_len):
        hops = [labels[(cycle[t], cycle[(t + 1) % len(cycle)])] for t in range(len(cycle))]
        for seq in itertools.product(*hops):
            found.add(SwitchingPattern(seq).canonical().modes)
    return [SwitchingPattern(s) for s in sorted(found, key=lambda s: (len(s), s))]


def patterns_to_text(patterns):
    return "".join(" ".join(str(p) for p in pat.modes) + "\n" for pat in patterns)
