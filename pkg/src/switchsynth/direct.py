"""Controllable subspace synthesis on griddy sets.

A griddy set is a finite union of closed cells of a regular grid laid over
the safe box ``V``.  :func:`algorithm1` repeatedly removes from each mode's
control set the cells whose one-period image may leave ``V`` or hit the
uncontrollable set, until the uncontrollable set stops growing.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import itertools
import logging

import numpy as np
from scipy import ndimage

from .model import Box
from .policy import DEFAULT_POLICY

__all__ = [
    "CellGrid",
    "ControllableSubspace",
    "GriddySet",
    "GridMismatchError",
    "InvarianceReport",
    "NoSafeMode",
    "SubspaceFormatError",
    "algorithm1",
    "cell_image_box",
    "exit_cells",
    "griddy_from_box",
    "online_select_mode",
    "pre_over",
    "render_svg",
    "verify_invariance",
]

log = logging.getLogger(__name__)

SPARSE_THRESHOLD = 2 ** 28


class GridMismatchError(ValueError):
    """Set operation between griddy sets on different grids."""


class NoSafeMode(RuntimeError):
    """No mode keeps the state inside the controllable subspace."""

    def __init__(self, x, step=None):
        self.x = np.asarray(x, dtype=float)
        self.step = step
        where = "" if step is None else f" at step {step}"
        super().__init__(f"no safe mode for state {self.x.tolist()}{where}")


class SubspaceFormatError(ValueError):
    """A subspace file is malformed."""


class CellGrid:
    """Regular grid of ``counts[d]`` cells of width ``delta[d]`` covering ``box``.

    The requested cell size is snapped so that every edge of the box is an
    exact multiple of it.  By default each edge is cut into 200 cells.
    """

    def __init__(self, box, delta=None, resolution=200, sparse_threshold=SPARSE_THRESHOLD):
        self.box = box
        widths = box.widths
        if delta is None:
            counts = np.full(box.n, int(resolution))
        else:
            req = np.broadcast_to(np.asarray(delta, dtype=float), (box.n,))
            if np.any(req <= 0) or not np.all(np.isfinite(req)):
                raise ValueError("cell size must be positive")
            counts = np.maximum(1, np.rint(widths / req)).astype(np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.counts.setflags(write=False)
        self.delta = widths / self.counts
        self.delta.setflags(write=False)
        self.shape = tuple(int(c) for c in self.counts)
        self.size = int(np.prod(self.counts))
        self.dense = self.size <= sparse_threshold

    @property
    def n(self):
        return self.box.n

    @property
    def lower(self):
        return self.box.lower

    def __eq__(self, other):
        return (isinstance(other, CellGrid) and self.box == other.box
                and self.shape == other.shape)

    def __hash__(self):
        return hash((self.box, self.shape))

    def __repr__(self):
        return f"CellGrid({self.box!r}, counts={list(self.shape)})"

    def unravel(self, flat):
        return np.stack(np.unravel_index(np.asarray(flat, dtype=np.int64), self.shape), axis=-1)

    def ravel(self, cells):
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, self.n)
        return np.ravel_multi_index(cells.T, self.shape)

    def cell_lower(self, cells):
        return self.lower + np.asarray(cells, dtype=float) * self.delta

    def cell_center(self, cells):
        return self.lower + (np.asarray(cells, dtype=float) + 0.5) * self.delta

    def cell_box(self, cell):
        lo = self.cell_lower(cell)
        return Box(lo, lo + self.delta)

    def touching_range(self, lo, hi):
        """Cell index ranges meeting the closed boxes ``[lo, hi]`` (clipped).

        A range with ``first > last`` in some coordinate is empty.
        """
        a = (np.asarray(lo) - self.lower) / self.delta
        b = (np.asarray(hi) - self.lower) / self.delta
        first = np.maximum(np.ceil(a).astype(np.int64) - 1, 0)
        last = np.minimum(np.floor(b).astype(np.int64), self.counts - 1)
        return first, last

    def cells_of_points(self, x, snap=DEFAULT_POLICY.lattice_snap):
        """Every cell whose closed extent contains each point.

        Returns a list (one entry per point) of flat index arrays.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u = (x - self.lower) / self.delta
        base = np.floor(u + snap).astype(np.int64)
        on_face = np.abs(u - np.rint(u)) <= snap
        out = []
        for row_u, row_base, row_face in zip(u, base, on_face):
            choices = []
            for d in range(self.n):
                opts = {int(row_base[d])}
                if row_face[d]:
                    opts.add(int(row_base[d]) - 1)
                opts = [k for k in opts if 0 <= k < self.counts[d]]
                choices.append(sorted(opts))
            if any(not c for c in choices):
                out.append(np.empty(0, dtype=np.int64))
            else:
                out.append(self.ravel(list(itertools.product(*choices))))
        return out


class GriddySet:
    """Set of cells of a :class:`CellGrid`; immutable.

    Dense grids store a flat boolean mask, grids above the sparse threshold
    a sorted array of flat cell indices.  Both expose the same operations.
    """

    __slots__ = ("grid", "_data")

    def __init__(self, grid, data):
        self.grid = grid
        if grid.dense:
            data = np.asarray(data, dtype=bool).reshape(-1)
            if data.size != grid.size:
                raise ValueError("mask size does not match the grid")
        else:
            data = np.unique(np.asarray(data, dtype=np.int64))
        data.setflags(write=False)
        self._data = data

    @classmethod
    def empty(cls, grid):
        if grid.dense:
            return cls(grid, np.zeros(grid.size, dtype=bool))
        return cls(grid, np.empty(0, dtype=np.int64))

    @classmethod
    def full(cls, grid):
        if grid.dense:
            return cls(grid, np.ones(grid.size, dtype=bool))
        return cls(grid, np.arange(grid.size, dtype=np.int64))

    @classmethod
    def from_flat(cls, grid, flat):
        flat = np.asarray(flat, dtype=np.int64).reshape(-1)
        if flat.size and (flat.min() < 0 or flat.max() >= grid.size):
            raise ValueError("cell index outside the grid")
        if grid.dense:
            mask = np.zeros(grid.size, dtype=bool)
            mask[flat] = True
            return cls(grid, mask)
        return cls(grid, flat)

    @classmethod
    def from_cells(cls, grid, cells):
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, grid.n)
        if np.any(cells < 0) or np.any(cells >= grid.counts):
            raise ValueError("cell outside the grid")
        return cls.from_flat(grid, grid.ravel(cells))

    def flat_indices(self):
        if self.grid.dense:
            return np.flatnonzero(self._data)
        return self._data

    def mask(self):
        """Dense boolean mask shaped like the grid."""
        if self.grid.dense:
            return self._data.reshape(self.grid.shape)
        mask = np.zeros(self.grid.size, dtype=bool)
        mask[self._data] = True
        return mask.reshape(self.grid.shape)

    def cells(self):
        return self.grid.unravel(self.flat_indices())

    def __len__(self):
        if self.grid.dense:
            return int(np.count_nonzero(self._data))
        return int(self._data.size)

    def is_empty(self):
        return len(self) == 0

    def _check(self, other):
        if self.grid != other.grid:
            raise GridMismatchError(f"{self.grid!r} vs {other.grid!r}")

    def union(self, other):
        self._check(other)
        if self.grid.dense:
            return GriddySet(self.grid, self._data | other._data)
        return GriddySet(self.grid, np.union1d(self._data, other._data))

    def difference(self, other):
        self._check(other)
        if self.grid.dense:
            return GriddySet(self.grid, self._data & ~other._data)
        return GriddySet(self.grid, np.setdiff1d(self._data, other._data, assume_unique=True))

    def intersection(self, other):
        self._check(other)
        if self.grid.dense:
            return GriddySet(self.grid, self._data & other._data)
        return GriddySet(self.grid, np.intersect1d(self._data, other._data, assume_unique=True))

    def complement(self):
        return GriddySet.full(self.grid).difference(self)

    def issubset(self, other):
        return self.difference(other).is_empty()

    def equals(self, other):
        self._check(other)
        return np.array_equal(self._data, other._data)

    def __eq__(self, other):
        return isinstance(other, GriddySet) and self.grid == other.grid and self.equals(other)

    __hash__ = None
    __or__ = union
    __sub__ = difference
    __and__ = intersection

    def contains_flat(self, flat):
        flat = np.asarray(flat, dtype=np.int64)
        if self.grid.dense:
            return self._data[flat]
        if self._data.size == 0:
            return np.zeros(flat.shape, dtype=bool)
        pos = np.minimum(np.searchsorted(self._data, flat), self._data.size - 1)
        return self._data[pos] == flat

    def contains_cell(self, cell):
        k = np.asarray(cell, dtype=np.int64)
        if np.any(k < 0) or np.any(k >= self.grid.counts):
            return False
        return bool(self.contains_flat(self.grid.ravel(k))[0])

    def contains_point(self, x):
        """Membership of ``x`` in the union of the closed cells."""
        g = self.grid
        u = ((np.asarray(x, dtype=float) - g.lower) / g.delta).tolist()
        snap = DEFAULT_POLICY.lattice_snap
        flat = 0
        for ud, count in zip(u, g.shape):
            if not -snap <= ud <= count + snap:
                return False
            if abs(ud - round(ud)) <= snap:
                # on a cell face: any of the touching cells will do
                hits = g.cells_of_points(x)[0]
                return bool(hits.size and self.contains_flat(hits).any())
            flat = flat * count + int(ud)
        return bool(self.contains_flat(flat))

    def contains_points(self, xs):
        """Vectorised closed membership for a stack of points."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        g = self.grid
        u = (xs - g.lower) / g.delta
        snap = DEFAULT_POLICY.lattice_snap
        inside = np.all((u >= -snap) & (u <= g.counts + snap), axis=1)
        result = np.zeros(len(xs), dtype=bool)
        if not inside.any():
            return result
        base = np.clip(np.floor(u[inside] + snap).astype(np.int64), 0, g.counts - 1)
        flat = np.ravel_multi_index(base.T, g.shape)
        found = self.contains_flat(flat)
        res_in = found.copy()
        face = np.abs(u[inside] - np.rint(u[inside])) <= snap
        todo = np.nonzero(~found & face.any(axis=1))[0]
        for t in todo:
            hits = g.cells_of_points(xs[np.nonzero(inside)[0][t]])[0]
            res_in[t] = bool(hits.size and self.contains_flat(hits).any())
        result[inside] = res_in
        return result

    def bounding_box(self):
        if self.is_empty():
            return None
        c = self.cells()
        return Box(self.grid.cell_lower(c.min(axis=0)),
                   self.grid.cell_lower(c.max(axis=0) + 1))

    def __repr__(self):
        return f"GriddySet({len(self)} of {self.grid.size} cells)"


def _snap_index(u, snap=DEFAULT_POLICY.lattice_snap):
    r = np.rint(u)
    return np.where(np.abs(u - r) <= snap, r, u)


def griddy_from_box(b, grid):
    """Cells meeting the closed box ``b`` in a set of full dimension.

    Along a coordinate where ``b`` is degenerate (a point or a face) the
    cells touching it are taken, so a lone point at a grid corner yields
    its ``2**n`` incident cells.
    """
    lo = np.asarray(b.lower if isinstance(b, Box) else b[0], dtype=float)
    hi = np.asarray(b.upper if isinstance(b, Box) else b[1], dtype=float)
    tol = DEFAULT_POLICY.lattice_snap * np.max(np.abs(grid.box.widths))
    if np.any(lo < grid.box.lower - tol) or np.any(hi > grid.box.upper + tol) or np.any(lo > hi):
        raise ValueError("box is not contained in the grid's safe box")
    a = _snap_index((lo - grid.lower) / grid.delta)
    c = _snap_index((hi - grid.lower) / grid.delta)
    ranges = []
    for d in range(grid.n):
        if c[d] > a[d]:
            first, last = int(np.floor(a[d])), int(np.ceil(c[d])) - 1
        else:
            first, last = int(np.ceil(a[d])) - 1, int(np.floor(a[d]))
        first, last = max(first, 0), min(last, int(grid.counts[d]) - 1)
        ranges.append(range(first, last + 1))
    cells = list(itertools.product(*ranges))
    if not cells:
        return GriddySet.empty(grid)
    return GriddySet.from_cells(grid, cells)


def _image_bounds(f, grid, flat, pad=DEFAULT_POLICY.image_pad):
    centers = grid.cell_center(grid.unravel(flat))
    cc = centers @ f.E.T + f.c
    hw = np.abs(f.E) @ (grid.delta / 2) + pad * (1.0 + np.abs(cc))
    return cc - hw, cc + hw


def cell_image_box(f, grid, cell):
    """Axis-aligned bounding box of the image of one cell under ``f``."""
    lo, hi = _image_bounds(f, grid, grid.ravel(cell), pad=0.0)
    return Box(lo[0], hi[0])


def exit_cells(f, grid, candidates=None):
    """Cells (among ``candidates``) whose image box is not inside the safe box."""
    flat = (GriddySet.full(grid) if candidates is None else candidates).flat_indices()
    lo, hi = _image_bounds(f, grid, flat, pad=0.0)
    tol = DEFAULT_POLICY.image_pad * (1.0 + np.abs(grid.box.upper) + np.abs(grid.box.lower))
    out = np.any((lo < grid.box.lower - tol) | (hi > grid.box.upper + tol), axis=1)
    return GriddySet.from_flat(grid, flat[out])


def _prefix_sums(mask):
    P = np.zeros(tuple(s + 1 for s in mask.shape), dtype=np.int64 if mask.size >= 2 ** 31 else np.int32)
    inner = mask.astype(P.dtype)
    for ax in range(mask.ndim):
        inner = np.cumsum(inner, axis=ax, dtype=P.dtype)
    P[(slice(1, None),) * mask.ndim] = inner
    return P


def _range_counts(P, first, last):
    """Number of set cells in each index box ``[first, last]`` via inclusion-exclusion."""
    n = first.shape[1]
    total = np.zeros(first.shape[0], dtype=np.int64)
    for corner in itertools.product((0, 1), repeat=n):
        idx = tuple(last[:, d] + 1 if corner[d] else first[:, d] for d in range(n))
        sign = -1 if (n - sum(corner)) % 2 else 1
        total += sign * P[idx]
    return total


def pre_over(f, S, candidates=None):
    """Over-approximate the cells whose image under ``f`` meets ``S``.

    A cell is returned when the bounding box of its image touches a closed
    cell of ``S``, so every cell holding some ``x`` with ``f(x)`` in ``S``
    is included.
    """
    grid = S.grid
    cand = GriddySet.full(grid) if candidates is None else candidates
    if S.is_empty() or cand.is_empty():
        return GriddySet.empty(grid)
    flat = cand.flat_indices()
    hits = np.zeros(flat.size, dtype=bool)
    chunk = 1 << 20
    P = _prefix_sums(S.mask()) if grid.dense else None
    for start in range(0, flat.size, chunk):
        part = flat[start:start + chunk]
        lo, hi = _image_bounds(f, grid, part)
        first, last = grid.touching_range(lo, hi)
        ok = np.all(first <= last, axis=1)
        if not ok.any():
            continue
        sub = np.nonzero(ok)[0]
        if P is not None:
            hits[start + sub] = _range_counts(P, first[sub], last[sub]) > 0
        else:
            hits[start + sub] = _sparse_range_hits(S, first[sub], last[sub])
    return GriddySet.from_flat(grid, flat[hits])


def _sparse_range_hits(S, first, last):
    grid = S.grid
    out = np.zeros(first.shape[0], dtype=bool)
    span = (last - first).max(axis=0) + 1
    for off in itertools.product(*(range(int(s)) for s in span)):
        k = first + np.asarray(off)
        valid = np.all(k <= last, axis=1) & ~out
        if valid.any():
            idx = np.nonzero(valid)[0]
            out[idx] = S.contains_flat(grid.ravel(k[idx]))
    return out


def pre_center(f, S, candidates=None):
    """Cells whose centre is mapped into a cell of ``S``.

    A point-sampled stand-in for :func:`pre_over`; it can miss cells that
    only partly reach ``S`` and carries no soundness guarantee.
    """
    grid = S.grid
    cand = GriddySet.full(grid) if candidates is None else candidates
    if S.is_empty() or cand.is_empty():
        return GriddySet.empty(grid)
    flat = cand.flat_indices()
    y = grid.cell_center(grid.unravel(flat)) @ f.E.T + f.c
    u = (y - grid.lower) / grid.delta
    inside = np.all((u >= 0) & (u <= grid.counts), axis=1)
    k = np.clip(np.floor(u).astype(np.int64), 0, grid.counts - 1)
    hits = np.zeros(flat.size, dtype=bool)
    hits[inside] = S.contains_flat(grid.ravel(k[inside]))
    return GriddySet.from_flat(grid, flat[hits])


def _exit_center(f, grid, candidates):
    flat = candidates.flat_indices()
    y = grid.cell_center(grid.unravel(flat)) @ f.E.T + f.c
    out = ~grid.box.contains(y)
    return GriddySet.from_flat(grid, flat[out])


@dataclass(frozen=True, eq=False)
class Zone:
    """Connected component of the uncontrollable set."""

    cells: int
    bbox: Box


@dataclass(frozen=True, eq=False)
class ControllableSubspace:
    """Per-mode control sets and their union ``v_prime``."""

    grid: CellGrid
    control: tuple
    iterations: int = 0
    converged: bool = True
    sound: bool = True
    history: tuple = field(default=(), repr=False)

    @property
    def m(self):
        return len(self.control)

    @property
    def v_prime(self):
        out = GriddySet.empty(self.grid)
        for c in self.control:
            out = out.union(c)
        return out

    @property
    def uncontrol(self):
        return self.v_prime.complement()

    def zones(self):
        """Connected uncontrollable regions (cells sharing a corner are connected)."""
        mask = self.uncontrol.mask()
        structure = ndimage.generate_binary_structure(self.grid.n, self.grid.n)
        labels, count = ndimage.label(mask, structure=structure)
        zones = []
        for sl, lab in zip(ndimage.find_objects(labels), range(1, count + 1)):
            lo = np.array([s.start for s in sl])
            hi = np.array([s.stop for s in sl])
            size = int(np.count_nonzero(labels[sl] == lab))
            zones.append(Zone(size, Box(self.grid.cell_lower(lo), self.grid.cell_lower(hi))))
        zones.sort(key=lambda z: tuple(z.bbox.lower))
        return zones

    def with_control(self, control):
        return ControllableSubspace(self.grid, tuple(control), self.iterations,
                                    self.converged, self.sound, self.history)

    def to_text(self):
        """Header plus run-length encoded flat cell indices per mode."""
        g = self.grid
        out = [
            "subspace v1",
            f"dimension {g.n}",
            "lower " + " ".join(repr(float(v)) for v in g.box.lower),
            "upper " + " ".join(repr(float(v)) for v in g.box.upper),
            "counts " + " ".join(str(c) for c in g.shape),
            f"modes {self.m}",
            f"iterations {self.iterations}",
            f"converged {int(self.converged)}",
            f"sound {int(self.sound)}",
        ]
        for i, ctrl in enumerate(self.control, start=1):
            out.append(f"mode {i}")
            runs = _runs(ctrl.flat_indices())
            for j in range(0, len(runs), 12):
                out.append(" ".join(f"{s}+{l}" for s, l in runs[j:j + 12]))
        out.append("end")
        return "\n".join(out) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != "subspace v1":
            raise SubspaceFormatError("missing 'subspace v1' header")
        head = {}
        pos = 1
        try:
            while pos < len(lines) and not lines[pos].startswith("mode "):
                key, *vals = lines[pos].split()
                head[key] = vals
                pos += 1
            n = int(head["dimension"][0])
            box = Box([float(v) for v in head["lower"]], [float(v) for v in head["upper"]])
            counts = [int(v) for v in head["counts"]]
            m = int(head["modes"][0])
            if box.n != n or len(counts) != n or min(counts) < 1 or m < 1:
                raise SubspaceFormatError("inconsistent header")
            grid = CellGrid(box, box.widths / np.asarray(counts))
            if list(grid.shape) != counts:
                raise SubspaceFormatError("cell counts do not round-trip")
            control = []
            for i in range(1, m + 1):
                if pos >= len(lines) or lines[pos] != f"mode {i}":
                    raise SubspaceFormatError(f"expected 'mode {i}'")
                pos += 1
                flat = []
                while pos < len(lines) and not lines[pos].startswith("mode ") and lines[pos] != "end":
                    for tok in lines[pos].split():
                        s, _, ln = tok.partition("+")
                        s, ln = int(s), int(ln)
                        if ln < 1:
                            raise SubspaceFormatError(f"bad run {tok!r}")
                        flat.extend(range(s, s + ln))
                    pos += 1
                control.append(GriddySet.from_flat(grid, flat))
            if pos >= len(lines) or lines[pos] != "end":
                raise SubspaceFormatError("missing 'end'")
            return cls(grid, tuple(control),
                       int(head.get("iterations", ["0"])[0]),
                       bool(int(head.get("converged", ["1"])[0])),
                       bool(int(head.get("sound", ["1"])[0])))
        except SubspaceFormatError:
            raise
        except (KeyError, IndexError, ValueError) as exc:
            raise SubspaceFormatError(f"malformed subspace file: {exc}") from None


def _runs(flat):
    flat = np.asarray(flat, dtype=np.int64)
    if flat.size == 0:
        return []
    breaks = np.nonzero(np.diff(flat) != 1)[0] + 1
    starts = np.concatenate(([0], breaks))
    ends = np.concatenate((breaks, [flat.size]))
    return [(int(flat[s]), int(e - s)) for s, e in zip(starts, ends)]


def algorithm1(sys, box, delta=None, resolution=200, pre="over", threads=None,
               max_iterations=None, grid=None):
    """Controllable subspace of ``box`` for ``sys``.

    Every control set starts as the whole box.  The first pass drops, for
    each mode, the cells whose image may leave the box; later passes drop
    the cells whose image may reach the newly uncontrollable cells.  The
    loop ends when the uncontrollable set is unchanged, which happens after
    at most ``grid.size + 1`` passes.

    Parameters
    ----------
    pre : {"over", "center"}
        ``"over"`` uses the sound :func:`pre_over`; ``"center"`` maps cell
        centres only and is kept for comparison with point-based tools.
    """
    if pre not in ("over", "center"):
        raise ValueError(f"unknown pre-image strategy {pre!r}")
    if grid is None:
        grid = CellGrid(box, delta, resolution)
    if grid.n != sys.n:
        raise ValueError("grid and system dimensions differ")
    limit = grid.size + 1 if max_iterations is None else max_iterations
    pre_fn = pre_over if pre == "over" else pre_center
    exit_fn = exit_cells if pre == "over" else _exit_center

    control = [GriddySet.full(grid) for _ in sys.flows]
    uncontrol = GriddySet.empty(grid)
    applied = None
    history = [(0, tuple(len(c) for c in control))]
    iterations = 0
    converged = False

    def shrink(args):
        f, ctrl, fresh = args
        if applied is None:
            return ctrl.difference(exit_fn(f, grid, ctrl))
        return ctrl.difference(pre_fn(f, fresh, ctrl))

    pool = ThreadPoolExecutor(max_workers=threads) if threads and threads > 1 else None
    try:
        while iterations < limit:
            iterations += 1
            fresh = uncontrol if applied is None else uncontrol.difference(applied)
            work = [(f, c, fresh) for f, c in zip(sys.flows, control)]
            new_control = list(pool.map(shrink, work)) if pool else [shrink(w) for w in work]
            for old, new in zip(control, new_control):
                if not new.issubset(old):
                    raise AssertionError("a control set grew")
            control = new_control
            applied = uncontrol
            v_prime = GriddySet.empty(grid)
            for c in control:
                v_prime = v_prime.union(c)
            new_uncontrol = v_prime.complement()
            if not uncontrol.issubset(new_uncontrol):
                raise AssertionError("the uncontrollable set shrank")
            history.append((len(new_uncontrol), tuple(len(c) for c in control)))
            log.debug("iteration %d: %d uncontrollable cells", iterations, len(new_uncontrol))
            if new_uncontrol.equals(uncontrol):
                converged = True
                break
            uncontrol = new_uncontrol
    finally:
        if pool:
            pool.shutdown()
    return ControllableSubspace(grid, tuple(control), iterations, converged,
                                pre == "over", tuple(history))


@dataclass
class InvarianceReport:
    """Outcome of :func:`verify_invariance`.

    ``violations`` holds ``(mode, cell, kind)`` triples where ``kind`` is
    ``"exits_V"`` (image box not inside the safe box) or ``"leaves_V'"``
    (a sampled image lands more than one cell away from ``v_prime``).
    ``boundary_grazing`` lists sampled images outside ``v_prime`` but within
    one cell of it.
    """

    violations: list
    boundary_grazing: list
    cells_checked: int
    samples_checked: int
    consistent: bool = True

    @property
    def ok(self):
        return self.consistent and not self.violations

    def summary(self):
        kinds = {}
        for _, _, kind in self.violations:
            kinds[kind] = kinds.get(kind, 0) + 1
        lines = [
            f"cells_checked: {self.cells_checked}",
            f"samples_checked: {self.samples_checked}",
            f"violations: {len(self.violations)}",
        ]
        lines += [f"violations_{k}: {v}" for k, v in sorted(kinds.items())]
        lines.append(f"boundary_grazing: {len(self.boundary_grazing)}")
        lines.append(f"consistent: {int(self.consistent)}")
        return "\n".join(lines) + "\n"


def _sample_offsets(n, samples_per_cell, seed):
    corners = np.array(list(itertools.product((0.0, 1.0), repeat=n)))
    base = np.vstack([np.full((1, n), 0.5), corners])
    if samples_per_cell is None or samples_per_cell == len(base):
        return base
    if samples_per_cell < len(base):
        return base[:max(1, samples_per_cell)]
    rng = np.random.default_rng(seed)
    return np.vstack([base, rng.random((samples_per_cell - len(base), n))])


def verify_invariance(sys, cs, samples_per_cell=None, seed=0, chunk=1 << 18):
    """Check that each mode keeps its control cells inside the safe box and ``v_prime``.

    The image-box test is exact at cell level.  Sampled points (centre and
    corners by default) test membership of their images in ``v_prime``.
    """
    grid = cs.grid
    v_prime = cs.v_prime
    near = GriddySet(grid, ndimage.binary_dilation(
        v_prime.mask(), structure=ndimage.generate_binary_structure(grid.n, grid.n)).reshape(-1)) \
        if grid.dense else v_prime
    offsets = _sample_offsets(grid.n, samples_per_cell, seed)
    violations, grazing = [], []
    exiting = set()
    cells_checked = samples_checked = 0
    consistent = len(cs.control) == sys.m
    for i, (f, ctrl) in enumerate(zip(sys.flows, cs.control), start=1):
        bad = exit_cells(f, grid, ctrl)
        for k in bad.cells():
            cell = tuple(int(v) for v in k)
            exiting.add((i, cell))
            violations.append((i, cell, "exits_V"))
        flat_all = ctrl.flat_indices()
        cells_checked += flat_all.size
        for start in range(0, flat_all.size, chunk):
            flat = flat_all[start:start + chunk]
            lower = grid.cell_lower(grid.unravel(flat))
            pts = (lower[:, None, :] + offsets[None, :, :] * grid.delta).reshape(-1, grid.n)
            imgs = pts @ f.E.T + f.c
            samples_checked += len(imgs)
            inside = v_prime.contains_points(imgs)
            if inside.all():
                continue
            miss = np.nonzero(~inside)[0]
            owners = flat[miss // len(offsets)]
            in_box = grid.box.contains(imgs[miss])
            near_hit = near.contains_points(imgs[miss]) & in_box
            for own, close, img in zip(owners, near_hit, imgs[miss]):
                cell = tuple(int(v) for v in grid.unravel(own))
                if close:
                    grazing.append((i, cell, tuple(float(v) for v in img)))
                elif (i, cell) not in exiting:
                    exiting.add((i, cell))
                    violations.append((i, cell, "leaves_V'"))
    return InvarianceReport(violations, grazing, cells_checked, samples_checked, consistent)


def online_select_mode(x, cs, sys):
    """Smallest mode whose control set holds ``x`` and whose image stays in ``v_prime``."""
    x = np.asarray(x, dtype=float)
    v_prime = cs.v_prime
    for mode_id, (f, ctrl) in enumerate(zip(sys.flows, cs.control), start=1):
        if ctrl.contains_point(x) and v_prime.contains_point(f.post(x)):
            return mode_id
    raise NoSafeMode(x)


class OnlineController:
    """Mode selector with ``v_prime`` precomputed, for long closed-loop runs."""

    def __init__(self, cs, sys):
        self.cs = cs
        self.sys = sys
        self.v_prime = cs.v_prime

    def __call__(self, x, step=None):
        for mode_id, (f, ctrl) in enumerate(zip(self.sys.flows, self.cs.control), start=1):
            if ctrl.contains_point(x) and self.v_prime.contains_point(f.post(x)):
                return mode_id
        raise NoSafeMode(x, step)


_PALETTE = ["#d62728", "#1f77b4", "#2ca02c", "#17becf", "#9467bd", "#8c564b",
            "#e377c2", "#bcbd22", "#ff7f0e", "#7f7f7f"]


def render_svg(cs, size=480):
    """SVG picture of the control sets.

    For two dimensions each cell is coloured by the set of modes that
    control it (red: uncontrollable).  In higher dimensions every pair of
    coordinates gets a projection: green where the whole column is in
    ``v_prime``, orange where part of it is, red where none is.
    """
    g = cs.grid
    if g.n == 1:
        pairs = [(0, 0)]
    elif g.n == 2:
        pairs = [(0, 1)]
    else:
        pairs = list(itertools.combinations(range(g.n), 2))
    cols = min(3, len(pairs))
    rows = -(-len(pairs) // cols)
    pad = 30
    width = cols * (size + pad) + pad
    height = rows * (size + pad) + pad
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>']
    if g.n == 2:
        code = np.zeros(g.shape, dtype=np.int64)
        for i, c in enumerate(cs.control):
            code |= c.mask().astype(np.int64) << i
        out += _raster(code, 0, 1, pad, pad, size, g, lambda v: _PALETTE[v % len(_PALETTE)])
        out.append(_frame(pad, pad, size, g, 0, 1))
    else:
        vp = cs.v_prime.mask()
        for idx, (a, b) in enumerate(pairs):
            ox = pad + (idx % cols) * (size + pad)
            oy = pad + (idx // cols) * (size + pad)
            other = tuple(d for d in range(g.n) if d not in (a, b))
            frac = vp.mean(axis=other) if other else vp.astype(float)
            if g.n == 1:
                frac = frac[:, None]
            code = np.where(frac >= 1.0, 2, np.where(frac > 0.0, 1, 0))
            colors = {0: "#d62728", 1: "#ff7f0e", 2: "#2ca02c"}
            out += _raster(code, a, b, ox, oy, size, g, colors.get)
            out.append(_frame(ox, oy, size, g, a, b))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _raster(code, a, b, ox, oy, size, g, color):
    na, nb = code.shape
    sx, sy = size / na, size / nb
    out = []
    for j in range(nb):
        row = code[:, j]
        start = 0
        for i in range(1, na + 1):
            if i == na or row[i] != row[start]:
                y = oy + size - (j + 1) * sy
                out.append(f'<rect x="{ox + start * sx:.3f}" y="{y:.3f}" '
                           f'width="{(i - start) * sx:.3f}" height="{sy:.3f}" '
                           f'fill="{color(int(row[start]))}" stroke="none"/>')
                start = i
    return out


def _frame(ox, oy, size, g, a, b):
    lo, hi = g.box.lower, g.box.upper
    return (f'<rect x="{ox}" y="{oy}" width="{size}" height="{size}" fill="none" stroke="black"/>'
            f'<text x="{ox}" y="{oy - 6}" font-size="12">x{a + 1} [{lo[a]:g}, {hi[a]:g}] / '
            f'x{b + 1} [{lo[b]:g}, {hi[b]:g}]</text>')
