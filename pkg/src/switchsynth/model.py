"""Switched affine systems, the boost converter builders and the model file format."""
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
import itertools

import numpy as np

from .flow import affine_flow

__all__ = [
    "Boost1CellParams",
    "Boost3CellParams",
    "Box",
    "LinearMode",
    "ModelFormatError",
    "ModelSpec",
    "SwitchedSystem",
    "build_boost_1cell",
    "ALL_SIGMAS",
    "boost3_mode_table",
    "build_boost_3cell",
    "load_model",
    "mode_to_sigma",
    "parse_model",
    "parse_number",
    "serialize_model",
    "sigma_to_mode",
]


class ModelFormatError(ValueError):
    """A model file violates the schema."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


def parse_number(text):
    """Parse a decimal, scientific or fractional (``1/40``) literal."""
    s = str(text).strip()
    try:
        if "/" in s:
            num, den = s.split("/")
            value = float(Fraction(num.strip()) / Fraction(den.strip()))
        else:
            value = float(s)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"not a number: {text!r}") from exc
    if not np.isfinite(value):
        raise ValueError(f"not a finite number: {text!r}")
    return value


def _frozen_vector(v):
    a = np.array(v, dtype=float).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Box:
    """Closed axis-aligned box ``[lower, upper]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = _frozen_vector(self.lower), _frozen_vector(self.upper)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in dimension")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo >= hi):
            raise ValueError(f"degenerate box: lower {lo} upper {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_intervals(cls, *intervals):
        return cls([a for a, _ in intervals], [b for _, b in intervals])

    @property
    def n(self):
        return self.lower.shape[0]

    @property
    def widths(self):
        return self.upper - self.lower

    @property
    def center(self):
        return (self.lower + self.upper) / 2

    def contains(self, x, tol=0.0):
        """Closed membership; works on a stack of points too."""
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower - tol) & (x <= self.upper + tol), axis=-1)

    def contains_box(self, other, tol=0.0):
        return bool(np.all(other.lower >= self.lower - tol)
                    and np.all(other.upper <= self.upper + tol))

    def distance_outside(self, x):
        """Infinity-norm distance from ``x`` to the box (0 inside)."""
        x = np.asarray(x, dtype=float)
        gap = np.maximum(self.lower - x, x - self.upper)
        return np.maximum(gap, 0.0).max(axis=-1)

    def inflate(self, eps):
        return Box(self.lower - eps, self.upper + eps)

    def __eq__(self, other):
        return (isinstance(other, Box) and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))

    def __repr__(self):
        return f"Box({self.lower.tolist()}, {self.upper.tolist()})"


@dataclass(frozen=True, eq=False)
class LinearMode:
    """One mode ``x' = A x + b``."""

    id: int
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = _frozen_vector(self.b)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"mode {self.id}: A must be square, got {A.shape}")
        if A.shape[0] != b.shape[0]:
            raise ValueError(f"mode {self.id}: A is {A.shape} but b has {b.shape[0]} entries")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError(f"mode {self.id}: non-finite entries")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n(self):
        return self.b.shape[0]


@dataclass(frozen=True, eq=False)
class SwitchedSystem:
    """A finite family of affine modes, switched every ``tau`` time units.

    Mode ids are ``1..m`` and ``modes[i]`` has id ``i + 1``.
    """

    modes: tuple
    tau: float

    def __post_init__(self):
        modes = tuple(self.modes)
        if not modes:
            raise ValueError("a switched system needs at least one mode")
        ids = [md.id for md in modes]
        if ids != list(range(1, len(modes) + 1)):
            raise ValueError(f"mode ids must be 1..m in order, got {ids}")
        dims = {md.n for md in modes}
        if len(dims) != 1:
            raise ValueError(f"modes disagree on dimension: {sorted(dims)}")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be positive, got {self.tau!r}")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def n(self):
        return self.modes[0].n

    @property
    def m(self):
        return len(self.modes)

    @property
    def mode_ids(self):
        return tuple(range(1, self.m + 1))

    def mode(self, mode_id):
        if not 1 <= mode_id <= self.m:
            raise ValueError(f"unknown mode {mode_id}; valid ids are 1..{self.m}")
        return self.modes[mode_id - 1]

    @cached_property
    def flows(self):
        """Flow maps over one period, indexed like ``modes``."""
        return tuple(affine_flow(md.A, md.b, self.tau, md.id) for md in self.modes)

    def flow(self, mode_id):
        self.mode(mode_id)
        return self.flows[mode_id - 1]

    def with_tau(self, tau):
        return SwitchedSystem(self.modes, tau)

    def allclose(self, other, atol=0.0):
        return (self.m == other.m and self.n == other.n
                and abs(self.tau - other.tau) <= atol
                and all(np.allclose(a.A, b.A, rtol=0, atol=atol)
                        and np.allclose(a.b, b.b, rtol=0, atol=atol)
                        for a, b in zip(self.modes, other.modes)))


@dataclass(frozen=True)
class Boost1CellParams:
    """Per-unit parameters of the single-cell boost converter.

    Defaults are the literature values used for the case study.
    """

    x_c: float = 70.0
    x_l: float = 3.0
    r_c: float = 0.005
    r_l: float = 0.05
    r_0: float = 1.0
    v_s: float = 1.0

    def __post_init__(self):
        for name in ("x_c", "x_l", "r_0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("r_c", "r_l", "v_s"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class Boost3CellParams:
    """Parameters of the three-cell interleaved boost converter.

    Only ``U = 100`` comes from the case study; ``r, L, M, C, R`` are
    placeholders chosen for the tests and should be overridden with real
    circuit values.
    """

    r: float = 0.1
    L: float = 1e-3
    M: float = 0.0
    C: float = 1e-3
    R: float = 1.0
    U: float = 100.0

    def __post_init__(self):
        for name in ("r", "L", "C", "R", "U"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.M >= 0:
            raise ValueError("M must be non-negative")

    @property
    def m_lc(self):
        L, M, C = self.L, self.M, self.C
        return np.array([[2 * L, -M, -M, 0.0],
                         [-M, 2 * L, -M, 0.0],
                         [-M, -M, 2 * L, 0.0],
                         [0.0, 0.0, 0.0, C]])

    @property
    def m_s(self):
        r, R = self.r, self.R
        return np.array([[-2 * r, 0.0, 0.0, -1.0],
                         [0.0, -2 * r, 0.0, -1.0],
                         [0.0, 0.0, -2 * r, -1.0],
                         [1.0, 1.0, 1.0, -1.0 / R]])


def build_boost_1cell(params=None, tau=0.5):
    """Two-mode model of the single-cell boost converter, state ``(i_l, v_c)``."""
    p = params or Boost1CellParams()
    par = p.r_0 / (p.r_0 + p.r_c)
    A1 = np.array([[-p.r_l / p.x_l, 0.0],
                   [0.0, -1.0 / p.x_c / (p.r_0 + p.r_c)]])
    A2 = np.array([[-(p.r_l + p.r_0 * p.r_c / (p.r_0 + p.r_c)) / p.x_l, -par / p.x_l],
                   [par / p.x_c, -par / p.x_c]])
    b = np.array([p.v_s / p.x_l, 0.0])
    return SwitchedSystem((LinearMode(1, A1, b), LinearMode(2, A2, b)), tau)


ALL_SIGMAS = tuple(itertools.product((0, 1), repeat=3))


def sigma_to_mode(sigma):
    """Mode id of a switch-state vector: binary ``s1 s2 s3`` plus one."""
    s1, s2, s3 = (int(s) for s in sigma)
    return 4 * s1 + 2 * s2 + s3 + 1


def mode_to_sigma(mode_id):
    k = mode_id - 1
    if not 0 <= k < 8:
        raise ValueError(f"mode id {mode_id} outside 1..8")
    return ((k >> 2) & 1, (k >> 1) & 1, k & 1)


def build_boost_3cell(params=None, tau=1 / 60000, available_sigmas=None):
    """Model of the three-cell converter, state ``(i_1, i_2, i_3, v)``.

    Each switch-state vector ``sigma`` in ``available_sigmas`` becomes one
    mode.  Modes are renumbered ``1..m`` in increasing ``sigma_to_mode``
    order, so with all eight vectors available the id of ``sigma`` is
    exactly ``sigma_to_mode(sigma)``.  Use :func:`boost3_mode_table` to
    recover the vector of each mode when a subset is given.
    """
    p = params or Boost3CellParams()
    sigmas = ALL_SIGMAS if available_sigmas is None else available_sigmas
    sigmas = sorted({tuple(int(s) for s in sg) for sg in sigmas}, key=sigma_to_mode)
    if not sigmas:
        raise ValueError("no switch-state vector available")
    for sg in sigmas:
        if len(sg) != 3 or any(s not in (0, 1) for s in sg):
            raise ValueError(f"invalid switch-state vector {sg}")
    m_lc = p.m_lc
    if abs(np.linalg.det(m_lc)) < 1e-300 or np.linalg.cond(m_lc) > 1e14:
        raise ValueError("M_LC is singular for these parameters")
    A = np.linalg.solve(m_lc, p.m_s)
    modes = []
    for idx, sg in enumerate(sigmas, start=1):
        b = p.U * np.linalg.solve(m_lc, np.array([*sg, 0.0], dtype=float))
        modes.append(LinearMode(idx, A, b))
    return SwitchedSystem(tuple(modes), tau)


def boost3_mode_table(available_sigmas=None):
    """Map mode id -> switch-state vector, matching :func:`build_boost_3cell`."""
    sigmas = ALL_SIGMAS if available_sigmas is None else available_sigmas
    sigmas = sorted({tuple(int(s) for s in sg) for sg in sigmas}, key=sigma_to_mode)
    return {i: sg for i, sg in enumerate(sigmas, start=1)}


# ---------------------------------------------------------------------------
# model files

@dataclass
class ModelSpec:
    """Everything a model file can carry."""

    system: SwitchedSystem
    box: Box = None
    params: dict = field(default_factory=dict)
    builder: str = None
    builder_params: dict = field(default_factory=dict)
    sigma_available: tuple = None


_BUILDERS = {
    "boost1": (Boost1CellParams, build_boost_1cell),
    "boost3": (Boost3CellParams, build_boost_3cell),
}
_SCALAR_PARAMS = ("eta", "epsilon", "pitch_factor")
_VECTOR_PARAMS = ("delta",)


def _strip(line):
    return line.split("#", 1)[0].strip()


def _numbers(text, lineno, fieldname):
    try:
        return [parse_number(tok) for tok in text.split()]
    except ValueError as exc:
        raise ModelFormatError(str(exc), lineno, fieldname) from None


def parse_model(text):
    """Parse a model document into a :class:`ModelSpec`.

    The format is line oriented; ``#`` starts a comment::

        dimension: 2
        tau: 1/2
        modes: 2
        mode 1
        A:
          -0.0166 0
          0 -0.0142
        b: 0.333 0
        ...
        box:
        lower: 3 1.5
        upper: 3.4 1.8
        eta: 1/40

    Instead of explicit modes a ``builder: boost1`` or ``builder: boost3``
    line may be given, followed by ``name=value`` assignments on the same
    line.  ``sigma_available:`` restricts the modes of ``boost3``.
    """
    lines = [(i + 1, _strip(raw)) for i, raw in enumerate(text.splitlines())]
    lines = [(i, s) for i, s in lines if s]

    header = {}
    modes = {}
    box_rows = {}
    params = {}
    builder = None
    builder_params = {}
    sigma_available = None
    pos = 0

    def read_rows(count, width, fieldname, start_line):
        nonlocal pos
        rows = []
        for _ in range(count):
            if pos >= len(lines):
                raise ModelFormatError(f"expected {count} rows", start_line, fieldname)
            lineno, content = lines[pos]
            row = _numbers(content, lineno, fieldname)
            if len(row) != width:
                raise ModelFormatError(f"expected {width} values, got {len(row)}",
                                       lineno, fieldname)
            rows.append(row)
            pos += 1
        return rows

    current_mode = None
    in_box = False
    while pos < len(lines):
        lineno, content = lines[pos]
        pos += 1
        low = content.lower()
        if low.startswith("mode ") and ":" not in content:
            try:
                current_mode = int(content.split()[1])
            except (IndexError, ValueError):
                raise ModelFormatError("bad mode header", lineno, "mode") from None
            if current_mode in modes:
                raise ModelFormatError(f"duplicate mode {current_mode}", lineno, "mode")
            modes[current_mode] = {"line": lineno}
            in_box = False
            continue
        if ":" not in content:
            raise ModelFormatError(f"unexpected line {content!r}", lineno)
        key, _, value = content.partition(":")
        key = key.strip().lower()
        value = value.strip()

        if key in ("dimension", "modes"):
            try:
                header[key] = int(value)
            except ValueError:
                raise ModelFormatError("expected an integer", lineno, key) from None
        elif key == "tau":
            header["tau"] = _numbers(value, lineno, key)
            if len(header["tau"]) != 1:
                raise ModelFormatError("expected one value", lineno, key)
            header["tau"] = header["tau"][0]
        elif key == "a":
            if current_mode is None:
                raise ModelFormatError("A: outside a mode block", lineno, "A")
            n = header.get("dimension")
            if n is None:
                raise ModelFormatError("dimension must precede mode blocks", lineno, "dimension")
            if value:
                raise ModelFormatError("matrix rows go on the following lines", lineno, "A")
            modes[current_mode]["A"] = read_rows(n, n, "A", lineno)
        elif key == "b":
            if current_mode is None:
                raise ModelFormatError("b: outside a mode block", lineno, "b")
            modes[current_mode]["b"] = _numbers(value, lineno, "b")
        elif key == "box":
            in_box = True
            current_mode = None
        elif key in ("lower", "upper"):
            if not in_box:
                raise ModelFormatError(f"{key}: outside box block", lineno, key)
            box_rows[key] = _numbers(value, lineno, key)
        elif key == "builder":
            tokens = value.split()
            if not tokens or tokens[0] not in _BUILDERS:
                raise ModelFormatError(f"unknown builder {value!r}", lineno, "builder")
            builder = tokens[0]
            cls = _BUILDERS[builder][0]
            names = set(cls.__dataclass_fields__)
            for tok in tokens[1:]:
                name, eq, val = tok.partition("=")
                if not eq or name not in names:
                    raise ModelFormatError(f"bad builder parameter {tok!r}", lineno, "builder")
                builder_params[name] = _numbers(val, lineno, name)[0]
        elif key == "sigma_available":
            sigmas = []
            for tok in value.replace(",", " ").split():
                if len(tok) != 3 or set(tok) - {"0", "1"}:
                    raise ModelFormatError(f"bad switch vector {tok!r}", lineno, key)
                sigmas.append(tuple(int(ch) for ch in tok))
            if not sigmas:
                raise ModelFormatError("empty list", lineno, key)
            sigma_available = tuple(sigmas)
        elif key in _SCALAR_PARAMS:
            vals = _numbers(value, lineno, key)
            if len(vals) != 1 or vals[0] <= 0:
                raise ModelFormatError("expected one positive value", lineno, key)
            params[key] = vals[0]
        elif key in _VECTOR_PARAMS:
            vals = _numbers(value, lineno, key)
            if not vals or min(vals) <= 0:
                raise ModelFormatError("expected positive values", lineno, key)
            params[key] = vals
        else:
            raise ModelFormatError(f"unknown key {key!r}", lineno, key)

    if "tau" not in header:
        raise ModelFormatError("missing required field", field="tau")
    tau = header["tau"]
    if tau <= 0:
        raise ModelFormatError("must be positive", field="tau")

    if builder is not None:
        if modes:
            raise ModelFormatError("builder and explicit modes are exclusive", field="builder")
        cls, build = _BUILDERS[builder]
        try:
            p = cls(**builder_params)
            if builder == "boost3":
                system = build(p, tau, sigma_available)
            else:
                if sigma_available is not None:
                    raise ModelFormatError("only valid with boost3", field="sigma_available")
                system = build(p, tau)
        except ValueError as exc:
            if isinstance(exc, ModelFormatError):
                raise
            raise ModelFormatError(str(exc), field="builder") from None
        if "dimension" in header and header["dimension"] != system.n:
            raise ModelFormatError(f"builder yields dimension {system.n}", field="dimension")
    else:
        for key in ("dimension", "modes"):
            if key not in header:
                raise ModelFormatError("missing required field", field=key)
        n, m = header["dimension"], header["modes"]
        if n < 1 or m < 1:
            raise ModelFormatError("dimension and modes must be positive", field="dimension")
        if sorted(modes) != list(range(1, m + 1)):
            raise ModelFormatError(f"expected mode blocks 1..{m}, got {sorted(modes)}",
                                   field="modes")
        built = []
        for mid in range(1, m + 1):
            blk = modes[mid]
            for part in ("A", "b"):
                if part not in blk:
                    raise ModelFormatError(f"mode {mid} lacks {part}", blk["line"], part)
            if len(blk["b"]) != n:
                raise ModelFormatError(f"mode {mid}: b needs {n} values", blk["line"], "b")
            built.append(LinearMode(mid, blk["A"], blk["b"]))
        system = SwitchedSystem(tuple(built), tau)

    box = None
    if box_rows:
        for key in ("lower", "upper"):
            if key not in box_rows:
                raise ModelFormatError("box needs lower and upper", field=key)
            if len(box_rows[key]) != system.n:
                raise ModelFormatError(f"expected {system.n} values", field=key)
        try:
            box = Box(box_rows["lower"], box_rows["upper"])
        except ValueError as exc:
            raise ModelFormatError(str(exc), field="box") from None
    if "delta" in params and len(params["delta"]) not in (1, system.n):
        raise ModelFormatError(f"expected 1 or {system.n} values", field="delta")

    return ModelSpec(system, box, params, builder, builder_params, sigma_available)


def _fmt(x):
    return repr(float(x))


def serialize_model(spec):
    """Write a :class:`ModelSpec` with explicit matrices (exact float round trip)."""
    if isinstance(spec, SwitchedSystem):
        spec = ModelSpec(spec)
    sys_ = spec.system
    out = [f"dimension: {sys_.n}", f"tau: {_fmt(sys_.tau)}", f"modes: {sys_.m}"]
    for md in sys_.modes:
        out.append(f"mode {md.id}")
        out.append("A:")
        for row in md.A:
            out.append("  " + " ".join(_fmt(v) for v in row))
        out.append("b: " + " ".join(_fmt(v) for v in md.b))
    if spec.box is not None:
        out.append("box:")
        out.append("lower: " + " ".join(_fmt(v) for v in spec.box.lower))
        out.append("upper: " + " ".join(_fmt(v) for v in spec.box.upper))
    for key in _SCALAR_PARAMS:
        if key in spec.params:
            out.append(f"{key}: {_fmt(spec.params[key])}")
    for key in _VECTOR_PARAMS:
        if key in spec.params:
            out.append(f"{key}: " + " ".join(_fmt(v) for v in spec.params[key]))
    return "\n".join(out) + "\n"


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())
