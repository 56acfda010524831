"""Exact one-period dynamics of a linear mode.

Between two sampling instants a mode evolves as ``x' = A x + b``, so the
state one period ``tau`` later is the affine image ``E x + c`` with
``E = exp(A tau)`` and ``c = int_0^tau exp(A s) ds b``.
"""
from dataclasses import dataclass

import numpy as np

from .policy import DEFAULT_POLICY

__all__ = [
    "FlowMap",
    "IllConditionedFlowError",
    "affine_flow",
    "induced_inf_norm",
    "matrix_exponential",
    "post_point",
    "pre_point",
]


class IllConditionedFlowError(ArithmeticError):
    """Raised when a flow matrix is numerically singular."""


# Pade coefficients and 1-norm thresholds (Higham 2005, Table 2.3).
_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}
_THETA = ((3, 1.495585217958292e-2), (5, 2.539398330063230e-1),
          (7, 9.504178996162932e-1), (9, 2.097847961257068e0))
_THETA_13 = 5.371920351148152e0


def _as_finite_matrix(A, name="A"):
    A = np.array(A, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def _pade_terms(X, order):
    coeffs = _PADE[order]
    ident = np.eye(X.shape[0])
    X2 = X @ X
    if order < 13:
        powers = [ident, X2]
        for _ in range(2, order // 2 + 1):
            powers.append(powers[-1] @ X2)
        U = X @ sum(coeffs[2 * j + 1] * P for j, P in enumerate(powers))
        V = sum(coeffs[2 * j] * P for j, P in enumerate(powers))
        return U, V
    b = coeffs
    X4 = X2 @ X2
    X6 = X4 @ X2
    U = X @ (X6 @ (b[13] * X6 + b[11] * X4 + b[9] * X2)
             + b[7] * X6 + b[5] * X4 + b[3] * X2 + b[1] * ident)
    V = (X6 @ (b[12] * X6 + b[10] * X4 + b[8] * X2)
         + b[6] * X6 + b[4] * X4 + b[2] * X2 + b[0] * ident)
    return U, V


def matrix_exponential(A, t=1.0):
    """Return ``exp(A t)`` by scaling and squaring with a Pade approximant.

    Parameters
    ----------
    A : array_like, shape (n, n)
        Square matrix with finite entries.
    t : float
        Time multiplier.

    Returns
    -------
    numpy.ndarray
        The matrix exponential.
    """
    A = _as_finite_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    X = A * float(t)
    n = X.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    norm1 = np.abs(X).sum(axis=0).max()
    if norm1 == 0.0:
        return np.eye(n)

    for order, theta in _THETA:
        if norm1 <= theta:
            U, V = _pade_terms(X, order)
            return np.linalg.solve(V - U, V + U)

    squarings = max(0, int(np.ceil(np.log2(norm1 / _THETA_13))))
    U, V = _pade_terms(X / 2.0 ** squarings, 13)
    R = np.linalg.solve(V - U, V + U)
    for _ in range(squarings):
        R = R @ R
    return R


def induced_inf_norm(M):
    """Largest absolute row sum of ``M``."""
    M = _as_finite_matrix(M, "M")
    if M.size == 0:
        return 0.0
    return float(np.abs(M).sum(axis=1).max())


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FlowMap:
    """The affine map ``x -> E x + c`` of one mode over one period.

    Attributes
    ----------
    E : numpy.ndarray
        ``exp(A tau)``.
    c : numpy.ndarray
        Integral of the affine term over the period.
    mode_id : int
    tau : float
    """

    E: np.ndarray
    c: np.ndarray
    mode_id: int = 0
    tau: float = 1.0

    def __post_init__(self):
        E = _frozen(self.E)
        c = _frozen(self.c).reshape(-1)
        if E.ndim != 2 or E.shape[0] != E.shape[1] or E.shape[0] != c.shape[0]:
            raise ValueError(f"incompatible flow shapes E{E.shape}, c{c.shape}")
        if not (np.all(np.isfinite(E)) and np.all(np.isfinite(c))):
            raise ValueError("flow map has non-finite entries")
        cond = np.linalg.cond(E, p=np.inf) if E.size else 1.0
        if not np.isfinite(cond) or cond > DEFAULT_POLICY.max_condition:
            raise IllConditionedFlowError(
                f"flow matrix of mode {self.mode_id} has condition number {cond:.3g}")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "_cond", float(cond))

    @property
    def n(self):
        return self.c.shape[0]

    @property
    def condition(self):
        """Infinity-norm condition number of ``E``."""
        return self._cond

    def post(self, x):
        return post_point(self, x)

    def pre(self, x):
        return pre_point(self, x)

    def compose(self, other):
        """Flow map of applying ``self`` first, then ``other``."""
        return FlowMap(other.E @ self.E, other.E @ self.c + other.c,
                       self.mode_id, self.tau + other.tau)


def affine_flow(A, b, tau, mode_id=0):
    """Build the one-period flow map of ``x' = A x + b``.

    ``E`` and ``c`` are read off ``exp`` of the augmented matrix
    ``[[A, b], [0, 0]] * tau``, which needs no inverse of ``A``.
    """
    A = _as_finite_matrix(A)
    b = np.array(b, dtype=float).reshape(-1)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise ValueError(f"dimension mismatch: A{A.shape}, b{b.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError("b has non-finite entries")
    if not (np.isfinite(tau) and tau > 0):
        raise ValueError(f"tau must be positive, got {tau!r}")
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = A
    aug[:n, n] = b
    big = matrix_exponential(aug, tau)
    return FlowMap(big[:n, :n], big[:n, n], mode_id, float(tau))


def _vector_for(f, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (f.n,):
        raise ValueError(f"state has dimension {x.shape}, flow expects {f.n}")
    return x


def post_point(f, x):
    """State one period after ``x``; also accepts a stack of states."""
    x = _vector_for(f, x)
    return x @ f.E.T + f.c


def pre_point(f, x):
    """The unique state whose image under ``f`` is ``x``."""
    x = _vector_for(f, x)
    rhs = (x - f.c).T
    try:
        out = np.linalg.solve(f.E, rhs)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedFlowError(str(exc)) from exc
    return out.T
