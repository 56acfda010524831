"""Reference computations that share no code with the package.

The matrix exponential is a truncated Taylor series evaluated in 50-digit
arithmetic; flows are integrated with classical RK4 using compensated
summation so that a million steps do not accumulate rounding drift.
"""
import mpmath
import numba
import numpy as np

TAYLOR_TERMS = 60
DIGITS = 50


def taylor_expm(A, t=1.0, terms=TAYLOR_TERMS, dps=DIGITS):
    with mpmath.workdps(dps):
        M = mpmath.matrix(np.asarray(A, dtype=float).tolist()) * mpmath.mpf(t)
        n = M.rows
        term = mpmath.eye(n)
        total = mpmath.eye(n)
        for k in range(1, terms + 1):
            term = term * M / k
            total += term
        return np.array(total.tolist(), dtype=float)


def taylor_affine(A, b, tau, terms=TAYLOR_TERMS, dps=DIGITS):
    """(E, c) of the one-period map from the exponential of [[A, b], [0, 0]]."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = A
    aug[:n, n] = b
    X = taylor_expm(aug, tau, terms, dps)
    return X[:n, :n], X[:n, n]


@numba.njit(cache=True)
def _rk4(A, b, x0, h, nsteps):
    x = x0.copy()
    comp = np.zeros_like(x)
    for _ in range(nsteps):
        k1 = A @ x + b
        k2 = A @ (x + 0.5 * h * k1) + b
        k3 = A @ (x + 0.5 * h * k2) + b
        k4 = A @ (x + h * k3) + b
        inc = (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        # Kahan summation of the increments
        y = inc - comp
        s = x + y
        comp = (s - x) - y
        x = s
    return x


def rk4_flow(A, b, x0, tau, nsteps=10 ** 6):
    A = np.ascontiguousarray(A, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    return _rk4(A, b, np.ascontiguousarray(x0, dtype=float), tau / nsteps, nsteps)


def rk4_affine(A, b, tau, nsteps=10 ** 6):
    """(E, c) by integrating the unit vectors without input and the origin with input."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    zero = np.zeros(n)
    E = np.column_stack([rk4_flow(A, zero, e, tau, nsteps) for e in np.eye(n)])
    c = rk4_flow(A, b, zero, tau, nsteps)
    return E, c


def rk4_pattern(modes, pattern, x0, tau, steps, per_step=10 ** 4):
    """Sampled states of a periodic switching run; ``modes`` is a list of (A, b)."""
    x = np.asarray(x0, dtype=float)
    out = [x]
    for k in range(steps):
        A, b = modes[pattern[k % len(pattern)] - 1]
        x = rk4_flow(A, b, x, tau, per_step)
        out.append(x)
    return np.array(out)
