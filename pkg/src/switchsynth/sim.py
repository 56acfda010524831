"""Exact simulation of sampled switched systems."""
from dataclasses import dataclass, field

import numpy as np

from .direct import NoSafeMode, OnlineController
from .flow import affine_flow
from .indirect import SwitchingPattern

__all__ = [
    "ContainmentReport",
    "Trajectory",
    "X0OutsideControllable",
    "check_containment",
    "simulate_closed_loop",
    "simulate_pattern",
]


class X0OutsideControllable(ValueError):
    """Initial state lies outside the controllable subspace."""


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States at every substep of a simulated run.

    ``modes[j]`` is the mode active on the interval that ends at point ``j``
    (for ``j = 0`` the mode of the first step).  ``is_sample`` flags the
    sampling instants, i.e. every ``substeps``-th point.
    """

    times: np.ndarray
    states: np.ndarray
    modes: np.ndarray
    substeps: int
    tau: float

    @property
    def is_sample(self):
        idx = np.arange(len(self.times))
        return idx % self.substeps == 0

    @property
    def sample_states(self):
        return self.states[::self.substeps]

    @property
    def sample_times(self):
        return self.times[::self.substeps]

    @property
    def steps(self):
        return (len(self.times) - 1) // self.substeps

    def to_csv(self):
        n = self.states.shape[1]
        lines = ["t,mode," + ",".join(f"x{i + 1}" for i in range(n))]
        for t, p, x in zip(self.times, self.modes, self.states):
            lines.append(f"{float(t)!r},{int(p)}," + ",".join(repr(float(v)) for v in x))
        return "\n".join(lines) + "\n"


def _substep_stacks(sys, substeps):
    """Per mode, the maps to the interior substep points ``j = 1 .. substeps-1`` of one period."""
    stacks = []
    for md in sys.modes:
        f = affine_flow(md.A, md.b, sys.tau / substeps, md.id)
        Es, cs = [], []
        g = f
        for _ in range(substeps - 1):
            Es.append(g.E)
            cs.append(g.c)
            g = g.compose(f)
        n = sys.n
        stacks.append((np.array(Es).reshape(-1, n, n), np.array(cs).reshape(-1, n)))
    return stacks


def _run(sys, x0, choose, steps, substeps):
    if steps < 1 or substeps < 1:
        raise ValueError("steps and substeps must be at least 1")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.n,):
        raise ValueError(f"x0 must have {sys.n} entries")
    fine = _substep_stacks(sys, substeps)
    coarse = sys.flows
    total = steps * substeps + 1
    states = np.empty((total, sys.n))
    modes = np.empty(total, dtype=np.int64)
    states[0] = x0
    x = x0
    log = []
    j = 0
    for k in range(steps):
        try:
            p = choose(k, x)
        except NoSafeMode as exc:
            exc.step = k
            exc.trajectory = _trajectory(states[:j + 1], modes[:j + 1], sys.tau, substeps)
            exc.mode_log = log
            raise
        log.append(p)
        if k == 0:
            modes[0] = p
        Es, cs = fine[p - 1]
        if len(cs):
            states[j + 1:j + substeps] = Es @ x + cs
            modes[j + 1:j + substeps] = p
            j += substeps - 1
        # sampling instants use the full-period map so they stay exact
        x = coarse[p - 1].E @ x + coarse[p - 1].c
        j += 1
        states[j] = x
        modes[j] = p
    return _trajectory(states, modes, sys.tau, substeps), log


def _trajectory(states, modes, tau, substeps):
    times = np.arange(len(states)) * (tau / substeps)
    states = states.copy()
    modes = modes.copy()
    states.setflags(write=False)
    modes.setflags(write=False)
    return Trajectory(times, states, modes, substeps, tau)


def simulate_pattern(sys, x0, pattern, steps, substeps=32):
    """Apply ``pattern`` periodically: step ``k`` uses ``pattern[k mod len]``."""
    if not isinstance(pattern, SwitchingPattern):
        pattern = SwitchingPattern(tuple(pattern))
    for p in pattern.modes:
        sys.mode(p)
    traj, _ = _run(sys, x0, lambda k, x: pattern[k], steps, substeps)
    return traj


def simulate_closed_loop(sys, x0, cs, steps, substeps=32):
    """Choose the mode on line at every sampling instant.

    Returns the trajectory and the list of chosen modes.  Raises
    :class:`X0OutsideControllable` when ``x0`` is not in ``v_prime`` and
    :class:`NoSafeMode` (with ``step``, ``trajectory`` and ``mode_log``
    attributes) when the selector fails mid-run.
    """
    ctrl = OnlineController(cs, sys)
    if not ctrl.v_prime.contains_point(x0):
        raise X0OutsideControllable(f"x0 = {list(map(float, x0))} is not in V'")
    return _run(sys, x0, lambda k, x: ctrl(x, k), steps, substeps)


@dataclass
class ContainmentReport:
    """Where a trajectory leaves the box, and by how much.

    Violation entries are ``(index, state, distance)`` with ``index`` the
    sampling step (for samples) or the substep point index (between
    samples).  ``inflated_*`` count violations of the box grown by
    ``epsilon``.
    """

    violations_at_samples: list = field(default_factory=list)
    violations_between: list = field(default_factory=list)
    max_excursion: float = 0.0
    epsilon: float = 0.0
    inflated_at_samples: int = 0
    inflated_between: int = 0

    def to_text(self):
        lines = [
            f"epsilon: {self.epsilon!r}",
            f"violations_at_samples: {len(self.violations_at_samples)}",
            f"violations_between: {len(self.violations_between)}",
            f"max_excursion: {self.max_excursion!r}",
            f"inflated_violations_at_samples: {self.inflated_at_samples}",
            f"inflated_violations_between: {self.inflated_between}",
        ]
        for name, rows in (("sample", self.violations_at_samples),
                           ("between", self.violations_between)):
            for idx, x, dist in rows[:50]:
                lines.append(f"{name} {idx} {' '.join(repr(float(v)) for v in x)} {dist!r}")
        return "\n".join(lines) + "\n"


def check_containment(traj, box, epsilon=0.0):
    """Classify every point of ``traj`` against ``box`` and ``box`` grown by ``epsilon``."""
    dist = box.distance_outside(traj.states)
    sample = traj.is_sample
    rep = ContainmentReport(epsilon=float(epsilon))
    out = np.nonzero(dist > 0)[0]
    for j in out:
        entry = (int(j // traj.substeps) if sample[j] else int(j),
                 tuple(float(v) for v in traj.states[j]), float(dist[j]))
        (rep.violations_at_samples if sample[j] else rep.violations_between).append(entry)
    rep.max_excursion = float(dist.max()) if len(dist) else 0.0
    beyond = dist > epsilon
    rep.inflated_at_samples = int(np.count_nonzero(beyond & sample))
    rep.inflated_between = int(np.count_nonzero(beyond & ~sample))
    return rep
