import functools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import V1, as_array
from switchsynth.direct import CellGrid, ControllableSubspace, GriddySet, NoSafeMode, algorithm1
from switchsynth.flow import affine_flow
from switchsynth.indirect import SwitchingPattern
from switchsynth.model import Box, LinearMode, SwitchedSystem, build_boost_1cell
from switchsynth.sim import (
    ContainmentReport,
    Trajectory,
    X0OutsideControllable,
    check_containment,
    simulate_closed_loop,
    simulate_pattern,
)

UNIT = Box([0, 0], [1, 1])


def drift(shift, tau=0.5):
    return SwitchedSystem((LinearMode(1, np.zeros((2, 2)), np.asarray(shift, float) / tau),), tau)


def test_identity_is_constant():
    tr = simulate_pattern(drift([0, 0]), [0.3, 0.7], [1], 10, substeps=4)
    assert np.array_equal(tr.states, np.tile([0.3, 0.7], (41, 1)))
    assert tr.steps == 10 and len(tr.sample_states) == 11


def test_pure_translation_samples():
    sys_ = SwitchedSystem((LinearMode(1, np.zeros((2, 2)), np.array([1.0, 0.0])),), 0.5)
    tr = simulate_pattern(sys_, [3.0, 0.0], SwitchingPattern((1,)), 4)
    assert np.allclose(tr.sample_states[:, 0], [3.0, 3.5, 4.0, 4.5, 5.0], rtol=0, atol=1e-15)
    assert np.allclose(tr.sample_times, [0, 0.5, 1.0, 1.5, 2.0])


def test_boost1_pattern_matches_rk4(boost1, oracle):
    tr = simulate_pattern(boost1, oracle["boost1_pattern_x0"], oracle["pattern"], 200)
    assert np.abs(tr.sample_states - as_array(oracle["boost1_pattern_states"])).max() <= 1e-6


def test_boost3_pattern_matches_rk4(boost3, oracle):
    tr = simulate_pattern(boost3, oracle["boost3_pattern_x0"], oracle["boost3_pattern"], 200)
    assert np.abs(tr.sample_states - as_array(oracle["boost3_pattern_states"])).max() <= 1e-6


@pytest.mark.parametrize("label", ["boost1", "boost3"])
@pytest.mark.parametrize("substeps", [2, 32])
def test_substeps_compose_to_one_period(label, substeps, request):
    system = request.getfixturevalue(label)
    for md in system.modes:
        fine = affine_flow(md.A, md.b, system.tau / substeps)
        total = fine
        for _ in range(substeps - 1):
            total = total.compose(fine)
        coarse = system.flow(md.id)
        assert np.abs(total.E - coarse.E).max() <= 1e-9
        assert np.abs(total.c - coarse.c).max() <= 1e-9


def test_modes_recorded(boost1):
    tr = simulate_pattern(boost1, [3.1, 1.6], SwitchingPattern((1, 2)), 3, substeps=2)
    assert list(tr.modes) == [1, 1, 1, 2, 2, 1, 1]
    assert list(tr.is_sample) == [True, False, True, False, True, False, True]


def test_pattern_rejects_unknown_mode(boost1):
    with pytest.raises(ValueError):
        simulate_pattern(boost1, [3, 1.6], [1, 3], 4)
    with pytest.raises(ValueError):
        simulate_pattern(boost1, [3, 1.6, 0], [1], 4)


def test_csv_layout(boost1):
    tr = simulate_pattern(boost1, [3.1, 1.6], [1, 2], 2, substeps=2)
    lines = tr.to_csv().splitlines()
    assert lines[0] == "t,mode,x1,x2" and len(lines) == 6
    assert lines[1].startswith("0.0,1,3.1,1.6")


def test_containment_examples():
    inside = Trajectory(np.arange(3.0), np.array([[0.1, 0.1], [0.5, 0.5], [1, 1]]),
                        np.ones(3, int), 1, 1.0)
    rep = check_containment(inside, UNIT)
    assert rep.violations_at_samples == [] and rep.violations_between == []
    assert rep.max_excursion == 0
    out = Trajectory(np.arange(3.0), np.array([[0.1, 0.1], [1.2, 0.5], [1, 1]]),
                     np.ones(3, int), 1, 1.0)
    rep = check_containment(out, UNIT, epsilon=0.3)
    assert len(rep.violations_at_samples) == 1
    assert rep.violations_at_samples[0][0] == 1
    assert rep.max_excursion == pytest.approx(0.2)
    assert rep.inflated_at_samples == 0
    assert "violations_at_samples: 1" in rep.to_text()
    assert isinstance(rep, ContainmentReport)


def test_boost1_pattern_epsilon_containment(boost1):
    tr = simulate_pattern(boost1, [3.0, 1.79], SwitchingPattern.parse("12121212122"), 200)
    rep = check_containment(tr, V1, 3.0)
    assert len(rep.violations_at_samples) >= 1
    assert rep.inflated_at_samples == 0


def test_closed_loop_identity_runs_forever():
    sys_ = drift([0, 0])
    g = CellGrid(UNIT, 0.25)
    cs = ControllableSubspace(g, (GriddySet.full(g),))
    tr, log = simulate_closed_loop(sys_, [0.4, 0.6], cs, 500, substeps=2)
    assert np.array_equal(tr.states[-1], [0.4, 0.6]) and set(log) == {1}


def test_closed_loop_rejects_outside_start():
    sys_ = drift([0, 0])
    g = CellGrid(UNIT, 0.5)
    cs = ControllableSubspace(g, (GriddySet.from_cells(g, [(0, 0)]),))
    with pytest.raises(X0OutsideControllable):
        simulate_closed_loop(sys_, [0.9, 0.9], cs, 5)


def test_no_safe_mode_mid_run():
    sys_ = drift([0.3, 0.0])
    g = CellGrid(UNIT, 0.5)
    cs = ControllableSubspace(g, (GriddySet.from_cells(g, [(0, 0), (1, 0)]),))
    with pytest.raises(NoSafeMode) as err:
        simulate_closed_loop(sys_, [0.1, 0.25], cs, 10, substeps=4)
    assert err.value.step == 3
    assert err.value.mode_log == [1, 1, 1]
    assert len(err.value.trajectory.times) == 3 * 4 + 1


def test_boost1_closed_loop_short(boost1, boost1_subspace):
    tr, log = simulate_closed_loop(boost1, [3.01, 1.79], boost1_subspace, 2000)
    rep = check_containment(tr, V1)
    assert rep.violations_at_samples == [] and rep.violations_between == []
    assert set(log) <= {1, 2} and len(log) == 2000


@functools.lru_cache(maxsize=None)
def _coarse_subspace():
    return algorithm1(build_boost_1cell(), V1, resolution=100)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_closed_loop_samples_stay_in_box(seed):
    system = build_boost_1cell()
    cs = _coarse_subspace()
    rng = np.random.default_rng(seed)
    cells = cs.v_prime.cells()
    x0 = cs.grid.cell_lower(cells[rng.integers(len(cells))]) + rng.random(2) * cs.grid.delta
    tr, _ = simulate_closed_loop(system, x0, cs, 200, substeps=1)
    assert np.all(V1.contains(tr.sample_states))
    assert np.all(cs.v_prime.contains_points(tr.sample_states))
