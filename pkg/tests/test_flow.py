import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import V1, V3, as_array
from oracles import taylor_expm
from switchsynth.flow import (
    FlowMap,
    IllConditionedFlowError,
    affine_flow,
    induced_inf_norm,
    matrix_exponential,
    post_point,
    pre_point,
)


def test_expm_zero_is_identity():
    assert np.array_equal(matrix_exponential(np.zeros((2, 2)), 0.5), np.eye(2))


def test_expm_diagonal():
    E = matrix_exponential(np.diag([-2.0, -4.0]), 0.5)
    assert np.allclose(E, np.diag([np.exp(-1), np.exp(-2)]), rtol=1e-14, atol=0)


def test_expm_boost1_against_frozen_taylor(boost1, oracle):
    for mode_id in (1, 2):
        ref = as_array(oracle[f"boost1_expm_mode{mode_id}"])
        E = matrix_exponential(boost1.mode(mode_id).A, 0.5)
        assert induced_inf_norm(E - ref) <= 1e-12 * induced_inf_norm(ref)


def test_frozen_taylor_values_recompute(boost1, oracle):
    ref = taylor_expm(boost1.mode(1).A, 0.5)
    assert np.abs(ref - as_array(oracle["boost1_expm_mode1"])).max() <= 1e-15


def test_expm_large_norm_uses_squaring():
    A = np.array([[-50.0, 120.0], [-120.0, -50.0]])
    ref = taylor_expm(A, 0.1, terms=400, dps=80)
    got = matrix_exponential(A, 0.1)
    assert np.abs(got - ref).max() <= 1e-12


@pytest.mark.parametrize("A", [np.zeros((2, 3)), np.array([[np.nan, 0], [0, 1]]), np.ones(3)])
def test_expm_rejects_bad_input(A):
    with pytest.raises(ValueError):
        matrix_exponential(A, 1.0)


def test_expm_rejects_nonfinite_t():
    with pytest.raises(ValueError):
        matrix_exponential(np.eye(2), np.inf)


def test_affine_flow_pure_translation():
    f = affine_flow(np.zeros((2, 2)), [1.0, 0.0], 0.5)
    assert np.array_equal(f.E, np.eye(2))
    assert np.allclose(f.c, [0.5, 0.0], atol=1e-16)


def test_affine_flow_closed_form():
    f = affine_flow(-np.eye(2), [1.0, 1.0], 1.0)
    assert np.allclose(f.c, [1 - np.exp(-1)] * 2, rtol=1e-14)


def test_affine_flow_rejects_bad_tau():
    with pytest.raises(ValueError):
        affine_flow(np.eye(2), [0, 0], 0.0)


@pytest.mark.parametrize("label", ["boost1", "boost3"])
def test_flow_against_rk4_oracle(label, request, oracle):
    system = request.getfixturevalue(label)
    for md in system.modes:
        ref = oracle[f"{label}_rk4"][str(md.id)]
        f = system.flow(md.id)
        assert np.abs(f.E - as_array(ref["E"])).max() <= 1e-9
        assert np.abs(f.c - as_array(ref["c"])).max() <= 1e-9


def test_post_point_against_rk4(boost1, oracle):
    y = post_point(boost1.flow(2), oracle["boost1_post_mode2_x"])
    assert np.abs(y - as_array(oracle["boost1_post_mode2"])).max() <= 1e-9


def test_post_and_pre_trivial():
    f = FlowMap(np.eye(2), np.zeros(2))
    assert np.array_equal(post_point(f, [3, 1.5]), [3, 1.5])
    assert np.array_equal(pre_point(f, [1, 2]), [1, 2])
    g = FlowMap(np.eye(2), np.array([0.5, 0.0]))
    assert np.array_equal(post_point(g, [3, 1.5]), [3.5, 1.5])


def test_round_trip_named_point(boost1):
    f = boost1.flow(1)
    assert np.abs(pre_point(f, post_point(f, [3.2, 1.6])) - [3.2, 1.6]).max() <= 1e-9


def test_induced_norm_examples(boost1, oracle):
    assert induced_inf_norm(np.eye(2)) == 1.0
    assert induced_inf_norm([[1, -2], [3, 0.5]]) == 3.5
    ref = np.abs(as_array(oracle["boost1_expm_mode1"])).sum(axis=1).max()
    assert abs(induced_inf_norm(boost1.flow(1).E) - ref) <= 1e-14


def test_singular_flow_rejected():
    with pytest.raises(IllConditionedFlowError):
        FlowMap(np.array([[1.0, 0.0], [0.0, 1e-14]]), np.zeros(2))


def test_flowmap_is_immutable(boost1):
    with pytest.raises(ValueError):
        boost1.flow(1).E[0, 0] = 2.0


def test_compose_order():
    f = FlowMap(np.diag([2.0, 1.0]), np.array([1.0, 0.0]))
    g = FlowMap(np.eye(2), np.array([0.0, 3.0]))
    x = np.array([1.0, 1.0])
    assert np.allclose(f.compose(g).post(x), g.post(f.post(x)))


@pytest.mark.parametrize("label", ["boost1", "boost3"])
def test_semigroup(label, request):
    system = request.getfixturevalue(label)
    for md in system.modes:
        one = system.flow(md.id)
        two = affine_flow(md.A, md.b, 2 * system.tau)
        step = one.compose(one)
        assert np.abs(step.E - two.E).max() <= 1e-10
        assert np.abs(step.c - two.c).max() <= 1e-10


@pytest.mark.parametrize("label", ["boost1", "boost3"])
def test_inverse_exponential(label, request):
    system = request.getfixturevalue(label)
    for md in system.modes:
        P = matrix_exponential(md.A, system.tau) @ matrix_exponential(-md.A, system.tau)
        assert induced_inf_norm(P - np.eye(system.n)) <= 1e-10


@pytest.mark.parametrize("label,box", [("boost1", V1), ("boost3", V3)])
def test_round_trip_random_points(label, box, request):
    system = request.getfixturevalue(label)
    rng = np.random.default_rng(7)
    x = box.lower + rng.random((1000, system.n)) * box.widths
    for f in system.flows:
        assert np.abs(pre_point(f, post_point(f, x)) - x).max() <= 1e-9


finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(arrays(float, (2,), elements=finite), arrays(float, (2,), elements=finite))
def test_injective_on_boost1(x, dx):
    from switchsynth.model import build_boost_1cell
    if np.abs(dx).max() < 1e-6:
        dx = dx + 1e-6
    for f in build_boost_1cell().flows:
        assert np.abs(post_point(f, x) - post_point(f, x + dx)).max() > 0


@settings(max_examples=60, deadline=None)
@given(arrays(float, (3, 3), elements=st.floats(-3, 3, allow_nan=False)),
       st.floats(0.01, 1.0))
def test_expm_matches_taylor_on_random_matrices(A, t):
    got = matrix_exponential(A, t)
    ref = taylor_expm(A, t, terms=80, dps=40)
    assert np.abs(got - ref).max() <= 1e-12 * max(1.0, np.abs(ref).max())


@settings(max_examples=40, deadline=None)
@given(arrays(float, (2, 2), elements=st.floats(-2, 2, allow_nan=False)),
       arrays(float, (2,), elements=finite), st.floats(0.05, 1.0))
def test_semigroup_random(A, b, tau):
    one = affine_flow(A, b, tau)
    two = affine_flow(A, b, 2 * tau)
    step = one.compose(one)
    scale = max(1.0, np.abs(two.E).max(), np.abs(two.c).max())
    assert np.abs(step.E - two.E).max() <= 1e-12 * scale
    assert np.abs(step.c - two.c).max() <= 1e-12 * scale
