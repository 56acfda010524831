import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import V1, V3
from switchsynth.model import (
    ALL_SIGMAS,
    Boost1CellParams,
    Boost3CellParams,
    Box,
    LinearMode,
    ModelFormatError,
    ModelSpec,
    SwitchedSystem,
    boost3_mode_table,
    build_boost_1cell,
    build_boost_3cell,
    load_model,
    mode_to_sigma,
    parse_model,
    parse_number,
    serialize_model,
    sigma_to_mode,
)


def test_parse_number_fractions():
    assert parse_number("1/40") == 0.025
    assert parse_number("1/60000") == 1 / 60000
    assert parse_number("-2.5e-3") == -0.0025
    for bad in ("abc", "1/0", "inf", "nan"):
        with pytest.raises(ValueError):
            parse_number(bad)


def test_box_basics():
    b = Box([0, 0], [2, 1])
    assert b.n == 2
    assert np.array_equal(b.widths, [2, 1])
    assert b.contains([2, 1]) and not b.contains([2.1, 0])
    assert list(b.contains(np.array([[1, 1], [3, 0]]))) == [True, False]
    assert b.distance_outside([2.5, -0.2]) == 0.5
    assert b.inflate(1).contains([2.9, -0.9])
    assert b.contains_box(Box([0.5, 0], [1, 1]))
    assert b == Box([0.0, 0.0], [2.0, 1.0]) and hash(b) == hash(Box([0, 0], [2, 1]))
    with pytest.raises(ValueError):
        Box([1, 0], [0, 1])


def test_boost1_reference_matrices():
    s = build_boost_1cell()
    assert (s.n, s.m, s.tau) == (2, 2, 0.5)
    A1, A2 = s.mode(1).A, s.mode(2).A
    assert np.allclose(A1, np.diag([-0.05 / 3, -1 / (70 * 1.005)]), rtol=1e-15)
    assert np.allclose(s.mode(1).b, [1 / 3, 0], rtol=1e-15)
    assert np.isclose(A2[0, 1], -(1 / 3) * (1 / 1.005), rtol=1e-15)
    assert np.isclose(A2[1, 0], (1 / 70) * (1 / 1.005), rtol=1e-15)
    assert np.array_equal(s.mode(1).b, s.mode(2).b)


def test_boost1_degenerate_parameters():
    s = build_boost_1cell(Boost1CellParams(r_l=0, r_c=0, r_0=1, v_s=0))
    assert np.array_equal(s.mode(1).b, [0, 0]) and np.array_equal(s.mode(2).b, [0, 0])
    assert np.allclose(s.mode(1).A, np.diag([0, -1 / 70]))


@pytest.mark.parametrize("bad", [dict(x_c=0), dict(x_l=-1), dict(r_0=0), dict(r_l=-0.1)])
def test_boost1_rejects_bad_parameters(bad):
    with pytest.raises(ValueError):
        Boost1CellParams(**bad)


def test_boost1_modes_are_stable():
    # trace < 0 and det > 0 of a 2x2 matrix means both eigenvalues have negative real part
    for md in build_boost_1cell().modes:
        assert np.trace(md.A) < 0 and np.linalg.det(md.A) > 0


def test_boost3_dimensions_and_shared_matrix():
    full = build_boost_3cell()
    assert (full.n, full.m) == (4, 8)
    for md in full.modes:
        assert np.array_equal(md.A, full.mode(1).A)
    off = build_boost_3cell(available_sigmas=[s for s in ALL_SIGMAS if s[0] == 0])
    assert (off.n, off.m) == (4, 4)


def test_boost3_zero_switch_vector_has_no_input():
    s = build_boost_3cell(Boost3CellParams(U=1234.0))
    assert np.array_equal(s.mode(sigma_to_mode((0, 0, 0))).b, np.zeros(4))


def test_boost3_hand_inverted_input():
    s = build_boost_3cell(Boost3CellParams(M=0, L=1, C=1))
    p = Boost3CellParams(M=0, L=1, C=1)
    assert np.allclose(p.m_lc, np.diag([2, 2, 2, 1]))
    assert np.allclose(s.mode(sigma_to_mode((1, 0, 0))).b, [50, 0, 0, 0], atol=1e-12)


def test_sigma_numbering_round_trip():
    for mode_id in range(1, 9):
        assert sigma_to_mode(mode_to_sigma(mode_id)) == mode_id
    table = boost3_mode_table([s for s in ALL_SIGMAS if s[0] == 0])
    assert table == {1: (0, 0, 0), 2: (0, 0, 1), 3: (0, 1, 0), 4: (0, 1, 1)}


def test_explicit_file_matches_builder(models):
    explicit = load_model(models / "boost1.model")
    built = build_boost_1cell()
    for a, b in zip(explicit.system.modes, built.modes):
        assert np.abs(a.A - b.A).max() <= 1e-15 and np.abs(a.b - b.b).max() <= 1e-15
    assert explicit.box == V1
    assert explicit.params["eta"] == 0.025 and explicit.params["epsilon"] == 3.0


def test_builder_shorthand(models):
    spec = load_model(models / "boost1_builder.model")
    assert spec.system.allclose(build_boost_1cell())
    three = load_model(models / "boost3_sigma1_off.model")
    assert three.system.m == 4 and three.box == V3


def test_missing_tau_names_field():
    text = "dimension: 1\nmodes: 1\nmode 1\nA:\n  -1\nb: 0\n"
    with pytest.raises(ModelFormatError) as err:
        parse_model(text)
    assert err.value.field == "tau" and "tau" in str(err.value)


@pytest.mark.parametrize("text,field", [
    ("tau: 1\ndimension: 2\nmodes: 1\nmode 1\nA:\n  1 2\nb: 0 0\n", "A"),
    ("tau: 1\ndimension: 1\nmodes: 2\nmode 1\nA:\n  -1\nb: 0\n", "modes"),
    ("tau: 1\nbuilder: boost9\n", "builder"),
    ("tau: 1\nbuilder: boost1 q=3\n", "builder"),
    ("tau: 1\nbuilder: boost3\nsigma_available: 102\n", "sigma_available"),
    ("tau: -1\nbuilder: boost1\n", "tau"),
    ("tau: 1\nbuilder: boost1\nwhatever: 3\n", "whatever"),
    ("tau: 1\nbuilder: boost1\nbox:\nlower: 0 0\n", "upper"),
])
def test_parse_errors(text, field):
    with pytest.raises(ModelFormatError) as err:
        parse_model(text)
    assert err.value.field == field


@pytest.mark.parametrize("system", [build_boost_1cell(), build_boost_3cell()])
def test_serialize_round_trip(system):
    spec = ModelSpec(system, V1 if system.n == 2 else V3, {"eta": 0.025, "delta": [0.1] * system.n})
    back = parse_model(serialize_model(spec))
    assert back.system.allclose(system)
    assert back.system.tau == system.tau
    assert back.box == spec.box and back.params == spec.params


def test_system_validation():
    with pytest.raises(ValueError):
        SwitchedSystem((LinearMode(2, np.eye(2), np.zeros(2)),), 1.0)
    with pytest.raises(ValueError):
        LinearMode(1, np.ones((2, 3)), np.zeros(2))
    with pytest.raises(ValueError):
        build_boost_1cell().mode(3)


@settings(max_examples=30, deadline=None)
@given(st.floats(10, 200), st.floats(0.5, 10), st.floats(0, 0.1), st.floats(1e-3, 0.2),
       st.floats(0.5, 5))
def test_boost1_stable_for_physical_parameters(x_c, x_l, r_c, r_l, r_0):
    s = build_boost_1cell(Boost1CellParams(x_c=x_c, x_l=x_l, r_c=r_c, r_l=r_l, r_0=r_0))
    for md in s.modes:
        assert np.all(np.linalg.eigvals(md.A).real < 0)
