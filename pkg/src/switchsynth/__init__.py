"""Safety controllers for sampled switched affine systems.

Two routes are provided: an indirect one that abstracts the dynamics on a
lattice and extracts periodic switching patterns from the safe part of the
abstract graph, and a direct one that shrinks a box to a controllable
subspace on a cell grid and switches on line.
"""
from .direct import (
    CellGrid,
    ControllableSubspace,
    GriddySet,
    NoSafeMode,
    OnlineController,
    algorithm1,
    pre_over,
    verify_invariance,
)
from .flow import FlowMap, affine_flow, induced_inf_norm, matrix_exponential, post_point, pre_point
from .indirect import (
    AbstractGraph,
    CertificateError,
    Grid,
    SwitchingPattern,
    build_abstract_graph,
    certificate,
    find_patterns,
    safety_synthesis,
)
from .model import Box, LinearMode, SwitchedSystem, build_boost_1cell, build_boost_3cell, parse_model
from .sim import check_containment, simulate_closed_loop, simulate_pattern

__version__ = "0.1.0"
