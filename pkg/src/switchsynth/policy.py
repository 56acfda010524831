"""Numeric tolerances shared by every module."""
from dataclasses import dataclass


@dataclass(frozen=True)
class NumericPolicy:
    expm_rtol: float = 1e-12
    flow_atol: float = 1e-9
    max_condition: float = 1e12
    # slack used when snapping box bounds onto a lattice (relative to the pitch)
    lattice_snap: float = 1e-9
    # outward padding of image boxes so float rounding cannot lose a hit
    image_pad: float = 1e-12
    certificate_slack: float = 1e-12


DEFAULT_POLICY = NumericPolicy()
