"""Coordinated downlink beamforming solved as a conic program by ADMM.

Modules
-------
cones        cone products, duals and projections
conic        standard-form conic problem, stuffing template and rebuild path
hsd          splitting solver on the homogeneous self-dual embedding
beamforming  QoS feasibility, max-min bisection and zero-forcing baseline
scenario     scenario files and the channel model
experiments  Monte-Carlo sweeps and benchmarks
cli          command-line entry point
"""

from .beamforming import (
    BeamformerSet,
    ChannelRealization,
    NetworkConfig,
    feasibility_solve,
    max_min_bisection,
    zf_baseline,
)
from .cones import ConeProduct, project_product, project_soc
from .conic import ConicProblem, build_from_scratch, build_template, stuff
from .hsd import SolverSettings, SolveResult, Status, solve

__all__ = [
    "BeamformerSet", "ChannelRealization", "ConeProduct", "ConicProblem", "NetworkConfig", "SolveResult",
    "SolverSettings", "Status", "build_from_scratch", "build_template", "feasibility_solve",
    "max_min_bisection", "project_product", "project_soc", "solve", "stuff", "zf_baseline",
]
__version__ = "0.1.0"
