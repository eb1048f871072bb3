"""Adaptive finite elements for elliptic optimal control with bang-bang controls.

The control is variationally discretized: it is never discretized itself
but recovered pointwise from the sign of the discrete adjoint state.
"""
from .adaptive import (ConvergenceRecord, LoopConfig, adaptive_loop, fit_rate, mark,
                       uniform_loop)
from .benchmarks import get_problem, problem_ex1, problem_ex2, problem_ex3
from .estimators import compute_indicators, iota, jump
from .fem import FeFunction, assemble_load, assemble_mass, assemble_stiffness, solve_dirichlet
from .mesh import TriangleMesh, bisect, generate_domain, star, uniform_refine
from .ocp import BangBangControl, ControlBounds, fixed_point_solve, sign_partition
from .quadrature import degree19_rule

__version__ = "0.1.0"

__all__ = [
    "ConvergenceRecord", "LoopConfig", "adaptive_loop", "fit_rate", "mark", "uniform_loop",
    "get_problem", "problem_ex1", "problem_ex2", "problem_ex3",
    "compute_indicators", "iota", "jump",
    "FeFunction", "assemble_load", "assemble_mass", "assemble_stiffness", "solve_dirichlet",
    "TriangleMesh", "bisect", "generate_domain", "star", "uniform_refine",
    "BangBangControl", "ControlBounds", "fixed_point_solve", "sign_partition",
    "degree19_rule",
]
