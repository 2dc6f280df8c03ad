"""Dyadic martingale H^1 on [0,1]^d: grid functions, maximal and square
functions, atoms with black cubes, the stopping-time decomposition, and
radial maximal experiments."""
from .dyadic import CubeId, DyadicError, GridFunction
from .hardy import NormReport, h1_maximal, h1_norms, h1_square, maximal_function, square_function
from .atoms import Atom, AtomReport, validate_atom
from .decomposition import DecompositionResult, build_stopping_tree, decompose, reconstruct
from .shells import ShellFunction, h1_of_shell_function, lower_bound_h
from .radial import RadialKernel, convolve, kernel_normalize, linearized_T, maximal_radial

__version__ = "0.1.0"

__all__ = [
    "Atom", "AtomReport", "CubeId", "DecompositionResult", "DyadicError", "GridFunction",
    "NormReport", "RadialKernel", "ShellFunction", "build_stopping_tree", "convolve",
    "decompose", "h1_maximal", "h1_norms", "h1_of_shell_function", "h1_square",
    "kernel_normalize", "linearized_T", "lower_bound_h", "maximal_function",
    "maximal_radial", "reconstruct", "square_function", "validate_atom",
]
