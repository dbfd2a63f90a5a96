"""Distributed stability certification of networked polynomial systems with vector Lyapunov functions."""

from .poly import Polynomial, Universe, parse
from .sdp import SdpProblem, SolverOptions, solve
from .sos import SosProgram
from .model import Network, generate_vdp_network
from .lyap import LyapunovFn, synth_quadratic_lf
from .certify import ComparisonMatrix, ProtocolOptions, run_protocol

__version__ = "0.1.0"

__all__ = [
    "ComparisonMatrix",
    "LyapunovFn",
    "Network",
    "Polynomial",
    "ProtocolOptions",
    "SdpProblem",
    "SolverOptions",
    "SosProgram",
    "Universe",
    "generate_vdp_network",
    "parse",
    "run_protocol",
    "solve",
    "synth_quadratic_lf",
]
