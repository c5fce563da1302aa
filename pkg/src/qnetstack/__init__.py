"""Discrete-event simulator of a two-node quantum network link layer."""

__version__ = "0.1.0"

from .apps import run_fidelity_sweep, run_latency, run_program, run_rsp, run_tomography
from .noise import NoiseParams
from .stack import Network

__all__ = ["Network", "NoiseParams", "run_program", "run_tomography", "run_fidelity_sweep",
           "run_rsp", "run_latency", "__version__"]
