"""CRB and rate analysis of hybrid radar fusion receivers with low-resolution ADCs."""

__version__ = "0.1.0"

from .quantizer import QuantizerSpec, design_lloyd_max, quantize
from .scenario import ScenarioConfig, build_channels, default_scenario, scenario_from_geometry
from .signal import PrecoderSet, Symbols, default_precoders, draw_symbols, synthesize_noiseless
from .crb import ParameterVector, crb_from_fim, ideal_fim, jacobian, quantized_fim
from .bussgang import fim_lower_bound, rate_lower_bound
from .estimator import make_experiment, mse_vs_crb_sweep, stochastic_resonance_sweep
from .boundary import BoundaryQuery, solve_p0, solve_p1, trace_frontier, min_bits_scan

__all__ = [
    "QuantizerSpec", "design_lloyd_max", "quantize",
    "ScenarioConfig", "build_channels", "default_scenario", "scenario_from_geometry",
    "PrecoderSet", "Symbols", "default_precoders", "draw_symbols", "synthesize_noiseless",
    "ParameterVector", "crb_from_fim", "ideal_fim", "jacobian", "quantized_fim",
    "fim_lower_bound", "rate_lower_bound",
    "make_experiment", "mse_vs_crb_sweep", "stochastic_resonance_sweep",
    "BoundaryQuery", "solve_p0", "solve_p1", "trace_frontier", "min_bits_scan",
]
