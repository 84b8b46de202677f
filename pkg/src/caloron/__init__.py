"""Caloron construction from holomorphic maps on S^2 x disk via a heat flow."""
from .geometry import ProductGrid
from .holomap import EtaField, blip, load_map, zero_field
from .hymflow import FlowConfig, HermitianMetricField, run_flow
from .looporbit import LoopAlgebraElement

__version__ = "0.1.0"

__all__ = ["ProductGrid", "EtaField", "blip", "load_map", "zero_field", "FlowConfig",
           "HermitianMetricField", "run_flow", "LoopAlgebraElement", "__version__"]
