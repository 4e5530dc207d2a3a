"""Bandwidth-constrained federated logit distillation: channel, bounds,
allocation, and the synthetic experiment drivers."""

from . import adaptive, alloc, bounds, quant, sim, simplex, wire

__version__ = "0.1.0"

__all__ = ["adaptive", "alloc", "bounds", "quant", "sim", "simplex", "wire", "__version__"]
