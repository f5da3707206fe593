"""Joint slot-filling and intent-detection engine.

A bi-directional LSTM encoder with attention feeds an interrelated pair of
subnets (slot-filling side and intent-detection side) that exchange
reinforce vectors over a configurable number of iterations, with optional
linear-chain CRF decoding on top of the slot scores.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, grad_check, no_grad

__all__ = ["Tensor", "grad_check", "no_grad", "__version__"]
