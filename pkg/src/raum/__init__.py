"""raum: occlusion-robust semi-supervised fine-grained classification.

Selective state-space backbone, spatial region attention, MC-dropout
uncertainty filtering of pseudo-labels, and a FixMatch-style two-stream
training loop, all on a procedural synthetic dataset and a single CPU.
"""

from .kernels import backend_name
from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "backend_name", "__version__"]
