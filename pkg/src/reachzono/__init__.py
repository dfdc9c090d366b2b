"""Output reachability for unknown LTI systems from noisy input-output data.

Formal matrix-zonotope propagation with deterministic containment, a
transformer surrogate for tighter set prediction, and split conformal
calibration for distribution-free coverage.
"""

__version__ = "0.1.0"

from .setalg import IntervalBox, MatrixZonotope, Zonotope  # noqa: F401
