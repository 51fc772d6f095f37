"""fasbench: a desk-scale face anti-spoofing research framework.

Vision transformer with register tokens, spoof-artifact augmentation,
dual-level (global + attention-weighted patch) loss, and cross-domain
leave-one-out evaluation, built on a minimal reverse-mode autodiff core.
"""

from .labels import LIVE, SPOOF, UNLABELED
from .tensor import Tensor, backward, finite_diff_check, no_grad

__version__ = "0.1.0"

__all__ = [
    "LIVE",
    "SPOOF",
    "UNLABELED",
    "Tensor",
    "backward",
    "finite_diff_check",
    "no_grad",
    "__version__",
]
