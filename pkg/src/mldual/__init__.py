"""Critical points of the likelihood on rank-constrained matrix models, and ML-duality."""

__version__ = "0.1.0"

from .models import ModelSpec, ModelPoint  # noqa: E402
from .critsys import CriticalPoint  # noqa: E402

__all__ = ["ModelSpec", "ModelPoint", "CriticalPoint", "__version__"]
