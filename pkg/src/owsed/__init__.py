"""Open-world sound event detection: a temporal deformable set-prediction
detector that localizes known sound events, flags unseen ones as unknown,
and learns new classes incrementally with exemplar replay."""

__version__ = "0.1.0"

from .config import RunConfig, load_config, save_config

__all__ = ["RunConfig", "load_config", "save_config", "__version__"]
