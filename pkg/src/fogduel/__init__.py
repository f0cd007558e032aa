"""Actor/learner Q-training on a deterministic fog-of-war macro duel."""

from .sim import RULES_VERSION

__version__ = "0.1.0"
__all__ = ["RULES_VERSION", "__version__"]
