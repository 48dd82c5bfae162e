"""PPO with surprise-minimizing rewards on seeded procedural grid games."""
from .config import PRESETS, ExperimentConfig
from .density import NormalSurpriseModel, VAESurpriseModel
from .estimator import SurprisePPO
from .harness import MetricsLog, evaluate, generalization_gap, run_experiment, smooth
from .preprocessing import GrayscaleTransformer

__all__ = [
    "PRESETS",
    "ExperimentConfig",
    "GrayscaleTransformer",
    "MetricsLog",
    "NormalSurpriseModel",
    "SurprisePPO",
    "VAESurpriseModel",
    "evaluate",
    "generalization_gap",
    "run_experiment",
    "smooth",
]
__version__ = "0.1.0"
