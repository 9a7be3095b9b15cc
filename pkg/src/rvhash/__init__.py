"""rvhash: learned binary image hashing with random-VLAD aggregation.

Train a small conv backbone + VLAD/transform/hash/prediction stack with
hand-derived gradients, binarize the hash layer, and retrieve by packed
Hamming distance. See the CLI (`rvhash --help`) for the file-based
pipeline and `RvssdhHasher` for the scikit-learn style API.
"""

from .errors import ConfigError, DataError, NumericError, RvhashError, ShapeError
from .estimator import RvssdhHasher
from .loss import LossConfig
from .model import ModelConfig
from .train import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "RvssdhHasher",
    "ModelConfig",
    "TrainConfig",
    "LossConfig",
    "RvhashError",
    "ShapeError",
    "ConfigError",
    "DataError",
    "NumericError",
    "__version__",
]
