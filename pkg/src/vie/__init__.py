"""Video instance embedding: unit-sphere embeddings of video frame samples,
trained with instance recognition or local aggregation against a memory bank.
"""

from .config import TrainConfig
from .embedding import MemoryBank, SoftmaxParams, instance_probability, normalize, set_probability
from .evaluation import evaluate, linear_probe, nmi, retrieve
from .synthetic import SynthSpec, generate, read_dataset, write_dataset
from .training import train

__all__ = [
    "MemoryBank", "SoftmaxParams", "SynthSpec", "TrainConfig", "evaluate", "generate", "instance_probability",
    "linear_probe", "nmi", "normalize", "read_dataset", "retrieve", "set_probability", "train", "write_dataset",
]
__version__ = "0.1.0"
