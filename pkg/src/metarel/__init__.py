"""Reference-guided instance reweighting with elite expansion for noisy relation classification."""

__version__ = "0.1.0"

from .data import Corpus, SimConfig, load_corpus, sample_reference, simulate_ds  # noqa: E402
from .meta_reweight import meta_step  # noqa: E402
from .metrics import Metrics, elite_precision, micro_prf, weight_noise_auc  # noqa: E402
from .pcnn import PCNN, EmbeddingTable, Instance, PcnnConfig, RelationSchema  # noqa: E402
from .trainer import TrainConfig, evaluate, train  # noqa: E402

__all__ = [
    "Corpus", "SimConfig", "load_corpus", "sample_reference", "simulate_ds", "meta_step",
    "Metrics", "elite_precision", "micro_prf", "weight_noise_auc", "PCNN", "EmbeddingTable",
    "Instance", "PcnnConfig", "RelationSchema", "TrainConfig", "evaluate", "train",
]
