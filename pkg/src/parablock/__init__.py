"""Simulator for block-wise federated training with overlapped communication."""

from .compression import TopKConfig, topk_compress, topk_roundtrip
from .engine import (
    FedConfig, RunResult, fedbcd_run, fedcybgd_run, local_block_training, parablock_run, run,
    sequential_bcd,
)
from .errors import (
    ConfigError, InvariantViolation, NumericError, ParaBlockError, PartitionError, ShapeError,
)
from .local_opt import AdamWConfig, SgdConfig, adamw_step, sgd_step
from .objectives import (
    LogisticObjective, MLPObjective, QuadraticObjective, data_suite, dirichlet_partition,
    make_classification, quadratic_suite,
)
from .params import BlockPartition, make_partition

__all__ = [
    "AdamWConfig", "BlockPartition", "ConfigError", "FedConfig", "InvariantViolation",
    "LogisticObjective", "MLPObjective", "NumericError", "ParaBlockError", "PartitionError",
    "QuadraticObjective", "RunResult", "SgdConfig", "ShapeError", "TopKConfig", "adamw_step",
    "data_suite", "dirichlet_partition", "fedbcd_run", "fedcybgd_run", "local_block_training",
    "make_classification", "make_partition", "parablock_run", "quadratic_suite", "run",
    "sequential_bcd", "sgd_step", "topk_compress", "topk_roundtrip",
]
