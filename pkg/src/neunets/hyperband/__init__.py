"""Successive-halving search over four model representations, with
dataset grouping for warm starts."""

from neunets.hyperband.configspace import (
    LEVEL1_OPS,
    REPRESENTATIONS,
    ConfigSpace,
    decode_genome,
    optimizer_from_genome,
    sample_config,
    sample_genome,
)
from neunets.hyperband.groups import (
    META_FEATURE_NAMES,
    DatasetGroup,
    GroupStore,
    assign_group,
    meta_features,
)
from neunets.hyperband.runner import HyperbandResult, run_hyperband
from neunets.hyperband.schedule import (
    Bracket,
    HyperbandSchedule,
    Rung,
    build_schedule,
)

__all__ = [
    "LEVEL1_OPS",
    "REPRESENTATIONS",
    "ConfigSpace",
    "decode_genome",
    "optimizer_from_genome",
    "sample_config",
    "sample_genome",
    "META_FEATURE_NAMES",
    "DatasetGroup",
    "GroupStore",
    "assign_group",
    "meta_features",
    "HyperbandResult",
    "run_hyperband",
    "Bracket",
    "HyperbandSchedule",
    "Rung",
    "build_schedule",
]
