"""Train-less accuracy prediction: difficulty scoring, the experiment
database, chain encoding, the predictor, and predictor-driven search."""

from neunets.tapas.lde import ExperimentRecord, LDEStore, lde_select, merge_lde
from neunets.tapas.probe import PROBE_EPOCHS, PROBE_RESOLUTION, compute_dcn, probe_net
from neunets.tapas.space import (
    CHAIN_KINDS,
    SearchSpace,
    chain_cut_ids,
    lower_chain,
    sample_search_space,
)
from neunets.tapas.encode import N_FEATURES, encode_pair, encoding_rows
from neunets.tapas.tap import TAPModel, predict_accuracy, train_tap
from neunets.tapas.search import (
    DESK_SPACE,
    TapasSearchResult,
    bootstrap_lde,
    tapas_search,
)

__all__ = [
    "ExperimentRecord",
    "LDEStore",
    "lde_select",
    "merge_lde",
    "PROBE_EPOCHS",
    "PROBE_RESOLUTION",
    "compute_dcn",
    "probe_net",
    "CHAIN_KINDS",
    "SearchSpace",
    "chain_cut_ids",
    "lower_chain",
    "sample_search_space",
    "N_FEATURES",
    "encode_pair",
    "encoding_rows",
    "TAPModel",
    "predict_accuracy",
    "train_tap",
    "DESK_SPACE",
    "TapasSearchResult",
    "bootstrap_lde",
    "tapas_search",
]
