"""Architecture intermediate representation: layer DAGs, templates, costs, files."""

from neunets.ir.layers import KIND_TABLE, LAYER_KINDS, WEIGHTED_KINDS, LayerSpec
from neunets.ir.graph import (
    NetworkGraph,
    check_weight_shapes,
    backward,
    evaluate,
    evaluate_with_tape,
    infer_shapes,
    initialize_weights,
    validate_classifier,
    validate_graph,
)
from neunets.ir.costs import CostReport, count_costs, layer_costs
from neunets.ir.serialize import deserialize, load_model, save_model, serialize
from neunets.ir.template import (
    SLOT_INPUT,
    CellLayer,
    NeuroCell,
    cell_instances_identical,
    expand_residual_block,
    initial_cell,
    instantiate_template,
)

__all__ = [
    "KIND_TABLE",
    "LAYER_KINDS",
    "WEIGHTED_KINDS",
    "LayerSpec",
    "NetworkGraph",
    "check_weight_shapes",
    "backward",
    "evaluate",
    "evaluate_with_tape",
    "infer_shapes",
    "initialize_weights",
    "validate_classifier",
    "validate_graph",
    "CostReport",
    "count_costs",
    "layer_costs",
    "deserialize",
    "load_model",
    "save_model",
    "serialize",
    "SLOT_INPUT",
    "CellLayer",
    "NeuroCell",
    "cell_instances_identical",
    "expand_residual_block",
    "initial_cell",
    "instantiate_template",
]
