"""Empirical check that a transformation left the network function intact."""

from __future__ import annotations

import numpy as np

from neunets.errors import MorphismError
from neunets.ir import NetworkGraph, evaluate


def _random_inputs(graph: NetworkGraph, rng: np.random.Generator, batch: int):
    shape = tuple(graph.metadata["input_shape"])
    kinds = {spec.kind for spec in graph.layers}
    if "embedding" in kinds:
        vocab = min(
            int(spec.attrs["vocab_size"])
            for spec in graph.layers if spec.kind == "embedding"
        )
        return rng.integers(0, vocab, size=(batch, *shape))
    return rng.normal(size=(batch, *shape)).astype(np.float32)


def verify_function_preserving(before: NetworkGraph, after: NetworkGraph,
                               trials: int = 50, tol: float = 1e-5,
                               seed: int = 0, batch: int = 2) -> dict:
    """Max output deviation over random inputs; passes iff it stays ≤ tol.

    Evaluation runs in inference mode (dropout off, batch-norm moving
    stats), which is the mode the preservation guarantees are stated for.
    """
    meta_b = (tuple(before.metadata.get("input_shape", ())),
              before.metadata.get("n_classes"))
    meta_a = (tuple(after.metadata.get("input_shape", ())),
              after.metadata.get("n_classes"))
    if meta_b != meta_a:
        raise MorphismError(
            f"graphs describe different problems: {meta_b} vs {meta_a}"
        )
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = _random_inputs(before, rng, batch)
        ya = evaluate(before, x)
        yb = evaluate(after, x)
        if isinstance(ya, dict) or isinstance(yb, dict):
            if not isinstance(ya, dict) or set(ya) != set(yb):
                raise MorphismError("graphs expose different outputs")
            diff = max(float(np.abs(ya[k] - yb[k]).max()) for k in ya)
        else:
            if ya.shape != yb.shape:
                raise MorphismError(
                    f"output shapes differ: {ya.shape} vs {yb.shape}"
                )
            diff = float(np.abs(ya - yb).max())
        worst = max(worst, diff)
    return {
        "max_abs_diff": worst,
        "trials": trials,
        "tol": tol,
        "passed": worst <= tol,
    }
