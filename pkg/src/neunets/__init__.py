"""NeuNetS-style neural-architecture synthesis engine.

Given a labeled image or text dataset and a compute budget, searches, trains,
and exports a classifier network using three coarse-grained strategies
(neuro-cell evolution, train-less accuracy prediction, successive-halving
bandit search) plus an optional fine-grained grow-prune-merge refinement pass.
"""

__version__ = "0.1.0"
