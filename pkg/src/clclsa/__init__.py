"""Attention-gated multi-view classification with cross-view latent completion.

The package is organized as:

- `numerics`: 2-D float64 tensors, reverse-mode differentiation, Adam,
  deterministic labeled RNG streams.
- `model`: the CLCLSA graph (gating, embedding, fusion, cross-view
  autoencoders, the four loss terms), presets, checkpoints.
- `data`: multi-view dataset container, CSV I/O, missing-mask simulation,
  synthetic data generation, train/test splits.
- `train`: the training loop, learning-rate schedule, grid search.
- `evaluation`: classification metrics and the experiment runners
  (missing-rate sweeps, partial-view runs, hyperparameter surfaces,
  ablations) plus report emission.
- `cli`: the `clclsa` command-line entry point.
"""

from . import numerics, model, data, train, evaluation

__version__ = "0.1.0"

__all__ = ["numerics", "model", "data", "train", "evaluation", "__version__"]
