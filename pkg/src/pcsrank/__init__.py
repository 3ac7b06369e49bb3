"""Tie-aware pairwise-comparison ranking toolkit.

Learns latent per-item scores directly from item feature vectors using a
multi-loss objective (3-class softmax + margin ranking hinge + tie
contraction), benchmarks against classical paired-comparison models
(Elo, two-player Gaussian skill updates, Rank Centrality, Rao-Kupper),
and runs a live survey service with balanced-exposure pair scheduling.
"""

from pcsrank.core import Comparison, Dataset, Item, SplitSpec, make_dataset, split, swap_augment

__all__ = [
    "Comparison",
    "Dataset",
    "Item",
    "SplitSpec",
    "make_dataset",
    "split",
    "swap_augment",
]

__version__ = "0.1.0"
