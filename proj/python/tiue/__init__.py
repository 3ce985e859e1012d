# SPDX-License-Identifier: Apache-2.0
"""Shared-encoder diffusion toolkit: loop-free sampling, toy data and generative metrics."""

from ._tiue import (
    Model,
    TiueError,
    alpha_bars,
    combine_loopfree,
    cond_embed,
    density_coverage,
    frechet,
    generate_dataset,
    interpolate_conditions,
    make_plan,
    normality_stats,
    pixel_features,
    precision_recall,
)

__all__ = [
    "Model",
    "TiueError",
    "alpha_bars",
    "combine_loopfree",
    "cond_embed",
    "density_coverage",
    "frechet",
    "generate_dataset",
    "interpolate_conditions",
    "make_plan",
    "normality_stats",
    "pixel_features",
    "precision_recall",
]
