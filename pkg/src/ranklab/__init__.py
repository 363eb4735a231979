"""Popularity-ranked click dynamics: simulation, limit analysis, estimation,
and a live click-experiment service."""

from .model import (
    Environment,
    Population,
    Ranking,
    choice_distribution,
    expected_choice_distribution,
    initial_ranking,
    propensity,
    sample_click,
    sample_type,
    total_class_probability,
    update_ranking,
)

__version__ = "0.1.0"

__all__ = [
    "Environment",
    "Population",
    "Ranking",
    "choice_distribution",
    "expected_choice_distribution",
    "initial_ranking",
    "propensity",
    "sample_click",
    "sample_type",
    "total_class_probability",
    "update_ranking",
    "__version__",
]
