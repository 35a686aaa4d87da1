"""Deterministic numerics: tail tables, first passage, closed forms, bounds."""

from .bounds import (
    chernoff_summand_bound,
    chernoff_tail_bound,
    default_tilt,
    edge_rate,
    optimal_tilt,
    tilt_speed,
    tilted_exponent,
    tilted_exponent_limit,
)
from .nearest import (
    local_deviation_rate,
    log_local_deviation_rate,
    log_passage_window_prob,
    log_simple_walk_passage_pmf,
    simple_walk_exponent,
    simple_walk_optimal_tilt,
    simple_walk_passage_pmf,
    single_lineage_reach_prob,
    single_lineage_tail,
)
from .passage import (
    FirstPassageSolution,
    OvershootLaw,
    check_supermultiplicativity,
    ell_bar_table,
    first_passage_pgf,
    overshoot_pgf,
    passage_log_table,
    renewal_prediction,
    scaled_passage_table,
)
from .tail import ScaledTail, TailTable, scaled_tail, solve_tail

__all__ = [
    "check_supermultiplicativity",
    "chernoff_summand_bound",
    "chernoff_tail_bound",
    "default_tilt",
    "edge_rate",
    "ell_bar_table",
    "first_passage_pgf",
    "FirstPassageSolution",
    "local_deviation_rate",
    "log_local_deviation_rate",
    "log_passage_window_prob",
    "log_simple_walk_passage_pmf",
    "optimal_tilt",
    "overshoot_pgf",
    "OvershootLaw",
    "passage_log_table",
    "renewal_prediction",
    "scaled_passage_table",
    "scaled_tail",
    "ScaledTail",
    "simple_walk_exponent",
    "simple_walk_optimal_tilt",
    "simple_walk_passage_pmf",
    "single_lineage_reach_prob",
    "single_lineage_tail",
    "solve_tail",
    "TailTable",
    "tilt_speed",
    "tilted_exponent",
    "tilted_exponent_limit",
]
