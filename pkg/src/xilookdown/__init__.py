"""Lookdown particle systems for Xi-coalescents at finite truncation."""
from __future__ import annotations

__version__ = "0.1.0"

from .partitions import Partition, SubsetSystem, coagulate, format_partition, parse_partition
from .xi_model import XiMeasure, classify_dust, rate_pi, rate_sigma, xi_from_json
from .rng import SeedSpec
from .event_stream import EventStream, ReproductionEvent, generate, generate_two_sided
from .lookdown import MarkedState, PlainState, apply_pi, apply_sigma, compose, detect_jumps, evolve
from .mmspace import FiniteMMSpace, ghp_small, gromov_prohorov_small, prohorov_distance
from .coalescent import equilibrium_tree, simulate, to_newick

__all__ = [
    "__version__", "Partition", "SubsetSystem", "coagulate", "format_partition", "parse_partition",
    "XiMeasure", "classify_dust", "rate_pi", "rate_sigma", "xi_from_json", "SeedSpec",
    "EventStream", "ReproductionEvent", "generate", "generate_two_sided",
    "MarkedState", "PlainState", "apply_pi", "apply_sigma", "compose", "detect_jumps", "evolve",
    "FiniteMMSpace", "ghp_small", "gromov_prohorov_small", "prohorov_distance",
    "equilibrium_tree", "simulate", "to_newick",
]
