"""blowpack: randomized packing of bounded-degree guest collections into
super-regular multipartite or quasirandom host graphs, with verification
tooling for regularity, refinement, pseudorandom hypergraph matchings,
per-cluster packing steps, and completion."""

from .graphs import BipartitePair, Graph
from .instances import ExtendedBlowUpInstance, Guest, validate_extended_instance
from .regularity import (
    RegularityVerdict,
    density,
    exception_count,
    quasirandomness_verdict,
    regularity_verdict,
    residual_pair,
    super_regularity_verdict,
    typicality_verdict,
)
from .splitter import RefinedPartition, SplitConfig, check_refinement, refine_collection

__all__ = [
    "BipartitePair",
    "Graph",
    "Guest",
    "ExtendedBlowUpInstance",
    "validate_extended_instance",
    "RegularityVerdict",
    "density",
    "exception_count",
    "quasirandomness_verdict",
    "regularity_verdict",
    "residual_pair",
    "super_regularity_verdict",
    "typicality_verdict",
    "RefinedPartition",
    "SplitConfig",
    "check_refinement",
    "refine_collection",
]

__version__ = "0.1.0"
