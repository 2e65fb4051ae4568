"""Distributed nearest-neighbor search over network delay spaces.

Library layout: ``delay_space`` loads matrices and computes inframetric
analytics, ``coordinates`` maintains network coordinates, ``rings`` is the
per-node neighbor store, ``protocols`` holds the search/maintenance state
machines, ``simulator`` the deterministic event engine, ``metrics`` the
quality metrics, and ``cli`` the batch entry point.
"""

__version__ = "0.1.0"

from .coordinates import Coordinate, VivaldiParams, bootstrap_target, distance, vivaldi_update
from .delay_space import (
    BallQuery,
    DelayDataError,
    DelayMatrix,
    alpha_of,
    ball,
    ball_volume,
    compute_inframetric_stats,
    delta_ratio,
    exact_nearest,
    gen_synthetic,
    growth_at,
    growth_stats,
    instance_rho,
    load_matrix,
    required_samples,
    rho_of_triple,
    rho_stats,
    ring_occupancy,
    save_matrix,
    search_hop_bound,
    verify_sandwich,
)
from .metrics import (
    QueryRecord,
    absolute_error,
    ccdf,
    is_exact_hit,
    relative_error,
    search_hops,
    summarize,
)
from .protocols import (
    ALGORITHMS,
    Mode,
    NodeState,
    ProtocolParams,
    QueryMessage,
    QueryOutcome,
    run_query,
)
from .rings import ConcentricRing, RingEntry, ring_index
from .simulator import ByteCostModel, ConfigError, RunReport, SimConfig, account_bytes, run

__all__ = [name for name in dir() if not name.startswith("_")]
