"""Constraint energy minimizing GMsFEM with online adaptive enrichment.

Typical use::

    g = build_hierarchy(10, 10, 20)
    offline = OfflineModel(g, generate_default_medium(g, 1e4), num_aux=3, layers=2)
    state = offline.problem(SourceTerm("f1")).enrich(theta=0.1, max_iters=3)
"""
from .config import ExperimentConfig, load_config, parse_config
from .driver import (
    ErrorRecord,
    MultiscaleSpace,
    OfflineModel,
    compute_errors,
    convergence_rate,
    run_experiment,
    solve_coarse,
    solve_reference,
)
from .femops import build_partition_of_unity, kappa_tilde
from .grid import build_hierarchy, coarse_element_region, oversample, vertex_neighborhood
from .medium import Medium, SourceTerm, generate_default_medium, load_medium, save_medium
from .offline import build_auxiliary_space, build_cem_basis, build_global_basis
from .online import build_online_basis, enrich_step, select_regions

__version__ = "0.1.0"
