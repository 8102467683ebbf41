"""Condensed-graph initialisation and the matching-method optimisers."""
import time

from .base import (BASELINES, DISTRIBUTION_METHODS, GRADIENT_METHODS, LR_SPACE, METHODS, SCHEDULES,
                   CondenseConfig, CondensedGraph, CondenseResult, Condenser, explicit_adjacency,
                   init_features, init_generator, init_labels, load_condensed, run_condenser,
                   save_condensed, structure_forward, structure_mode)
from .eigen import EigenBasis, EigenCondenser, gdem_adjacency, gdem_condense, gdem_losses, gdem_precompute
from .matching import (DistributionCondenser, GradientCondenser, dm_condense, dm_loss, gm_condense,
                       gm_loss)
from .select import baseline_select
from .trajectory import (Trajectory, TrajectoryCondenser, generate_expert_trajectories,
                         load_trajectories, tm_condense, tm_loss, trajectory_bytes, unroll_student)


def make_condenser(graph, config: CondenseConfig, arch, trajectories=None) -> Condenser:
    """Condenser object for any learnable method."""
    if config.method in GRADIENT_METHODS:
        return GradientCondenser(graph, config, arch)
    if config.method in DISTRIBUTION_METHODS:
        return DistributionCondenser(graph, config, arch)
    if config.method == "sfgc":
        return TrajectoryCondenser(graph, config, arch, trajectories)
    if config.method == "gdem":
        return EigenCondenser(graph, config)
    raise ValueError(f"{config.method} is not a learnable condensation method")


def condense(graph, config: CondenseConfig, arch, validator=None, epochs=None, trajectories=None,
             keep_snapshots: bool = False) -> CondenseResult:
    """Run any method; selection baselines return immediately."""
    if config.method in BASELINES:
        t0 = time.perf_counter()
        cg = baseline_select(graph, config.method, config.budget, config.seed, config.label_dist)
        cg.provenance["config_hash"] = config.fingerprint()
        return CondenseResult(cg, [], epochs_run=0, elapsed=time.perf_counter() - t0)
    return run_condenser(make_condenser(graph, config, arch, trajectories), validator, epochs,
                         keep_snapshots)


__all__ = [
    "BASELINES", "DISTRIBUTION_METHODS", "GRADIENT_METHODS", "LR_SPACE", "METHODS", "SCHEDULES",
    "CondenseConfig", "CondenseResult", "CondensedGraph", "Condenser", "DistributionCondenser",
    "EigenBasis", "EigenCondenser", "GradientCondenser", "Trajectory", "TrajectoryCondenser",
    "baseline_select", "condense", "dm_condense", "dm_loss", "explicit_adjacency",
    "gdem_adjacency", "gdem_condense", "gdem_losses", "gdem_precompute",
    "generate_expert_trajectories", "gm_condense", "gm_loss", "init_features", "init_generator",
    "init_labels", "load_condensed", "load_trajectories", "make_condenser", "run_condenser",
    "save_condensed", "structure_forward", "structure_mode", "tm_condense", "tm_loss",
    "trajectory_bytes", "unroll_student",
]
