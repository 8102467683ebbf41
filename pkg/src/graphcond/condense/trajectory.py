"""Expert trajectories and trajectory matching (SFGC)."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import AdamState, Tape, Tensor, adam_step, load_params, ops, save_params
from ..autodiff.core import value_of
from ..backbones import (CONDENSATION_BACKBONES, ORIGINAL_GRAPH_WD, ArchSpec, GraphInput, TrainOpts,
                         init_params, logits_for, symbolic_gradients)
from ..graph import Graph
from .base import CondenseConfig, CondensedGraph, Condenser, init_features, init_labels, run_condenser

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


@dataclass
class Trajectory:
    arch: ArchSpec
    seed: int
    epochs: list
    snapshots: list
    files: list = field(default_factory=list)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.epochs, self.epochs[1:])):
            raise ValueError("snapshot epochs must strictly increase")
        if len(self.epochs) != len(self.snapshots):
            raise ValueError("one snapshot per epoch index required")
        if self.snapshots:
            shapes = {k: v.shape for k, v in self.snapshots[0].items()}
            for snap in self.snapshots[1:]:
                if {k: v.shape for k, v in snap.items()} != shapes:
                    raise ValueError("snapshots are not shape-compatible")

    def at(self, epoch: int) -> dict:
        try:
            return self.snapshots[self.epochs.index(epoch)]
        except ValueError:
            raise KeyError(f"no snapshot at epoch {epoch}") from None


def _traj_dir(root, arch: ArchSpec, seed: int) -> Path:
    return Path(root) / arch.variant / str(seed)


def generate_expert_trajectories(graph: Graph, arch: ArchSpec, count: int = 8, epochs: int = 100,
                                 snapshot_interval: int = 10, seed: int = 0, out_dir=None,
                                 opts: TrainOpts | None = None) -> list[Trajectory]:
    """Train ``count`` independent experts on the original (training-view) graph.

    Snapshots are taken at epoch 0 and every ``snapshot_interval`` epochs. With
    ``out_dir`` each trajectory is written to ``<out_dir>/<arch>/<seed>/``,
    one ``<epoch>.params`` file per snapshot.
    """
    if count < 1 or snapshot_interval < 1 or epochs < 1:
        raise ValueError("count, epochs and snapshot_interval must be positive")
    opts = opts or TrainOpts(weight_decay=ORIGINAL_GRAPH_WD)
    view = graph.training_view()
    data = GraphInput.from_graph(view)
    train_idx = np.flatnonzero(view.train_mask)
    out = []
    for k in range(count):
        run_seed = seed + k
        rng = np.random.default_rng(run_seed)
        params = init_params(arch, view.d, view.num_classes, run_seed)
        state = AdamState()
        snap_epochs, snaps = [0], [params]
        for ep in range(1, epochs + 1):
            tape = Tape()
            pt = {n: tape.param(v) for n, v in params.items()}
            loss = ops.cross_entropy(logits_for(arch, pt, data, True, rng), data.labels, train_idx)
            grads = tape.backward(loss)
            params = adam_step(params, {n: grads[t] for n, t in pt.items()}, state, opts.lr,
                               opts.weight_decay)
            if ep % snapshot_interval == 0:
                snap_epochs.append(ep)
                snaps.append(params)
        traj = Trajectory(arch, run_seed, snap_epochs, snaps)
        if out_dir is not None:
            folder = _traj_dir(out_dir, arch, run_seed)
            for ep, snap in zip(snap_epochs, snaps):
                path = folder / f"{ep}.params"
                save_params(snap, path)
                traj.files.append(path)
        out.append(traj)
    return out


def load_trajectories(root, arch: ArchSpec) -> list[Trajectory]:
    base = Path(root) / arch.variant
    out = []
    if not base.is_dir():
        return out
    for folder in sorted((p for p in base.iterdir() if p.is_dir() and p.name.isdigit()),
                         key=lambda p: int(p.name)):
        files = sorted((f for f in folder.iterdir() if re.fullmatch(r"\d+\.params", f.name)),
                       key=lambda f: int(f.stem))
        if files:
            out.append(Trajectory(arch, int(folder.name), [int(f.stem) for f in files],
                                  [load_params(f) for f in files], files))
    return out


def trajectory_bytes(root) -> int:
    """Bytes on disk of every snapshot file under ``root``."""
    return sum(f.stat().st_size for f in Path(root).rglob("*.params"))


def tm_loss(student: dict, expert: dict, start: dict, normalized: bool = True) -> Tensor:
    """``||theta'_{t+M} - theta*_{t+N}||^2 / ||theta_t - theta*_{t+N}||^2`` over all parameters.

    A denominator below 1e-12 (or ``normalized=False``) leaves the raw numerator.
    """
    if student.keys() != expert.keys() or start.keys() != expert.keys():
        raise ValueError("parameter sets differ")
    num = None
    den = 0.0
    for k in expert:
        if value_of(student[k]).shape != np.shape(expert[k]) or np.shape(start[k]) != np.shape(expert[k]):
            raise ValueError(f"shape mismatch for {k}")
        term = ops.frobenius_sq(ops.sub(student[k], expert[k]))
        num = term if num is None else ops.add(num, term)
        den += float(np.sum((np.asarray(start[k]) - expert[k]) ** 2))
    if not normalized or den < 1e-12:
        return num
    return ops.scale(num, 1.0 / den)


def unroll_student(arch: ArchSpec, theta: dict, x, labels, steps: int, lr, optimizer: str = "adam") -> dict:
    """Differentiable ``steps`` optimizer steps on the structure-free condensed graph.

    ``lr`` may be a tracked shape-(1,) tensor; gradients then reach it as well
    as ``x`` through every step.
    """
    labels = np.asarray(labels)
    idx = np.arange(len(labels))
    n = float(len(labels))
    m = {k: None for k in theta}
    v = {k: None for k in theta}
    for s in range(1, steps + 1):
        g = symbolic_gradients(arch, theta, None, x, labels, idx, n)
        new = {}
        for k in theta:
            if optimizer == "sgd":
                upd = g[k]
            else:
                m[k] = ops.scale(g[k], 1 - BETA1) if m[k] is None else \
                    ops.add(ops.scale(m[k], BETA1), ops.scale(g[k], 1 - BETA1))
                g2 = ops.mul(g[k], g[k])
                v[k] = ops.scale(g2, 1 - BETA2) if v[k] is None else \
                    ops.add(ops.scale(v[k], BETA2), ops.scale(g2, 1 - BETA2))
                mhat = ops.scale(m[k], 1.0 / (1 - BETA1 ** s))
                vhat = ops.scale(v[k], 1.0 / (1 - BETA2 ** s))
                upd = ops.div(mhat, ops.add(ops.sqrt(vhat), EPS))
            new[k] = ops.sub(theta[k], ops.mul(upd, lr))
        theta = new
    return theta


class TrajectoryCondenser(Condenser):
    def __init__(self, graph: Graph, config: CondenseConfig, arch: ArchSpec, trajectories):
        super().__init__(graph, config)
        if config.method != "sfgc":
            raise ValueError("trajectory matching runs the sfgc method only")
        if arch.variant not in CONDENSATION_BACKBONES:
            raise ValueError(f"{arch.variant} cannot be used as a condensation backbone")
        if not trajectories:
            raise ValueError("no expert trajectories supplied")
        self.arch = arch
        self.trajectories = list(trajectories)
        self.labels = init_labels(config.label_dist, config.budget, self.stats)
        self.x, _ = init_features(config.feat_init, graph, self.labels, config.seed)
        self.lr = np.array([config.lr_student])
        self.x_state, self.lr_state = AdamState(), AdamState()
        self.rng = np.random.default_rng(config.seed + 11)

    def current(self) -> CondensedGraph:
        return CondensedGraph(self.x, self.labels, "free", num_classes=self.stats.num_classes,
                              provenance={"method": "sfgc", "epoch": self.epoch,
                                          "lr_student": float(self.lr[0])})

    def sample_segment(self):
        cfg = self.config
        traj = self.trajectories[self.rng.integers(len(self.trajectories))]
        starts = [e for e in traj.epochs
                  if e <= cfg.max_start_epoch and e + cfg.expert_epochs in traj.epochs]
        if not starts:
            raise ValueError(
                f"trajectory (seed {traj.seed}, last epoch {traj.epochs[-1]}) has no start "
                f"<= {cfg.max_start_epoch} with a snapshot {cfg.expert_epochs} epochs later")
        t = int(self.rng.choice(starts))
        return traj.at(t), traj.at(t + cfg.expert_epochs)

    def _epoch(self, epoch: int) -> float:
        cfg = self.config
        start, target = self.sample_segment()
        if cfg.student_epochs == 0:
            return float(value_of(tm_loss(start, target, start, cfg.tm_normalized)))
        tape = Tape()
        x = tape.param(self.x)
        lr = tape.param(self.lr)
        student = unroll_student(self.arch, start, x, self.labels, cfg.student_epochs, lr,
                                 cfg.student_optimizer)
        loss = tm_loss(student, target, start, cfg.tm_normalized)
        grads = tape.backward(loss)
        self.x = adam_step([self.x], [grads[x]], self.x_state, cfg.lr_feat)[0]
        self.lr = np.maximum(adam_step([self.lr], [grads[lr]], self.lr_state, cfg.lr_lr)[0], 1e-6)
        return float(loss.value)


def tm_condense(graph: Graph, config: CondenseConfig, arch: ArchSpec, trajectories, validator=None,
                epochs: int | None = None, keep_snapshots: bool = False):
    """Structure-free trajectory matching against pre-generated expert runs."""
    return run_condenser(TrajectoryCondenser(graph, config, arch, trajectories), validator, epochs,
                         keep_snapshots)
