"""Downstream protocols: test accuracy, transfer, efficiency accounting, continual learning."""
from __future__ import annotations

import csv
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbones import (ORIGINAL_GRAPH_WD, ArchSpec, GraphInput, TrainOpts, evaluate_accuracy,
                        init_params, train)
from .condense import CondenseConfig, CondensedGraph, condense, trajectory_bytes
from .graph import CSR, Graph

CGL_METHODS = ("gcond", "doscond", "doscondx", "dm", "gcdm", "random", "kcenter", "whole")


@dataclass
class TestStats:
    mean: float
    std: float
    accuracies: list

    def __str__(self):
        return f"{100 * self.mean:.1f} ± {100 * self.std:.1f}"


def _stats(accs) -> TestStats:
    a = np.asarray(accs, dtype=np.float64)
    return TestStats(float(a.mean()), float(a.std()), [float(v) for v in a])


def _eval_inputs(graph: Graph, name: str):
    g, mask = graph.eval_view(name)
    if not np.any(mask):
        raise ValueError(f"empty {name} mask")
    return GraphInput.from_graph(g), mask


def test_protocol(condensed: CondensedGraph, graph: Graph, arch: ArchSpec, repeats: int = 3,
                  seeds=None, opts: TrainOpts | None = None) -> TestStats:
    """Train fresh models on the condensed graph; report test accuracy on the original.

    Each repeat keeps the epoch with the best original-graph validation
    accuracy. Inductive graphs are scored on their val/test induced subgraphs.
    """
    seeds = list(range(repeats)) if seeds is None else list(seeds)
    if not seeds:
        raise ValueError("at least one repeat is required")
    base = opts or TrainOpts()
    val_data, val_mask = _eval_inputs(graph, "val")
    test_data, test_mask = _eval_inputs(graph, "test")
    data = condensed.to_input()
    accs = []
    for seed in seeds:
        run_opts = TrainOpts(base.epochs, base.lr, base.weight_decay, base.patience, seed)
        params = init_params(arch, graph.d, graph.num_classes, seed)
        params, _, _ = train(arch, data, params, run_opts, None, val_data, val_mask)
        accs.append(evaluate_accuracy(arch, params, test_data, test_mask))
    return _stats(accs)


test_protocol.__test__ = False  # keep pytest from collecting it when imported into test modules


def cross_arch(condensed: CondensedGraph, graph: Graph, archs, repeats: int = 3,
               opts: TrainOpts | None = None) -> dict:
    """Test accuracy of several architectures trained on one condensed graph."""
    out = {}
    for arch in archs:
        arch = ArchSpec.parse(arch) if isinstance(arch, str) else arch
        out[str(arch)] = test_protocol(condensed, graph, arch, repeats, opts=opts)
    return out


# ---------------------------------------------------------------------------
# Run results and efficiency accounting

@dataclass
class RunResult:
    method: str
    config_fingerprint: str
    seeds: list
    history: list
    test_mean: float
    test_std: float
    test_accuracies: list
    timings: dict
    peak_params: int
    extra: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "method": self.method, "config": self.config_fingerprint, "seeds": self.seeds,
            "history": self.history, "test_mean": self.test_mean, "test_std": self.test_std,
            "test_accuracies": self.test_accuracies, "timings": self.timings,
            "peak_params": self.peak_params, **self.extra,
        }


class PhaseTimer:
    """Wall-clock per phase; entering a nested phase pauses the enclosing one."""

    def __init__(self):
        self.t0 = time.perf_counter()
        self.phases: dict[str, float] = {}
        self.trace: list[tuple[float, float]] = []
        self._stack: list[list] = []

    @contextmanager
    def phase(self, name: str):
        now = time.perf_counter()
        if self._stack:
            outer = self._stack[-1]
            self.phases[outer[0]] = self.phases.get(outer[0], 0.0) + now - outer[1]
        self._stack.append([name, now])
        try:
            yield
        finally:
            end = time.perf_counter()
            name, start = self._stack.pop()
            self.phases[name] = self.phases.get(name, 0.0) + end - start
            if self._stack:
                self._stack[-1][1] = end

    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def mark(self, score: float) -> None:
        """Attach a score to the current cumulative time."""
        t = self.elapsed()
        if self.trace and t <= self.trace[-1][0]:
            t = np.nextafter(self.trace[-1][0], np.inf)
        self.trace.append((float(t), float(score)))

    def timed_validator(self, validator):
        timer = self

        class _Timed:
            name = getattr(validator, "name", "custom")

            def __call__(self, snap):
                with timer.phase("validate"):
                    score = validator(snap)
                timer.mark(score)
                return score

        return _Timed()


@dataclass
class EfficiencyReport:
    phases: dict
    total: float
    trace: list
    trajectory_seconds: float = 0.0
    trajectory_bytes: int = 0
    result: object = None


def efficiency_profile(run_fn, trajectory_dir=None, trajectory_seconds: float = 0.0) -> EfficiencyReport:
    """Call ``run_fn(timer)`` and collect phase times and the (time, score) trace.

    ``trajectory_dir`` adds the on-disk size of offline expert snapshots.
    """
    timer = PhaseTimer()
    result = run_fn(timer)
    total = timer.elapsed()
    nbytes = trajectory_bytes(trajectory_dir) if trajectory_dir is not None else 0
    return EfficiencyReport(dict(timer.phases), total, list(timer.trace), trajectory_seconds,
                            nbytes, result)


def run_experiment(graph: Graph, config: CondenseConfig, arch: ArchSpec, validator=None,
                   test_seeds=(0, 1, 2), epochs=None, trajectories=None, timer: PhaseTimer | None = None,
                   train_opts: TrainOpts | None = None):
    """Condense (with validation), then test. Returns ``(RunResult, CondenseResult)``."""
    timer = timer or PhaseTimer()
    val = timer.timed_validator(validator) if validator is not None else None
    with timer.phase("condense"):
        res = condense(graph, config, arch, val, epochs, trajectories)
    with timer.phase("test"):
        stats = test_protocol(res.condensed, graph, arch, seeds=test_seeds, opts=train_opts)
    rr = RunResult(config.method, config.fingerprint(), [config.seed, *test_seeds],
                   [r.to_dict() for r in res.records], stats.mean, stats.std, stats.accuracies,
                   {k: round(v, 6) for k, v in timer.phases.items()}, res.condensed.parameter_count(),
                   {"epochs": res.epochs_run, "budget": config.budget, "arch": str(arch)})
    return rr, res


# ---------------------------------------------------------------------------
# Continual graph learning

@dataclass
class CglReport:
    method: str
    matrix: list
    ap: float
    memory_sizes: list

    @property
    def mean_of_matrix(self) -> float:
        vals = [v for row in self.matrix for v in row if v is not None]
        return float(np.mean(vals))

    def to_record(self) -> dict:
        return {"method": self.method, "matrix": self.matrix, "ap": self.ap,
                "mean_of_matrix": self.mean_of_matrix, "memory_sizes": self.memory_sizes}


def _block_union(parts):
    """Disjoint union of memory parts ``(x, labels, adj, train_idx)``; adjacency stays sparse."""
    rows, cols, vals = [], [], []
    xs, ys, train = [], [], []
    offset = 0
    for x, y, adj, idx in parts:
        m = x.shape[0]
        if isinstance(adj, CSR):
            r, c, w = adj.rows(), adj.indices, adj.data
        elif adj is not None:
            r, c = np.nonzero(adj)
            w = adj[r, c]
        else:
            r = c = np.empty(0, np.int64)
            w = np.empty(0)
        rows.append(r + offset)
        cols.append(c + offset)
        vals.append(w)
        xs.append(x)
        ys.append(y)
        train.append(np.asarray(idx) + offset)
        offset += m
    r, c, w = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    order = np.lexsort((c, r))
    indptr = np.zeros(offset + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=offset), out=indptr[1:])
    adj = CSR(indptr, c[order].astype(np.int64), w[order].astype(np.float64), (offset, offset))
    return GraphInput(np.vstack(xs), np.concatenate(ys), adj), np.concatenate(train)


def cgl_run(tasks, method: str, budget_per_task: int, arch: ArchSpec, config: dict | None = None,
            seed: int = 0, condense_epochs: int = 50, train_opts: TrainOpts | None = None) -> CglReport:
    """Class-incremental condense-and-train over a task stream.

    Each task is condensed into ``budget_per_task`` nodes and added to the
    memory bank; a fresh model with one head over all classes seen so far is
    trained on the whole bank and scored on every seen task's test nodes.
    ``whole`` stores each task graph unchanged (upper bound).
    """
    if method == "sfgc":
        raise ValueError("sfgc is an offline method and cannot run on a task stream")
    if method not in CGL_METHODS:
        raise ValueError(f"unsupported continual-learning method {method!r}")
    # no epoch selection here, so the heavy default decay would shrink the model to zero
    opts = train_opts or TrainOpts(epochs=200, weight_decay=ORIGINAL_GRAPH_WD)
    overrides = dict(config or {})
    memory, matrix, sizes = [], [], []
    seen = 0
    for t, task in enumerate(tasks):
        classes = np.unique(task.labels[task.train_mask])
        if len(classes) < 2:
            raise ValueError(f"task {t} has fewer than two classes")
        seen = max(seen, int(classes.max()) + 1)
        if method == "whole":
            view = task.training_view()
            memory.append((np.asarray(view.features, dtype=np.float64), view.labels, view.adjacency,
                           np.flatnonzero(view.train_mask)))
        else:
            cfg = CondenseConfig(method, budget_per_task, seed=seed + t, **overrides)
            cg = condense(task, cfg, arch, epochs=condense_epochs).condensed
            memory.append((cg.x, cg.labels, cg.materialize(), np.arange(cg.n)))
        sizes.append(int(sum(len(p[3]) for p in memory)))
        bank, train_idx = _block_union(memory)
        params = init_params(arch, bank.x.shape[1], seen, seed)
        run_opts = TrainOpts(opts.epochs, opts.lr, opts.weight_decay, None, seed)
        params, _, _ = train(arch, bank, params, run_opts, train_idx)
        row = []
        for k in range(t + 1):
            data, mask = _eval_inputs(tasks[k], "test")
            row.append(evaluate_accuracy(arch, params, data, mask))
        matrix.append(row)
    return CglReport(method, matrix, float(np.mean(matrix[-1])), sizes)


# ---------------------------------------------------------------------------
# Reports

def write_jsonl(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def format_table(rows, columns) -> str:
    """Aligned plain-text table from dict rows."""
    cells = [[str(c) for c in columns]] + [[_fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def write_csv(rows, columns, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)
