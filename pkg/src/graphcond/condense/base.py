"""Condensed-graph container, configuration, initialisation and persistence."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import Tensor, ops
from ..autodiff.core import value_of
from ..backbones import ORIGINAL_GRAPH_WD, ArchSpec, GraphInput, TrainOpts, embed, init_params, train
from ..graph import ClassStats, Graph, GraphFormatError, kcenter_select, read_meta, write_meta

METHODS = ("gcond", "gcondx", "doscond", "doscondx", "gcdm", "gcdmx", "dm", "sfgc", "gdem",
           "random", "kcenter")
GRADIENT_METHODS = ("gcond", "gcondx", "doscond", "doscondx")
DISTRIBUTION_METHODS = ("gcdm", "gcdmx", "dm")
BASELINES = ("random", "kcenter")

# Nested-loop schedule per method: outer loops, inner loops, structure steps,
# feature steps. Methods without a structure learner take a single feature
# step per outer loop.
SCHEDULES = {
    "gcond": (5, 10, 10, 20), "gcdm": (5, 10, 10, 20),
    "gcondx": (5, 10, 0, 1), "gcdmx": (5, 10, 0, 1),
    "doscond": (1, 0, 10, 20),
    "doscondx": (1, 0, 0, 1), "dm": (1, 0, 0, 1),
}
STRUCTURE = {
    "gcond": "generator", "doscond": "generator", "gcdm": "explicit", "gdem": "explicit",
    "random": "explicit", "kcenter": "explicit",
}
LR_SPACE = (1e-6, 1.0)  # log-uniform search range for lr_adj / lr_feat


def structure_mode(method: str) -> str:
    return STRUCTURE.get(method, "free")


@dataclass
class CondenseConfig:
    method: str
    budget: int
    label_dist: str = "proportional"
    feat_init: str = "subgraph"
    lr_feat: float = 1e-2
    lr_adj: float = 1e-2
    lr_model: float = 0.01
    weight_decay: float = 5e-4
    outer_loops: int | None = None
    inner_loops: int | None = None
    adj_update_steps: int | None = None
    feat_update_steps: int | None = None
    max_epochs: int = 1000
    validation_interval: int = 10
    patience: int = 5
    seed: int = 0
    generator_hidden: int = 128
    # trajectory matching
    lr_student: float = 0.01
    lr_lr: float = 1e-5
    expert_epochs: int = 20
    student_epochs: int = 20
    max_start_epoch: int = 20
    student_optimizer: str = "adam"
    tm_normalized: bool = True
    # eigenbasis matching
    eigen_k: int | None = None
    eigen_low_ratio: float = 0.8
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    lr_eigvec: float = 1e-2
    gdem_normalize_e: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.budget < 1:
            raise ValueError("budget must be positive")
        if self.label_dist not in ("balanced", "proportional"):
            raise ValueError(f"unknown label distribution {self.label_dist!r}")
        if self.feat_init not in ("noise", "subgraph", "kcenter"):
            raise ValueError(f"unknown feature init {self.feat_init!r}")
        if self.student_optimizer not in ("adam", "sgd"):
            raise ValueError("student_optimizer must be adam or sgd")
        if not 0.0 <= self.eigen_low_ratio <= 1.0:
            raise ValueError("eigen_low_ratio must lie in [0, 1]")
        outer, inner, adj, feat = SCHEDULES.get(self.method, (1, 0, 0, 1))
        for name, default in (("outer_loops", outer), ("inner_loops", inner),
                              ("adj_update_steps", adj), ("feat_update_steps", feat)):
            if getattr(self, name) is None:
                setattr(self, name, default)
        if self.method in ("doscond", "doscondx", "dm") and (self.outer_loops != 1 or self.inner_loops != 0):
            raise ValueError(f"{self.method} is one-step: outer_loops=1 and inner_loops=0")
        if self.outer_loops < 1 or self.inner_loops < 0 or self.feat_update_steps < 0 or self.adj_update_steps < 0:
            raise ValueError("loop counts must be non-negative (outer >= 1)")
        if self.validation_interval < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("validation schedule values must be positive")

    @classmethod
    def from_mapping(cls, values: dict) -> "CondenseConfig":
        """Build from string values (config files, CLI overrides)."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(fields[key].type, raw)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _coerce(type_name: str, raw):
    if not isinstance(raw, str):
        return raw
    base = type_name.replace(" | None", "")
    if raw.strip().lower() in ("none", "") and "None" in type_name:
        return None
    if base == "int":
        return int(raw)
    if base == "float":
        return float(raw)
    if base == "bool":
        if raw.strip().lower() in ("1", "true", "yes", "on"):
            return True
        if raw.strip().lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return raw.strip()


# ---------------------------------------------------------------------------
# Condensed graph

@dataclass(eq=False)
class CondensedGraph:
    """Synthetic graph ``(X', A', Y')``.

    ``structure`` is ``free`` (identity adjacency, nothing stored),
    ``generator`` (pairwise MLP ``generator`` over X') or ``explicit``
    (learnable ``adj_logits`` or a fixed ``adjacency``).
    """

    x: np.ndarray
    labels: np.ndarray
    structure: str = "free"
    generator: dict | None = None
    adj_logits: np.ndarray | None = None
    adjacency: np.ndarray | None = None
    num_classes: int = 0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.structure not in ("free", "generator", "explicit"):
            raise ValueError(f"unknown structure mode {self.structure!r}")
        if self.x.shape[0] != self.labels.shape[0]:
            raise ValueError("X' and Y' disagree on node count")
        if self.structure == "generator" and self.generator is None:
            raise ValueError("generator structure needs generator parameters")
        if self.structure == "explicit" and self.adj_logits is None and self.adjacency is None:
            raise ValueError("explicit structure needs logits or a fixed adjacency")
        if not self.num_classes:
            self.num_classes = int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def materialize(self) -> np.ndarray | None:
        """Dense A' in [0, 1], or ``None`` for the identity structure."""
        if self.structure == "free":
            return None
        if self.structure == "generator":
            return value_of(structure_forward(self.generator, self.x))
        if self.adj_logits is not None:
            return value_of(explicit_adjacency(self.adj_logits))
        return self.adjacency

    def to_input(self) -> GraphInput:
        return GraphInput(self.x, self.labels, self.materialize())

    def copy(self) -> "CondensedGraph":
        dup = lambda a: None if a is None else np.array(a, copy=True)  # noqa: E731
        return CondensedGraph(
            self.x.copy(), self.labels.copy(), self.structure,
            None if self.generator is None else {k: v.copy() for k, v in self.generator.items()},
            dup(self.adj_logits), dup(self.adjacency), self.num_classes, dict(self.provenance),
        )

    def frozen(self) -> "CondensedGraph":
        """Same materialisation with the structure stored as a fixed matrix."""
        a = self.materialize()
        if a is None:
            return self.copy()
        return CondensedGraph(self.x.copy(), self.labels.copy(), "explicit", adjacency=a.copy(),
                              num_classes=self.num_classes, provenance=dict(self.provenance))

    def parameter_count(self) -> int:
        count = self.x.size
        if self.generator is not None:
            count += sum(v.size for v in self.generator.values())
        if self.adj_logits is not None:
            count += self.adj_logits.size
        return int(count)


def init_generator(d: int, hidden: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    lim1 = math.sqrt(6.0 / (2 * d + hidden))
    lim2 = math.sqrt(6.0 / (hidden + 1))
    return {
        "W1": rng.uniform(-lim1, lim1, size=(2 * d, hidden)),
        "b1": np.zeros(hidden),
        "W2": rng.uniform(-lim2, lim2, size=(hidden, 1)),
        "b2": np.zeros(1),
    }


def structure_forward(phi: dict, x) -> Tensor:
    """Symmetric pairwise-MLP adjacency ``sigmoid((f(xi|xj) + f(xj|xi)) / 2)``.

    The first layer on a concatenated pair splits into a term per endpoint, so
    all pairs are scored at once via ``pair_sum``.
    """
    x = x if isinstance(x, Tensor) else np.asarray(x)
    m = value_of(x).shape[0]
    d = value_of(x).shape[1]
    w1 = phi["W1"]
    left = ops.matmul(x, _rows(w1, 0, d))
    right = ops.matmul(x, _rows(w1, d, 2 * d))
    hidden = ops.relu(ops.add(ops.pair_sum(left, right), phi["b1"]))
    scores = ops.reshape(ops.add(ops.matmul(hidden, phi["W2"]), phi["b2"]), (m, m))
    sym = ops.scale(ops.add(scores, ops.transpose(scores)), 0.5)
    return ops.sigmoid(sym)


def _rows(w, start, stop):
    if isinstance(w, Tensor):
        sel = np.zeros((w.shape[0], stop - start))
        sel[np.arange(start, stop), np.arange(stop - start)] = 1.0
        return ops.matmul(ops.transpose(sel), w)
    return np.asarray(w)[start:stop]


def explicit_adjacency(logits) -> Tensor:
    """``sigmoid((Z + Z^T) / 2)`` for learnable dense logits ``Z``."""
    return ops.sigmoid(ops.scale(ops.add(logits, ops.transpose(logits)), 0.5))


# ---------------------------------------------------------------------------
# Initialisation

def init_labels(strategy: str, budget: int, class_stats: ClassStats) -> np.ndarray:
    """Per-class node counts expanded into a class-sorted label vector."""
    counts = np.asarray(class_stats.counts, dtype=np.int64)
    present = counts > 0
    n_present = int(present.sum())
    if budget < n_present:
        raise ValueError(f"budget {budget} is smaller than the number of classes {n_present}")
    alloc = np.zeros_like(counts)
    if strategy == "balanced":
        ids = np.flatnonzero(present)
        alloc[ids] = budget // n_present
        alloc[ids[: budget % n_present]] += 1
    elif strategy == "proportional":
        quota = budget * counts / counts.sum()
        alloc = np.floor(quota).astype(np.int64)
        alloc[present] = np.maximum(alloc[present], 1)
        rem = quota - np.floor(quota)
        left = budget - int(alloc.sum())
        # stable sort keeps the lowest class id first on equal remainders
        if left > 0:
            for c in np.argsort(-rem, kind="stable")[:left]:
                alloc[c] += 1
        while left < 0:
            donors = np.flatnonzero(alloc > 1)
            c = donors[np.lexsort((-donors, rem[donors]))[0]]
            alloc[c] -= 1
            left += 1
    else:
        raise ValueError(f"unknown label strategy {strategy!r}")
    return np.repeat(np.arange(len(counts)), alloc)


def _pretrained_embeddings(graph: Graph, seed: int, epochs: int = 50) -> np.ndarray:
    view = graph.training_view()
    arch = ArchSpec("gcn")
    data = GraphInput.from_graph(view)
    params = init_params(arch, view.d, view.num_classes, seed)
    params, _, _ = train(arch, data, params, TrainOpts(epochs=epochs, weight_decay=ORIGINAL_GRAPH_WD, seed=seed), view.train_mask)
    return view, value_of(embed(arch, params, data.operator(arch), data.x))


def init_features(strategy: str, graph: Graph, labels: np.ndarray, seed: int):
    """Initial X' plus the training-view node ids it was copied from (or ``None``)."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    if strategy == "noise":
        return rng.standard_normal((len(labels), graph.d)), None
    view = graph.training_view()
    stats = view.class_stats()
    per_class = np.bincount(labels, minlength=stats.num_classes)
    for c, need in enumerate(per_class):
        if need > stats.counts[c]:
            raise ValueError(f"class {c} needs {need} nodes but has {stats.counts[c]} train nodes")
    if strategy == "subgraph":
        chosen = np.concatenate([
            rng.choice(stats.indices[c], size=need, replace=False) if need else np.empty(0, np.int64)
            for c, need in enumerate(per_class)
        ]).astype(np.int64)
    elif strategy == "kcenter":
        view, emb = _pretrained_embeddings(graph, seed)
        chosen = kcenter_from_embeddings(emb, stats, per_class)
    else:
        raise ValueError(f"unknown feature init {strategy!r}")
    return np.array(view.features[chosen], dtype=np.float64), chosen


def kcenter_from_embeddings(emb: np.ndarray, stats: ClassStats, per_class) -> np.ndarray:
    """Per-class greedy k-center over train nodes, mapped back to node ids."""
    parts = []
    for c, need in enumerate(per_class):
        if need:
            idx = np.asarray(stats.indices[c])
            parts.append(idx[kcenter_select(emb[idx], int(need))])
    return np.concatenate(parts).astype(np.int64) if parts else np.empty(0, np.int64)


# ---------------------------------------------------------------------------
# Persistence

def save_condensed(cg: CondensedGraph, path, budget: int | None = None, config_hash: str = "") -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    a = cg.materialize()
    write_meta(path / "meta", {
        "method": cg.provenance.get("method", "unknown"),
        "budget": budget if budget is not None else cg.n,
        "structure": "free" if a is None else "explicit",
        "config_hash": config_hash or cg.provenance.get("config_hash", ""),
        "n": cg.n, "d": cg.x.shape[1], "num_classes": cg.num_classes, "dtype": "f8",
    })
    np.ascontiguousarray(cg.x, dtype="<f8").tofile(path / "xprime.bin")
    np.ascontiguousarray(cg.labels, dtype="<i4").tofile(path / "yprime.bin")
    if a is not None:
        np.ascontiguousarray(a, dtype="<f8").tofile(path / "aprime.bin")


def load_condensed(path) -> CondensedGraph:
    path = Path(path)
    meta = read_meta(path / "meta")
    try:
        n, d, c = int(meta["n"]), int(meta["d"]), int(meta["num_classes"])
    except (KeyError, ValueError) as exc:
        raise GraphFormatError(f"{path}: bad condensed-graph meta ({exc})") from None
    x = np.fromfile(path / "xprime.bin", dtype="<f8")
    y = np.fromfile(path / "yprime.bin", dtype="<i4")
    if x.size != n * d or y.size != n:
        raise GraphFormatError(f"{path}: condensed arrays do not match meta")
    adj = None
    if meta.get("structure") == "explicit":
        adj = np.fromfile(path / "aprime.bin", dtype="<f8")
        if adj.size != n * n:
            raise GraphFormatError(f"{path}: aprime.bin has {adj.size} entries, expected {n * n}")
        adj = adj.reshape(n, n)
    return CondensedGraph(x.reshape(n, d).astype(np.float64), y.astype(np.int64),
                          "free" if adj is None else "explicit", adjacency=adj, num_classes=c,
                          provenance={"method": meta.get("method", "unknown"),
                                      "config_hash": meta.get("config_hash", "")})


# ---------------------------------------------------------------------------
# Driver shared by all learnable methods

@dataclass
class CondenseResult:
    condensed: CondensedGraph
    losses: list
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    epochs_run: int = 0
    elapsed: float = 0.0


class Condenser:
    """One condensation run advanced an epoch at a time."""

    def __init__(self, graph: Graph, config: CondenseConfig):
        self.graph = graph
        self.config = config
        self.view = graph.training_view()
        self.stats = self.view.class_stats()
        self.epoch = 0
        self.losses: list[float] = []

    def step(self) -> float:
        loss = self._epoch(self.epoch)
        self.epoch += 1
        self.losses.append(float(loss))
        return float(loss)

    def _epoch(self, epoch: int) -> float:  # pragma: no cover - abstract
        raise NotImplementedError

    def current(self) -> CondensedGraph:  # pragma: no cover - abstract
        raise NotImplementedError


def run_condenser(condenser: Condenser, validator=None, epochs: int | None = None,
                  keep_snapshots: bool = False, on_validate=None) -> CondenseResult:
    """Run epochs; with a validator the validation loop picks the snapshot."""
    from ..validate import validation_loop

    t0 = time.perf_counter()
    cfg = condenser.config
    if validator is None:
        for _ in range(epochs or cfg.max_epochs):
            condenser.step()
        best, records, snaps = condenser.current().copy(), [], []
    else:
        def step_fn(epoch):
            condenser.step()
            return condenser.current()

        best, records, snaps = validation_loop(
            step_fn, validator, interval=cfg.validation_interval, patience=cfg.patience,
            max_epochs=epochs or cfg.max_epochs, keep_snapshots=keep_snapshots,
            on_validate=on_validate)
    best.provenance.update(method=cfg.method, config_hash=cfg.fingerprint())
    return CondenseResult(best, list(condenser.losses), records, snaps, condenser.epoch,
                          time.perf_counter() - t0)
