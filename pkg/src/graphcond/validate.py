"""Validators that score condensed-graph snapshots, and the early-stopping loop."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .backbones import ArchSpec, GraphInput, TrainOpts, init_params, train
from .graph import CSR, Graph, normalize_adjacency


@dataclass
class ValidationRecord:
    epoch: int
    validator: str
    score: float
    wall_time: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "validator": self.validator, "score": self.score,
                "wall_time": self.wall_time}


class CondensationError(RuntimeError):
    """A condenser step failed; ``history`` holds the records gathered so far."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class GntkConfig:
    layers: int = 2
    ridge: float = 1e-6
    mode: str = "gntk"
    hops: int = 2   # propagation depth of the linear fallback

    def __post_init__(self):
        if self.ridge <= 0:
            raise ValueError("ridge must be positive")
        if self.layers < 0 or self.hops < 0:
            raise ValueError("layers and hops must be non-negative")
        if self.mode not in ("gntk", "linear"):
            raise ValueError(f"unknown GNTK mode {self.mode!r}")

    @classmethod
    def parse(cls, text: str) -> "GntkConfig":
        """``gntk``, ``gntk:mode=linear``, ``gntk:layers=3,ridge=1e-4``."""
        head, _, rest = text.partition(":")
        if head.strip() != "gntk":
            raise ValueError(f"not a GNTK validator spec: {text!r}")
        kw = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, _, val = item.partition("=")
            conv = {"layers": int, "hops": int, "ridge": float, "mode": str}.get(key.strip())
            if conv is None:
                raise ValueError(f"bad GNTK option {item!r}")
            kw[key.strip()] = conv(val.strip())
        return cls(**kw)


# ---------------------------------------------------------------------------
# GNN validator

class GnnValidator:
    """Train a fresh backbone on the snapshot; score is its best validation accuracy."""

    def __init__(self, graph: Graph, arch: ArchSpec, seed: int = 0, epochs: int = 200,
                 opts: TrainOpts | None = None):
        if arch.variant not in ("gcn", "sgc"):
            raise ValueError("GNN validators are GCN or SGC")
        self.graph, self.arch, self.seed, self.epochs = graph, arch, seed, epochs
        self.opts = opts or TrainOpts(epochs=epochs, seed=seed)
        val_graph, self.mask = graph.eval_view("val")
        if not np.any(self.mask):
            raise ValueError("empty validation mask")
        self.eval_data = GraphInput.from_graph(val_graph)
        self.name = arch.variant

    def __call__(self, condensed) -> float:
        params = init_params(self.arch, self.graph.d, self.graph.num_classes, self.seed)
        _, curve, _ = train(self.arch, condensed.to_input(), params, self.opts, None,
                            self.eval_data, self.mask)
        return float(max(curve))


def validate_gnn(condensed, graph: Graph, arch: ArchSpec, seed: int = 0, epochs: int = 200) -> float:
    return GnnValidator(graph, arch, seed, epochs)(condensed)


# ---------------------------------------------------------------------------
# GNTK validator

def _operator(adj):
    if adj is None:
        return None
    if isinstance(adj, (Graph, CSR)):
        return normalize_adjacency(adj, "sym")
    return normalize_adjacency(np.asarray(adj), "sym")


def _apply(op, m):
    if op is None:
        return m
    return op.dot(m) if isinstance(op, CSR) else op @ m


def _aggregate(op_a, m, op_b):
    """``A_a M A_b^T`` for symmetric operators."""
    return _apply(op_a, _apply(op_b, m.T).T)


def _relu_maps(sigma, diag_a, diag_b):
    norm = np.sqrt(np.outer(diag_a, diag_b))
    safe = np.where(norm > 0, norm, 1.0)
    cos = np.clip(np.where(norm > 0, sigma / safe, 0.0), -1.0, 1.0)
    theta = np.arccos(cos)
    k = norm / (2 * math.pi) * (np.sin(theta) + (math.pi - theta) * cos)
    k_dot = (math.pi - theta) / (2 * math.pi)
    return k, k_dot


def gntk_kernel(features_a, adj_a, features_b, adj_b, layers: int = 2) -> np.ndarray:
    """Node-level GNTK between two graphs (``adj=None`` is identity aggregation).

    Adjacencies are raw; each side is aggregated with its self-loop
    symmetric normalisation. Each layer aggregates the covariance and the
    kernel, then applies the ReLU arc-cosine maps.
    """
    xa = np.asarray(features_a, dtype=np.float64)
    xb = np.asarray(features_b, dtype=np.float64)
    if xa.shape[1] != xb.shape[1]:
        raise ValueError("feature dimensions differ")
    op_a, op_b = _operator(adj_a), _operator(adj_b)
    s_ab = xa @ xb.T
    s_aa = xa @ xa.T
    s_bb = xb @ xb.T
    theta = s_ab.copy()
    for _ in range(layers):
        s_ab = _aggregate(op_a, s_ab, op_b)
        s_aa = _aggregate(op_a, s_aa, op_a)
        s_bb = _aggregate(op_b, s_bb, op_b)
        theta = _aggregate(op_a, theta, op_b)
        da, db = np.diag(s_aa).copy(), np.diag(s_bb).copy()
        k, k_dot = _relu_maps(s_ab, da, db)
        theta = theta * k_dot + k
        s_ab = k
        s_aa = _relu_maps(s_aa, da, da)[0]
        s_bb = _relu_maps(s_bb, db, db)[0]
    return theta


def _linear_features(x, adj, hops):
    op = _operator(adj)
    h = np.asarray(x, dtype=np.float64)
    for _ in range(hops):
        h = _apply(op, h)
    return h


def kernel_ridge_predict(k_cross, k_cond, targets, ridge: float) -> np.ndarray:
    """``K_cross (K_cond + ridge * s I)^-1 Y`` via Cholesky.

    ``s`` is the mean diagonal of ``K_cond`` so the ridge is relative to the
    kernel scale. Jitter grows tenfold if the factorisation fails.
    """
    m = k_cond.shape[0]
    scale = float(np.mean(np.diag(k_cond))) if m else 1.0
    scale = scale if scale > 0 else 1.0
    jitter = ridge * scale
    for _ in range(12):
        try:
            chol = np.linalg.cholesky(k_cond + jitter * np.eye(m))
            break
        except np.linalg.LinAlgError:
            jitter *= 10.0
    else:  # pragma: no cover - needs a pathological kernel
        raise np.linalg.LinAlgError("kernel matrix could not be regularised")
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, targets))
    return k_cross @ alpha


class GntkValidator:
    """Kernel ridge regression from the condensed nodes to the validation nodes."""

    def __init__(self, graph: Graph, config: GntkConfig | None = None):
        self.config = config or GntkConfig()
        self.graph = graph
        val_graph, mask = graph.eval_view("val")
        if not np.any(mask):
            raise ValueError("empty validation mask")
        self.val_graph, self.mask = val_graph, mask
        self.name = "gntk" if self.config.mode == "gntk" else "gntk-linear"

    def __call__(self, condensed) -> float:
        cfg = self.config
        a_cond = condensed.materialize()
        x_cond = condensed.x
        if cfg.mode == "gntk":
            k_cross = gntk_kernel(self.val_graph.features, self.val_graph, x_cond, a_cond, cfg.layers)
            k_cond = gntk_kernel(x_cond, a_cond, x_cond, a_cond, cfg.layers)
        else:
            fa = _linear_features(self.val_graph.features, self.val_graph, cfg.hops)
            fb = _linear_features(x_cond, a_cond, cfg.hops)
            k_cross, k_cond = fa @ fb.T, fb @ fb.T
        k_cond = 0.5 * (k_cond + k_cond.T)
        y = np.zeros((condensed.n, self.graph.num_classes))
        y[np.arange(condensed.n), condensed.labels] = 1.0
        pred = kernel_ridge_predict(k_cross[self.mask], k_cond, y, cfg.ridge)
        labels = self.val_graph.labels[self.mask]
        return float(np.mean(np.argmax(pred, axis=1) == labels))


def validate_gntk(condensed, graph: Graph, config: GntkConfig | None = None) -> float:
    return GntkValidator(graph, config)(condensed)


def make_validator(spec: str, graph: Graph, seed: int = 0, epochs: int = 200):
    """``gcn``, ``sgc`` (or any ArchSpec text for those) or ``gntk[:opts]``."""
    spec = spec.strip()
    if spec.startswith("gntk"):
        return GntkValidator(graph, GntkConfig.parse(spec))
    return GnnValidator(graph, ArchSpec.parse(spec), seed, epochs)


# ---------------------------------------------------------------------------
# Validation loop

def validation_loop(condenser_step_fn, validator, interval: int = 10, patience: int = 5,
                    max_epochs: int = 1000, keep_snapshots: bool = False, on_validate=None):
    """Advance a condenser and keep the best-scoring snapshot.

    ``condenser_step_fn(epoch)`` runs epoch ``epoch`` (1-based) and returns the
    live condensed graph. Every ``interval`` epochs a copy is scored; the run
    stops after ``patience`` validations without a strict improvement or at
    ``max_epochs``. Returns ``(best_snapshot, records, snapshots)``.
    """
    if interval < 1 or patience < 1 or max_epochs < 1:
        raise ValueError("interval, patience and max_epochs must be positive")
    name = getattr(validator, "name", getattr(validator, "__name__", "custom"))
    records: list[ValidationRecord] = []
    snapshots = []
    best, best_score, stale = None, -math.inf, 0
    current = None
    t0 = time.perf_counter()
    for epoch in range(1, max_epochs + 1):
        try:
            current = condenser_step_fn(epoch)
        except Exception as exc:
            raise CondensationError(f"condenser failed at epoch {epoch}: {exc}", records) from exc
        if epoch % interval:
            continue
        snap = current.copy()
        score = float(validator(snap))
        rec = ValidationRecord(epoch, name, score, time.perf_counter() - t0)
        records.append(rec)
        if on_validate is not None:
            on_validate(rec, snap)
        if keep_snapshots:
            snapshots.append((epoch, snap))
        if score > best_score:
            best, best_score, stale = snap, score, 0
        else:
            stale += 1
            if stale >= patience:
                break
    if best is None:
        best = current.copy() if current is not None and hasattr(current, "copy") else current
    return best, records, snapshots
