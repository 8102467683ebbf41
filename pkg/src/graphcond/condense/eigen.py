"""Eigenbasis matching (GDEM)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import AdamState, Tape, adam_step, jacobi_eigh, ops
from ..autodiff.core import value_of
from ..graph import Graph, normalize_adjacency
from .base import CondenseConfig, CondensedGraph, Condenser, init_features, init_labels, run_condenser


@dataclass
class EigenBasis:
    values: np.ndarray      # (K,) selected Laplacian eigenvalues
    vectors: np.ndarray     # (n, K)
    h: np.ndarray           # (C, d) class-aggregated features Y^T A X
    proj: np.ndarray        # (K, d) U^T X
    n_low: int

    @property
    def k(self) -> int:
        return len(self.values)

    @property
    def e_scale(self) -> float:
        """Sum of ||X^T u_k u_k^T X||_F^2 over the selected subspaces."""
        return float(np.sum(np.sum(self.proj ** 2, axis=1) ** 2))


def eigen_split(k: int, low_ratio: float = 0.8) -> tuple[int, int]:
    k_low = min(k, math.ceil(low_ratio * k))
    return k_low, k - k_low


def gdem_precompute(graph: Graph, k: int, low_ratio: float = 0.8) -> EigenBasis:
    """Eigenpairs of ``L = I - A_hat`` on the training view.

    Keeps the ``ceil(low_ratio * k)`` smallest and the remaining largest
    eigenvalues. ``H = Y^T A_hat X`` uses one-hot train labels and the same
    normalised adjacency whose spectrum is matched.
    """
    view = graph.training_view()
    n = view.n
    if not 1 <= k <= n:
        raise ValueError(f"K={k} must lie in [1, {n}]")
    a_hat = normalize_adjacency(view, "sym").to_dense()
    lap = np.eye(n) - a_hat
    w, v = jacobi_eigh(0.5 * (lap + lap.T))
    k_low, k_high = eigen_split(k, low_ratio)
    sel = np.r_[np.arange(k_low), np.arange(n - k_high, n)].astype(np.int64)
    x = np.asarray(view.features, dtype=np.float64)
    y = np.zeros((n, view.num_classes))
    idx = np.flatnonzero(view.train_mask)
    y[idx, view.labels[idx]] = 1.0
    u = v[:, sel]
    return EigenBasis(w[sel], u, y.T @ a_hat @ x, u.T @ x, k_low)


def _onehot(labels, c):
    out = np.zeros((len(labels), c))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def gdem_losses(x_syn, u_syn, labels_syn, basis: EigenBasis, alpha: float = 1.0, beta: float = 1.0,
                gamma: float = 1.0, normalize_e: bool = False):
    """``(L_e, L_d, L_o, L_match)`` for synthetic features X' and basis U'.

    ``L_e`` expands ``||p p^T - q q^T||_F^2 = |p|^4 + |q|^4 - 2 (p.q)^2`` per
    subspace with ``p = X^T u_k`` and ``q = X'^T u'_k``, so no d x d matrix is
    formed. With ``normalize_e`` it is divided by the real-side energy.
    """
    k = basis.k
    if value_of(u_syn).shape[1] != k:
        raise ValueError(f"U' has {value_of(u_syn).shape[1]} columns, basis has {k}")
    p = basis.proj
    q = ops.matmul(ops.transpose(u_syn), x_syn)                     # K x d
    q_sq = ops.sum_axis(ops.mul(q, q), 1)                           # K x 1
    pq = ops.sum_axis(ops.mul(q, p), 1)
    p_sq = np.sum(p * p, axis=1)
    l_e = ops.add(ops.sub(ops.sum(ops.mul(q_sq, q_sq)), ops.scale(ops.sum(ops.mul(pq, pq)), 2.0)),
                  float(np.sum(p_sq ** 2)))
    if normalize_e and basis.e_scale > 0:
        l_e = ops.scale(l_e, 1.0 / basis.e_scale)

    c = basis.h.shape[0]
    y_syn = _onehot(np.asarray(labels_syn), c)
    weighted = ops.mul(q, (1.0 - basis.values)[:, None])
    h_syn = ops.matmul(ops.matmul(y_syn.T, u_syn), weighted)        # C x d
    h_norm = np.linalg.norm(basis.h, axis=1, keepdims=True)
    h_unit = basis.h / np.where(h_norm > 0, h_norm, 1.0)
    syn_norm = ops.sqrt(ops.add(ops.sum_axis(ops.mul(h_syn, h_syn), 1), 1e-24))
    cos = ops.matmul(h_unit, ops.transpose(ops.div(h_syn, syn_norm)))  # C x C
    trace = ops.sum(ops.mul(cos, np.eye(c)))
    l_d = ops.add(ops.sub(ops.sum(cos), ops.scale(trace, 2.0)), float(c))

    gram = ops.sub(ops.matmul(ops.transpose(u_syn), u_syn), np.eye(k))
    l_o = ops.frobenius_sq(gram)
    total = ops.add(ops.add(ops.scale(l_e, alpha), ops.scale(l_d, beta)), ops.scale(l_o, gamma))
    return l_e, l_d, l_o, total


def gdem_adjacency(u_syn, values) -> np.ndarray:
    """``sum_k (1 - lambda_k) u'_k u'_k^T``, symmetrised and clamped to [0, 1]."""
    u = value_of(u_syn)
    a = (u * (1.0 - values)) @ u.T
    return np.clip(0.5 * (a + a.T), 0.0, 1.0)


class EigenCondenser(Condenser):
    """Joint Adam on X' and U'; no backbone is involved."""

    def __init__(self, graph: Graph, config: CondenseConfig, basis: EigenBasis | None = None):
        super().__init__(graph, config)
        if config.method != "gdem":
            raise ValueError("eigenbasis matching runs the gdem method only")
        self.labels = init_labels(config.label_dist, config.budget, self.stats)
        n_syn = len(self.labels)
        k = config.eigen_k if config.eigen_k is not None else n_syn
        k = min(k, n_syn, self.view.n)
        self.basis = basis if basis is not None else gdem_precompute(graph, k, config.eigen_low_ratio)
        if self.basis.k > n_syn:
            raise ValueError("K cannot exceed the condensed node count")
        self.x, _ = init_features(config.feat_init, graph, self.labels, config.seed)
        rng = np.random.default_rng(config.seed + 3)
        self.u, _ = np.linalg.qr(rng.standard_normal((n_syn, self.basis.k)))
        self.x_state, self.u_state = AdamState(), AdamState()
        self.parts = []

    def losses(self):
        cfg = self.config
        return gdem_losses(self.x, self.u, self.labels, self.basis, cfg.alpha, cfg.beta, cfg.gamma,
                           cfg.gdem_normalize_e)

    def current(self) -> CondensedGraph:
        return CondensedGraph(self.x, self.labels, "explicit",
                              adjacency=gdem_adjacency(self.u, self.basis.values),
                              num_classes=self.stats.num_classes,
                              provenance={"method": "gdem", "epoch": self.epoch})

    def _epoch(self, epoch: int) -> float:
        cfg = self.config
        first = None
        for _ in range(max(1, cfg.feat_update_steps)):
            tape = Tape()
            x, u = tape.param(self.x), tape.param(self.u)
            parts = gdem_losses(x, u, self.labels, self.basis, cfg.alpha, cfg.beta, cfg.gamma,
                                cfg.gdem_normalize_e)
            grads = tape.backward(parts[3])
            if first is None:
                first = float(parts[3].value)
                self.parts.append(tuple(float(t.value) for t in parts))
            self.x = adam_step([self.x], [grads[x]], self.x_state, cfg.lr_feat)[0]
            self.u = adam_step([self.u], [grads[u]], self.u_state, cfg.lr_eigvec)[0]
        return first


def gdem_condense(graph: Graph, config: CondenseConfig, validator=None, epochs: int | None = None,
                  keep_snapshots: bool = False, basis: EigenBasis | None = None):
    return run_condenser(EigenCondenser(graph, config, basis), validator, epochs, keep_snapshots)
