"""Gradient matching and distribution matching condensers."""
from __future__ import annotations

import numpy as np

from ..autodiff import AdamState, Tape, Tensor, adam_step, ops
from ..autodiff.core import value_of
from ..backbones import (CONDENSATION_BACKBONES, ArchSpec, GraphInput, embed, forward,
                         init_params, param_gradients, prepare_adjacency, symbolic_gradients)
from ..graph import ClassStats, Graph
from .base import (DISTRIBUTION_METHODS, GRADIENT_METHODS, CondenseConfig, CondensedGraph,
                   Condenser, explicit_adjacency, init_features, init_generator, init_labels,
                   run_condenser, structure_forward, structure_mode)


def gm_loss(real_grads, syn_grads) -> Tensor:
    """Sum over parameters (and over classes, for nested lists) of column-wise 1 - cos.

    Each argument is a list of gradient dicts (one per class) or a single
    dict. Parameter names must match.
    """
    if isinstance(real_grads, dict):
        real_grads, syn_grads = [real_grads], [syn_grads]
    if len(real_grads) != len(syn_grads):
        raise ValueError("real and synthetic gradient lists differ in length")
    total = None
    for real, syn in zip(real_grads, syn_grads):
        if real.keys() != syn.keys():
            raise ValueError("gradient sets name different parameters")
        for name in real:
            term = ops.cosine_columns_distance(real[name], syn[name])
            total = term if total is None else ops.add(total, term)
    if total is None:
        raise ValueError("no gradients to match")
    return total


def dm_loss(embeddings_real, embeddings_syn, class_stats: ClassStats, labels_syn) -> Tensor:
    """Sum over classes of the squared distance between class-mean embeddings.

    Real class members come from ``class_stats`` (train nodes); synthetic ones
    from ``labels_syn``. A class present on only one side raises ``ValueError``.
    """
    e_real = value_of(embeddings_real)
    if e_real.shape[1] != value_of(embeddings_syn).shape[1]:
        raise ValueError("embedding widths differ")
    labels_syn = np.asarray(labels_syn)
    total = None
    for c in range(max(class_stats.num_classes, int(labels_syn.max()) + 1)):
        real_idx = class_stats.indices[c] if c < class_stats.num_classes else np.empty(0)
        syn_idx = np.flatnonzero(labels_syn == c)
        if len(real_idx) == 0 and len(syn_idx) == 0:
            continue
        if len(real_idx) == 0 or len(syn_idx) == 0:
            raise ValueError(f"class {c} is present on only one side")
        target = e_real[np.asarray(real_idx)].mean(axis=0, keepdims=True)
        term = ops.frobenius_sq(ops.sub(ops.mean_rows(embeddings_syn, syn_idx), target))
        total = term if total is None else ops.add(total, term)
    if total is None:
        raise ValueError("no classes to match")
    return total


class NestedCondenser(Condenser):
    """Shared nested-loop schedule.

    Each epoch draws a fresh backbone. Every outer loop fixes the real-side
    targets at the current weights, takes ``adj_update_steps`` Adam steps on
    the structure and ``feat_update_steps`` on X', then trains the backbone
    for ``inner_loops`` steps on the current condensed graph.
    """

    methods: tuple = ()

    def __init__(self, graph: Graph, config: CondenseConfig, arch: ArchSpec):
        super().__init__(graph, config)
        if config.method not in self.methods:
            raise ValueError(f"{type(self).__name__} does not run {config.method!r}")
        if arch.variant not in CONDENSATION_BACKBONES:
            raise ValueError(f"{arch.variant} cannot be used as a condensation backbone")
        self.arch = arch
        self.real = GraphInput.from_graph(self.view)
        self.train_idx = np.flatnonzero(self.view.train_mask)
        self.labels = init_labels(config.label_dist, config.budget, self.stats)
        x, chosen = init_features(config.feat_init, graph, self.labels, config.seed)
        self.x = x
        self.mode = structure_mode(config.method)
        self.phi = self.logits = None
        if self.mode == "generator":
            self.phi = init_generator(self.view.d, config.generator_hidden, config.seed + 1)
        elif self.mode == "explicit":
            self.logits = np.full((len(x), len(x)), -3.0)
            if chosen is not None:
                sub = self.view.dense_adjacency()[np.ix_(chosen, chosen)]
                self.logits[sub > 0] = 3.0
        self.x_state = AdamState()
        self.s_state = AdamState()
        self.rng = np.random.default_rng(config.seed + 7)
        self.classes = [c for c in range(self.stats.num_classes)
                        if self.stats.counts[c] > 0 and np.any(self.labels == c)]

    # structure as a function of (possibly tracked) X' and structure parameters
    def _adjacency(self, x, s):
        if self.mode == "free":
            return None
        if self.mode == "generator":
            return structure_forward(s, x)
        return explicit_adjacency(s)

    def _structure_params(self):
        return self.phi if self.mode == "generator" else self.logits

    def current(self) -> CondensedGraph:
        return CondensedGraph(self.x, self.labels, self.mode, generator=self.phi,
                              adj_logits=self.logits, num_classes=self.stats.num_classes,
                              provenance={"method": self.config.method, "epoch": self.epoch})

    def _targets(self, theta):  # pragma: no cover - abstract
        raise NotImplementedError

    def _loss(self, theta, targets, x, adj):  # pragma: no cover - abstract
        raise NotImplementedError

    def matching_loss(self, theta, targets=None) -> float:
        """Loss of the current condensed graph at backbone weights ``theta``."""
        targets = self._targets(theta) if targets is None else targets
        adj = self._adjacency(self.x, self._structure_params())
        return float(value_of(self._loss(theta, targets, self.x, adj)))

    def _structure_step(self, theta, targets):
        tape = Tape()
        if self.mode == "generator":
            s = {k: tape.param(v) for k, v in self.phi.items()}
        else:
            s = tape.param(self.logits)
        loss = self._loss(theta, targets, self.x, self._adjacency(self.x, s))
        grads = tape.backward(loss)
        lr = self.config.lr_adj
        if self.mode == "generator":
            self.phi = adam_step(self.phi, {k: grads[t] for k, t in s.items()}, self.s_state, lr)
        else:
            self.logits = adam_step([self.logits], [grads[s]], self.s_state, lr)[0]
        return float(loss.value)

    def _feature_step(self, theta, targets):
        tape = Tape()
        x = tape.param(self.x)
        loss = self._loss(theta, targets, x, self._adjacency(x, self._structure_params()))
        grads = tape.backward(loss)
        self.x = adam_step([self.x], [grads[x]], self.x_state, self.config.lr_feat)[0]
        return float(loss.value)

    def _train_inner(self, theta, steps, state):
        data = self.current().to_input()
        idx = np.arange(len(self.labels))
        for _ in range(steps):
            tape = Tape()
            pt = {k: tape.param(v) for k, v in theta.items()}
            logits = forward(self.arch, pt, data.operator(self.arch), data.x, True, self.rng)
            grads = tape.backward(ops.cross_entropy(logits, self.labels, idx))
            theta = adam_step(theta, {k: grads[t] for k, t in pt.items()}, state,
                              self.config.lr_model, self.config.weight_decay)
        return theta

    def _epoch(self, epoch: int) -> float:
        cfg = self.config
        theta = init_params(self.arch, self.view.d, self.stats.num_classes,
                            cfg.seed * 100003 + epoch)
        model_state = AdamState()
        first = None
        for outer in range(cfg.outer_loops):
            targets = self._targets(theta)
            if first is None:
                first = self.matching_loss(theta, targets)
            if self.mode != "free":
                for _ in range(cfg.adj_update_steps):
                    self._structure_step(theta, targets)
            for _ in range(cfg.feat_update_steps):
                self._feature_step(theta, targets)
            if outer < cfg.outer_loops - 1 and cfg.inner_loops:
                theta = self._train_inner(theta, cfg.inner_loops, model_state)
        return first


class GradientCondenser(NestedCondenser):
    methods = GRADIENT_METHODS

    def _targets(self, theta):
        out = []
        for c in self.classes:
            g = param_gradients(self.arch, theta, self.real, self.train_idx, class_filter=c)
            out.append(g)
        return out

    def _loss(self, theta, targets, x, adj):
        op = prepare_adjacency(self.arch, adj)
        n_syn = len(self.labels)
        syn = []
        for c in self.classes:
            idx = np.flatnonzero(self.labels == c)
            syn.append(symbolic_gradients(self.arch, theta, op, x, self.labels, idx, n_syn))
        return gm_loss(targets, syn)


class DistributionCondenser(NestedCondenser):
    methods = DISTRIBUTION_METHODS

    def _targets(self, theta):
        if self.arch.variant == "sgc":
            return self.real.sgc_features(self.arch)
        return value_of(embed(self.arch, theta, self.real.operator(self.arch), self.real.x))

    def _loss(self, theta, targets, x, adj):
        op = prepare_adjacency(self.arch, adj)
        return dm_loss(targets, embed(self.arch, theta, op, x), self.stats, self.labels)


def gm_condense(graph: Graph, config: CondenseConfig, arch: ArchSpec, validator=None,
                epochs: int | None = None, keep_snapshots: bool = False):
    """Gradient matching (GCond, GCondX, DosCond, DosCondX)."""
    return run_condenser(GradientCondenser(graph, config, arch), validator, epochs, keep_snapshots)


def dm_condense(graph: Graph, config: CondenseConfig, arch: ArchSpec, validator=None,
                epochs: int | None = None, keep_snapshots: bool = False):
    """Distribution matching (GCDM, GCDMX, DM)."""
    return run_condenser(DistributionCondenser(graph, config, arch), validator, epochs, keep_snapshots)
