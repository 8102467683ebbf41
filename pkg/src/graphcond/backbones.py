"""GNN backbones on the autodiff engine, plus shared train/eval routines."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, adam_step, AdamState, ops
from .autodiff.core import value_of
from .graph import CSR, Graph, normalize_adjacency

VARIANTS = ("mlp", "sgc", "gcn", "sage", "appnp", "gat", "cheb")
# Only these have a closed-form symbolic gradient (used by matching losses).
CONDENSATION_BACKBONES = ("mlp", "sgc", "gcn")


@dataclass(frozen=True)
class ArchSpec:
    variant: str
    layers: int = 2
    hidden: int = 256
    dropout: float = 0.5
    k: int = 2
    heads: int = 8
    iterations: int = 10
    teleport: float = 0.1
    order: int = 2
    aggregator: str = "mean"
    sparse_threshold: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown architecture {self.variant!r}")
        if self.layers < 1 or self.hidden < 1 or self.k < 0 or self.heads < 1 or self.order < 1:
            raise ValueError("architecture dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 < self.sparse_threshold < 1.0:
            raise ValueError("sparse_threshold must lie in (0, 1)")
        if self.aggregator != "mean":
            raise ValueError("only the mean aggregator is supported")

    @classmethod
    def parse(cls, text: str) -> "ArchSpec":
        """Parse ``gcn:layers=2,hidden=256,dropout=0.5`` style strings."""
        head, _, rest = text.strip().partition(":")
        kwargs = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, eq, val = item.partition("=")
            key = key.strip()
            if not eq or key not in types or key == "variant":
                raise ValueError(f"bad architecture option {item!r}")
            conv = {"int": int, "float": float, "str": str}[types[key]]
            kwargs[key] = conv(val.strip())
        return cls(head.strip().lower(), **kwargs)

    def __str__(self):
        keys = {
            "mlp": ("layers", "hidden", "dropout"), "gcn": ("layers", "hidden", "dropout"),
            "sgc": ("k",), "sage": ("layers", "hidden", "dropout", "aggregator"),
            "appnp": ("layers", "hidden", "dropout", "iterations", "teleport"),
            "gat": ("layers", "hidden", "dropout", "heads", "sparse_threshold"),
            "cheb": ("layers", "hidden", "dropout", "order", "sparse_threshold"),
        }[self.variant]
        return self.variant + ":" + ",".join(f"{k}={getattr(self, k)}" for k in keys)


@dataclass
class TrainOpts:
    """Downstream training on a (condensed) graph.

    ``weight_decay`` defaults to the stated 0.5. That is large for L2 on Adam
    gradients; 5e-4 is the usual value and can be passed explicitly.
    """

    epochs: int = 300
    lr: float = 0.01
    weight_decay: float = 0.5
    patience: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


ORIGINAL_GRAPH_WD = 5e-4  # for models trained on the full original graph


# ---------------------------------------------------------------------------
# Inputs and propagation operators

@dataclass(eq=False)
class GraphInput:
    """Features, labels and raw (un-normalised) structure for a backbone.

    ``adj`` is a sparse :class:`CSR`, a dense array, or ``None`` for the
    identity structure. Prepared operators and SGC features are cached.
    """

    x: np.ndarray
    labels: np.ndarray
    adj: CSR | np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_graph(cls, graph: Graph) -> "GraphInput":
        return cls(graph.features, graph.labels, graph.adjacency)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def operator(self, arch: ArchSpec):
        key = ("op", _operator_kind(arch), arch.sparse_threshold)
        if key not in self._cache:
            self._cache[key] = prepare_adjacency(arch, self.adj)
        return self._cache[key]

    def sgc_features(self, arch: ArchSpec) -> np.ndarray:
        key = ("sgc", arch.k)
        if key not in self._cache:
            self._cache[key] = value_of(propagate_k(self.operator(arch), self.x, arch.k))
        return self._cache[key]


def _operator_kind(arch: ArchSpec) -> str:
    return {"mlp": "none", "sgc": "sym", "gcn": "sym", "appnp": "sym",
            "sage": "row", "gat": "mask", "cheb": "cheb"}[arch.variant]


def _binarize(adj, threshold):
    if isinstance(adj, CSR):
        return adj.to_dense() > 0
    return np.asarray(value_of(adj)) >= threshold


def prepare_adjacency(arch: ArchSpec, adj):
    """Turn a raw structure into the operator ``arch`` propagates with.

    Sparse input stays sparse for GCN/SGC/APPNP/SAGE. Dense learned
    adjacencies are normalised as-is, except for GAT/Cheb which binarise at
    ``sparse_threshold``.
    """
    kind = _operator_kind(arch)
    if kind == "none":
        return None
    if kind in ("sym", "row"):
        if adj is None:
            return None
        if isinstance(adj, Tensor):
            return normalize_dense_tensor(adj, kind)
        return normalize_adjacency(adj, kind)
    n = adj.shape[0] if adj is not None else None
    if kind == "mask":
        if adj is None:
            return "identity-mask"
        mask = _binarize(adj, arch.sparse_threshold)
        mask = mask | np.eye(n, dtype=bool)
        return np.where(mask, 0.0, -1e9)
    # Chebyshev: scaled Laplacian 2L/lambda_max - I with lambda_max = 2,
    # i.e. -D^-1/2 A D^-1/2 on the binarised structure without self-loops.
    if adj is None:
        return None
    a = _binarize(adj, arch.sparse_threshold).astype(np.float64)
    np.fill_diagonal(a, 0.0)
    deg = a.sum(axis=1)
    dinv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return -(dinv[:, None] * a * dinv[None, :])


def normalize_dense_tensor(adj: Tensor, mode: str = "sym") -> Tensor:
    """Differentiable self-loop normalisation of a dense adjacency tensor."""
    n = adj.shape[0]
    a = ops.add(adj, np.eye(n))
    deg = ops.sum_axis(a, 1)
    if mode == "row":
        return ops.div(a, deg)
    dinv = ops.power(deg, -0.5)
    return ops.mul(ops.mul(dinv, a), ops.transpose(dinv))


def propagate(op, h):
    """Apply a propagation operator; ``None`` is the identity."""
    if op is None:
        return h
    if isinstance(op, CSR):
        return ops.spmm(op, h)
    return ops.matmul(op, h)


def transpose_op(op):
    if op is None:
        return None
    if isinstance(op, CSR):
        return op.transpose()
    return ops.transpose(op)


def propagate_k(op, x, k: int):
    h = x
    for _ in range(k):
        h = propagate(op, h)
    return h


# ---------------------------------------------------------------------------
# Parameters

def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _dims(arch: ArchSpec, d: int, c: int) -> list[int]:
    return [d] + [arch.hidden] * (arch.layers - 1) + [c]


def init_params(arch: ArchSpec, d: int, c: int, seed: int) -> dict:
    """Glorot-uniform weights and zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}
    v = arch.variant
    if v == "sgc":
        p["W0"] = _glorot(rng, d, c)
        p["b0"] = np.zeros(c)
        return p
    dims = _dims(arch, d, c)
    fan_in = d
    for layer, fo in enumerate(dims[1:]):
        if v in ("mlp", "gcn", "appnp"):
            p[f"W{layer}"] = _glorot(rng, fan_in, fo)
        elif v == "sage":
            p[f"W{layer}"] = _glorot(rng, 2 * fan_in, fo)
        elif v == "cheb":
            for k in range(arch.order):
                p[f"W{layer}_{k}"] = _glorot(rng, fan_in, fo)
        else:  # gat: hidden layers concatenate heads, the output layer has one head
            last = layer == arch.layers - 1
            heads = 1 if last else arch.heads
            width = fo if last else max(1, fo // arch.heads)
            for h in range(heads):
                p[f"W{layer}_h{h}"] = _glorot(rng, fan_in, width)
                p[f"as{layer}_h{h}"] = _glorot(rng, width, 1)
                p[f"ad{layer}_h{h}"] = _glorot(rng, width, 1)
            fo = heads * width
        p[f"b{layer}"] = np.zeros(fo)
        fan_in = fo
    return p


# ---------------------------------------------------------------------------
# Forward passes

def _mlp_stack(arch, params, x, train_mode, rng, op=None, embed=False):
    h = x
    for layer in range(arch.layers):
        if op is not None:
            h = propagate(op, h)
        h = ops.add(ops.matmul(h, params[f"W{layer}"]), params[f"b{layer}"])
        if layer < arch.layers - 1:
            h = ops.relu(h)
            if embed and layer == arch.layers - 2:
                return h
            h = ops.dropout(h, arch.dropout, train_mode, rng)
    return h


def _gat_layer(params, layer, h, bias_mask, heads):
    outs = []
    for k in range(heads):
        wh = ops.matmul(h, params[f"W{layer}_h{k}"])
        src = ops.matmul(wh, params[f"as{layer}_h{k}"])
        dst = ops.matmul(wh, params[f"ad{layer}_h{k}"])
        scores = ops.leaky_relu(ops.add(src, ops.transpose(dst)), 0.2)
        att = ops.row_softmax(ops.add(scores, bias_mask))
        outs.append(ops.matmul(att, wh))
    out = outs[0] if len(outs) == 1 else ops.concat_cols(outs)
    return ops.add(out, params[f"b{layer}"])


def forward(arch: ArchSpec, params: dict, op, x, train_mode: bool = False,
            rng: np.random.Generator | None = None, sgc_features=None) -> Tensor:
    """Logits for every node.

    ``op`` is the operator from :func:`prepare_adjacency`. For SGC,
    ``sgc_features`` may carry a precomputed ``A^k X``.
    """
    v = arch.variant
    if v == "mlp":
        return _mlp_stack(arch, params, x, train_mode, rng)
    if v == "gcn":
        return _mlp_stack(arch, params, x, train_mode, rng, op=op)
    if v == "sgc":
        f = sgc_features if sgc_features is not None else propagate_k(op, x, arch.k)
        return ops.add(ops.matmul(f, params["W0"]), params["b0"])
    if v == "appnp":
        z = _mlp_stack(arch, params, x, train_mode, rng)
        h = z
        for _ in range(arch.iterations):
            h = ops.add(ops.scale(propagate(op, h), 1.0 - arch.teleport), ops.scale(z, arch.teleport))
        return h
    if v == "sage":
        h = x
        for layer in range(arch.layers):
            agg = propagate(op, h)
            h = ops.add(ops.matmul(ops.concat_cols([h, agg]), params[f"W{layer}"]), params[f"b{layer}"])
            if layer < arch.layers - 1:
                h = ops.dropout(ops.relu(h), arch.dropout, train_mode, rng)
        return h
    if v == "cheb":
        # No structure means an all-zero scaled Laplacian.
        lap = (lambda t: ops.scale(t, 0.0)) if op is None else (lambda t: propagate(op, t))
        h = x
        for layer in range(arch.layers):
            t_prev, t_cur = h, lap(h)
            out = ops.matmul(t_prev, params[f"W{layer}_0"])
            for k in range(1, arch.order):
                if k > 1:
                    t_prev, t_cur = t_cur, ops.sub(ops.scale(lap(t_cur), 2.0), t_prev)
                out = ops.add(out, ops.matmul(t_cur, params[f"W{layer}_{k}"]))
            h = ops.add(out, params[f"b{layer}"])
            if layer < arch.layers - 1:
                h = ops.dropout(ops.relu(h), arch.dropout, train_mode, rng)
        return h
    if v == "gat":
        bias = op
        if isinstance(op, str):  # identity structure: every node attends to itself only
            n = value_of(x).shape[0]
            bias = np.where(np.eye(n, dtype=bool), 0.0, -1e9)
        h = x
        for layer in range(arch.layers):
            last = layer == arch.layers - 1
            h = ops.dropout(h, arch.dropout, train_mode, rng) if layer > 0 else h
            h = _gat_layer(params, layer, h, bias, 1 if last else arch.heads)
            if not last:
                h = ops.relu(h)
        return h
    raise ValueError(v)  # pragma: no cover


def embed(arch: ArchSpec, params: dict, op, x, sgc_features=None) -> Tensor:
    """Penultimate representation used by distribution matching.

    SGC: ``A^k X``; GCN/MLP: the last hidden layer before the classifier.
    """
    if arch.variant == "sgc":
        return sgc_features if sgc_features is not None else propagate_k(op, x, arch.k)
    if arch.variant in ("gcn", "mlp"):
        if arch.layers < 2:
            return propagate(op, x) if arch.variant == "gcn" else x
        return _mlp_stack(arch, params, x, False, None, op=op if arch.variant == "gcn" else None,
                          embed=True)
    raise ValueError(f"{arch.variant} is not a condensation backbone")


def logits_for(arch: ArchSpec, params: dict, data: GraphInput, train_mode=False, rng=None) -> Tensor:
    op = data.operator(arch)
    feats = data.sgc_features(arch) if arch.variant == "sgc" else None
    return forward(arch, params, op, data.x, train_mode, rng, sgc_features=feats)


# ---------------------------------------------------------------------------
# Training / evaluation

def _index(mask) -> np.ndarray:
    mask = np.asarray(mask)
    return np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)


def evaluate_accuracy(arch: ArchSpec, params: dict, data: GraphInput, mask) -> float:
    """Fraction of masked nodes whose argmax logit (lowest index on ties) is correct."""
    idx = _index(mask)
    if idx.size == 0:
        raise ValueError("evaluation mask is empty")
    logits = value_of(logits_for(arch, params, data))
    return float(np.mean(np.argmax(logits[idx], axis=1) == data.labels[idx]))


def train(arch: ArchSpec, data: GraphInput, params: dict, opts: TrainOpts, train_mask=None,
          eval_data: GraphInput | None = None, eval_mask=None):
    """Full-batch Adam on masked cross-entropy.

    When an evaluation set is given the accuracy is recorded after every
    epoch and the parameters from the best epoch (earliest on ties) are
    returned. Returns ``(params, curve, seconds)``.
    """
    t0 = time.perf_counter()
    idx = np.arange(data.n) if train_mask is None else _index(train_mask)
    if idx.size == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(opts.seed)
    state = AdamState()
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    best, best_params, curve, stale = -1.0, params, [], 0
    for _ in range(opts.epochs):
        tape = Tape()
        pt = {k: tape.param(v) for k, v in params.items()}
        logits = logits_for(arch, pt, data, train_mode=True, rng=rng)
        loss = ops.cross_entropy(logits, data.labels, idx)
        grads = tape.backward(loss)
        params = adam_step(params, {k: grads[t] for k, t in pt.items()}, state, opts.lr,
                           opts.weight_decay)
        if eval_data is not None:
            acc = evaluate_accuracy(arch, params, eval_data, eval_mask)
            curve.append(acc)
            if acc > best:
                best, best_params, stale = acc, params, 0
            else:
                stale += 1
                if opts.patience is not None and stale >= opts.patience:
                    break
    if eval_data is None:
        best_params = params
    return best_params, curve, time.perf_counter() - t0


def param_gradients(arch: ArchSpec, params: dict, data: GraphInput, train_mask,
                    class_filter: int | None = None, denom: float | None = None):
    """Gradients of the masked cross-entropy (no dropout) by backward pass.

    The per-node losses of the selected class are summed and divided by the
    number of training nodes (or ``denom``), so per-class gradients add up to
    the all-class gradient. Returns ``None`` when the class has no nodes.
    """
    idx = _index(train_mask)
    denom = float(len(idx)) if denom is None else denom
    if class_filter is not None:
        idx = idx[data.labels[idx] == class_filter]
    if idx.size == 0:
        return None
    tape = Tape()
    pt = {k: tape.param(v) for k, v in params.items()}
    loss = ops.cross_entropy(logits_for(arch, pt, data), data.labels, idx, denom=denom)
    grads = tape.backward(loss)
    return {k: grads[t] for k, t in pt.items()}


def symbolic_gradients(arch: ArchSpec, params: dict, op, x, labels, idx, denom: float,
                       sgc_features=None) -> dict:
    """Cross-entropy parameter gradients built from tape ops.

    The returned tensors are themselves differentiable with respect to the
    features, the propagation operator and the parameters, which is what
    gradient matching and unrolled trajectory matching need. Supported for
    the condensation backbones (MLP, SGC, GCN) without dropout.
    """
    v = arch.variant
    if v not in CONDENSATION_BACKBONES:
        raise ValueError(f"{v} is not a condensation backbone")
    n = value_of(x).shape[0]
    n_cls = value_of(params["b0" if v == "sgc" else f"b{arch.layers - 1}"]).shape[0]
    idx = _index(idx)
    weight = np.zeros((n, 1))
    weight[idx] = 1.0 / denom
    onehot = np.zeros((n, n_cls))
    onehot[idx, np.asarray(labels)[idx]] = 1.0

    def output_grad(z):
        return ops.mul(ops.sub(ops.row_softmax(z), onehot), weight)

    def bias_grad(g):
        return ops.reshape(ops.sum_axis(g, 0), (g.shape[1],))

    if v == "sgc":
        f = sgc_features if sgc_features is not None else propagate_k(op, x, arch.k)
        z = ops.add(ops.matmul(f, params["W0"]), params["b0"])
        g = output_grad(z)
        return {"W0": ops.matmul(ops.transpose(f), g), "b0": bias_grad(g)}

    use_op = op if v == "gcn" else None
    inputs, masks = [], []
    h = x
    for layer in range(arch.layers):
        agg = propagate(use_op, h)
        inputs.append(agg)
        h = ops.add(ops.matmul(agg, params[f"W{layer}"]), params[f"b{layer}"])
        if layer < arch.layers - 1:
            masks.append(ops.relu_mask(h))
            h = ops.relu(h)
    g = output_grad(h)
    out = {}
    op_t = transpose_op(use_op)
    for layer in reversed(range(arch.layers)):
        out[f"W{layer}"] = ops.matmul(ops.transpose(inputs[layer]), g)
        out[f"b{layer}"] = bias_grad(g)
        if layer > 0:
            d_agg = ops.matmul(g, ops.transpose(params[f"W{layer}"]))
            g = ops.mul(propagate(op_t, d_agg), masks[layer - 1])
    return {k: out[k] for k in params}
