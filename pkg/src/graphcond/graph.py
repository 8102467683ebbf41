"""Graph data model, normalisation, synthetic generation and dataset files."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels

SETTINGS = ("transductive", "inductive")
UNLABELED = -1


class GraphFormatError(ValueError):
    """Raised for malformed graph directories or invariant violations."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _csr_from_coo(n_rows, rows, cols, data):
    order = np.lexsort((cols, rows))
    rows, cols, data = rows[order], cols[order], data[order]
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=indptr[1:])
    return indptr, cols.astype(np.int64), data.astype(np.float64)


@dataclass(frozen=True, eq=False)
class CSR:
    """Compressed-row sparse matrix used as a constant propagation operator."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    shape: tuple[int, int]

    def dot(self, dense: np.ndarray) -> np.ndarray:
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim == 1:
            return _kernels.csr_spmm(self.indptr, self.indices, self.data, dense[:, None])[:, 0]
        return _kernels.csr_spmm(self.indptr, self.indices, self.data, dense)

    def rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.shape[0]), np.diff(self.indptr))

    def transpose(self) -> "CSR":
        cached = self.__dict__.get("_transposed")
        if cached is None:
            indptr, indices, data = _csr_from_coo(self.shape[1], self.indices, self.rows(), self.data)
            cached = CSR(indptr, indices, data, (self.shape[1], self.shape[0]))
            object.__setattr__(self, "_transposed", cached)
        return cached

    @property
    def T(self) -> "CSR":
        return self.transpose()

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows(), self.indices] = self.data
        return out

    @property
    def nnz(self) -> int:
        return int(self.data.shape[0])


@dataclass(frozen=True)
class ClassStats:
    counts: np.ndarray
    indices: list

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    @property
    def shares(self) -> np.ndarray:
        return self.counts / self.counts.sum()


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable attributed graph with node splits.

    The adjacency is held in compressed-row form with sorted column indices and
    no stored self-loops.
    """

    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    setting: str = "transductive"
    feature_transform: str = "none"
    num_classes: int = 0

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("indptr", _frozen(np.asarray(self.indptr, dtype=np.int64)))
        set_("indices", _frozen(np.asarray(self.indices, dtype=np.int64)))
        set_("weights", _frozen(np.asarray(self.weights, dtype=np.float64)))
        set_("features", _frozen(np.asarray(self.features, dtype=np.float64)))
        set_("labels", _frozen(np.asarray(self.labels, dtype=np.int64)))
        for name in ("train_mask", "val_mask", "test_mask"):
            set_(name, _frozen(np.asarray(getattr(self, name), dtype=bool)))
        if not self.num_classes:
            labeled = self.labels[self.labels >= 0]
            set_("num_classes", int(labeled.max()) + 1 if labeled.size else 0)
        self._validate()

    def _validate(self):
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise GraphFormatError("features must be an n x d matrix")
        if self.indptr.shape != (n + 1,) or self.indptr[0] != 0 or self.indptr[-1] != len(self.indices):
            raise GraphFormatError("row offsets inconsistent with node count")
        if len(self.weights) != len(self.indices):
            raise GraphFormatError("edge weights and column indices differ in length")
        if self.setting not in SETTINGS:
            raise GraphFormatError(f"unknown setting {self.setting!r}")
        for arr in (self.labels, self.train_mask, self.val_mask, self.test_mask):
            if arr.shape != (n,):
                raise GraphFormatError("labels and masks must have length n")
        if len(self.indices):
            if self.indices.min() < 0 or self.indices.max() >= n:
                raise GraphFormatError("column index out of range")
            rows = np.repeat(np.arange(n), np.diff(self.indptr))
            if np.any(rows == self.indices):
                raise GraphFormatError("self-loops must not be stored")
            same_row = rows[1:] == rows[:-1]
            if np.any(np.diff(self.indices)[same_row] <= 0):
                raise GraphFormatError("column indices must strictly increase within a row")
            if np.any(self.weights < 0):
                raise GraphFormatError("negative edge weight")
            dense_t = self.adjacency.transpose()
            if not (np.array_equal(dense_t.indptr, self.indptr)
                    and np.array_equal(dense_t.indices, self.indices)
                    and np.array_equal(dense_t.data, self.weights)):
                raise GraphFormatError("adjacency is not symmetric")
        masks = self.train_mask.astype(int) + self.val_mask + self.test_mask
        if np.any(masks > 1):
            raise GraphFormatError("train/val/test masks overlap")
        masked = masks > 0
        if np.any(self.labels[masked] < 0) or np.any(self.labels[masked] >= max(self.num_classes, 1)):
            raise GraphFormatError("masked node without a valid label")

    # -- construction -----------------------------------------------------
    @classmethod
    def from_edges(cls, n, edges, features, labels, train_mask, val_mask, test_mask,
                   weights=None, symmetrize=False, **kw) -> "Graph":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        w = np.ones(len(edges)) if weights is None else np.asarray(weights, dtype=np.float64)
        rows, cols = edges[:, 0], edges[:, 1]
        if symmetrize:
            rows, cols, w = np.r_[rows, cols], np.r_[cols, rows], np.r_[w, w]
            keep = rows != cols
            rows, cols, w = rows[keep], cols[keep], w[keep]
            key = rows * n + cols
            _, first = np.unique(key, return_index=True)
            rows, cols, w = rows[first], cols[first], w[first]
        indptr, indices, data = _csr_from_coo(n, rows, cols, w)
        return cls(indptr, indices, data, features, labels, train_mask, val_mask, test_mask, **kw)

    @classmethod
    def from_dense(cls, adj, features, labels, train_mask, val_mask, test_mask, **kw) -> "Graph":
        adj = np.asarray(adj, dtype=np.float64)
        rows, cols = np.nonzero(adj)
        indptr, indices, data = _csr_from_coo(adj.shape[0], rows, cols, adj[rows, cols])
        return cls(indptr, indices, data, features, labels, train_mask, val_mask, test_mask, **kw)

    # -- views --------------------------------------------------------------
    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_edges(self) -> int:
        """Undirected edge count."""
        return len(self.indices) // 2

    @property
    def adjacency(self) -> CSR:
        return CSR(self.indptr, self.indices, self.weights, (self.n, self.n))

    def dense_adjacency(self) -> np.ndarray:
        return self.adjacency.to_dense()

    def mask(self, name: str) -> np.ndarray:
        return {"train": self.train_mask, "val": self.val_mask, "test": self.test_mask}[name]

    def class_stats(self) -> ClassStats:
        idx = np.flatnonzero(self.train_mask)
        per = [idx[self.labels[idx] == c] for c in range(self.num_classes)]
        return ClassStats(np.array([len(p) for p in per], dtype=np.int64), per)

    def training_view(self) -> "Graph":
        """Graph visible while training: the train-induced subgraph if inductive."""
        if self.setting == "inductive":
            return induced_subgraph(self, np.flatnonzero(self.train_mask))
        return self

    def eval_view(self, name: str) -> tuple["Graph", np.ndarray]:
        """Graph and mask used to score ``name`` ("val" or "test") nodes."""
        mask = self.mask(name)
        if self.setting == "inductive":
            sub = induced_subgraph(self, np.flatnonzero(mask))
            return sub, sub.mask(name)
        return self, mask


# ---------------------------------------------------------------------------

def _add_self_loops(a: CSR) -> CSR:
    n = a.shape[0]
    key = np.r_[a.rows() * n + a.indices, np.arange(n) * (n + 1)]
    data = np.r_[a.data, np.ones(n)]
    uniq, inv = np.unique(key, return_inverse=True)
    merged = np.bincount(inv, weights=data, minlength=len(uniq))
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(uniq // n, minlength=n), out=indptr[1:])
    return CSR(indptr, (uniq % n).astype(np.int64), merged, (n, n))


def normalize_adjacency(adj, mode: str = "sym"):
    """Self-loop augmented normalisation of a sparse or dense adjacency.

    ``sym`` gives ``D^-1/2 (A + I) D^-1/2`` and ``row`` gives ``D^-1 (A + I)``
    where ``D`` is the degree of ``A + I``. Sparse input (a :class:`Graph` or
    :class:`CSR`) returns a :class:`CSR`; dense input returns a dense array.
    """
    if mode not in ("sym", "row"):
        raise ValueError(f"unknown normalisation mode {mode!r}")
    if isinstance(adj, Graph):
        adj = adj.adjacency
    if isinstance(adj, CSR):
        if adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        if np.any(adj.data < 0):
            raise ValueError("negative edge weights")
        a = _add_self_loops(adj)
        deg = np.bincount(a.rows(), weights=a.data, minlength=a.shape[0])
        rows = a.rows()
        if mode == "sym":
            dinv = deg ** -0.5
            data = a.data * dinv[rows] * dinv[a.indices]
        else:
            data = a.data / deg[rows]
        return CSR(a.indptr, a.indices, data, a.shape)
    a = np.asarray(adj, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("adjacency must be square")
    if np.any(a < 0):
        raise ValueError("negative edge weights")
    a = a + np.eye(a.shape[0])
    deg = a.sum(axis=1)
    if mode == "sym":
        dinv = deg ** -0.5
        return dinv[:, None] * a * dinv[None, :]
    return a / deg[:, None]


def feature_transform(graph: Graph, mode: str) -> Graph:
    x = np.array(graph.features, dtype=np.float64)
    if mode == "none":
        pass
    elif mode == "row_normalize":
        norm = np.abs(x).sum(axis=1, keepdims=True)
        x = np.where(norm > 0, x / np.where(norm > 0, norm, 1.0), x)
    elif mode == "standardize":
        ref = x[graph.train_mask] if graph.train_mask.any() else x
        mu = ref.mean(axis=0)
        sd = ref.std(axis=0)
        x = (x - mu) / np.where(sd > 0, sd, 1.0)
    else:
        raise ValueError(f"unknown feature transform {mode!r}")
    return dataclasses.replace(graph, features=x, feature_transform=mode)


def stratified_split(labels: np.ndarray, rng: np.random.Generator,
                     fractions=(0.6, 0.2)) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = len(labels)
    train, val, test = (np.zeros(n, dtype=bool) for _ in range(3))
    for c in np.unique(labels[labels >= 0]):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_tr = max(1, int(round(fractions[0] * len(idx))))
        n_va = min(int(round(fractions[1] * len(idx))), len(idx) - n_tr)
        train[idx[:n_tr]] = True
        val[idx[n_tr:n_tr + n_va]] = True
        test[idx[n_tr + n_va:]] = True
    return train, val, test


def sbm_generate(blocks: Sequence[int], p_in: float, p_out: float, d: int,
                 mean_sep: float, seed: int, setting: str = "transductive") -> Graph:
    """Stochastic block model with Gaussian class features.

    Class means sit on scaled coordinate axes so that any two are ``mean_sep``
    apart (random directions are used when there are more classes than
    feature dimensions). Features are rounded to float32 precision so that a
    save/load round trip is exact.
    """
    blocks = [int(b) for b in blocks]
    if min(blocks) < 1:
        raise ValueError("block sizes must be positive")
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise ValueError("edge probabilities must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(blocks)), blocks)
    n = len(labels)
    prob = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    draw = rng.random((n, n)) < prob
    upper = np.triu(draw, k=1)
    rows, cols = np.nonzero(upper | upper.T)
    n_cls = len(blocks)
    if n_cls <= d:
        means = np.zeros((n_cls, d))
        means[np.arange(n_cls), np.arange(n_cls)] = mean_sep / np.sqrt(2.0)
    else:
        dirs = rng.standard_normal((n_cls, d))
        means = dirs / np.linalg.norm(dirs, axis=1, keepdims=True) * mean_sep / np.sqrt(2.0)
    x = means[labels] + rng.standard_normal((n, d))
    x = x.astype(np.float32).astype(np.float64)
    train, val, test = stratified_split(labels, rng)
    indptr, indices, data = _csr_from_coo(n, rows, cols, np.ones(len(rows)))
    return Graph(indptr, indices, data, x, labels, train, val, test,
                 setting=setting, num_classes=n_cls)


def _kcenter_single(emb: np.ndarray, budget: int) -> np.ndarray:
    m = emb.shape[0]
    if budget > m:
        raise ValueError(f"budget {budget} exceeds {m} available points")
    if budget <= 0:
        return np.empty(0, dtype=np.int64)
    centroid = emb.mean(axis=0)
    first = int(np.argmin(np.sum((emb - centroid) ** 2, axis=1)))
    return _kernels.kcenter_greedy(emb, first, budget)


def kcenter_select(embeddings, budget, per_class=None, seed=None) -> np.ndarray:
    """Greedy k-center selection.

    The first center is the point closest to the centroid; each later center is
    the point farthest from its nearest chosen center. Ties resolve to the
    lowest index, so ``seed`` has no effect and is accepted for interface
    symmetry. With ``per_class`` labels, ``budget`` is a per-class sequence
    (indexed by class id) and selection runs independently per class.
    Indices are returned in selection order (grouped by class).
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim == 1:
        emb = emb[:, None]
    if per_class is None:
        return _kcenter_single(emb, int(budget))
    labels = np.asarray(per_class)
    out = []
    for c, b in enumerate(np.broadcast_to(budget, (int(labels.max()) + 1,))):
        idx = np.flatnonzero(labels == c)
        if b > len(idx):
            raise ValueError(f"class {c}: budget {b} exceeds {len(idx)} points")
        out.append(idx[_kcenter_single(emb[idx], int(b))])
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def covering_radius(embeddings: np.ndarray, centers: np.ndarray) -> float:
    emb = np.asarray(embeddings, dtype=np.float64).reshape(len(embeddings), -1)
    d = np.sum((emb[:, None, :] - emb[centers][None, :, :]) ** 2, axis=2)
    return float(np.sqrt(d.min(axis=1).max()))


def induced_subgraph(graph: Graph, indices) -> Graph:
    """Subgraph over ``indices`` with nodes relabelled in the given order."""
    sel = np.asarray(indices, dtype=np.int64).ravel()
    n = graph.n
    if sel.size and (sel.min() < 0 or sel.max() >= n):
        raise IndexError("node index out of range")
    if len(np.unique(sel)) != len(sel):
        raise ValueError("duplicate node index")
    k = len(sel)
    pos = np.full(n, -1, dtype=np.int64)
    pos[sel] = np.arange(k)
    counts = graph.indptr[sel + 1] - graph.indptr[sel]
    total = int(counts.sum())
    starts = np.repeat(graph.indptr[sel], counts)
    offs = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts) + starts
    rows = np.repeat(np.arange(k), counts)
    cols = pos[graph.indices[offs]]
    w = graph.weights[offs]
    keep = cols >= 0
    indptr, new_idx, data = _csr_from_coo(k, rows[keep], cols[keep], w[keep])
    return Graph(indptr, new_idx, data, graph.features[sel], graph.labels[sel],
                 graph.train_mask[sel], graph.val_mask[sel], graph.test_mask[sel],
                 setting=graph.setting, feature_transform=graph.feature_transform,
                 num_classes=graph.num_classes)


def split_class_il(graph: Graph, classes_per_task: int = 2) -> list[Graph]:
    """Class-incremental task stream.

    Classes are grouped in ascending id order; a group left with a single
    class is dropped. Labels keep their global ids.
    """
    groups = [list(range(s, min(s + classes_per_task, graph.num_classes)))
              for s in range(0, graph.num_classes, classes_per_task)]
    tasks = []
    for g in groups:
        if len(g) < 2:
            continue
        nodes = np.flatnonzero(np.isin(graph.labels, g))
        tasks.append(induced_subgraph(graph, nodes))
    return tasks


# ---------------------------------------------------------------------------
# Directory format

_META_KEYS = ("n", "d", "num_classes", "setting", "feature_transform")


def write_meta(path: Path, fields: dict) -> None:
    path.write_text("".join(f"{k}={v}\n" for k, v in fields.items()))


def read_meta(path: Path) -> dict:
    if not path.exists():
        raise GraphFormatError(f"missing meta record in {path.parent}")
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise GraphFormatError(f"malformed header line {lineno}: {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _read_array(base: Path, stem: str, dtype, width=None) -> np.ndarray:
    binary = base / f"{stem}.bin"
    if binary.exists():
        arr = np.fromfile(binary, dtype=dtype)
        if width is not None:
            if arr.size % width:
                raise GraphFormatError(f"{stem}: length is not a multiple of {width}")
            arr = arr.reshape(-1, width)
        return arr
    text = base / f"{stem}.csv"
    if text.exists():
        arr = np.loadtxt(text, delimiter=",", ndmin=2 if width else 1)
        if arr.size == 0:
            return np.empty((0, width) if width else 0)
        return arr
    raise GraphFormatError(f"missing {stem}.bin or {stem}.csv in {base}")


def save_graph(graph: Graph, path) -> None:
    base = Path(path)
    base.mkdir(parents=True, exist_ok=True)
    if np.any(graph.weights != 1.0):
        raise ValueError("the directory format stores unweighted edges only")
    write_meta(base / "meta", {
        "n": graph.n, "d": graph.d, "num_classes": graph.num_classes,
        "setting": graph.setting, "feature_transform": graph.feature_transform,
    })
    rows = graph.adjacency.rows()
    np.stack([rows, graph.indices], axis=1).astype("<u4").tofile(base / "edges.bin")
    graph.features.astype("<f4").tofile(base / "features.bin")
    graph.labels.astype("<i4").tofile(base / "labels.bin")
    np.concatenate([graph.train_mask, graph.val_mask, graph.test_mask]).astype(np.uint8).tofile(
        base / "masks.bin")


def load_graph(path) -> Graph:
    base = Path(path)
    meta = read_meta(base / "meta")
    try:
        n, d, n_cls = int(meta["n"]), int(meta["d"]), int(meta["num_classes"])
    except (KeyError, ValueError) as exc:
        raise GraphFormatError(f"malformed header: {exc}") from None
    setting = meta.get("setting", "transductive")
    transform = meta.get("feature_transform", "none")

    edges = _read_array(base, "edges", "<u4", 2).astype(np.int64)
    x = _read_array(base, "features", "<f4").astype(np.float64)
    if x.size != n * d:
        raise GraphFormatError(f"features: expected {n * d} values, found {x.size}")
    x = x.reshape(n, d)
    labels = _read_array(base, "labels", "<i4").astype(np.int64).ravel()
    if labels.shape != (n,):
        raise GraphFormatError(f"labels: expected {n} values, found {labels.size}")
    if (base / "masks.bin").exists():
        raw = np.fromfile(base / "masks.bin", dtype=np.uint8)
        if raw.size != 3 * n:
            raise GraphFormatError(f"masks: expected {3 * n} bytes, found {raw.size}")
        masks = raw.reshape(3, n).astype(bool)
    else:
        m = _read_array(base, "masks", None, 3)
        if m.shape != (n, 3):
            raise GraphFormatError("masks: expected n rows of train,val,test flags")
        masks = m.T.astype(bool)

    if edges.size and edges.max() >= n:
        raise GraphFormatError("edge endpoint out of range")
    key = edges[:, 0] * n + edges[:, 1]
    rkey = edges[:, 1] * n + edges[:, 0]
    if len(np.unique(key)) != len(key):
        raise GraphFormatError("duplicate edge entries")
    if not np.array_equal(np.sort(key), np.sort(rkey)):
        raise GraphFormatError("asymmetric edge list: every (i,j) needs a matching (j,i)")
    return Graph.from_edges(n, edges, x, labels, masks[0], masks[1], masks[2],
                            setting=setting, feature_transform=transform, num_classes=n_cls)
