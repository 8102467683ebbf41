"""Selection baselines: random subgraph and k-center subgraph."""
from __future__ import annotations

import numpy as np

from ..graph import Graph, induced_subgraph
from .base import CondensedGraph, _pretrained_embeddings, init_labels, kcenter_from_embeddings


def baseline_select(graph: Graph, method: str, budget: int, seed: int = 0,
                    label_dist: str = "proportional") -> CondensedGraph:
    """Real train nodes (and their induced edges) chosen per class.

    Counts per class follow :func:`init_labels`; ``random`` samples uniformly,
    ``kcenter`` runs greedy k-center on embeddings of a briefly trained GCN.
    """
    view = graph.training_view()
    stats = view.class_stats()
    if budget > int(stats.counts.sum()):
        raise ValueError(f"budget {budget} exceeds the {int(stats.counts.sum())} train nodes")
    labels = init_labels(label_dist, budget, stats)
    per_class = np.bincount(labels, minlength=stats.num_classes)
    for c, need in enumerate(per_class):
        if need > stats.counts[c]:
            raise ValueError(f"class {c} needs {need} nodes but has {stats.counts[c]}")
    if method == "random":
        rng = np.random.default_rng(seed)
        chosen = np.concatenate([
            rng.choice(stats.indices[c], size=need, replace=False)
            for c, need in enumerate(per_class) if need
        ]).astype(np.int64)
    elif method == "kcenter":
        _, emb = _pretrained_embeddings(graph, seed)
        chosen = kcenter_from_embeddings(emb, stats, per_class)
    else:
        raise ValueError(f"unknown selection baseline {method!r}")
    sub = induced_subgraph(view, chosen)
    return CondensedGraph(np.array(sub.features, dtype=np.float64), sub.labels.copy(), "explicit",
                          adjacency=sub.dense_adjacency(), num_classes=stats.num_classes,
                          provenance={"method": method, "nodes": chosen.tolist()})
