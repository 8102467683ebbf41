import numpy as np
import pytest

from graphcond.autodiff import finite_diff_check, ops, value_of
from graphcond.backbones import (VARIANTS, ArchSpec, GraphInput, TrainOpts, embed, evaluate_accuracy,
                                 forward, init_params, logits_for, param_gradients,
                                 prepare_adjacency, symbolic_gradients, train)

SMALL = {"hidden": 8, "heads": 2}


def _arch(variant, **kw):
    base = dict(SMALL)
    base.update(kw)
    return ArchSpec(variant, **base)


def _random_input(n=7, d=4, c=3, seed=0, dense=True):
    rng = np.random.default_rng(seed)
    a = np.triu(rng.random((n, n)) < 0.4, 1).astype(float)
    a = a + a.T
    return GraphInput(rng.standard_normal((n, d)), np.arange(n) % c, a)


@pytest.mark.parametrize("variant", VARIANTS)
def test_forward_shapes_and_determinism(variant):
    data = _random_input()
    arch = _arch(variant)
    params = init_params(arch, 4, 3, seed=1)
    a = value_of(logits_for(arch, params, data))
    b = value_of(logits_for(arch, init_params(arch, 4, 3, seed=1), data))
    assert a.shape == (7, 3)
    assert np.all(np.isfinite(a))
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("variant", VARIANTS)
def test_forward_gradients_match_finite_differences(variant):
    data = _random_input(n=5, d=3, c=2)
    arch = _arch(variant, dropout=0.0, hidden=4)
    params = init_params(arch, 3, 2, seed=2)
    names = list(params)
    op = data.operator(arch)

    def f(ts):
        logits = forward(arch, dict(zip(names, ts)), op, data.x)
        return ops.cross_entropy(logits, data.labels)

    assert finite_diff_check(f, [params[k] for k in names]) < 1e-5


@pytest.mark.parametrize("variant", VARIANTS)
def test_dense_and_sparse_structure_agree(variant, small_sbm):
    arch = _arch(variant)
    sparse = GraphInput.from_graph(small_sbm)
    dense = GraphInput(small_sbm.features, small_sbm.labels, small_sbm.dense_adjacency())
    params = init_params(arch, small_sbm.d, small_sbm.num_classes, 0)
    np.testing.assert_allclose(value_of(logits_for(arch, params, sparse)),
                               value_of(logits_for(arch, params, dense)), atol=1e-10)


def test_mlp_ignores_structure():
    data = _random_input()
    arch = _arch("mlp")
    params = init_params(arch, 4, 3, 0)
    plain = GraphInput(data.x, data.labels, None)
    assert np.array_equal(value_of(logits_for(arch, params, data)),
                          value_of(logits_for(arch, params, plain)))


def test_gcn_on_identity_structure_equals_mlp():
    data = _random_input()
    params = init_params(_arch("gcn"), 4, 3, 0)
    plain = GraphInput(data.x, data.labels, None)
    np.testing.assert_allclose(value_of(logits_for(_arch("gcn"), params, plain)),
                               value_of(logits_for(_arch("mlp"), params, plain)), atol=1e-12)


def test_sgc_propagates_k_times():
    data = _random_input()
    arch = ArchSpec("sgc", k=2)
    params = init_params(arch, 4, 3, 0)
    a = data.adj + np.eye(7)
    dinv = 1 / np.sqrt(a.sum(1))
    s = a * dinv[:, None] * dinv[None, :]
    expected = s @ s @ data.x @ params["W0"] + params["b0"]
    np.testing.assert_allclose(value_of(logits_for(arch, params, data)), expected, atol=1e-12)


def test_embed_widths():
    data = _random_input()
    gcn = _arch("gcn", hidden=5)
    assert value_of(embed(gcn, init_params(gcn, 4, 3, 0), data.operator(gcn), data.x)).shape == (7, 5)
    sgc = ArchSpec("sgc")
    assert value_of(embed(sgc, init_params(sgc, 4, 3, 0), data.operator(sgc), data.x)).shape == (7, 4)


def test_gat_mask_blocks_non_edges():
    arch = _arch("gat")
    bias = prepare_adjacency(arch, np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    assert bias[0, 1] == 0 and bias[0, 0] == 0 and bias[0, 2] < -1e8


def test_arch_spec_parse_and_round_trip():
    spec = ArchSpec.parse("gcn:layers=3,hidden=64,dropout=0.1")
    assert (spec.variant, spec.layers, spec.hidden, spec.dropout) == ("gcn", 3, 64, 0.1)
    assert ArchSpec.parse(str(spec)) == spec
    for variant in VARIANTS:
        assert ArchSpec.parse(str(ArchSpec(variant))) == ArchSpec(variant)
    for bad in ("transformer", "gcn:width=3", "gcn:layers=0", "gcn:dropout=1.0", "sage:aggregator=max"):
        with pytest.raises(ValueError):
            ArchSpec.parse(bad)
    with pytest.raises(ValueError):
        TrainOpts(epochs=0)


@pytest.mark.parametrize("variant", ["mlp", "sgc", "gcn"])
@pytest.mark.parametrize("layers", [1, 2, 3])
def test_symbolic_gradients_match_backward(variant, layers):
    data = _random_input(n=9, d=4, c=3, seed=layers)
    arch = _arch(variant, layers=layers, dropout=0.0)
    params = init_params(arch, 4, 3, 5)
    mask = np.arange(9) < 7
    tape_grads = param_gradients(arch, params, data, mask)
    sym = symbolic_gradients(arch, params, data.operator(arch), data.x, data.labels, mask, 7.0)
    for k, g in tape_grads.items():
        np.testing.assert_allclose(value_of(sym[k]), g, atol=1e-12)


def test_per_class_gradients_sum_to_total():
    data = _random_input(n=12)
    arch = _arch("gcn", dropout=0.0)
    params = init_params(arch, 4, 3, 0)
    mask = np.ones(12, dtype=bool)
    total = param_gradients(arch, params, data, mask)
    parts = [param_gradients(arch, params, data, mask, class_filter=c) for c in range(3)]
    for k in total:
        np.testing.assert_allclose(sum(p[k] for p in parts), total[k], atol=1e-12)
    assert param_gradients(arch, params, data, mask, class_filter=7) is None


def test_train_learns_sbm_and_picks_best_epoch(sbm3):
    arch = ArchSpec("gcn", hidden=32)
    data = GraphInput.from_graph(sbm3)
    params, curve, seconds = train(arch, data, init_params(arch, sbm3.d, 3, 0), TrainOpts(epochs=60),
                                   sbm3.train_mask, data, sbm3.val_mask)
    assert len(curve) == 60 and seconds > 0
    assert evaluate_accuracy(arch, params, data, sbm3.val_mask) == max(curve)
    assert evaluate_accuracy(arch, params, data, sbm3.test_mask) >= 0.9


def test_train_patience_and_empty_mask(sbm3):
    arch = ArchSpec("mlp", hidden=8)
    data = GraphInput.from_graph(sbm3)
    _, curve, _ = train(arch, data, init_params(arch, sbm3.d, 3, 0), TrainOpts(epochs=500, patience=3),
                        sbm3.train_mask, data, sbm3.val_mask)
    assert len(curve) < 500
    with pytest.raises(ValueError):
        train(arch, data, init_params(arch, sbm3.d, 3, 0), TrainOpts(epochs=2), np.zeros(sbm3.n, bool))


def test_default_weight_decay_collapses_without_epoch_selection(sbm3):
    # documents why continual learning (no validation epoch selection) uses 5e-4
    from graphcond.backbones import ORIGINAL_GRAPH_WD
    arch = ArchSpec("gcn", hidden=32)
    data = GraphInput.from_graph(sbm3)
    heavy, _, _ = train(arch, data, init_params(arch, sbm3.d, 3, 0), TrainOpts(epochs=200),
                        sbm3.train_mask)
    light, _, _ = train(arch, data, init_params(arch, sbm3.d, 3, 0),
                        TrainOpts(epochs=200, weight_decay=ORIGINAL_GRAPH_WD), sbm3.train_mask)
    assert TrainOpts().weight_decay == 0.5
    assert np.linalg.norm(heavy["W0"]) < 1e-2 < np.linalg.norm(light["W0"])
    assert evaluate_accuracy(arch, light, data, sbm3.test_mask) >= 0.9
