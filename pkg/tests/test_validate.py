import numpy as np
import pytest
from hypothesis import given, strategies as st

from graphcond.backbones import ArchSpec
from graphcond.condense import CondensedGraph
from graphcond.validate import (CondensationError, GnnValidator, GntkConfig, GntkValidator,
                                ValidationRecord, gntk_kernel, kernel_ridge_predict, make_validator,
                                validation_loop)


class _Live:
    """Stand-in condensed graph whose copy carries the epoch it was taken at."""

    def __init__(self):
        self.epoch = 0

    def copy(self):
        dup = _Live()
        dup.epoch = self.epoch
        return dup


def _scripted(scores):
    live = _Live()

    def step(epoch):
        live.epoch = epoch
        return live

    def validator(snap):
        return scores[snap.epoch // 10 - 1]

    return step, validator


def test_flat_scores_stop_at_epoch_sixty():
    step, val = _scripted([0.5] * 100)
    best, records, _ = validation_loop(step, val, interval=10, patience=5, max_epochs=1000)
    assert [r.epoch for r in records] == [10, 20, 30, 40, 50, 60]
    assert best.epoch == 10


@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.integers(1, 6))
def test_selected_snapshot_has_max_recorded_score(scores, patience):
    step, val = _scripted(scores)
    best, records, _ = validation_loop(step, val, interval=10, patience=patience,
                                       max_epochs=10 * len(scores))
    recorded = [r.score for r in records]
    assert val(best) == max(recorded)
    assert best.epoch == records[recorded.index(max(recorded))].epoch
    assert all(a.epoch < b.epoch for a, b in zip(records, records[1:]))


def test_loop_keeps_snapshots_and_wraps_failures():
    step, val = _scripted([0.1, 0.2, 0.3])
    _, records, snaps = validation_loop(step, val, 10, 5, 30, keep_snapshots=True)
    assert [e for e, _ in snaps] == [10, 20, 30]

    def boom(epoch):
        if epoch == 25:
            raise FloatingPointError("nan")
        return step(epoch)

    with pytest.raises(CondensationError) as info:
        validation_loop(boom, val, 10, 5, 100)
    assert [r.epoch for r in info.value.history] == [10, 20]
    with pytest.raises(ValueError):
        validation_loop(step, val, interval=0)


def test_validation_record_bounds():
    assert ValidationRecord(10, "gcn", 1.0, 0.1).to_dict()["score"] == 1.0
    with pytest.raises(ValueError):
        ValidationRecord(10, "gcn", 1.2, 0.1)


def test_gntk_config_parse():
    assert GntkConfig.parse("gntk") == GntkConfig()
    cfg = GntkConfig.parse("gntk:layers=3,ridge=1e-4,mode=linear")
    assert (cfg.layers, cfg.ridge, cfg.mode) == (3, 1e-4, "linear")
    for bad in ("gcn", "gntk:depth=2", "gntk:ridge=0", "gntk:mode=cubic"):
        with pytest.raises(ValueError):
            GntkConfig.parse(bad)


@pytest.mark.parametrize("seed", range(5))
def test_joint_gntk_is_psd(seed):
    rng = np.random.default_rng(seed)
    na, nb, d = 20, 12, 5
    a = np.triu(rng.random((na, na)) < 0.3, 1).astype(float)
    a = a + a.T
    xa, xb = rng.standard_normal((na, d)), rng.standard_normal((nb, d))
    b = np.triu(rng.random((nb, nb)), 1)
    b = b + b.T
    # joint graph: disjoint union, so the block kernel is the GNTK of the union
    joint_x = np.vstack([xa, xb])
    joint_a = np.zeros((na + nb, na + nb))
    joint_a[:na, :na], joint_a[na:, na:] = a, b
    k = gntk_kernel(joint_x, joint_a, joint_x, joint_a, 2)
    np.testing.assert_allclose(k[:na, na:], gntk_kernel(xa, a, xb, b, 2), atol=1e-10)
    assert np.linalg.eigvalsh(0.5 * (k + k.T)).min() >= -1e-8


def test_gntk_zero_layers_is_linear_kernel():
    x = np.random.default_rng(0).standard_normal((4, 3))
    np.testing.assert_allclose(gntk_kernel(x, None, x, None, 0), x @ x.T)
    with pytest.raises(ValueError):
        gntk_kernel(x, None, np.ones((2, 2)), None)


def test_kernel_ridge_interpolates_and_recovers_from_singular():
    rng = np.random.default_rng(0)
    f = rng.standard_normal((6, 6))
    k = f @ f.T
    y = np.eye(6)[:, :3]
    pred = kernel_ridge_predict(k, k, y, 1e-10)
    np.testing.assert_allclose(pred, y, atol=1e-5)
    singular = np.ones((3, 3))
    assert np.all(np.isfinite(kernel_ridge_predict(singular, singular, np.eye(3), 1e-12)))


def _prototypes(graph, per_class=3):
    view = graph.training_view()
    rows, labels = [], []
    for c in range(graph.num_classes):
        members = np.flatnonzero((view.labels == c) & view.train_mask)[:per_class]
        rows.append(view.features[members])
        labels += [c] * len(members)
    return CondensedGraph(np.vstack(rows), labels, "free", num_classes=graph.num_classes)


def test_gntk_validator_deterministic_and_accurate(sbm3):
    cg = _prototypes(sbm3)
    val = GntkValidator(sbm3)
    scores = [val(cg) for _ in range(3)]
    assert scores[0] == scores[1] == scores[2]
    assert scores[0] >= 0.9
    lin = make_validator("gntk:mode=linear", sbm3)
    assert lin.name == "gntk-linear" and 0 <= lin(cg) <= 1


def test_gnn_validator(sbm3):
    cg = _prototypes(sbm3)
    val = make_validator("gcn:hidden=16", sbm3, epochs=30)
    assert val.name == "gcn"
    assert val(cg) == val(cg)
    assert 0 <= val(cg) <= 1
    with pytest.raises(ValueError):
        GnnValidator(sbm3, ArchSpec("mlp"))
