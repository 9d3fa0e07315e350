import numpy as np
import pytest

from jointlabel.autodiff import ParamSet, mlp_spec
from jointlabel.errors import ConfigError, UsageError
from jointlabel.labels import ALL, HARD, SOFT
from jointlabel.noise import inject_symmetric, make_blobs
from jointlabel.trainer import (
    JointRunConfig, MetricsRecord, OptimizerConfig, accuracy, best_and_last, initial_joint_state,
    memorization_probe,
    run_final, run_joint, sgd_step,
)


@pytest.fixture(scope="module")
def small():
    ds = make_blobs(60, 3, 2, 4.0, seed=0, n_test_per_class=20)
    return inject_symmetric(ds, 0.4, seed=1)[0]


def _params(v):
    p = ParamSet()
    p.add("w", np.array(v, dtype=float))
    return p


def test_sgd_momentum_recurrence():
    p = _params([1.0, -2.0])
    opt = OptimizerConfig(((0, 0.1),), momentum=0.9, weight_decay=0.0)
    g = np.array([0.5, 1.0])
    for _ in range(2):
        p["w"].grad = g.copy()
        sgd_step(p, opt, 0)
    np.testing.assert_allclose(p["w"].values, [1.0, -2.0] - 0.1 * (g + 1.9 * g))


def test_sgd_weight_decay_adds_to_velocity():
    p = _params([2.0])
    p["w"].grad = np.array([0.0])
    sgd_step(p, OptimizerConfig(((0, 0.5),), momentum=0.0, weight_decay=0.1), 0)
    assert p["w"].values[0] == pytest.approx(2.0 - 0.5 * 0.2)


def test_sgd_requires_grad():
    with pytest.raises(UsageError):
        sgd_step(_params([1.0]), OptimizerConfig(), 0)


def test_lr_schedule_and_validation():
    opt = OptimizerConfig.step_decay(0.2, (40, 80))
    assert [opt.lr_at(e) for e in (0, 39, 40, 80, 119)] == pytest.approx([0.2, 0.2, 0.02, 0.002, 0.002])
    for bad in (dict(lr_schedule=((1, 0.1),)), dict(momentum=1.0), dict(batch_size=0), dict(weight_decay=-1)):
        with pytest.raises(ConfigError):
            OptimizerConfig(**bad)


def test_accuracy_rounds_and_breaks_ties_low():
    probs = np.array([[0.5, 0.5], [0.2, 0.8], [0.9, 0.1]])
    assert accuracy(probs, [0, 1, 1]) == 66.67
    with pytest.raises(UsageError):
        accuracy(np.zeros((0, 2)), [])


def test_best_and_last_prefers_earliest_best():
    rec = lambda e, v: MetricsRecord(e, 0, 0, 0, 0, v, 50.0, None)
    best, last = best_and_last([rec(0, 80.0), rec(1, 90.0), rec(2, 90.0), rec(3, 85.0)])
    assert (best.epoch, last.epoch) == (1, 3)


def test_default_t1_is_fifteen_percent():
    assert JointRunConfig(num_epochs=200).schedule().t1 == 30


def test_joint_run_is_deterministic(small):
    cfg = JointRunConfig(t1=3, num_epochs=8, seed=5)
    spec = mlp_spec([2, 8, 3])
    a = run_joint(small, spec, cfg, OptimizerConfig())
    b = run_joint(small, spec, cfg, OptimizerConfig())
    assert a[1] == b[1]
    np.testing.assert_array_equal(a[0].current, b[0].current)


def test_labels_frozen_when_t1_beyond_run(small):
    cfg = JointRunConfig(t1=50, num_epochs=6, mode=HARD)
    store, metrics, _ = run_joint(small, mlp_spec([2, 8, 3]), cfg, OptimizerConfig())
    np.testing.assert_array_equal(store.current, store.original_noisy)
    assert all(m.labels_changed == 0 for m in metrics)


def test_gate_outside_t1_t2(small):
    cfg = JointRunConfig(t1=2, t2=5, num_epochs=9, mode=HARD, topk=ALL)
    _, metrics, _ = run_joint(small, mlp_spec([2, 8, 3]), cfg, OptimizerConfig())
    assert all(m.labels_changed == 0 for m in metrics if not 2 <= m.epoch < 5)


def test_resume_matches_uninterrupted(small):
    cfg = JointRunConfig(t1=2, num_epochs=7, mode=SOFT)
    spec = mlp_spec([2, 8, 3])
    full = run_joint(small, spec, cfg, OptimizerConfig())
    saved = {}

    def grab(state):
        if state.epoch == 4:
            saved["params"] = state.params.copy()
            saved["labels"] = state.store.current.copy()
            saved["history"] = [h.copy() for h in state.buffer.history]

    run_joint(small, spec, JointRunConfig(t1=2, num_epochs=4, mode=SOFT), OptimizerConfig(), on_epoch_end=grab)
    state = initial_joint_state(small, spec, cfg)
    state.epoch, state.params = 4, saved["params"]
    state.store.current = saved["labels"]
    for h in saved["history"]:
        state.buffer.history.append(h)
    state.buffer.epoch_count = 4
    resumed = run_joint(small, spec, cfg, OptimizerConfig(), state=state)
    assert resumed[1] == full[1][4:]
    np.testing.assert_array_equal(resumed[0].current, full[0].current)


def test_network_class_mismatch(small):
    with pytest.raises(ConfigError):
        run_joint(small, mlp_spec([2, 4]), JointRunConfig(num_epochs=1), OptimizerConfig())


def test_run_final_zero_epochs_and_bad_loss(small):
    y = small.noisy[small.split == 0]
    params, metrics = run_final(small, y, mlp_spec([2, 4, 3]), OptimizerConfig(), 0)
    assert metrics == [] and len(params) == 4
    with pytest.raises(ConfigError):
        run_final(small, y, mlp_spec([2, 4, 3]), OptimizerConfig(), 1, loss="hinge")


def test_run_final_learns_clean_labels():
    ds = make_blobs(60, 3, 2, 6.0, seed=2)
    _, metrics = run_final(ds, ds.truth[ds.split == 0], mlp_spec([2, 8, 3]), OptimizerConfig(), 15, loss="ce")
    assert metrics[-1].test_acc >= 95.0


def test_probe_grid_shape(small):
    grid = memorization_probe(small, mlp_spec([2, 8, 3]), [0.1, 0.01], [0.0, 0.5], epochs=2)
    assert [(c.lr, c.rate) for c in grid] == [(0.1, 0.0), (0.1, 0.5), (0.01, 0.0), (0.01, 0.5)]
    assert all(len(c.train_loss_curve) == 2 and c.best_test_acc >= c.final_test_acc for c in grid)
    with pytest.raises(ConfigError):
        memorization_probe(small, mlp_spec([2, 8, 3]), [0.1], [0.1], epochs=0)
