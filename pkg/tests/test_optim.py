import numpy as np
import pytest

from stgfn import tensor as T
from stgfn.optim import AdamW, MissingGradientError, PlateauScheduler

from frozen_values import ADAMW_ONE_STEP


def _step(theta, grad, **kw):
    p = T.parameter([theta])
    opt = AdamW([p], **kw)
    p.grad = np.array([grad])
    opt.step()
    return p.data[0], opt


def test_one_adamw_step_matches_hand_evaluation():
    theta, _ = _step(0.0, 1.0, lr=1e-4, weight_decay=0.0)
    assert theta == pytest.approx(ADAMW_ONE_STEP, rel=1e-12)
    assert theta == pytest.approx(-1e-4, rel=1e-6)


def test_zero_gradient_and_zero_decay_leave_parameter_alone():
    theta, _ = _step(0.37, 0.0, lr=1e-3, weight_decay=0.0)
    assert theta == 0.37


def test_decay_is_decoupled_from_the_gradient():
    theta, _ = _step(1.0, 0.0, lr=0.1, weight_decay=0.01)
    assert theta == pytest.approx(0.999, abs=1e-15)


def test_step_counter_and_moment_shapes():
    p = T.parameter(np.zeros((2, 3)))
    opt = AdamW([p])
    for k in range(1, 4):
        p.grad = np.ones((2, 3))
        opt.step()
        assert opt.step_count == k
    assert opt.m[0].shape == opt.v[0].shape == (2, 3)


def test_missing_gradient_is_reported_by_name():
    p = T.parameter([1.0], name="w")
    with pytest.raises(MissingGradientError, match="w"):
        AdamW([p]).step()


def test_state_dict_round_trip():
    theta, opt = _step(0.5, 0.3)
    other = AdamW([T.parameter([theta])])
    other.load_state_dict(opt.state_dict())
    assert other.step_count == 1
    np.testing.assert_array_equal(other.m[0], opt.m[0])
    np.testing.assert_array_equal(other.v[0], opt.v[0])


def _scheduler(lr=1e-4, patience=5):
    return PlateauScheduler(AdamW([T.parameter([0.0])], lr=lr), patience=patience, factor=0.1)


def test_flat_losses_reduce_lr_after_sixth_epoch():
    sched = _scheduler()
    trace = [sched.step(1.0) for _ in range(6)]
    assert trace[:5] == [1e-4] * 5
    assert trace[5] == pytest.approx(1e-5, rel=1e-12)


def test_strictly_decreasing_losses_never_reduce():
    sched = _scheduler()
    assert {sched.step(1.0 - 0.01 * k) for k in range(30)} == {1e-4}


def test_improvement_resets_the_counter():
    sched = _scheduler()
    trace = [sched.step(v) for v in [1.0, 1.0, 1.0, 0.5, 0.5, 0.5]]
    assert trace == [1e-4] * 6


def test_counter_resets_after_a_reduction():
    sched = _scheduler()
    trace = [sched.step(1.0) for _ in range(12)]
    assert trace[5] == pytest.approx(1e-5)
    assert trace[10] == pytest.approx(1e-6)
    assert all(a >= b for a, b in zip(trace, trace[1:]))
