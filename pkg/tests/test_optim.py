import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memqa.optim import OptimState, adamw_step, clip_global_norm, lr_at
from memqa.tensor import NumericError, Tensor


class TestAdamW:
    def test_first_step_hand_computation(self):
        # g=1, b1=0.9, b2=0.999, eps=1e-6, decay=0, lr=1e-5:
        # m=0.1, v=0.001, bias-corrected both 1, delta = -lr/(1+eps)
        p = Tensor(np.array([0.5]), requires_grad=True)
        p.grad = np.array([1.0])
        state = OptimState()
        adamw_step({"w": p}, state, lr=1e-5, weight_decay=0.0)
        np.testing.assert_allclose(state.m["w"], [0.1], rtol=1e-12)
        np.testing.assert_allclose(state.v["w"], [0.001], rtol=1e-12)
        expected = 0.5 - 1e-5 / (1.0 + 1e-6)
        np.testing.assert_allclose(p.data, [expected], rtol=1e-12)
        assert state.t == 1

    def test_zero_grad_leaves_params_but_increments_t(self):
        p = Tensor(np.array([0.7, -0.2]), requires_grad=True)
        p.grad = np.zeros(2)
        state = OptimState()
        adamw_step({"w": p}, state, lr=1e-3, weight_decay=0.0)
        np.testing.assert_allclose(p.data, [0.7, -0.2])
        assert state.t == 1

    def test_decay_applied_before_moments_and_skipped_for_marked(self):
        w = Tensor(np.array([1.0]), requires_grad=True)
        b = Tensor(np.array([1.0]), requires_grad=True)
        w.grad = np.zeros(1)
        b.grad = np.zeros(1)
        adamw_step({"w": w, "b": b}, OptimState(), lr=0.1, weight_decay=0.5, no_decay={"b"})
        np.testing.assert_allclose(w.data, [1.0 - 0.1 * 0.5 * 1.0])
        np.testing.assert_allclose(b.data, [1.0])

    def test_negative_lr_rejected(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.ones(1)
        with pytest.raises(ValueError):
            adamw_step({"w": p}, OptimState(), lr=-1e-3)

    def test_params_without_grads_untouched(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        state = OptimState()
        adamw_step({"w": p}, state, lr=0.1, weight_decay=0.5)
        np.testing.assert_allclose(p.data, [1.0])
        assert "w" not in state.m


class TestLrSchedule:
    def test_endpoints_are_zero(self):
        assert lr_at(0, 1000, 1e-5) == 0.0
        assert lr_at(1000, 1000, 1e-5) == 0.0

    def test_peak_at_twenty_percent(self):
        assert lr_at(200, 1000, 1e-5) == pytest.approx(1e-5, rel=1e-12)

    def test_decay_interpolation(self):
        assert lr_at(600, 1000, 1e-5) == pytest.approx(5e-6, rel=1e-12)

    def test_zero_total_rejected(self):
        with pytest.raises(ValueError):
            lr_at(0, 0, 1e-5)

    def test_step_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            lr_at(11, 10, 1e-5)

    def test_tiny_totals_keep_zero_start(self):
        for total in (1, 2, 3, 4):
            assert lr_at(0, total, 1.0) == 0.0
            assert lr_at(total, total, 1.0) == 0.0

    @given(st.integers(min_value=5, max_value=5000))
    @settings(max_examples=100, deadline=None)
    def test_piecewise_linear_and_continuous(self, total):
        peak = 3e-4
        warmup = max(1, int(0.2 * total + 1e-9))
        values = [lr_at(s, total, peak) for s in range(total + 1)]
        assert values[0] == 0.0 and values[-1] == 0.0
        assert values[warmup] == pytest.approx(peak, rel=1e-12)
        assert max(values) <= peak * (1 + 1e-12)
        ramp = np.diff(values[: warmup + 1])
        decay = np.diff(values[warmup:])
        if len(ramp) > 1:
            np.testing.assert_allclose(ramp, ramp[0], rtol=1e-9)
        if len(decay) > 1:
            np.testing.assert_allclose(decay, decay[0], rtol=1e-9)


class TestClipGlobalNorm:
    def test_three_four_five_triangle(self):
        clipped, norm = clip_global_norm([np.array([3.0, 4.0])], max_norm=1.0)
        assert norm == pytest.approx(5.0)
        np.testing.assert_allclose(clipped[0], [0.6, 0.8], rtol=1e-12)

    def test_under_threshold_untouched(self):
        g = np.array([0.3, 0.4])
        clipped, norm = clip_global_norm([g], max_norm=1.0)
        assert norm == pytest.approx(0.5)
        assert clipped[0] is g

    def test_zero_grads_untouched(self):
        clipped, norm = clip_global_norm([np.zeros(4)], max_norm=1.0)
        assert norm == 0.0
        np.testing.assert_allclose(clipped[0], 0.0)

    def test_nonfinite_rejected(self):
        with pytest.raises(NumericError):
            clip_global_norm([np.array([np.inf])], max_norm=1.0)

    @given(st.lists(st.lists(st.floats(min_value=-100, max_value=100), min_size=1, max_size=6),
                    min_size=1, max_size=4))
    @settings(max_examples=100, deadline=None)
    def test_norm_bounded_and_direction_preserved(self, grads):
        arrays = [np.array(g) for g in grads]
        clipped, norm = clip_global_norm(arrays, max_norm=1.0)
        out_norm = np.sqrt(sum(float((g * g).sum()) for g in clipped))
        assert out_norm <= 1.0 + 1e-9
        if norm > 0:
            flat_in = np.concatenate([g.ravel() for g in arrays])
            flat_out = np.concatenate([g.ravel() for g in clipped])
            cos = flat_in @ flat_out / (np.linalg.norm(flat_in) * np.linalg.norm(flat_out))
            assert cos == pytest.approx(1.0, abs=1e-9)
