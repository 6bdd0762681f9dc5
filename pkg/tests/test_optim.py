import numpy as np
import pytest

from leugan import optim as O, tensor as T
from leugan.errors import NumericError


class TestSgd:
    def test_zero_lr_is_identity(self):
        w = np.array([1.0, -2.0])
        O.sgd_step([w], [np.array([5.0, 5.0])], 0.0)
        np.testing.assert_array_equal(w, [1.0, -2.0])

    def test_single_step_arithmetic(self):
        w = np.array([1.0])
        O.sgd_step([w], [2.0 * w.copy()], 0.1)  # f(w) = w^2 at w=1
        assert w[0] == pytest.approx(0.8, abs=1e-15)

    def test_hundred_steps_match_loop_oracle(self):
        w = np.array([2.0])
        expected = 2.0
        for _ in range(100):
            g = np.cos(w.copy())
            O.sgd_step([w], [g], 0.05)
            expected = expected - 0.05 * np.cos(expected)
        assert w[0] == pytest.approx(expected, abs=1e-12)

    def test_nan_grad_reports_name(self):
        w = np.array([1.0])
        with pytest.raises(NumericError, match="bad_param"):
            O.sgd_step([w], [np.array([np.nan])], 0.1, names=["bad_param"])


class TestAdaboundStep:
    def test_zero_grad_zero_decay_is_noop(self):
        w = np.array([0.7, -0.4])
        st = O.AdaBoundState(weight_decay=0.0)
        O.adabound_step([w], [np.zeros(2)], st)
        np.testing.assert_array_equal(w, [0.7, -0.4])

    def test_bounds_shrink_to_final_lr(self):
        st = O.AdaBoundState(lr=1e-2, final_lr=0.1)
        lb1, ub1 = O.bound_interval(st, 1)
        assert lb1 < 0.1 < ub1
        prev_lb, prev_ub = lb1, ub1
        for t in (10, 100, 10_000, 10_000_000):
            lb, ub = O.bound_interval(st, t)
            assert lb >= prev_lb and ub <= prev_ub
            assert lb <= ub
            prev_lb, prev_ub = lb, ub
        lb, ub = O.bound_interval(st, 10_000_000_000)
        assert lb == pytest.approx(0.1, rel=1e-6)
        assert ub == pytest.approx(0.1, rel=1e-6)

    def test_quadratic_converges_within_5000_steps(self):
        w = np.zeros(1)
        st = O.AdaBoundState(lr=1e-2, final_lr=1e-1, weight_decay=0.0)
        for _ in range(5000):
            O.adabound_step([w], [2.0 * (w - 3.0)], st)
        assert abs(w[0] - 3.0) < 1e-3

    def test_step_sizes_respect_bounds_every_step(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=4)
        st = O.AdaBoundState(lr=5e-2, final_lr=1e-2, weight_decay=0.0)
        m = np.zeros(4)
        v = np.zeros(4)
        for t in range(1, 201):
            g = rng.normal(size=4)
            before = w.copy()
            O.adabound_step([w], [g.copy()], st)
            b1, b2 = st.betas
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            lb, ub = O.bound_interval(st, t)
            moved = before - w
            eta = np.abs(moved / np.where(np.abs(m_hat) < 1e-18, 1.0, m_hat))
            mask = np.abs(m_hat) > 1e-12
            assert (eta[mask] >= lb - 1e-12).all()
            assert (eta[mask] <= ub + 1e-12).all()

    def test_unbounded_matches_adam_oracle(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=6)
        w_ref = w.copy()
        st = O.AdaBoundState(lr=3e-3, final_lr=np.inf, weight_decay=0.0)
        m = np.zeros(6)
        v = np.zeros(6)
        for t in range(1, 51):
            g = np.sin(w_ref) + 0.1 * rng.normal(size=6)
            O.adabound_step([w], [g.copy()], st)
            # straight-line Adam
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            m_hat = m / (1 - 0.9 ** t)
            v_hat = v / (1 - 0.999 ** t)
            w_ref -= 3e-3 * m_hat / (np.sqrt(v_hat) + 1e-8)
        np.testing.assert_allclose(w, w_ref, atol=1e-10)

    def test_decoupled_weight_decay(self):
        w = np.array([2.0])
        st = O.AdaBoundState(lr=1e-2, weight_decay=0.5)
        O.adabound_step([w], [np.zeros(1)], st)
        assert w[0] == pytest.approx(2.0 * (1.0 - 1e-2 * 0.5), abs=1e-15)

    def test_nan_grad_reports_name(self):
        st = O.AdaBoundState()
        with pytest.raises(NumericError, match="enc.w"):
            O.adabound_step([np.ones(1)], [np.array([np.inf])], st, names=["enc.w"])

    def test_deterministic_trajectories(self):
        def run():
            rng = np.random.default_rng(7)
            w = np.ones(3)
            st = O.AdaBoundState(lr=1e-2)
            for _ in range(25):
                O.adabound_step([w], [rng.normal(size=3)], st)
            return w

        np.testing.assert_array_equal(run(), run())


class TestOptimizerClasses:
    def test_adabound_class_over_tensors(self):
        w = T.Tensor(np.zeros(1), requires_grad=True)
        opt = O.Adabound([("w", w)], lr=1e-2, final_lr=1e-1, weight_decay=0.0)
        for _ in range(3000):
            loss = T.tsum(T.square(w - 3.0))
            loss.backward()
            opt.step()
            opt.zero_grad()
        assert abs(w.data[0] - 3.0) < 1e-3

    def test_skips_params_without_grads(self):
        w = T.Tensor(np.ones(2), requires_grad=True)
        untouched = T.Tensor(np.ones(2), requires_grad=True)
        opt = O.Adabound([("w", w), ("u", untouched)], lr=1e-2)
        loss = T.tsum(w * w)
        loss.backward()
        opt.step()
        np.testing.assert_array_equal(untouched.data, [1.0, 1.0])
        assert not np.array_equal(w.data, [1.0, 1.0])

    def test_state_roundtrip(self):
        w = T.Tensor(np.ones(2), requires_grad=True)
        opt = O.Adabound([("w", w)], lr=1e-2)
        loss = T.tsum(w * w)
        loss.backward()
        opt.step()
        arrays = {name: arr.copy() for name, arr in opt.state_tensors()}
        opt2 = O.Adabound([("w", w)], lr=1e-2)
        opt2.load_state_arrays(arrays, t=opt.state.t)
        assert opt2.state.t == opt.state.t
        np.testing.assert_array_equal(opt2.state.m[0], opt.state.m[0])
        np.testing.assert_array_equal(opt2.state.v[0], opt.state.v[0])
