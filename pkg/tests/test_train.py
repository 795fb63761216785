import numpy as np
import pytest

from multifbsde.errors import ConfigError, ParameterDomainError
from multifbsde.model import DriftShift
from multifbsde.train import (AdamState, TrainConfig, adam_step, evaluate_mse,
                              held_out_batch, lr_schedule, mse_landscape, train)
from conftest import make_frozen_problem


def toy_config(**kw):
    base = dict(m_train=64, batch_size=16, epochs=4, n_steps=3, hidden=(4,),
                seed=0, eval_samples=64)
    base.update(kw)
    return TrainConfig(**base)


class TestAdamStep:
    def test_zero_gradient_leaves_theta_unchanged(self):
        state = AdamState.init(3)
        theta = np.array([1.0, -2.0, 0.5])
        new, state = adam_step(state, theta, np.zeros(3), 0.1)
        np.testing.assert_array_equal(new, theta)

    def test_first_step_magnitude(self):
        # bias corrections cancel at t=1: step = lr * g/(|g| + eps')
        state = AdamState.init(1)
        theta = np.zeros(1)
        new, _ = adam_step(state, theta, np.ones(1), 0.1)
        assert new[0] == pytest.approx(-0.1, rel=1e-6)

    def test_monotone_under_constant_gradient(self):
        state = AdamState.init(1)
        theta = np.zeros(1)
        values = [theta[0]]
        for _ in range(5):
            theta, state = adam_step(state, theta, np.ones(1), 0.1)
            values.append(theta[0])
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_length_mismatch(self):
        with pytest.raises(ParameterDomainError):
            adam_step(AdamState.init(2), np.zeros(2), np.zeros(3), 0.1)


class TestLrSchedule:
    def test_reference_shape(self):
        # the documented shape at lr0 = 1e-2: flat through epoch 3, then decayed
        cfg = TrainConfig(m_train=2**14, batch_size=2**10, epochs=10,
                          lr0=1e-2, lr_hold_epochs=3, lr_decay_rate=0.5)
        per = cfg.batches_per_epoch
        assert lr_schedule(0, cfg) == pytest.approx(1e-2)
        assert lr_schedule(per - 1, cfg) == pytest.approx(1e-2)
        assert lr_schedule(4 * per, cfg) == pytest.approx(1e-2 * np.exp(-0.5))
        assert lr_schedule(5 * per, cfg) == pytest.approx(1e-2 * np.exp(-1.0))

    def test_constant_override(self):
        cfg = TrainConfig(m_train=2**12, batch_size=2**10, lr0=0.05, lr_decay_rate=0.0)
        for it in (0, 7, 35):
            assert lr_schedule(it, cfg) == 0.05

    def test_negative_iteration_rejected(self):
        with pytest.raises(ParameterDomainError):
            lr_schedule(-1, TrainConfig())


class TestTrainConfig:
    def test_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            TrainConfig(m_train=100, batch_size=64)

    def test_mode_validated(self):
        with pytest.raises(ConfigError):
            TrainConfig(mode="warp")

    def test_desk_profile(self):
        desk = TrainConfig().desk()
        assert desk.m_train == 2**16
        assert desk.batch_size == 2**10
        assert desk.epochs == 4


class TestTrain:
    def test_frozen_toy_y0_converges_to_zero(self, frozen_problem):
        # loss is exactly y0^2; 200 iterations with annealing land near 0
        cfg = toy_config(m_train=160, batch_size=8, epochs=10, y0_init=1.0,
                         lr0=0.1, lr_hold_epochs=2, lr_decay_rate=1.5)
        assert cfg.iterations == 200
        nets, y0, hist = train(frozen_problem, cfg)
        assert abs(y0) < 1e-3
        assert len(hist) == 200

    def test_frozen_toy_loss_nonincreasing_trend(self, frozen_problem):
        cfg = toy_config(m_train=160, batch_size=8, epochs=10, y0_init=1.0,
                         lr0=0.1, lr_hold_epochs=2, lr_decay_rate=1.0)
        _, _, hist = train(frozen_problem, cfg)
        losses = hist.losses
        for start in range(100, 150, 10):
            window = losses[start:start + 50]
            assert window[-1] <= window[0] + 1e-12

    def test_determinism(self, frozen_problem):
        cfg = toy_config(y0_init=0.5)
        r1 = train(frozen_problem, cfg)
        r2 = train(frozen_problem, cfg)
        assert r1.y0 == r2.y0
        assert r1.history.losses == r2.history.losses
        assert r1.history.y0s == r2.history.y0s

    def test_phase2_echoes_y0_bit_exactly(self, frozen_problem):
        y0_fixed = 0.123456789012345
        cfg = toy_config(mode="phase2")
        nets, y0, hist = train(frozen_problem, cfg, y0_fixed=y0_fixed)
        assert y0 == y0_fixed
        assert all(v == y0_fixed for v in hist.y0s)

    def test_phase1_with_zero_shift_matches_deep_fbsde(self, frozen_problem):
        cfg1 = toy_config(mode="phase1", y0_init=0.8)
        cfg2 = toy_config(mode="deep-fbsde", y0_init=0.8)
        r1 = train(frozen_problem, cfg1, shifts=[DriftShift("zero")])
        r2 = train(frozen_problem, cfg2)
        assert r1.history.losses == r2.history.losses
        assert r1.y0 == r2.y0

    def test_mode_argument_validation(self, frozen_problem):
        with pytest.raises(ConfigError):
            train(frozen_problem, toy_config(mode="phase1"))  # no shifts
        with pytest.raises(ConfigError):
            train(frozen_problem, toy_config(mode="phase2"))  # no y0_fixed
        with pytest.raises(ConfigError):
            train(frozen_problem, toy_config(mode="deep-fbsde"),
                  shifts=[DriftShift("zero")])
        with pytest.raises(ConfigError):
            train(frozen_problem, toy_config(mode="deep-fbsde"), y0_fixed=1.0)

    def test_warm_start_is_used(self, frozen_problem):
        cfg = toy_config(mode="deep-fbsde", y0_init=0.3)
        nets1, y0_star, _ = train(frozen_problem, cfg)
        cfg2 = toy_config(mode="phase2", m_train=16, batch_size=16, epochs=1)
        nets2, _, _ = train(frozen_problem, cfg2, y0_fixed=y0_star, init_nets=nets1)
        # one tiny follow-up epoch: parameters stay close to the warm start
        d = sum(np.abs(a.weights[0] - b.weights[0]).max()
                for a, b in zip(nets1.nets, nets2.nets))
        assert d < 0.5

    def test_y0_lr_scale_accelerates_travel(self, frozen_problem):
        slow = toy_config(y0_init=4.0, lr0=0.05, lr_decay_rate=0.0)
        fast = toy_config(y0_init=4.0, lr0=0.05, lr_decay_rate=0.0, y0_lr_scale=8.0)
        _, y0_slow, _ = train(frozen_problem, slow)
        _, y0_fast, _ = train(frozen_problem, fast)
        assert abs(y0_fast) < abs(y0_slow)

    def test_tail_mean_readout(self, frozen_problem):
        cfg = toy_config(y0_init=1.0, y0_readout="tail-mean")
        nets, y0, hist = train(frozen_problem, cfg)
        assert y0 == pytest.approx(np.mean(hist.y0s[-cfg.batches_per_epoch:]))

    def test_history_csv(self, tmp_path, frozen_problem):
        cfg = toy_config()
        _, _, hist = train(frozen_problem, cfg)
        with_seconds = tmp_path / "a.csv"
        without = tmp_path / "b.csv"
        hist.to_csv(with_seconds)
        hist.to_csv(without, include_seconds=False)
        assert with_seconds.read_text().splitlines()[0] == "iteration,loss,y0,lr,seconds"
        assert without.read_text().splitlines()[0] == "iteration,loss,y0,lr"


class TestEvaluation:
    def test_held_out_batch_disjoint_from_training(self, frozen_problem):
        cfg = toy_config()
        train_batch = None
        from multifbsde.stochastics import sample_brownian_batch

        grid_h = frozen_problem.horizon / cfg.n_steps
        train_batch = sample_brownian_batch(cfg.seed, cfg.m_train, cfg.n_steps, 1, grid_h)
        eval_batch = held_out_batch(frozen_problem, cfg)
        assert not np.allclose(train_batch.increments[: eval_batch.m],
                               eval_batch.increments)

    def test_evaluate_mse_frozen(self, frozen_problem):
        cfg = toy_config()
        nets, y0, _ = train(frozen_problem, cfg)
        batch = held_out_batch(frozen_problem, cfg)
        assert evaluate_mse(frozen_problem, nets, 2.0, batch) == pytest.approx(4.0)
        two = evaluate_mse(frozen_problem, nets, 2.0, batch,
                           shifts=[DriftShift("a"), DriftShift("b")])
        assert two == pytest.approx(8.0)


class TestMseLandscape:
    def test_frozen_toy_landscape_is_exact_parabola(self, frozen_problem):
        cfg = toy_config(m_train=32, batch_size=16, epochs=1)
        curve = mse_landscape(frozen_problem, [-2.0, -1.0, 0.0, 1.0, 2.0], cfg)
        for y0, mse in curve:
            assert mse == pytest.approx(y0 * y0, abs=1e-12)

    def test_empty_grid_rejected(self, frozen_problem):
        with pytest.raises(ConfigError):
            mse_landscape(frozen_problem, [], toy_config())
