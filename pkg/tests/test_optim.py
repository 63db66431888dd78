"""Optimizer behavior: anchor updates, descent, and divergence detection."""

import numpy as np
import pytest

from consem.errors import ConfigError, TrainingDivergedError
from consem.optim import AdamW
from consem.tensor import Tensor, precision


def test_zero_grad_zero_decay_leaves_parameters_unchanged():
    p = Tensor([1.5, -2.0], requires_grad=True)
    opt = AdamW({"p": p}, learning_rate=0.1, weight_decay=0.0)
    before = p.data.copy()
    opt.step()
    np.testing.assert_array_equal(p.data, before)


def test_single_step_unit_gradient_moves_by_learning_rate(f64):
    # Bias correction makes mhat/sqrt(vhat) exactly 1 on the first step.
    p = Tensor([1.0], requires_grad=True)
    opt = AdamW({"p": p}, learning_rate=0.1, weight_decay=0.0)
    p.grad = np.array([1.0])
    opt.step()
    assert p.data[0] == pytest.approx(0.9, abs=1e-7)


def test_ten_steps_approach_quadratic_minimum():
    w = Tensor([0.0], requires_grad=True)
    opt = AdamW({"w": w}, learning_rate=0.3, weight_decay=0.0)
    gaps = [abs(w.data[0] - 3.0)]
    for _ in range(10):
        w.grad = 2.0 * (w.data - 3.0)
        opt.step()
        gaps.append(abs(w.data[0] - 3.0))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_matches_scalar_reference_trajectory(f64):
    p = Tensor([0.7], requires_grad=True)
    opt = AdamW({"p": p}, learning_rate=0.05, weight_decay=0.01)

    # Independent scalar re-derivation of the same update rule.
    x, m, v = 0.7, 0.0, 0.0
    for t in range(1, 7):
        g = np.sin(float(t))
        p.grad = np.array([g])
        opt.step()

        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mhat = m / (1.0 - 0.9**t)
        vhat = v / (1.0 - 0.999**t)
        x -= 0.05 * (mhat / (np.sqrt(vhat) + 1e-8) + 0.01 * x)
        assert p.data[0] == pytest.approx(x, abs=1e-12)


def test_none_gradient_still_applies_weight_decay():
    p = Tensor([2.0], requires_grad=True)
    opt = AdamW({"p": p}, learning_rate=0.1, weight_decay=0.5)
    opt.step()
    assert p.data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0, abs=1e-6)


def test_zero_grad_clears_all_parameters():
    p, q = Tensor([1.0], requires_grad=True), Tensor([2.0], requires_grad=True)
    p.grad, q.grad = np.array([1.0]), np.array([1.0])
    AdamW({"p": p, "q": q}, learning_rate=0.1).zero_grad()
    assert p.grad is None and q.grad is None


def test_non_finite_gradient_names_the_parameter():
    p = Tensor([1.0], requires_grad=True)
    opt = AdamW({"bad.weight": p}, learning_rate=0.1)
    p.grad = np.array([np.nan])
    with pytest.raises(TrainingDivergedError, match="bad.weight"):
        opt.step()


def test_rejects_bad_hyperparameters():
    p = Tensor([1.0], requires_grad=True)
    with pytest.raises(ConfigError):
        AdamW({"p": p}, learning_rate=0.0)
    with pytest.raises(ConfigError):
        AdamW({"p": p}, learning_rate=0.1, beta1=1.0)
    with pytest.raises(ConfigError):
        AdamW({"p": p}, learning_rate=0.1, weight_decay=-0.1)


def test_deterministic_across_rebuilds(f64):
    def run():
        with precision(np.float64):
            p = Tensor(np.linspace(-1, 1, 6).reshape(2, 3), requires_grad=True)
            opt = AdamW({"p": p}, learning_rate=0.02)
            for t in range(5):
                p.grad = np.full((2, 3), 0.1 * (t + 1))
                opt.step()
            return p.data.tobytes()

    assert run() == run()
