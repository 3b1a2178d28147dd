import math

import numpy as np
import pytest

from evoattack.errors import ConfigError, ContractError, NumericError
from evoattack.strategies import (
    ALGORITHMS,
    CMAES,
    NES,
    OnePlusOneES,
    canonical_algorithm,
    make_optimizer,
    nes_update,
    one_fifth_rule,
    recombination_weights,
)


def sphere(x):
    return -float(x @ x)


def drive(opt, fn, evals):
    best, used = -np.inf, 0
    while used < evals:
        xs = opt.ask()
        fs = [fn(x) for x in xs]
        used += len(xs)
        best = max(best, max(fs))
        opt.tell(xs, fs)
    return best


class TestProtocol:
    @pytest.mark.parametrize("algo", ALGORITHMS)
    def test_double_ask_rejected(self, algo):
        opt = make_optimizer(algo, 4, 0)
        opt.ask()
        with pytest.raises(ContractError):
            opt.ask()

    @pytest.mark.parametrize("algo", ALGORITHMS)
    def test_tell_without_ask_rejected(self, algo):
        with pytest.raises(ContractError):
            make_optimizer(algo, 4, 0).tell([np.zeros(4)], [0.0])

    def test_tell_wrong_count(self):
        opt = make_optimizer("cma_es", 3, 0)
        xs = opt.ask()
        with pytest.raises(ContractError, match="25 candidates"):
            opt.tell(xs[:3], [0.0] * 3)

    def test_ask_returns_copies(self):
        opt = make_optimizer("nes", 3, 0)
        xs = opt.ask()
        xs[0][:] = 99.0
        assert not np.any(opt._pending == 99.0)

    @pytest.mark.parametrize("name,canon", [("1p1", "one_plus_one"), ("CMA-ES", "cma_es"), ("cmaes", "cma_es"), ("nes", "nes")])
    def test_aliases(self, name, canon):
        assert canonical_algorithm(name) == canon

    def test_unknown_algorithm(self):
        with pytest.raises(ConfigError, match="unknown algorithm"):
            canonical_algorithm("pso")

    def test_unknown_param(self):
        with pytest.raises(ConfigError, match="momentum"):
            make_optimizer("nes", 3, 0, {"momentum": 0.9})

    def test_generations_param_accepted(self):
        make_optimizer("cma_es", 3, 0, {"generations": 7})

    def test_x0_length_checked(self):
        with pytest.raises(ConfigError, match="x0"):
            make_optimizer("nes", 3, 0, {"x0": np.zeros(4)})

    def test_zero_dimension(self):
        with pytest.raises(ConfigError):
            make_optimizer("nes", 0, 0)


class TestOnePlusOne:
    @pytest.mark.parametrize("window,expected", [
        ([True] * 3 + [False] * 7, 1.0 / 0.85),
        ([True] * 1 + [False] * 9, 0.85),
        ([True] * 2 + [False] * 8, 1.0),
    ])
    def test_one_fifth_rule(self, window, expected):
        assert one_fifth_rule(1.0, window, 0.85) == pytest.approx(expected)

    def test_first_ask_is_starting_point(self):
        x0 = np.array([1.0, -2.0])
        opt = OnePlusOneES(x0, np.random.default_rng(0))
        np.testing.assert_array_equal(opt.ask()[0], x0)

    def test_equal_fitness_is_not_success(self):
        opt = OnePlusOneES(np.zeros(2), np.random.default_rng(0), fitness0=1.0)
        xs = opt.ask()
        opt.tell(xs, [1.0])
        assert opt.success_window == [False]
        np.testing.assert_array_equal(opt.current, np.zeros(2))

    def test_sigma_shrinks_without_improvement(self):
        opt = OnePlusOneES(np.zeros(2), np.random.default_rng(0), fitness0=0.0)
        for _ in range(10):
            opt.tell(opt.ask(), [-1.0])
        assert opt.sigma == pytest.approx(0.85)

    def test_nan_never_accepted(self):
        opt = OnePlusOneES(np.zeros(2), np.random.default_rng(0), fitness0=0.0)
        opt.tell(opt.ask(), [np.nan])
        assert opt.current_fitness == 0.0


class TestNES:
    def test_update_formula(self):
        mean = np.array([1.0, 2.0])
        noise = np.array([[1.0, -1.0], [0.5, 2.0]])
        out = nes_update(mean, 2.0, 0.1, [3.0, 1.0], noise)
        # batch-mean baseline 2: (1*[1,-1] + -1*[0.5,2]) / (2*2)
        np.testing.assert_allclose(out, mean + 0.1 * np.array([0.5, -3.0]) / 4)

    def test_single_sample_zero_baseline(self):
        out = nes_update(np.zeros(2), 1.0, 0.05, [2.0], np.array([[1.0, 0.0]]))
        np.testing.assert_allclose(out, [0.1, 0.0])

    def test_non_finite_dropped(self):
        out = nes_update(np.zeros(1), 1.0, 1.0, [np.nan], np.ones((1, 1)))
        np.testing.assert_array_equal(out, [0.0])

    def test_noise_shape_checked(self):
        with pytest.raises(ContractError):
            nes_update(np.zeros(2), 1.0, 0.05, [1.0, 2.0], np.zeros((1, 2)))

    def test_first_update_uses_raw_fitness(self):
        opt = NES(np.zeros(3), np.random.default_rng(5))
        xs = opt.ask()
        z = xs[0].copy()  # sigma 1, mean 0
        opt.tell(xs, [2.0])
        np.testing.assert_allclose(opt.mean, 0.05 * 2.0 * z)
        assert opt.baseline == 2.0

    def test_plateau_does_not_blow_up(self):
        opt = NES(np.zeros(50), np.random.default_rng(3))
        rng = np.random.default_rng(4)
        for _ in range(3000):
            xs = opt.ask()
            opt.tell(xs, [1.0 + 1e-12 * rng.standard_normal()])
        # clipped utility bounds each step by eta*clip*|z|
        assert np.abs(opt.mean).max() < 50

    def test_bad_params(self):
        with pytest.raises(ConfigError):
            NES(np.zeros(2), np.random.default_rng(0), eta=0)
        with pytest.raises(ConfigError):
            NES(np.zeros(2), np.random.default_rng(0), baseline_decay=1.0)


class TestCMAES:
    def test_weights_sum_to_one_and_decrease(self):
        w = recombination_weights(25)
        assert len(w) == 12
        assert w.sum() == pytest.approx(1.0, abs=1e-15)
        assert np.all(np.diff(w) < 0)

    def test_learning_rates_in_range(self):
        opt = CMAES(np.zeros(10), np.random.default_rng(0))
        assert 0 < opt.c_1 < 1 and 0 < opt.c_mu < 1 and opt.c_1 + opt.c_mu <= 1
        assert 0 < opt.c_sigma < 1 and 0 < opt.c_c <= 1
        assert opt.eigen_gap >= 1

    def test_non_finite_ranked_last(self):
        opt = CMAES(np.zeros(2), np.random.default_rng(0), popsize=4)
        xs = opt.ask()
        opt.tell(xs, [np.nan, 1.0, 0.5, np.inf * -1])
        # mu = 2: mean is the weighted mix of candidates 1 and 2
        w = opt.weights
        np.testing.assert_allclose(opt.mean, w[0] * xs[1] + w[1] * xs[2])

    def test_eigen_floor_repairs(self):
        opt = CMAES(np.zeros(3), np.random.default_rng(0))
        opt.C = np.diag([1.0, 1e-20, -1e-18])
        opt.update_eigensystem()
        assert np.linalg.eigvalsh(opt.C).min() > 0

    def test_unrepairable_raises(self):
        opt = CMAES(np.zeros(2), np.random.default_rng(0))
        opt.C = np.full((2, 2), np.nan)
        with pytest.raises(NumericError, match="non-finite"):
            opt.update_eigensystem()
        opt.C = -np.eye(2)
        with pytest.raises(NumericError, match="not repairable"):
            opt.update_eigensystem()

    def test_sigma_grows_on_linear_slope(self):
        opt = CMAES(np.zeros(5), np.random.default_rng(0), sigma=0.1)
        drive(opt, lambda x: float(x[0]), 25 * 30)
        assert opt.sigma > 0.1

    def test_rotated_ellipsoid(self):
        rng = np.random.default_rng(2)
        Q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        scales = 10.0 ** np.arange(6)
        fn = lambda x: -float(np.sum(scales * (Q @ x) ** 2))
        best = drive(CMAES(np.ones(6), np.random.default_rng(1), sigma=0.5, popsize=12), fn, 12 * 400)
        assert -best < 1e-8


class TestConvergence:
    @pytest.mark.parametrize("algo", ["one_plus_one", "cma_es"])
    def test_sphere(self, algo):
        x0 = np.full(10, 5 / math.sqrt(10))
        best = drive(make_optimizer(algo, 10, 7, {"x0": x0}), sphere, 5000)
        assert -best < 1e-3 * 25
