"""
Tests for problem specifications and name matching
"""

import pickle

import numpy as np
import pytest

from src.swave.errors import ConfigError
from src.swave.matching import closest_match, unknown_name_message
from src.swave.problem import BUILTINS, ProblemSpec, SineMode, builtin, check_lipschitz, derivative_error, lipschitz_holds, one, zero


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_builtins_satisfy_declared_constants(name):
    spec = builtin(name)
    assert spec.domain == (-1.0, 1.0)
    assert spec.T == 1.0
    assert lipschitz_holds(spec)
    assert derivative_error(spec) < 1e-6


def test_test1_nonlinearities():
    spec = builtin("test1")
    u = np.linspace(-2.0, 2.0, 9)
    np.testing.assert_allclose(spec.drift(u), -u)
    np.testing.assert_allclose(spec.diffusion(u), u)
    np.testing.assert_allclose(spec.diffusion_derivative(u), 1.0)


def test_test2_nonlinearities():
    spec = builtin("test2")
    u = np.linspace(-2.0, 2.0, 9)
    np.testing.assert_allclose(spec.drift(u), np.cos(u))
    np.testing.assert_allclose(spec.diffusion(u), np.sin(u))
    np.testing.assert_allclose(spec.diffusion_derivative(u), np.cos(u))


def test_default_initial_data():
    spec = builtin("test2")
    x = np.linspace(-1.0, 1.0, 11)
    np.testing.assert_allclose(spec.u0(x), np.sin(2 * np.pi * x), atol=1e-15)
    assert np.all(spec.v0(x) == 0.0)


def test_mode_selection():
    assert builtin("deterministic", mode=1).u0 == SineMode(1)
    assert builtin("test1", 3).u0 == SineMode(3)
    x = np.linspace(-1.0, 1.0, 5)
    assert np.all(builtin("test1", mode=0).u0(x) == 0.0)


def test_with_horizon():
    spec = builtin("test1").with_horizon(2.0)
    assert spec.T == 2.0 and spec.name == "test1"


def test_unknown_problem_suggests_name():
    with pytest.raises(ConfigError, match="did you mean 'test1'"):
        builtin("tset1")


def test_negative_mode_rejected():
    with pytest.raises(ConfigError):
        builtin("test1", mode=-1)


def test_boundary_condition_enforced():
    with pytest.raises(ConfigError, match="vanish on the Dirichlet boundary"):
        ProblemSpec(
            name="bad", domain=(-1.0, 1.0), T=1.0, drift=zero, diffusion=zero,
            diffusion_derivative=zero, u0=one, v0=zero, lipschitz_F=0.0, lipschitz_sigma=0.0,
        )


def test_negative_lipschitz_rejected():
    with pytest.raises(ConfigError):
        ProblemSpec(
            name="bad", domain=(-1.0, 1.0), T=1.0, drift=zero, diffusion=zero,
            diffusion_derivative=zero, u0=SineMode(1), v0=zero, lipschitz_F=-1.0, lipschitz_sigma=0.0,
        )


def test_understated_lipschitz_detected():
    spec = ProblemSpec(
        name="steep", domain=(-1.0, 1.0), T=1.0, drift=lambda u: 3.0 * u, diffusion=zero,
        diffusion_derivative=zero, u0=SineMode(1), v0=zero, lipschitz_F=1.0, lipschitz_sigma=0.0,
    )
    worst_F, _ = check_lipschitz(spec)
    assert worst_F == pytest.approx(3.0)
    assert not lipschitz_holds(spec)


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_builtins_pickle(name):
    spec = builtin(name)
    clone = pickle.loads(pickle.dumps(spec))
    u = np.linspace(-1.0, 1.0, 7)
    np.testing.assert_array_equal(clone.diffusion(u), spec.diffusion(u))
    np.testing.assert_array_equal(clone.u0(u), spec.u0(u))
    assert clone.noise_free == spec.noise_free


def test_noise_free_only_without_diffusion():
    assert builtin("deterministic").noise_free
    assert not builtin("additive").noise_free
    assert not builtin("test1").noise_free


class TestMatching:
    def test_close_name(self):
        assert closest_match("stabilty", ["stability", "simulate"]) == "stability"

    def test_no_match_below_threshold(self):
        assert closest_match("zzzz", ["theta", "levels"]) is None

    def test_empty_choices(self):
        assert closest_match("theta", []) is None

    def test_message_lists_choices(self):
        message = unknown_name_message("config key", "sampels", ["samples", "seed"])
        assert "did you mean 'samples'" in message
        assert "choose from: samples, seed" in message
