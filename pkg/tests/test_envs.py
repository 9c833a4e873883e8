"""Benchmark systems, costs and initial-state samplers."""

import numpy as np
import pytest

from safecbf.autodiff import Tape, ops
from safecbf.envs import (
    ACC_A,
    AIRCRAFT_U_NOM,
    ENV_IDS,
    acc_cost,
    acc_system,
    aircraft_cost,
    aircraft_distance,
    aircraft_system,
    make_env,
    pendulum_cost,
    pendulum_params,
    pendulum_system,
)

X_REF = np.array([0.0, 30.0, 100.0])


def test_acc_literal_drift():
    np.testing.assert_allclose(acc_system(lead_drift=False).f(X_REF), [30.0, -3.0, -30.0])


def test_acc_lead_speed_drift():
    sys = acc_system()
    np.testing.assert_allclose(sys.f(X_REF), [30.0, -3.0, -14.0])


def test_acc_gap_rate_is_lead_speed_minus_velocity(rng):
    sys = acc_system()
    for _ in range(20):
        x = rng.uniform([0, 0, 0], [100, 40, 200])
        u = rng.uniform(-1, 1, 1)
        assert sys.xdot(x, u)[2] == pytest.approx(16.0 - x[1], abs=1e-12)


def test_acc_matrix_as_printed():
    np.testing.assert_array_equal(ACC_A, [[0, 1, 0], [0, -0.1, 0], [0, -1, 0]])


def test_aircraft_input_columns_at_zero_heading():
    G = aircraft_system().g(np.zeros(6))
    np.testing.assert_allclose(G[:3, 0], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(G[:3, 1], [0.0, 0.0, 1.0])
    np.testing.assert_allclose(G[3:, 2], [1.0, 0.0, 0.0])
    assert not G[3:, :2].any() and not G[:3, 2:].any()


def test_aircraft_drift_is_zero(rng):
    assert not aircraft_system().f(rng.normal(size=(5, 6))).any()


def test_aircraft_input_box():
    lo, hi = aircraft_system().U.bounding_box()
    np.testing.assert_allclose(lo, [0.1, -1.0, 0.1, -1.0])
    np.testing.assert_allclose(hi, [1.0, 1.0, 1.0, 1.0])


def test_pendulum_parameters():
    np.testing.assert_allclose(pendulum_params(), (-9.8, 0.1, 1.0))
    sys = pendulum_system()
    assert sys.h(np.array([0.0, -0.5])) == pytest.approx(0.0)
    assert sys.h(np.array([0.0, 0.0])) == pytest.approx(0.5)


@pytest.mark.parametrize("env_id", ENV_IDS)
def test_grad_h_matches_finite_differences(env_id, rng):
    sys = make_env(env_id).system
    lo, hi = sys.domain_hint
    for _ in range(5):
        x = rng.uniform(lo, hi)
        fd = np.array([(sys.h(x + e) - sys.h(x - e)) / 2e-6 for e in 1e-6 * np.eye(sys.n)])
        np.testing.assert_allclose(sys.grad_h(x), fd, atol=1e-6)


@pytest.mark.parametrize("env_id", ENV_IDS)
def test_dynamics_accept_recorded_states(env_id, rng):
    sys = make_env(env_id).system
    lo, hi = sys.domain_hint
    x0 = rng.uniform(lo, hi, size=(3, sys.n))
    u0 = rng.uniform(-0.5, 0.5, size=(3, sys.m))
    tape = Tape()
    x = tape.var(x0)
    out = sys.xdot(x, u0)
    np.testing.assert_allclose(ops.value(out), sys.xdot(x0, u0))
    tape.backward(ops.sum_(out * out))
    assert x.grad.shape == x0.shape


# costs ------------------------------------------------------------------------
def test_acc_cost_values():
    assert acc_cost(np.array([0.0, 30.0, 50.0]), np.array([0.0])) == 0.0
    assert acc_cost(np.array([0.0, 0.0, 50.0]), np.array([0.0])) == pytest.approx(9.0)
    assert acc_cost(np.array([0.0, 30.0, 50.0]), np.array([1.0])) == pytest.approx(0.05)


def test_aircraft_cost_at_targets():
    x = np.array([-5.0, 0.3, 1.0, 5.0, -0.2, 2.0])
    assert aircraft_cost(x, AIRCRAFT_U_NOM) == 0.0
    assert aircraft_cost(x + np.array([1.0, 0, 0, 0, 0, 0]), AIRCRAFT_U_NOM) == pytest.approx(1.0)
    assert aircraft_cost(x, AIRCRAFT_U_NOM + np.array([0, 1.0, 0, 0])) == pytest.approx(0.1)


def test_pendulum_cost():
    assert pendulum_cost(np.array([1.0, 2.0]), np.array([3.0])) == pytest.approx(1.0 + 0.4 + 0.09)


def test_costs_batch(rng):
    x = rng.normal(size=(4, 3))
    u = rng.normal(size=(4, 1))
    np.testing.assert_allclose(acc_cost(x, u), [acc_cost(x[k], u[k]) for k in range(4)])


# environments -----------------------------------------------------------------
def test_unknown_env():
    with pytest.raises(KeyError):
        make_env("cartpole")


@pytest.mark.parametrize("env_id", ENV_IDS)
def test_reference_state_is_safe(env_id):
    env = make_env(env_id)
    assert env.system.h(env.reference_state) > 0


@pytest.mark.parametrize("env_id", ENV_IDS)
def test_sampler_is_seeded_and_admissible(env_id):
    env = make_env(env_id)
    a = env.sample_initial(np.random.default_rng(1), 8)
    b = env.sample_initial(np.random.default_rng(1), 8)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (8, env.system.n)
    for x in a:
        assert env.admissible(x, 0.1, env.train_horizon)


def test_unsafe_state_not_admissible():
    env = make_env("acc")
    assert not env.admissible([0.0, 30.0, 40.0], 0.1, 1.0)


def test_aircraft_distance():
    x = np.array([[0.0, 0.0, 0.0, 3.0, 4.0, 0.0], [1.0, 1.0, 0.0, 1.0, 1.0, 0.0]])
    np.testing.assert_allclose(aircraft_distance(x), [5.0, 0.0])
    sys = aircraft_system()
    assert sys.h(x[0]) == pytest.approx(25.0 - 0.25)


def test_alpha_override():
    from safecbf.cbf import AlphaFn

    env = make_env("aircraft", alpha=AlphaFn.linear(3.0))
    assert env.system.alpha.kappa == 3.0
    assert make_env("acc-literal").system.name == "acc-literal"
