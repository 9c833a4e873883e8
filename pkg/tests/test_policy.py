"""Safety layers and controller variants.

Membership of the gauge policy's output in the state-dependent safe set
is checked over random networks and states; the batched layers are
checked against their single-sample forms and against finite
differences.
"""

import numpy as np
import pytest

from safecbf.autodiff import Mlp, Tape, ops
from safecbf.cbf import cbf_rows, chebyshev_lp, safe_control_set, safety_filter
from safecbf.envs import make_env
from safecbf.layers import box_scale, gauge_forward, gauge_layer, qp_forward, qp_layer
from safecbf.policy import (
    FeatureNet,
    Policy,
    Variant,
    env_spec,
    evaluate_diff_qp,
    evaluate_filtered,
    evaluate_gauge,
    evaluate_interior,
    evaluate_plain,
    load_policy,
    make_policy,
    network_for,
)

X_REF = np.array([0.0, 30.0, 100.0])


def constant_net(env, v):
    """A network whose output is ``v`` everywhere (zero weights, atanh bias)."""
    v = np.asarray(v, dtype=float)
    nin, m = env.n_features, v.size
    theta = np.concatenate([np.zeros(nin * m), np.arctanh(v)])
    return FeatureNet(Mlp((nin, m), theta), env.features)


@pytest.fixture(scope="module")
def acc():
    return make_env("acc")


@pytest.fixture(scope="module")
def literal():
    return make_env("acc-literal")


@pytest.fixture(scope="module")
def aircraft():
    return make_env("aircraft")


# plain and filtered -----------------------------------------------------------
def test_box_scale_center_and_corners():
    lo, hi = np.array([0.1, -1.0]), np.array([1.0, 1.0])
    np.testing.assert_allclose(box_scale(np.zeros(2), lo, hi), [0.55, 0.0])
    np.testing.assert_allclose(box_scale(np.array([-1.0, 1.0]), lo, hi), [0.1, 1.0])


def test_plain_zero_output_is_box_center(aircraft):
    net = constant_net(aircraft, np.zeros(4))
    np.testing.assert_allclose(evaluate_plain(net, aircraft.system, aircraft.reference_state), [0.55, 0.0, 0.55, 0.0])


def test_filtered_keeps_safe_output(literal):
    net = constant_net(literal, [0.4])
    np.testing.assert_allclose(evaluate_filtered(net, literal.system, X_REF), [0.4])


def test_filtered_projects_unsafe_output(acc):
    # at the boundary with high speed the barrier row forces braking
    x = np.array([0.0, 25.0, 45.0])
    net = constant_net(acc, [0.9])
    u = evaluate_filtered(net, acc.system, x)
    K = safe_control_set(acc.system, x)
    a, c = K.cbf_row
    assert a @ u == pytest.approx(c)
    assert u[0] < 0.9


# gauge policy -----------------------------------------------------------------
def test_gauge_zero_output_is_interior_point(aircraft, rng):
    net = constant_net(aircraft, np.zeros(4))
    for x in aircraft.sample_initial(rng, 5):
        F, g = cbf_rows(aircraft.system, x)
        center = chebyshev_lp(F, g)[0]
        np.testing.assert_allclose(evaluate_gauge(net, aircraft.system, x), center, atol=1e-12)
        np.testing.assert_allclose(evaluate_interior(aircraft.system, x), center, atol=1e-12)


def test_gauge_identity_on_symmetric_interval(literal):
    for v in [-0.9, -0.3, 0.0, 0.5, 0.99]:
        net = constant_net(literal, [v])
        assert evaluate_gauge(net, literal.system, X_REF)[0] == pytest.approx(v, abs=1e-12)


@pytest.mark.parametrize("env_id", ["acc", "aircraft"])
def test_gauge_output_in_safe_set(env_id, rng):
    env = make_env(env_id)
    sys = env.system
    checked = 0
    for trial in range(40):
        net = network_for(env, hidden=(8,), seed=trial)
        net.mlp.theta = net.mlp.theta * rng.uniform(0.5, 5.0)
        xs = env.propose(rng, 25)
        pol = Policy(Variant.GAUGE, env, net)
        U, flags = pol.controls(xs)
        F, g = cbf_rows(sys, xs)
        viol = np.einsum("brm,bm->br", F, U) - g
        ok = ~flags
        assert np.all(viol[ok] <= 1e-8)
        # flagged samples still respect the input set
        assert np.all(viol[:, 1:] <= 1e-8)
        checked += int(ok.sum())
    assert checked > 500


def test_gauge_flags_degenerate_sets(acc):
    net = constant_net(acc, [0.3])
    step = gauge_forward(np.array([0.3]), *cbf_rows(acc.system, np.array([0.0, 29.0, 52.3])), np.array([-1.0]), np.array([1.0]))
    assert step.fallback
    u, flag = Policy(Variant.GAUGE, acc, net).act(np.array([0.0, 29.0, 52.3]))
    assert flag and -1.0 - 1e-12 <= u[0] <= 1.0 + 1e-12


# diff-QP policy ---------------------------------------------------------------
def test_diffqp_equals_filtered_at_evaluation(acc, rng):
    net = network_for(acc, seed=3)
    for x in acc.sample_initial(rng, 10):
        np.testing.assert_allclose(evaluate_diff_qp(net, acc.system, x), evaluate_filtered(net, acc.system, x), atol=1e-12)


def test_diffqp_output_in_safe_set(aircraft, rng):
    pol = make_policy("diffqp", aircraft, seed=2)
    xs = aircraft.propose(rng, 100)
    U, flags = pol.controls(xs)
    F, g = cbf_rows(aircraft.system, xs)
    viol = np.einsum("brm,bm->br", F, U) - g
    assert np.all(viol[~flags] <= 1e-8)


# batched layers ---------------------------------------------------------------
@pytest.mark.parametrize("variant", ["plain", "filtered", "diffqp", "gauge", "interior"])
def test_batch_controls_match_single_steps(variant, aircraft, rng):
    pol = make_policy(variant, aircraft, seed=1)
    xs = aircraft.propose(rng, 20)
    U, flags = pol.controls(xs)
    for k, x in enumerate(xs):
        u, f = pol.act(x)
        if variant == "filtered":
            # training-time forward of the filtered variant is the plain network
            u = evaluate_plain(pol.net, aircraft.system, x)
            f = False
        np.testing.assert_allclose(U[k], u, atol=1e-12)
        assert bool(flags[k]) == bool(f)


def layer_fd_check(layer, v, F, g, lo, hi, eps=1e-6, state_rows=False):
    """Compare the layer pullback with central differences.

    With ``state_rows`` only the data a state can move is perturbed: the
    nonzero entries of the barrier row (row 0). The input-box rows are
    constants, and on the aircraft set they tie several equally large
    inscribed balls, so nudging them moves the center by a jump.
    """
    rng = np.random.default_rng(0)
    tape = Tape()
    vv, Fv, gv = tape.var(v), tape.var(F), tape.var(g)
    out, _ = layer(vv, Fv, gv, lo, hi)
    w = rng.normal(size=out.value.shape)
    tape.backward(ops.sum_(out * w))

    def f(v_, F_, g_):
        return float(np.sum(ops.value(layer(v_, F_, g_, lo, hi)[0]) * w))

    for arr, var, k in ((v, vv, 0), (F, Fv, 1), (g, gv, 2)):
        grad = var.grad if var.grad is not None else np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            if state_rows and k > 0 and (idx[1] != 0 or (k == 1 and F[idx] == 0.0)):
                continue
            d = np.zeros_like(arr)
            d[idx] = eps
            args_p = [v, F, g]
            args_m = [v, F, g]
            args_p[k] = arr + d
            args_m[k] = arr - d
            fd = (f(*args_p) - f(*args_m)) / (2 * eps)
            assert grad[idx] == pytest.approx(fd, abs=1e-5, rel=1e-4), (k, idx)


def test_gauge_layer_gradient(aircraft, rng):
    sys = aircraft.system
    lo, hi = sys.U.bounding_box()
    xs = aircraft.sample_initial(rng, 3)
    F, g = cbf_rows(sys, xs)
    v = rng.uniform(-0.8, 0.8, size=(3, 4))
    layer_fd_check(gauge_layer, v, np.array(F), np.array(g), lo, hi, state_rows=True)


def generic_rows(rng, B, m):
    """Random rows with a unique Chebyshev center (no symmetric ties)."""
    F = np.concatenate([rng.normal(size=(B, 3, m)), np.tile(np.vstack([np.eye(m), -np.eye(m)]), (B, 1, 1))], axis=1)
    g = np.concatenate([rng.uniform(0.3, 1.0, (B, 3)), rng.uniform(0.8, 1.2, (B, 2 * m))], axis=1)
    return F, g


def test_gauge_layer_gradient_generic_rows(rng):
    F, g = generic_rows(rng, 4, 2)
    v = rng.uniform(-0.8, 0.8, size=(4, 2))
    layer_fd_check(gauge_layer, v, F, g, -np.ones(2), np.ones(2))


def test_qp_layer_gradient_generic_rows(rng):
    F, g = generic_rows(rng, 4, 2)
    v = rng.uniform(-0.95, 0.95, size=(4, 2))
    layer_fd_check(qp_layer, v, F, g, -2.0 * np.ones(2), 2.0 * np.ones(2))


def test_qp_layer_gradient(aircraft, rng):
    sys = aircraft.system
    lo, hi = sys.U.bounding_box()
    xs = aircraft.sample_initial(rng, 3)
    F, g = cbf_rows(sys, xs)
    v = rng.uniform(-0.95, 0.95, size=(3, 4))
    layer_fd_check(qp_layer, v, np.array(F), np.array(g), lo, hi, state_rows=True)


def test_layers_agree_with_single_forms(aircraft, rng):
    sys = aircraft.system
    lo, hi = sys.U.bounding_box()
    xs = aircraft.propose(rng, 30)
    F, g = cbf_rows(sys, xs)
    v = rng.uniform(-0.9, 0.9, size=(30, 4))
    Ug, fg = gauge_layer(v, F, g, lo, hi)
    Uq, fq = qp_layer(v, F, g, lo, hi)
    for k in range(30):
        a = gauge_forward(v[k], F[k], g[k], lo, hi)
        b = qp_forward(v[k], F[k], g[k], lo, hi)
        np.testing.assert_allclose(Ug[k], a.u, atol=1e-12)
        np.testing.assert_allclose(Uq[k], b.u, atol=1e-12)
        assert fg[k] == a.fallback and fq[k] == b.fallback


# construction and persistence ---------------------------------------------------
def test_variant_requirements(acc):
    with pytest.raises(ValueError):
        Policy(Variant.GAUGE, acc)
    with pytest.raises(ValueError):
        Policy(Variant.MPC, acc)
    with pytest.raises(ValueError):
        Variant("nn-magic")
    assert make_policy("interior", acc).net is None
    assert not make_policy("filtered", acc).trainable
    assert make_policy("gauge", acc).trainable


def test_save_and_load(tmp_path, aircraft, rng):
    from safecbf.cbf import AlphaFn

    env = make_env("aircraft", alpha=AlphaFn.linear(2.0))
    pol = make_policy("gauge", env, hidden=(5, 4), seed=11)
    pol.meta["epoch_time"] = 0.5
    path = tmp_path / "ck.bin"
    pol.save(path, epoch=3)
    back = load_policy(path)
    assert back.variant is Variant.GAUGE
    assert back.sys.alpha == AlphaFn.linear(2.0)
    assert back.meta["epoch"] == 3 and back.meta["epoch_time"] == 0.5
    x = env.propose(rng, 1)[0]
    np.testing.assert_array_equal(back.act(x)[0], pol.act(x)[0])
    assert load_policy(path, variant="plain").variant is Variant.PLAIN
    assert env_spec(env) == {"id": "aircraft", "alpha": {"kind": "linear", "kappa": 2.0}}


def test_with_variant_shares_network(acc):
    pol = make_policy("plain", acc, seed=4)
    filt = pol.with_variant("filtered")
    assert filt.net is pol.net and filt.variant is Variant.FILTERED
    u_plain, _ = pol.act(X_REF)
    u_filt, _ = filt.act(X_REF)
    np.testing.assert_allclose(u_filt, safety_filter(acc.system, X_REF, u_plain))


def test_interior_policy_has_no_checkpoint(acc, tmp_path):
    with pytest.raises(ValueError):
        make_policy("interior", acc).save(tmp_path / "x")
