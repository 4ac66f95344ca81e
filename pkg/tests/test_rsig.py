import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsiggen import (
    Activation,
    RsParams,
    RsPath,
    delta_rs_batch,
    delta_rs_terminal,
    rs_path,
    rs_step,
    sample_rs_params,
    with_horizon,
)
from rsiggen.rsig import rs_params_from_dict, rs_params_to_dict


def act_scalar(act, z):
    return float(act(np.array([z]))[0])


def naive_step(params, state, x_t):
    """Elementwise reference for one reservoir update."""
    n, d = params.n_dim, params.in_dim
    out = np.empty(n)
    for k in range(n):
        drift_arg = sum(params.a1[k, j] * state[j] for j in range(n)) + params.xi1[k]
        val = state[k] + act_scalar(params.activation, drift_arg)
        for i in range(d):
            ctrl_arg = sum(params.a2[i][k, j] * state[j] for j in range(n)) + params.xi2[i][k]
            val += act_scalar(params.activation, ctrl_arg) * x_t[i]
        out[k] = val
    return out


class TestActivation:
    def test_zero_at_zero_for_compliant_kinds(self):
        z = np.zeros(3)
        assert np.all(Activation.TANH(z) == 0)
        assert np.all(Activation.SHIFTED_SIGMOID(z) == 0)
        assert Activation.SIGMOID(z)[0] == pytest.approx(0.5)

    def test_assumption_flag(self):
        assert Activation.TANH.satisfies_assumption1
        assert Activation.SHIFTED_SIGMOID.satisfies_assumption1
        assert not Activation.SIGMOID.satisfies_assumption1

    def test_boundedness(self):
        z = np.linspace(-100, 100, 2001)
        for act in Activation:
            assert np.all(np.abs(act(z)) <= act.bound + 1e-15)

    def test_strict_monotonicity(self):
        # Range where float64 still resolves the increments.
        z = np.linspace(-8, 8, 2001)
        for act in (Activation.TANH, Activation.SHIFTED_SIGMOID):
            assert np.all(np.diff(act(z)) > 0)

    def test_derivative_matches_finite_difference(self):
        z = np.linspace(-4, 4, 101)
        h = 1e-6
        for act in Activation:
            fd = (act(z + h) - act(z - h)) / (2 * h)
            np.testing.assert_allclose(act.deriv(z), fd, atol=1e-9)


class TestSampleRsParams:
    def test_paper_scale_shapes(self):
        params = sample_rs_params(80, 1, 10, 1.0, Activation.SHIFTED_SIGMOID, seed=7)
        assert params.a1.shape == (80, 80)
        assert params.a2.shape == (1, 80, 80)
        assert params.xi1.shape == (80,)
        assert params.xi2.shape == (1, 80)

    def test_minimal_dimensions(self):
        params = sample_rs_params(1, 1, 1, 1.0, Activation.TANH, seed=0)
        assert params.a1.shape == (1, 1)
        assert params.a2.shape == (1, 1, 1)

    def test_distinct_seeds_differ(self):
        a = sample_rs_params(4, 2, 3, 1.0, seed=1)
        b = sample_rs_params(4, 2, 3, 1.0, seed=2)
        assert not np.array_equal(a.a1, b.a1)

    def test_equal_seeds_identical(self):
        a = sample_rs_params(5, 2, 4, 0.5, seed=11)
        b = sample_rs_params(5, 2, 4, 0.5, seed=11)
        for name in ("a1", "xi1", "a2", "xi2"):
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_weight_distribution_scale(self):
        params = sample_rs_params(60, 1, 5, 2.0, seed=3)
        assert params.a1.std() == pytest.approx(2.0, rel=0.1)

    @pytest.mark.parametrize("bad", [
        dict(n_dim=0, in_dim=1, horizon=1),
        dict(n_dim=1, in_dim=0, horizon=1),
        dict(n_dim=1, in_dim=1, horizon=0),
        dict(n_dim=1, in_dim=1, horizon=1, weight_std=0.0),
    ])
    def test_invalid_arguments(self, bad):
        with pytest.raises(ValueError):
            sample_rs_params(**{"weight_std": 1.0, **bad}, seed=0)

    def test_weights_are_immutable(self):
        params = sample_rs_params(3, 1, 2, seed=0)
        with pytest.raises(ValueError):
            params.a1[0, 0] = 5.0


class TestRsStep:
    def test_zero_weights_absorb(self):
        params = RsParams(n_dim=3, in_dim=2, horizon=2,
                          a1=np.zeros((3, 3)), xi1=np.zeros(3),
                          a2=np.zeros((2, 3, 3)), xi2=np.zeros((2, 3)),
                          activation=Activation.TANH, seed=0)
        out = rs_step(params, np.zeros(3), np.array([2.0, -1.0]))
        assert np.all(out == 0)

    def test_scalar_expansion(self):
        b, e, u = 0.7, -0.3, 1.9
        params = RsParams(n_dim=1, in_dim=1, horizon=1,
                          a1=np.zeros((1, 1)), xi1=np.array([b]),
                          a2=np.zeros((1, 1, 1)), xi2=np.array([[e]]),
                          activation=Activation.TANH, seed=0)
        out = rs_step(params, np.zeros(1), np.array([u]))
        assert out[0] == pytest.approx(np.tanh(b) + np.tanh(e) * u, abs=1e-14)

    def test_matches_naive_loop(self):
        params = sample_rs_params(5, 2, 3, 0.8, Activation.SHIFTED_SIGMOID, seed=21)
        rng = np.random.default_rng(5)
        state = rng.standard_normal(5)
        x_t = rng.standard_normal(2)
        np.testing.assert_allclose(rs_step(params, state, x_t),
                                   naive_step(params, state, x_t),
                                   rtol=1e-13, atol=1e-13)

    def test_shape_mismatch(self):
        params = sample_rs_params(3, 1, 2, seed=0)
        with pytest.raises(ValueError):
            rs_step(params, np.zeros(4), np.zeros(1))
        with pytest.raises(ValueError):
            rs_step(params, np.zeros(3), np.zeros(2))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 4), st.integers(1, 3))
    def test_naive_oracle_property(self, seed, n_dim, in_dim):
        params = sample_rs_params(n_dim, in_dim, 1, 1.0, Activation.TANH, seed=seed)
        rng = np.random.default_rng(seed + 1)
        state = rng.standard_normal(n_dim)
        x_t = rng.standard_normal(in_dim)
        np.testing.assert_allclose(rs_step(params, state, x_t),
                                   naive_step(params, state, x_t),
                                   rtol=1e-13, atol=1e-13)


class TestRsPath:
    def test_zero_input_zero_weights(self):
        params = RsParams(n_dim=2, in_dim=1, horizon=4,
                          a1=np.zeros((2, 2)), xi1=np.zeros(2),
                          a2=np.zeros((1, 2, 2)), xi2=np.zeros((1, 2)),
                          activation=Activation.SHIFTED_SIGMOID, seed=0)
        path = rs_path(params, np.zeros((4, 1)))
        assert np.all(path.states == 0)

    def test_single_step_is_one_rs_step(self):
        params = sample_rs_params(4, 2, 1, seed=9)
        x = np.random.default_rng(2).standard_normal((1, 2))
        path = rs_path(params, x)
        assert np.array_equal(path.states[1], rs_step(params, np.zeros(4), x[0]))

    def test_chained_steps(self):
        params = sample_rs_params(4, 1, 3, seed=10)
        x = np.random.default_rng(3).standard_normal((3, 1))
        path = rs_path(params, x)
        state = np.zeros(4)
        for t in range(3):
            state = rs_step(params, state, x[t])
            assert np.array_equal(path.states[t + 1], state)

    def test_row_zero_is_exactly_zero(self):
        params = sample_rs_params(6, 1, 5, seed=1)
        path = rs_path(params, np.random.default_rng(0).standard_normal((5, 1)))
        assert np.all(path.states[0] == 0.0)

    def test_wrong_row_count(self):
        params = sample_rs_params(3, 1, 4, seed=0)
        with pytest.raises(ValueError):
            rs_path(params, np.zeros((3, 1)))

    def test_determinism(self):
        params = sample_rs_params(5, 2, 6, seed=8)
        x = np.random.default_rng(7).standard_normal((6, 2))
        a = rs_path(params, x)
        b = rs_path(params, x)
        assert np.array_equal(a.states, b.states)


class TestDeltaTerminal:
    def test_constant_states(self):
        path = RsPath(states=np.ones((4, 3)))
        assert np.all(delta_rs_terminal(path) == 0)

    def test_terminal_minus_previous(self):
        v = np.array([1.5, -2.0])
        path = RsPath(states=np.vstack([np.zeros(2), np.zeros(2), v]))
        assert np.array_equal(delta_rs_terminal(path), v)

    def test_subtraction_oracle(self):
        states = np.random.default_rng(4).standard_normal((5, 3))
        path = RsPath(states=states)
        expected = np.array([states[-1, j] - states[-2, j] for j in range(3)])
        assert np.array_equal(delta_rs_terminal(path), expected)

    def test_single_row_rejected(self):
        with pytest.raises(ValueError):
            delta_rs_terminal(RsPath(states=np.zeros((1, 3))))


class TestBatchHelpers:
    def test_batch_matches_per_path(self):
        params = sample_rs_params(6, 2, 4, seed=13)
        xs = np.random.default_rng(6).standard_normal((7, 4, 2))
        feats = delta_rs_batch(params, xs)
        states = np.stack([rs_path(params, x).states for x in xs])
        np.testing.assert_allclose(feats, states[:, -1] - states[:, -2],
                                   rtol=1e-13, atol=1e-14)

    def test_batch_shape_validation(self):
        params = sample_rs_params(3, 1, 4, seed=0)
        with pytest.raises(ValueError):
            delta_rs_batch(params, np.zeros((2, 3, 1)))


class TestInvariants:
    def test_zero_input_absorption_random_a1(self):
        # xi1 = 0 and x = 0 keep the state at zero for sigma(0)=0 kinds.
        rng = np.random.default_rng(31)
        params = RsParams(n_dim=4, in_dim=1, horizon=5,
                          a1=rng.standard_normal((4, 4)), xi1=np.zeros(4),
                          a2=rng.standard_normal((1, 4, 4)),
                          xi2=rng.standard_normal((1, 4)),
                          activation=Activation.SHIFTED_SIGMOID, seed=0)
        path = rs_path(params, np.zeros((5, 1)))
        assert np.all(path.states == 0)

    def test_bounded_increments(self):
        params = sample_rs_params(10, 2, 8, 1.5, Activation.SHIFTED_SIGMOID, seed=17)
        x = np.random.default_rng(18).standard_normal((8, 2)) * 3
        path = rs_path(params, x)
        bound = params.activation.bound
        for t in range(1, 9):
            inc = np.max(np.abs(path.states[t] - path.states[t - 1]))
            assert inc <= bound * (1.0 + np.sum(np.abs(x[t - 1]))) + 1e-12

    def test_affine_in_terminal_input(self):
        # RS_T is affine in x_T: three collinear terminal inputs give
        # collinear terminal states.
        params = sample_rs_params(7, 2, 5, seed=23)
        rng = np.random.default_rng(24)
        head = rng.standard_normal((4, 2))
        base, direction = rng.standard_normal(2), rng.standard_normal(2)

        def terminal(lam):
            x = np.vstack([head, base + lam * direction])
            return rs_path(params, x).states[-1]

        s0, s1, s2 = terminal(0.0), terminal(1.0), terminal(2.0)
        np.testing.assert_allclose(s2 - s1, s1 - s0, rtol=1e-10, atol=1e-12)

    def test_with_horizon_shares_weights(self):
        params = sample_rs_params(5, 1, 10, seed=2)
        short = with_horizon(params, 3)
        assert short.horizon == 3
        assert short.a1 is params.a1
        x = np.random.default_rng(1).standard_normal((3, 1))
        assert rs_path(short, x).states.shape == (4, 5)


class TestSerialization:
    def test_json_round_trip_bit_exact(self):
        params = sample_rs_params(6, 2, 4, 0.9, Activation.TANH, seed=77)
        doc = json.loads(json.dumps(rs_params_to_dict(params)))
        back = rs_params_from_dict(doc)
        assert back.n_dim == params.n_dim
        assert back.seed == params.seed
        assert back.activation is params.activation
        for name in ("a1", "xi1", "a2", "xi2"):
            assert np.array_equal(getattr(back, name), getattr(params, name))
