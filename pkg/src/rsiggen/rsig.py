"""Discrete-time randomised signature of a datastream.

A datastream ``x`` of ``T`` steps in ``R^d`` drives a fixed random reservoir
of dimension ``N``::

    S_0 = 0
    S_t = S_{t-1} + sigma(a1 @ S_{t-1} + xi1)
                  + sum_i sigma(a2[i] @ S_{t-1} + xi2[i]) * x_t[i]

The reservoir weights are sampled once and never trained; the feature vector
used by all distances in this package is the terminal increment
``S_T - S_{T-1}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .activations import Activation


@dataclass(frozen=True)
class RsParams:
    """Fixed random reservoir weights defining one randomised-signature map.

    Shapes: ``a1`` is N x N, ``xi1`` is N, ``a2`` stacks d matrices of
    N x N, ``xi2`` stacks d vectors of N. Arrays are locked read-only on
    construction; the map is pure and thread-safe.
    """

    n_dim: int
    in_dim: int
    horizon: int
    a1: np.ndarray
    xi1: np.ndarray
    a2: np.ndarray
    xi2: np.ndarray
    activation: Activation
    seed: int

    def __post_init__(self):
        if self.n_dim < 1 or self.in_dim < 1 or self.horizon < 1:
            raise ValueError("n_dim, in_dim and horizon must all be >= 1")
        n, d = self.n_dim, self.in_dim
        expected = {
            "a1": (n, n),
            "xi1": (n,),
            "a2": (d, n, n),
            "xi2": (d, n),
        }
        for name, shape in expected.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class RsPath:
    """Reservoir trajectory: row ``t`` is the state after ``t`` input steps."""

    states: np.ndarray  # (T+1, N); row 0 is exactly zero

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.float64)
        if states.ndim != 2 or states.shape[0] < 1:
            raise ValueError("states must be a (T+1) x N matrix")
        object.__setattr__(self, "states", states)


def sample_rs_params(
    n_dim: int,
    in_dim: int,
    horizon: int,
    weight_std: float = 1.0,
    activation: Activation = Activation.SHIFTED_SIGMOID,
    seed: int = 0,
) -> RsParams:
    """Draw all reservoir weights i.i.d. Normal(0, weight_std^2) from ``seed``."""
    if n_dim < 1 or in_dim < 1 or horizon < 1:
        raise ValueError("n_dim, in_dim and horizon must all be >= 1")
    if weight_std <= 0:
        raise ValueError("weight_std must be positive")
    rng = np.random.default_rng(seed)
    return RsParams(
        n_dim=n_dim,
        in_dim=in_dim,
        horizon=horizon,
        a1=rng.normal(0.0, weight_std, (n_dim, n_dim)),
        xi1=rng.normal(0.0, weight_std, n_dim),
        a2=rng.normal(0.0, weight_std, (in_dim, n_dim, n_dim)),
        xi2=rng.normal(0.0, weight_std, (in_dim, n_dim)),
        activation=activation,
        seed=int(seed),
    )


def rs_step(params: RsParams, state: np.ndarray, x_t: np.ndarray) -> np.ndarray:
    """One reservoir update driven by a single input value ``x_t``."""
    state = np.asarray(state, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    if state.shape != (params.n_dim,):
        raise ValueError(f"state has shape {state.shape}, expected ({params.n_dim},)")
    if x_t.shape != (params.in_dim,):
        raise ValueError(f"x_t has shape {x_t.shape}, expected ({params.in_dim},)")
    act = params.activation
    drift = act(params.a1 @ state + params.xi1)
    controlled = act(params.a2 @ state + params.xi2)  # (d, N)
    return state + drift + x_t @ controlled


def rs_path(params: RsParams, x: np.ndarray) -> RsPath:
    """Run the full recursion over a T x d datastream, keeping every state."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape != (params.horizon, params.in_dim):
        raise ValueError(
            f"datastream has shape {x.shape}, expected ({params.horizon}, {params.in_dim})"
        )
    states = np.zeros((params.horizon + 1, params.n_dim))
    for t in range(params.horizon):
        states[t + 1] = rs_step(params, states[t], x[t])
    return RsPath(states=states)


def delta_rs_terminal(path: RsPath) -> np.ndarray:
    """Terminal increment S_T - S_{T-1}, the feature vector of a path."""
    if path.states.shape[0] < 2:
        raise ValueError("path must contain at least one step")
    return path.states[-1] - path.states[-2]


def rs_states_batch(params: RsParams, xs: np.ndarray) -> np.ndarray:
    """Reservoir trajectories for a batch: (B, T, d) -> (B, T+1, N)."""
    xs = _check_batch(params, xs)
    b = xs.shape[0]
    states = np.zeros((b, params.horizon + 1, params.n_dim))
    stacked = _stacked_weights(params)
    cur = states[:, 0]
    for t in range(params.horizon):
        cur = _batch_step(params, cur, xs[:, t], stacked)
        states[:, t + 1] = cur
    return states


def delta_rs_batch(params: RsParams, xs: np.ndarray) -> np.ndarray:
    """Terminal increments for a batch of datastreams: (B, T, d) -> (B, N)."""
    xs = _check_batch(params, xs)
    stacked = _stacked_weights(params)
    cur = np.zeros((xs.shape[0], params.n_dim))
    prev = cur
    for t in range(params.horizon):
        prev = cur
        cur = _batch_step(params, cur, xs[:, t], stacked)
    return cur - prev


def _stacked_weights(params: RsParams):
    # Drift and controlled weights fused so each step is one matrix product.
    n, d = params.n_dim, params.in_dim
    a_all_t = np.concatenate([params.a1, params.a2.reshape(d * n, n)]).T
    xi_all = np.concatenate([params.xi1, params.xi2.reshape(-1)])
    return a_all_t, xi_all


def _batch_step(params: RsParams, states, x_t, stacked=None):
    act = params.activation
    n = params.n_dim
    if stacked is None:
        stacked = _stacked_weights(params)
    a_all_t, xi_all = stacked
    s = act(states @ a_all_t + xi_all)
    ctrl = s[:, n:].reshape(states.shape[0], params.in_dim, n)
    return states + s[:, :n] + np.einsum("bin,bi->bn", ctrl, x_t)


def _check_batch(params: RsParams, xs: np.ndarray) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 3 or xs.shape[1:] != (params.horizon, params.in_dim):
        raise ValueError(
            f"batch has shape {xs.shape}, expected (B, {params.horizon}, {params.in_dim})"
        )
    return xs


def with_horizon(params: RsParams, horizon: int) -> RsParams:
    """Same reservoir weights, different expected stream length.

    The weights do not depend on the horizon; this lets one sampled map
    produce features for past and future windows of different lengths.
    """
    if horizon == params.horizon:
        return params
    return RsParams(
        n_dim=params.n_dim, in_dim=params.in_dim, horizon=horizon,
        a1=params.a1, xi1=params.xi1, a2=params.a2, xi2=params.xi2,
        activation=params.activation, seed=params.seed,
    )


def rs_params_to_dict(params: RsParams) -> dict:
    return {
        "n_dim": params.n_dim,
        "in_dim": params.in_dim,
        "horizon": params.horizon,
        "activation": params.activation.value,
        "seed": params.seed,
        "a1": params.a1.tolist(),
        "xi1": params.xi1.tolist(),
        "a2": params.a2.tolist(),
        "xi2": params.xi2.tolist(),
    }


def rs_params_from_dict(doc: dict) -> RsParams:
    return RsParams(
        n_dim=doc["n_dim"],
        in_dim=doc["in_dim"],
        horizon=doc["horizon"],
        a1=np.array(doc["a1"]),
        xi1=np.array(doc["xi1"]),
        a2=np.array(doc["a2"]),
        xi2=np.array(doc["xi2"]),
        activation=Activation(doc["activation"]),
        seed=doc["seed"],
    )


def save_rs_params(params: RsParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(rs_params_to_dict(params), fh)


def load_rs_params(path) -> RsParams:
    with open(path) as fh:
        return rs_params_from_dict(json.load(fh))
