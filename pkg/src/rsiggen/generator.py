"""Reservoir neural-SDE path generators.

A generator holds a fixed random reservoir (matrices ``b1``, ``b2`` and
biases ``lam1``, ``lam2`` sampled once, never trained) plus trainable parts:
an initial-state network, five scalar couplings ``rho``, and per-step linear
readouts. Paths are produced by

    R_1 = init_net(V),                V ~ N(0, I_m)
    R_t = R_{t-1} + sigma(rho1*b1@R_{t-1} + rho2*lam1)
              + sum_i sigma(rho3*b2[i]@R_{t-1} + rho4*lam2[i]) * rho5*dW_t^i
    X_t = readout_a[t] @ R_t + readout_b[t]

with i.i.d. standard-normal Brownian increments dW. The conditional variant
feeds the terminal randomised-signature increment of an observed past path
into the initial network alongside V, so generated futures depend on the
past only through that feature vector.

Generation is pure given (params, noise_seed); every intermediate state is
retained in a cache so the training module can run reverse-mode gradients
without recomputation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .activations import Activation
from .rsig import RsParams, delta_rs_terminal, rs_path, with_horizon


@dataclass
class InitNetParams:
    """One-hidden-layer network mapping noise (+ conditioning) to R_1.

    Hidden activation is tanh, output is linear.
    """

    w1: np.ndarray  # (H, in)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (D, H)
    b2: np.ndarray  # (D,)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self.hidden(v) @ self.w2.T + self.b2

    def hidden(self, v: np.ndarray) -> np.ndarray:
        return np.tanh(v @ self.w1.T + self.b1)

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]


@dataclass
class GeneratorParams:
    d_dim: int      # reservoir dimension D
    out_dim: int    # path dimension d
    n_bm: int       # number of Brownian drivers
    noise_dim: int  # initial noise dimension m
    horizon: int    # number of generated steps
    b1: np.ndarray        # (D, D), fixed
    b2: np.ndarray        # (n, D, D), fixed
    lam1: np.ndarray      # (D,), fixed
    lam2: np.ndarray      # (n, D), fixed
    activation: Activation
    seed: int
    init_net: InitNetParams
    rho: np.ndarray       # (5,), trainable (rho5 only when flagged)
    readout_a: np.ndarray  # (T, d, D), trainable
    readout_b: np.ndarray  # (T, d), trainable
    rho5_trainable: bool = False
    proj_radius: Optional[float] = None

    def __post_init__(self):
        for name in ("b1", "b2", "lam1", "lam2"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            setattr(self, name, arr)
        if not self.rho5_trainable:
            self.rho[4] = 1.0

    def trainable(self) -> dict:
        """Live views of every trainable array, keyed by parameter name."""
        out = {
            "init.w1": self.init_net.w1,
            "init.b1": self.init_net.b1,
            "init.w2": self.init_net.w2,
            "init.b2": self.init_net.b2,
            "rho1": self.rho[0:1],
            "rho2": self.rho[1:2],
            "rho3": self.rho[2:3],
            "rho4": self.rho[3:4],
            "readout_a": self.readout_a,
            "readout_b": self.readout_b,
        }
        if self.rho5_trainable:
            out["rho5"] = self.rho[4:5]
        return out


@dataclass
class CondGeneratorParams(GeneratorParams):
    """Conditional variant: horizon is the future length q."""

    past_len: int = 1
    rs_dim: int = 1

    @property
    def future_len(self) -> int:
        return self.horizon


@dataclass
class GenCache:
    """Per-step intermediates retained for reverse-mode gradients.

    ``sig`` stores activation values (drift block then diffusion blocks) so
    the backward pass derives sigma' algebraically; the cheap matrix
    pre-products are recomputed there from ``r``. Wide per-step arrays are
    laid out time-major so every step's slice is contiguous.
    """

    v_in: np.ndarray    # (B, m or m+N) init-net input
    hidden: np.ndarray  # (B, H)
    r: np.ndarray       # (T, B, D) reservoir states
    sig: np.ndarray     # (T-1, B, (1+n)*D) activation values per step
    dw: np.ndarray      # (T-1, B, n) Brownian increments
    x_raw: np.ndarray   # (B, T, d) readout outputs before projection
    paths: np.ndarray   # (B, T, d) final outputs


@dataclass(frozen=True)
class GeneratorConfig:
    d_dim: int = 80
    out_dim: int = 1
    n_bm: int = 5
    noise_dim: int = 5
    horizon: int = 10
    hidden: int = 64
    fixed_std: float = 1.0
    activation: Activation = Activation.SIGMOID
    seed: int = 0
    rho5_trainable: bool = False
    proj_radius: Optional[float] = None


def init_generator(cfg: GeneratorConfig) -> GeneratorParams:
    """Sample fixed weights and initialize trainables for the given sizes."""
    _check_cfg(cfg)
    fixed, init_net, readout_a, readout_b = _sample_weights(cfg, cfg.noise_dim)
    return GeneratorParams(
        d_dim=cfg.d_dim, out_dim=cfg.out_dim, n_bm=cfg.n_bm,
        noise_dim=cfg.noise_dim, horizon=cfg.horizon,
        activation=cfg.activation, seed=cfg.seed,
        init_net=init_net, rho=np.ones(5),
        readout_a=readout_a, readout_b=readout_b,
        rho5_trainable=cfg.rho5_trainable, proj_radius=cfg.proj_radius,
        **fixed,
    )


def init_cond_generator(cfg: GeneratorConfig, past_len: int, rs_dim: int) -> CondGeneratorParams:
    """Conditional generator: the init net also ingests the past feature vector."""
    _check_cfg(cfg)
    if past_len < 1 or rs_dim < 1:
        raise ValueError("past_len and rs_dim must be >= 1")
    fixed, init_net, readout_a, readout_b = _sample_weights(cfg, cfg.noise_dim + rs_dim)
    return CondGeneratorParams(
        d_dim=cfg.d_dim, out_dim=cfg.out_dim, n_bm=cfg.n_bm,
        noise_dim=cfg.noise_dim, horizon=cfg.horizon,
        activation=cfg.activation, seed=cfg.seed,
        init_net=init_net, rho=np.ones(5),
        readout_a=readout_a, readout_b=readout_b,
        rho5_trainable=cfg.rho5_trainable, proj_radius=cfg.proj_radius,
        past_len=past_len, rs_dim=rs_dim,
        **fixed,
    )


def _check_cfg(cfg: GeneratorConfig) -> None:
    dims = (cfg.d_dim, cfg.out_dim, cfg.n_bm, cfg.noise_dim, cfg.horizon, cfg.hidden)
    if any(v < 1 for v in dims):
        raise ValueError("all generator dimensions must be >= 1")
    if cfg.fixed_std <= 0:
        raise ValueError("fixed_std must be positive")
    if cfg.proj_radius is not None and cfg.proj_radius <= 0:
        raise ValueError("proj_radius must be positive when set")


def _sample_weights(cfg: GeneratorConfig, net_in: int):
    rng = np.random.default_rng(cfg.seed)
    d_dim, hidden = cfg.d_dim, cfg.hidden
    fixed = {
        "b1": rng.normal(0.0, cfg.fixed_std, (d_dim, d_dim)),
        "b2": rng.normal(0.0, cfg.fixed_std, (cfg.n_bm, d_dim, d_dim)),
        "lam1": rng.normal(0.0, cfg.fixed_std, d_dim),
        "lam2": rng.normal(0.0, cfg.fixed_std, (cfg.n_bm, d_dim)),
    }
    init_net = InitNetParams(
        w1=rng.normal(0.0, 1.0 / np.sqrt(net_in), (hidden, net_in)),
        b1=np.zeros(hidden),
        w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), (d_dim, hidden)),
        b2=np.zeros(d_dim),
    )
    readout_a = rng.normal(0.0, 1.0 / np.sqrt(d_dim), (cfg.horizon, cfg.out_dim, d_dim))
    readout_b = np.zeros((cfg.horizon, cfg.out_dim))
    return fixed, init_net, readout_a, readout_b


def project_ball(x: np.ndarray, r: float) -> np.ndarray:
    """Radial projection onto the closed Euclidean ball of radius ``r``.

    Acts on the last axis, so single vectors and batches both work.
    """
    if r <= 0:
        raise ValueError("projection radius must be positive")
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    scale = np.where(norms > r, r / np.maximum(norms, 1e-300), 1.0)
    return x * scale


def coupling_matrix(params: GeneratorParams) -> np.ndarray:
    """Fixed drift and diffusion matrices stacked for one fused product."""
    return np.concatenate(
        [params.b1, params.b2.reshape(params.n_bm * params.d_dim, params.d_dim)])


def forward_reservoir(params: GeneratorParams, v_in: np.ndarray, dw: np.ndarray) -> GenCache:
    """Run the generator recursion for given init-net inputs and increments."""
    batch = v_in.shape[0]
    t_len, d_dim, n_bm = params.horizon, params.d_dim, params.n_bm
    act, rho = params.activation, params.rho
    # Fold the scalar couplings into the fixed weights once per call, so each
    # step is a single product plus a bias add.
    w_scaled_t = (coupling_matrix(params)
                  * np.repeat([rho[0]] + [rho[2]] * n_bm, d_dim)[:, None]).T
    lam_scaled = np.concatenate([rho[1] * params.lam1,
                                 rho[3] * params.lam2.reshape(-1)])

    hidden = params.init_net.hidden(v_in)
    r = np.empty((t_len, batch, d_dim))
    r[0] = hidden @ params.init_net.w2.T + params.init_net.b2
    sig = np.empty((max(t_len - 1, 0), batch, (1 + n_bm) * d_dim))
    for t in range(1, t_len):
        prev = r[t - 1]
        z = prev @ w_scaled_t
        z += lam_scaled
        s = act(z, out=z)
        sig[t - 1] = s
        drift = s[:, :d_dim]
        if n_bm == 1:
            inc = s[:, d_dim:] * (rho[4] * dw[t - 1])
        else:
            diff = s[:, d_dim:].reshape(batch, n_bm, d_dim)
            inc = np.einsum("bik,bi->bk", diff, rho[4] * dw[t - 1])
        np.add(prev, drift, out=r[t])
        r[t] += inc

    x_raw = np.einsum("tdk,tbk->btd", params.readout_a, r) + params.readout_b
    paths = project_ball(x_raw, params.proj_radius) if params.proj_radius else x_raw
    return GenCache(v_in=v_in, hidden=hidden, r=r, sig=sig, dw=dw,
                    x_raw=x_raw, paths=paths)


def generate_uncond(params: GeneratorParams, batch_size: int, noise_seed: int):
    """Sample a batch of synthetic paths; returns (paths, cache)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(noise_seed)
    v = rng.standard_normal((batch_size, params.noise_dim))
    dw = rng.standard_normal((params.horizon - 1, batch_size, params.n_bm))
    cache = forward_reservoir(params, v, dw)
    return cache.paths, cache


def generate_cond_batch(
    params: CondGeneratorParams,
    past_feats: np.ndarray,
    m_samples: int,
    noise_seed: int,
):
    """Futures for a batch of conditioning features: (P, N) -> (P*M, q, d).

    Sample ``j*m_samples + i`` is the i-th future for past j.
    """
    past_feats = np.asarray(past_feats, dtype=np.float64)
    if past_feats.ndim != 2 or past_feats.shape[1] != params.rs_dim:
        raise ValueError(f"past_feats must be (P, {params.rs_dim})")
    if m_samples < 1:
        raise ValueError("m_samples must be >= 1")
    batch = past_feats.shape[0] * m_samples
    rng = np.random.default_rng(noise_seed)
    v = rng.standard_normal((batch, params.noise_dim))
    feats = np.repeat(past_feats, m_samples, axis=0)
    v_in = np.concatenate([v, feats], axis=1)
    dw = rng.standard_normal((params.horizon - 1, batch, params.n_bm))
    cache = forward_reservoir(params, v_in, dw)
    return cache.paths, cache


def generate_cond(
    params: CondGeneratorParams,
    rs_params: RsParams,
    past: np.ndarray,
    batch_size: int,
    noise_seed: int,
):
    """Sample futures conditioned on one observed past path."""
    past = np.asarray(past, dtype=np.float64)
    if past.ndim == 1:
        past = past[:, None]
    if past.shape != (params.past_len, params.out_dim):
        raise ValueError(
            f"past has shape {past.shape}, expected ({params.past_len}, {params.out_dim})"
        )
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rs_p = with_horizon(rs_params, params.past_len)
    feat = delta_rs_terminal(rs_path(rs_p, past))
    return generate_cond_batch(params, feat[None, :], batch_size, noise_seed)


def past_feature(params: CondGeneratorParams, rs_params: RsParams, past: np.ndarray) -> np.ndarray:
    """Conditioning feature of one past path (terminal RS increment)."""
    rs_p = with_horizon(rs_params, params.past_len)
    return delta_rs_terminal(rs_path(rs_p, np.asarray(past, dtype=np.float64)))


# -- serialization -----------------------------------------------------------

def generator_to_dict(params: GeneratorParams) -> dict:
    doc = {
        "kind": "cond" if isinstance(params, CondGeneratorParams) else "uncond",
        "d_dim": params.d_dim,
        "out_dim": params.out_dim,
        "n_bm": params.n_bm,
        "noise_dim": params.noise_dim,
        "horizon": params.horizon,
        "activation": params.activation.value,
        "seed": params.seed,
        "rho5_trainable": params.rho5_trainable,
        "proj_radius": params.proj_radius,
        "b1": params.b1.tolist(),
        "b2": params.b2.tolist(),
        "lam1": params.lam1.tolist(),
        "lam2": params.lam2.tolist(),
        "init_net": {
            "w1": params.init_net.w1.tolist(),
            "b1": params.init_net.b1.tolist(),
            "w2": params.init_net.w2.tolist(),
            "b2": params.init_net.b2.tolist(),
        },
        "rho": params.rho.tolist(),
        "readout_a": params.readout_a.tolist(),
        "readout_b": params.readout_b.tolist(),
    }
    if isinstance(params, CondGeneratorParams):
        doc["past_len"] = params.past_len
        doc["rs_dim"] = params.rs_dim
    return doc


def generator_from_dict(doc: dict) -> GeneratorParams:
    init = InitNetParams(
        w1=np.array(doc["init_net"]["w1"]),
        b1=np.array(doc["init_net"]["b1"]),
        w2=np.array(doc["init_net"]["w2"]),
        b2=np.array(doc["init_net"]["b2"]),
    )
    common = dict(
        d_dim=doc["d_dim"], out_dim=doc["out_dim"], n_bm=doc["n_bm"],
        noise_dim=doc["noise_dim"], horizon=doc["horizon"],
        b1=np.array(doc["b1"]), b2=np.array(doc["b2"]),
        lam1=np.array(doc["lam1"]), lam2=np.array(doc["lam2"]),
        activation=Activation(doc["activation"]), seed=doc["seed"],
        init_net=init, rho=np.array(doc["rho"]),
        readout_a=np.array(doc["readout_a"]), readout_b=np.array(doc["readout_b"]),
        rho5_trainable=doc["rho5_trainable"], proj_radius=doc["proj_radius"],
    )
    if doc["kind"] == "cond":
        return CondGeneratorParams(past_len=doc["past_len"], rs_dim=doc["rs_dim"], **common)
    return GeneratorParams(**common)
