"""Block-sparse reservoir constructions with provably injective input encoding.

Two sampling layouts are provided. Both reserve the trailing ``T*d``
coordinates of the reservoir for an encoder block whose state at time ``t``
is an (almost surely injective) function of the inputs ``x_1..x_t``; the
leading coordinates act as a random feature bank on top of that encoding.
``g_recursion_eval`` rebuilds the encoder state through its explicit
component recursion, independently of the reservoir loop, and is used as a
cross-check oracle. ``fit_readout`` is the ridge harness used to measure how
well linear readouts of the terminal feature approximate target functions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .activations import Activation
from .exceptions import IllConditionedError
from .rsig import RsParams, RsPath, delta_rs_batch

__all__ = [
    "Scheme1Params",
    "Scheme2Params",
    "ReadoutFit",
    "sample_scheme1",
    "sample_scheme2",
    "block_states",
    "g_recursion_eval",
    "injectivity_probe",
    "fit_readout",
    "run_error_decay",
    "write_error_decay_csv",
]


@dataclass(frozen=True)
class Scheme1Params:
    """Layout 1: reservoir dimension N = M + T*d.

    Named views into the assembled base weights:
      a1_1   M x Td       feature-bank weights reading the encoder block
      a1_2   Td x Td      encoder self-coupling (shift structure around u)
      xi1_1  M            feature-bank bias
      u      (T-1)d sq.   upper-triangular coupling inside the encoder
      alphas d            input injection coefficients
    """

    m_dim: int
    horizon: int
    in_dim: int
    base: RsParams
    a1_1: np.ndarray
    a1_2: np.ndarray
    xi1_1: np.ndarray
    u: np.ndarray
    alphas: np.ndarray


@dataclass(frozen=True)
class Scheme2Params:
    """Layout 2: N = M + sum(m_dims) + T*d.

    Adds per-input feature banks (a2_tilde[i], xi2_tilde[i] of height
    m_dims[i]) so that readouts can also capture terms linear in the final
    input value.
    """

    m_dim: int
    m_dims: tuple
    horizon: int
    in_dim: int
    base: RsParams
    a1_1: np.ndarray
    a1_2: np.ndarray
    xi1_tilde: np.ndarray
    a2_tilde: tuple
    xi2_tilde: tuple
    u: np.ndarray
    alphas: np.ndarray


@dataclass(frozen=True)
class ReadoutFit:
    weights: np.ndarray
    ridge: float
    train_rmse: float
    test_sup_error: float


def _check_scheme_args(m_dim, horizon, in_dim, dist_std, activation):
    if m_dim < 1 or horizon < 1 or in_dim < 1:
        raise ValueError("all dimensions must be >= 1")
    if dist_std <= 0:
        raise ValueError("dist_std must be positive")
    if not activation.satisfies_assumption1:
        raise ValueError("scheme layouts need sigma(0)=0; use TANH or SHIFTED_SIGMOID")


def _encoder_matrix(u: np.ndarray, horizon: int, in_dim: int) -> np.ndarray:
    # First d rows zero, u in the lower-left, last d columns zero.
    td = horizon * in_dim
    a1_2 = np.zeros((td, td))
    a1_2[in_dim:, : td - in_dim] = u
    return a1_2


def sample_scheme1(
    m_dim: int,
    horizon: int,
    in_dim: int,
    dist_std: float = 1.0,
    activation: Activation = Activation.SHIFTED_SIGMOID,
    seed: int = 0,
) -> Scheme1Params:
    _check_scheme_args(m_dim, horizon, in_dim, dist_std, activation)
    rng = np.random.default_rng(seed)
    td = horizon * in_dim
    k = (horizon - 1) * in_dim

    a1_1 = rng.normal(0.0, dist_std, (m_dim, td))
    u = np.triu(rng.normal(0.0, dist_std, (k, k)))
    xi1_1 = rng.normal(0.0, dist_std, m_dim)
    alphas = rng.normal(0.0, dist_std, in_dim)

    n = m_dim + td
    a1 = np.zeros((n, n))
    a1[:m_dim, m_dim:] = a1_1
    a1_2 = _encoder_matrix(u, horizon, in_dim)
    a1[m_dim:, m_dim:] = a1_2
    xi1 = np.concatenate([xi1_1, np.zeros(td)])
    a2 = np.zeros((in_dim, n, n))
    xi2 = np.zeros((in_dim, n))
    for i in range(in_dim):
        xi2[i, m_dim + i] = alphas[i]

    base = RsParams(
        n_dim=n, in_dim=in_dim, horizon=horizon,
        a1=a1, xi1=xi1, a2=a2, xi2=xi2,
        activation=activation, seed=int(seed),
    )
    return Scheme1Params(
        m_dim=m_dim, horizon=horizon, in_dim=in_dim, base=base,
        a1_1=base.a1[:m_dim, m_dim:], a1_2=base.a1[m_dim:, m_dim:],
        xi1_1=base.xi1[:m_dim], u=base.a1[m_dim + in_dim:, m_dim: m_dim + k],
        alphas=np.array([base.xi2[i, m_dim + i] for i in range(in_dim)]),
    )


def sample_scheme2(
    m_dim: int,
    m_dims: Sequence[int],
    horizon: int,
    in_dim: int,
    dist_std: float = 1.0,
    activation: Activation = Activation.SHIFTED_SIGMOID,
    seed: int = 0,
) -> Scheme2Params:
    _check_scheme_args(m_dim, horizon, in_dim, dist_std, activation)
    m_dims = tuple(int(m) for m in m_dims)
    if len(m_dims) != in_dim:
        raise ValueError("need one m_dims entry per input dimension")
    if any(m < 1 for m in m_dims):
        raise ValueError("all m_dims entries must be >= 1")

    rng = np.random.default_rng(seed)
    td = horizon * in_dim
    k = (horizon - 1) * in_dim
    m_tot = sum(m_dims)
    offs = np.concatenate([[0], np.cumsum(m_dims)])

    a1_1 = rng.normal(0.0, dist_std, (m_dim, td))
    u = np.triu(rng.normal(0.0, dist_std, (k, k)))
    xi1_tilde = rng.normal(0.0, dist_std, m_dim)
    a2_tilde = [rng.normal(0.0, dist_std, (m_dims[i], td)) for i in range(in_dim)]
    xi2_tilde = [rng.normal(0.0, dist_std, m_dims[i]) for i in range(in_dim)]
    alphas = rng.normal(0.0, dist_std, in_dim)

    n = m_dim + m_tot + td
    enc0 = m_dim + m_tot  # first coordinate of the encoder block
    a1 = np.zeros((n, n))
    a1[:m_dim, enc0:] = a1_1
    a1[enc0:, enc0:] = _encoder_matrix(u, horizon, in_dim)
    xi1 = np.concatenate([xi1_tilde, np.zeros(m_tot + td)])
    a2 = np.zeros((in_dim, n, n))
    xi2 = np.zeros((in_dim, n))
    for i in range(in_dim):
        lo, hi = m_dim + offs[i], m_dim + offs[i + 1]
        a2[i, lo:hi, enc0:] = a2_tilde[i]
        xi2[i, lo:hi] = xi2_tilde[i]
        xi2[i, enc0 + i] = alphas[i]

    base = RsParams(
        n_dim=n, in_dim=in_dim, horizon=horizon,
        a1=a1, xi1=xi1, a2=a2, xi2=xi2,
        activation=activation, seed=int(seed),
    )
    return Scheme2Params(
        m_dim=m_dim, m_dims=m_dims, horizon=horizon, in_dim=in_dim, base=base,
        a1_1=base.a1[:m_dim, enc0:], a1_2=base.a1[enc0:, enc0:],
        xi1_tilde=base.xi1[:m_dim],
        a2_tilde=tuple(base.a2[i, m_dim + offs[i]: m_dim + offs[i + 1], enc0:]
                       for i in range(in_dim)),
        xi2_tilde=tuple(base.xi2[i, m_dim + offs[i]: m_dim + offs[i + 1]]
                        for i in range(in_dim)),
        u=base.a1[enc0 + in_dim:, enc0: enc0 + k],
        alphas=np.array([base.xi2[i, enc0 + i] for i in range(in_dim)]),
    )


SchemeParams = Union[Scheme1Params, Scheme2Params]


def block_states(scheme: SchemeParams, path: RsPath, t: int):
    """Slice the reservoir state at time ``t`` into the scheme's named blocks."""
    if not 0 <= t <= scheme.horizon:
        raise ValueError(f"t={t} out of range [0, {scheme.horizon}]")
    state = path.states[t]
    if isinstance(scheme, Scheme1Params):
        return state[: scheme.m_dim], state[scheme.m_dim:]
    blocks = [state[: scheme.m_dim]]
    off = scheme.m_dim
    for m_i in scheme.m_dims:
        blocks.append(state[off: off + m_i])
        off += m_i
    blocks.append(state[off:])
    return tuple(blocks)


def g_recursion_eval(scheme: SchemeParams, x: np.ndarray) -> np.ndarray:
    """Encoder state rebuilt from its explicit component recursion.

    Takes the input prefix ``x`` of shape (t, d) with 1 <= t <= T and
    returns the length ``T*d`` encoder vector, zero-padded past position
    ``t*d``. Independent of the full reservoir loop by construction.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    t, d = x.shape
    if d != scheme.in_dim:
        raise ValueError(f"prefix has {d} input dims, scheme expects {scheme.in_dim}")
    if not 1 <= t <= scheme.horizon:
        raise ValueError(f"prefix length {t} out of range [1, {scheme.horizon}]")

    act = scheme.base.activation
    sig_alpha = act(scheme.alphas)
    u = scheme.u

    def u_block(k):  # diagonal d x d block, 1-based
        return u[(k - 1) * d: k * d, (k - 1) * d: k * d]

    def b_block(k, j):  # off-diagonal block j positions right of u_block(k)
        return u[(k - 1) * d: k * d, (k + j - 1) * d: (k + j) * d]

    comps = [sig_alpha * x[0]]
    for s in range(1, t):  # extend from prefix length s to s+1
        nxt = [comps[0] + sig_alpha * x[s]]
        for k in range(2, s + 1):
            arg = u_block(k - 1) @ comps[k - 2]
            for j in range(1, s + 2 - k):
                arg = arg + b_block(k - 1, j) @ comps[j + k - 2]
            nxt.append(comps[k - 1] + act(arg))
        nxt.append(act(u_block(s) @ comps[s - 1]))
        comps = nxt

    out = np.zeros(scheme.horizon * d)
    out[: t * d] = np.concatenate(comps)
    return out


def injectivity_probe(
    scheme: SchemeParams,
    n_pairs: int,
    domain_bound: float,
    seed: int = 0,
) -> float:
    """Smallest encoder-image distance over random pairs of distinct inputs."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if domain_bound <= 0:
        raise ValueError("domain_bound must be positive")
    rng = np.random.default_rng(seed)
    shape = (scheme.horizon, scheme.in_dim)
    best = np.inf
    for _ in range(n_pairs):
        a = rng.uniform(-domain_bound, domain_bound, shape)
        b = rng.uniform(-domain_bound, domain_bound, shape)
        while np.array_equal(a, b):
            b = rng.uniform(-domain_bound, domain_bound, shape)
        sep = np.linalg.norm(g_recursion_eval(scheme, a) - g_recursion_eval(scheme, b))
        best = min(best, sep)
    return float(best)


def fit_readout(
    features: np.ndarray,
    targets: np.ndarray,
    ridge: float,
    test_features: np.ndarray,
    test_targets: np.ndarray,
) -> ReadoutFit:
    """Ridge-regress a linear readout and score it by sup error on a test set."""
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError("features must be a nonempty n x N matrix")
    if targets.shape != (features.shape[0],):
        raise ValueError("targets must be one value per feature row")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")

    gram = features.T @ features + ridge * np.eye(features.shape[1])
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError(
            "normal equations are singular; increase ridge"
        ) from exc
    rhs = features.T @ targets
    w = _cho_solve(chol, rhs)

    train_rmse = float(np.sqrt(np.mean((features @ w - targets) ** 2)))
    test_sup = float(np.max(np.abs(np.asarray(test_features) @ w - np.asarray(test_targets))))
    return ReadoutFit(weights=w, ridge=float(ridge), train_rmse=train_rmse,
                      test_sup_error=test_sup)


def _cho_solve(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular

    y = solve_triangular(chol, rhs, lower=True)
    return solve_triangular(chol.T, y, lower=False)


def run_error_decay(
    m_grid: Sequence[int],
    seeds: Sequence[int],
    horizon: int,
    in_dim: int,
    target_fn: Callable[[np.ndarray], np.ndarray],
    n_train: int = 8000,
    n_val: int = 2000,
    n_test: int = 2000,
    ridge: float = 1e-6,
    std_grid: Sequence[float] = (0.7, 1.0, 1.4, 2.0),
    activation: Activation = Activation.SHIFTED_SIGMOID,
    domain_bound: float = 1.0,
    zero_last_input: bool = True,
) -> list:
    """Measure readout sup-error as the feature-bank width M grows.

    ``target_fn`` maps an (n, T, d) array of input paths to n target values;
    when ``zero_last_input`` is set the final input step is fixed at zero so
    targets may depend only on the first T-1 steps. The weight scale is a
    free hyperparameter of the feature map, selected per (M, seed) on a
    validation split; the test split never informs the choice. Returns one
    row dict per (M, seed) pair.
    """
    rows = []
    for m_dim in m_grid:
        for seed in seeds:
            rng = np.random.default_rng(seed + 982_451_653)
            xs = rng.uniform(-domain_bound, domain_bound,
                             (n_train + n_val + n_test, horizon, in_dim))
            if zero_last_input:
                xs[:, -1, :] = 0.0
            targets = target_fn(xs)
            tr = slice(0, n_train)
            va = slice(n_train, n_train + n_val)
            te = slice(n_train + n_val, None)
            best = None
            for dist_std in std_grid:
                scheme = sample_scheme1(m_dim, horizon, in_dim, dist_std,
                                        activation, seed)
                feats = delta_rs_batch(scheme.base, xs)
                fit = fit_readout(feats[tr], targets[tr], ridge,
                                  feats[va], targets[va])
                if best is None or fit.test_sup_error < best[0]:
                    test_sup = float(np.max(np.abs(feats[te] @ fit.weights
                                                   - targets[te])))
                    best = (fit.test_sup_error, dist_std, fit.train_rmse, test_sup)
            rows.append({
                "m_dim": m_dim,
                "seed": seed,
                "dist_std": best[1],
                "train_rmse": best[2],
                "test_sup_error": best[3],
            })
    return rows


def write_error_decay_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["m_dim", "seed", "dist_std",
                                                "train_rmse", "test_sup_error"])
        writer.writeheader()
        writer.writerows(rows)
