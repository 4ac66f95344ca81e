"""Gradient engine, Adam optimizer and the two training loops.

The loss in both modes is a squared Euclidean distance between averaged
terminal reservoir features of real and generated paths, so the whole
computation graph is: init net -> generator recursion -> linear readouts
(-> ball projection) -> feature reservoir -> mean -> squared norm.
``backward`` walks that graph in reverse with hand-derived adjoints over the
states cached during the forward pass. Reported metrics elsewhere use the
unsquared norm; the optimizer minimizes the square, which has the same
minimizers and is smooth at zero.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import IllConditionedError
from .generator import (
    CondGeneratorParams,
    GenCache,
    GeneratorParams,
    coupling_matrix,
    generate_cond_batch,
    generate_uncond,
)
from .rsig import RsParams, delta_rs_batch, with_horizon


@dataclass
class RsCache:
    """Feature-reservoir intermediates for the generated batch.

    Activation values are cached (not pre-activations): the backward pass
    needs sigma(z) itself for the input adjoints and recovers sigma'(z)
    algebraically from it. ``sig`` holds the drift block followed by the d
    controlled blocks.
    """

    xs_t: np.ndarray    # (T, B, d) input paths, time-major
    states: np.ndarray  # (T+1, B, N)
    sig: np.ndarray     # (T, B, (1+d)*N) activation values per step
    feats: np.ndarray   # (B, N) terminal increments


@dataclass
class GradTape:
    """Recorded forward pass of one loss evaluation.

    ``feat_bar`` is the loss gradient with respect to each generated path's
    feature vector; everything upstream is reconstructed from the caches.
    A tape is single-use.
    """

    gen: GeneratorParams
    rs: RsParams
    gen_cache: Optional[GenCache]
    rs_cache: Optional[RsCache]
    feat_bar: Optional[np.ndarray]
    consumed: bool = False


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OlsFit:
    """Affine map from past features to expected future features."""

    alpha_hat: np.ndarray  # (N,)
    beta_hat: np.ndarray   # (N, N)
    residual_norm: float
    ridge: float

    def predict(self, past_feats: np.ndarray) -> np.ndarray:
        return self.alpha_hat + np.asarray(past_feats) @ self.beta_hat.T


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)  # (step, loss, seconds)
    final_report: object = None

    def append(self, step: int, loss: float, seconds: float) -> None:
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss {loss} at step {step}")
        self.records.append((int(step), float(loss), float(seconds)))

    def losses(self) -> np.ndarray:
        return np.array([r[1] for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "seconds"])
            writer.writerows(self.records)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2500
    batch_size: int = 1500
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mc_width: int = 200          # conditional mode: futures per past path
    noise_seed: int = 0
    batch_seed: int = 1
    patience: Optional[int] = None
    checkpoint_interval: Optional[int] = None


# -- feature reservoir forward/backward --------------------------------------

def _rs_stacked(rs: RsParams):
    n, d = rs.n_dim, rs.in_dim
    a_all = np.concatenate([rs.a1, rs.a2.reshape(d * n, n)])
    xi_all = np.concatenate([rs.xi1, rs.xi2.reshape(-1)])
    return a_all, xi_all


def rs_forward_cached(rs: RsParams, xs: np.ndarray) -> RsCache:
    xs = np.asarray(xs, dtype=np.float64)
    b, t_len, d = xs.shape
    n = rs.n_dim
    act = rs.activation
    a_all, xi_all = _rs_stacked(rs)
    a_all_t = a_all.T
    xs_t = np.ascontiguousarray(xs.transpose(1, 0, 2))
    states = np.empty((t_len + 1, b, n))
    sig = np.empty((t_len, b, (1 + d) * n))
    cur = np.zeros((b, n))
    states[0] = cur
    for t in range(t_len):
        z = cur @ a_all_t
        z += xi_all
        s = act(z, out=z)
        sig[t] = s
        if d == 1:
            inc = s[:, n:] * xs_t[t]
        else:
            inc = np.einsum("bin,bi->bn", s[:, n:].reshape(b, d, n), xs_t[t])
        cur = cur + s[:, :n] + inc
        states[t + 1] = cur
    feats = states[-1] - states[-2]
    return RsCache(xs_t=xs_t, states=states, sig=sig, feats=feats)


def _rs_backward(rs: RsParams, cache: RsCache, feat_bar: np.ndarray) -> np.ndarray:
    """Adjoint of the feature map: d(loss)/d(input paths), shape (B, T, d)."""
    t_len, b, d = cache.xs_t.shape
    n = rs.n_dim
    act = rs.activation
    a_all = _rs_stacked(rs)[0]
    xbar = np.empty((b, t_len, d))
    stack = np.empty((b, (1 + d) * n))
    deriv = np.empty((b, (1 + d) * n))
    sbar = feat_bar.copy()  # adjoint of S_T
    for t in range(t_len - 1, -1, -1):
        s = cache.sig[t]
        act.deriv_from_value(s, out=deriv)
        if d == 1:
            xbar[:, t, 0] = np.einsum("bn,bn->b", s[:, n:], sbar)
            np.multiply(deriv[:, :n], sbar, out=stack[:, :n])
            np.multiply(deriv[:, n:], sbar, out=stack[:, n:])
            stack[:, n:] *= cache.xs_t[t]
        else:
            s2 = s[:, n:].reshape(b, d, n)
            xbar[:, t] = np.einsum("bin,bn->bi", s2, sbar)
            np.multiply(deriv[:, :n], sbar, out=stack[:, :n])
            stack[:, n:] = (deriv[:, n:].reshape(b, d, n) * sbar[:, None, :]
                            * cache.xs_t[t, :, :, None]).reshape(b, d * n)
        nxt = sbar + stack @ a_all
        if t == t_len - 1:
            nxt -= feat_bar  # feature is S_T minus S_{T-1}
        sbar = nxt
    return xbar


# -- generator backward -------------------------------------------------------

def _projection_backward(gen: GeneratorParams, cache: GenCache, xbar: np.ndarray) -> np.ndarray:
    r = gen.proj_radius
    if not r:
        return xbar
    x = cache.x_raw
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    outside = norms > r
    safe = np.maximum(norms, 1e-300)
    # Jacobian of r*x/|x| is (r/|x|)(I - xx^T/|x|^2); identity inside the ball.
    dot = np.sum(x * xbar, axis=-1, keepdims=True)
    proj_grad = (r / safe) * (xbar - x * dot / (safe * safe))
    return np.where(outside, proj_grad, xbar)


def backward(tape: GradTape) -> dict:
    """Gradients of the recorded loss for every trainable parameter."""
    if tape.consumed:
        raise RuntimeError("tape already consumed; rerun the forward pass")
    if tape.gen_cache is None:
        raise RuntimeError("tape has no generator graph (forward used a debug override)")
    tape.consumed = True

    gen, cache = tape.gen, tape.gen_cache
    act, rho = gen.activation, gen.rho
    t_len, n_bm, d_dim = gen.horizon, gen.n_bm, gen.d_dim
    batch = cache.r.shape[1]

    xbar = _rs_backward(tape.rs, tape.rs_cache, tape.feat_bar)
    xbar = _projection_backward(gen, cache, xbar)

    grads = {
        "readout_a": np.einsum("btd,tbk->tdk", xbar, cache.r),
        "readout_b": xbar.sum(axis=0),
    }
    rbar_readout = np.einsum("btd,tdk->tbk", xbar, gen.readout_a)

    w_all = coupling_matrix(gen)
    w_all_t = w_all.T
    rho_bar = np.zeros(5)
    stack = np.empty((batch, (1 + n_bm) * d_dim))
    deriv = np.empty((batch, (1 + n_bm) * d_dim))
    rbar = rbar_readout[t_len - 1]
    for t in range(t_len - 1, 0, -1):
        pre = cache.r[t - 1] @ w_all_t  # recomputed matrix pre-products
        s = cache.sig[t - 1]
        dw_t = cache.dw[t - 1]
        act.deriv_from_value(s, out=deriv)
        ubar = deriv[:, :d_dim] * rbar
        rho_bar[0] += np.sum(ubar * pre[:, :d_dim])
        rho_bar[1] += np.sum(ubar * gen.lam1)
        if n_bm == 1:
            s_v = s[:, d_dim:]
            rho_bar[4] += np.einsum("bk,bk,b->", rbar, s_v, dw_t[:, 0])
            vbar = deriv[:, d_dim:] * rbar
            vbar *= (rho[4] * dw_t)
            rho_bar[2] += np.sum(vbar * pre[:, d_dim:])
            rho_bar[3] += np.sum(vbar * gen.lam2[0])
            flat_vbar = vbar
        else:
            s_v = s[:, d_dim:].reshape(batch, n_bm, d_dim)
            rho_bar[4] += np.einsum("bk,bik,bi->", rbar, s_v, dw_t)
            vbar = (deriv[:, d_dim:].reshape(batch, n_bm, d_dim)
                    * rbar[:, None, :] * (rho[4] * dw_t)[:, :, None])
            flat_vbar = vbar.reshape(batch, -1)
            rho_bar[2] += np.sum(flat_vbar * pre[:, d_dim:])
            rho_bar[3] += np.sum(vbar * gen.lam2[None, :, :])
        np.multiply(ubar, rho[0], out=stack[:, :d_dim])
        np.multiply(flat_vbar, rho[2], out=stack[:, d_dim:])
        rbar = rbar + stack @ w_all + rbar_readout[t - 1]

    for k in range(4):
        grads[f"rho{k + 1}"] = rho_bar[k : k + 1].copy()
    if gen.rho5_trainable:
        grads["rho5"] = rho_bar[4:5].copy()

    # Initial-state network (tanh hidden layer, linear output).
    h = cache.hidden
    grads["init.w2"] = rbar.T @ h
    grads["init.b2"] = rbar.sum(axis=0)
    hbar = rbar @ gen.init_net.w2
    zbar = (1.0 - h * h) * hbar
    grads["init.w1"] = zbar.T @ cache.v_in
    grads["init.b1"] = zbar.sum(axis=0)
    return grads


# -- losses -------------------------------------------------------------------

def loss_uncond(
    gen: GeneratorParams,
    rs: RsParams,
    real_batch: Optional[np.ndarray],
    noise_seed: int,
    fake_paths: Optional[np.ndarray] = None,
    real_feats: Optional[np.ndarray] = None,
) -> tuple:
    """Squared feature-mean distance between a real batch and generated paths.

    ``real_feats`` passes precomputed feature vectors for the real batch (the
    reservoir is fixed, so training loops compute them once per dataset).
    ``fake_paths`` is a debug hook substituting the generated batch; the
    resulting tape cannot be backpropagated.
    """
    if real_feats is None:
        real_batch = np.asarray(real_batch, dtype=np.float64)
        if real_batch.ndim != 3 or real_batch.shape[0] < 1:
            raise ValueError("real_batch must be a nonempty (B, T, d) array")
        real_feats = delta_rs_batch(rs, real_batch)
    else:
        real_feats = np.asarray(real_feats, dtype=np.float64)
        if real_feats.ndim != 2 or real_feats.shape[0] < 1:
            raise ValueError("real_feats must be a nonempty (B, N) array")
    if rs.horizon != gen.horizon or rs.in_dim != gen.out_dim:
        raise ValueError("feature reservoir and generator disagree on path shape")

    if fake_paths is None:
        fake, gen_cache = generate_uncond(gen, real_feats.shape[0], noise_seed)
    else:
        fake, gen_cache = np.asarray(fake_paths, dtype=np.float64), None
    rs_cache = rs_forward_cached(rs, fake)

    mean_real = real_feats.mean(axis=0)
    mean_fake = rs_cache.feats.mean(axis=0)
    diff = mean_real - mean_fake
    loss = float(diff @ diff)

    feat_bar = np.broadcast_to(-2.0 * diff / fake.shape[0], rs_cache.feats.shape).copy()
    tape = GradTape(gen=gen, rs=rs, gen_cache=gen_cache, rs_cache=rs_cache,
                    feat_bar=feat_bar)
    return loss, tape


def loss_cond(
    gen: CondGeneratorParams,
    rs: RsParams,
    past_feats: np.ndarray,
    targets: np.ndarray,
    mc_width: int,
    noise_seed: int,
) -> tuple:
    """Summed squared distances between regression targets and Monte-Carlo
    means of generated-future features, one term per conditioning past."""
    past_feats = np.asarray(past_feats, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n_past = past_feats.shape[0]
    if n_past < 1:
        raise ValueError("need at least one past path")
    if targets.shape != (n_past, rs.n_dim):
        raise ValueError("targets must be one feature vector per past")

    fake, gen_cache = generate_cond_batch(gen, past_feats, mc_width, noise_seed)
    rs_q = with_horizon(rs, gen.horizon)
    rs_cache = rs_forward_cached(rs_q, fake)
    means = rs_cache.feats.reshape(n_past, mc_width, rs.n_dim).mean(axis=1)
    diffs = targets - means
    loss = float(np.sum(diffs * diffs))

    feat_bar = np.repeat(-2.0 * diffs / mc_width, mc_width, axis=0)
    tape = GradTape(gen=gen, rs=rs_q, gen_cache=gen_cache, rs_cache=rs_cache,
                    feat_bar=feat_bar)
    return loss, tape


# -- Adam ---------------------------------------------------------------------

def init_adam(params: dict, learning_rate=1e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    state = AdamState(learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps)
    for key, val in params.items():
        state.m[key] = np.zeros_like(val)
        state.v[key] = np.zeros_like(val)
    return state


def adam_step(state: AdamState, params: dict, grads: dict) -> tuple:
    """One bias-corrected Adam update, in place on the parameter views."""
    if set(grads) != set(params):
        raise ValueError(f"gradient keys {sorted(grads)} != parameter keys {sorted(params)}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {key}")
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state, params


# -- OLS conditioning pre-step --------------------------------------------------

def fit_ols_cond(rs: RsParams, windows: Sequence, ridge: float = 1e-6) -> OlsFit:
    """Regress future features on past features over (past, future) windows.

    The intercept is unpenalized; ``ridge`` shrinks only the matrix part.
    """
    if len(windows) < 2:
        raise ValueError("need at least two windows")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")

    def as_path(a):
        a = np.asarray(a, dtype=np.float64)
        return a[:, None] if a.ndim == 1 else a

    pasts = np.stack([as_path(w[0]) for w in windows])
    futures = np.stack([as_path(w[1]) for w in windows])
    rs_p = with_horizon(rs, pasts.shape[1])
    rs_q = with_horizon(rs, futures.shape[1])
    feats_p = delta_rs_batch(rs_p, pasts)
    feats_q = delta_rs_batch(rs_q, futures)
    return fit_ols_features(feats_p, feats_q, ridge)


def fit_ols_features(feats_p: np.ndarray, feats_q: np.ndarray, ridge: float = 1e-6) -> OlsFit:
    n = feats_p.shape[0]
    p_mean = feats_p.mean(axis=0)
    q_mean = feats_q.mean(axis=0)
    pc = feats_p - p_mean
    qc = feats_q - q_mean
    gram = pc.T @ pc + ridge * np.eye(feats_p.shape[1])
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError(
            f"conditioning design is rank deficient (n={n}); increase ridge"
        ) from exc
    from scipy.linalg import solve_triangular

    y = solve_triangular(chol, pc.T @ qc, lower=True)
    beta_t = solve_triangular(chol.T, y, lower=False)  # (N, N): beta transpose
    beta = beta_t.T
    alpha = q_mean - beta @ p_mean
    resid = feats_q - (alpha + feats_p @ beta.T)
    return OlsFit(alpha_hat=alpha, beta_hat=beta,
                  residual_norm=float(np.linalg.norm(resid)), ridge=float(ridge))


# -- training loops -------------------------------------------------------------

def _sample_batch(rng: np.random.Generator, n: int, batch_size: int) -> np.ndarray:
    # Small datasets are resampled with replacement rather than rejected.
    return rng.choice(n, size=batch_size, replace=batch_size > n)


def train_uncond(
    gen: GeneratorParams,
    rs: RsParams,
    dataset,
    cfg: TrainConfig,
    checkpoint_callback: Optional[Callable[[int, GeneratorParams], None]] = None,
) -> tuple:
    """Adam on the unconditional loss over random batches of training paths."""
    data = dataset.train_samples() if hasattr(dataset, "train_samples") else np.asarray(dataset)
    if data.shape[0] < 1:
        raise ValueError("dataset is empty")
    all_feats = delta_rs_batch(rs, data)  # reservoir is fixed: compute once
    params = gen.trainable()
    adam = init_adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng_batch = np.random.default_rng(cfg.batch_seed)
    rng_noise = np.random.default_rng(cfg.noise_seed)
    history = TrainHistory()
    best = np.inf
    since_best = 0
    start = time.perf_counter()
    for step in range(cfg.steps):
        idx = _sample_batch(rng_batch, data.shape[0], cfg.batch_size)
        step_seed = int(rng_noise.integers(0, 2**63 - 1))
        loss, tape = loss_uncond(gen, rs, None, step_seed, real_feats=all_feats[idx])
        grads = backward(tape)
        adam_step(adam, params, grads)
        history.append(step, loss, time.perf_counter() - start)
        if checkpoint_callback and cfg.checkpoint_interval \
                and (step + 1) % cfg.checkpoint_interval == 0:
            checkpoint_callback(step + 1, gen)
        if cfg.patience is not None:
            if loss < best - 1e-12:
                best, since_best = loss, 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    break
    return gen, history


def train_cond(
    gen: CondGeneratorParams,
    rs: RsParams,
    dataset,
    cfg: TrainConfig,
    ols: Optional[OlsFit] = None,
    ols_ridge: float = 1e-6,
    checkpoint_callback: Optional[Callable[[int, GeneratorParams], None]] = None,
) -> tuple:
    """Conditional loop: OLS pre-step, then Adam on the supervised loss.

    Returns (gen, history, ols) so callers can reuse the fitted conditioner.
    """
    pasts = dataset.pasts(train_only=True)
    futures = dataset.futures(train_only=True)
    if pasts.shape[0] < 1:
        raise ValueError("dataset has no training windows")
    rs_p = with_horizon(rs, gen.past_len)
    feats_p = delta_rs_batch(rs_p, pasts)
    if ols is None:
        rs_q = with_horizon(rs, gen.horizon)
        feats_q = delta_rs_batch(rs_q, futures)
        ols = fit_ols_features(feats_p, feats_q, ols_ridge)
    targets = ols.predict(feats_p)

    params = gen.trainable()
    adam = init_adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng_batch = np.random.default_rng(cfg.batch_seed)
    rng_noise = np.random.default_rng(cfg.noise_seed)
    history = TrainHistory()
    best = np.inf
    since_best = 0
    start = time.perf_counter()
    for step in range(cfg.steps):
        idx = _sample_batch(rng_batch, feats_p.shape[0], cfg.batch_size)
        step_seed = int(rng_noise.integers(0, 2**63 - 1))
        loss, tape = loss_cond(gen, rs, feats_p[idx], targets[idx], cfg.mc_width, step_seed)
        grads = backward(tape)
        adam_step(adam, params, grads)
        history.append(step, loss, time.perf_counter() - start)
        if checkpoint_callback and cfg.checkpoint_interval \
                and (step + 1) % cfg.checkpoint_interval == 0:
            checkpoint_callback(step + 1, gen)
        if cfg.patience is not None:
            if loss < best - 1e-12:
                best, since_best = loss, 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    break
    return gen, history, ols
