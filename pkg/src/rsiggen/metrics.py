"""Distances, normality testing and density estimates for evaluating models.

The headline train metric is the Euclidean distance between the empirical
means of terminal reservoir features over two sample sets (a pseudometric on
empirical path laws), or its conditional counterpart comparing a regression
prediction against a Monte-Carlo feature mean. Covariance and autocorrelation
distances follow the pooled 1/M estimators; normality is tested with a
self-contained Royston-style W approximation valid for 3 <= n <= 5000.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from .exceptions import DegenerateDataError
from .generator import CondGeneratorParams, generate_cond_batch
from .rsig import RsParams, delta_rs_batch, with_horizon
from .training import OlsFit

SW_MIN_N = 3
SW_MAX_N = 5000


@dataclass(frozen=True)
class MetricsReport:
    train_metric: float
    cov_metric: Optional[float]
    acf_metric: float
    sw_passed: Optional[tuple]  # (passed, total)
    config_fingerprint: str
    notes: dict

    def to_dict(self) -> dict:
        return {
            "train_metric": self.train_metric,
            "cov_metric": self.cov_metric,
            "acf_metric": self.acf_metric,
            "sw_passed": list(self.sw_passed) if self.sw_passed is not None else None,
            "config_fingerprint": self.config_fingerprint,
            "notes": self.notes,
        }


@dataclass(frozen=True)
class KdeCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("grid,density\n")
            for g, p in zip(self.grid, self.density):
                fh.write(f"{g!r},{p!r}\n")


def _check_paths(x, name) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3 or x.shape[0] < 1:
        raise ValueError(f"{name} must be a nonempty (n, T, d) array")
    return x


def rs_w1_empirical(rs: RsParams, samples_a, samples_b) -> float:
    """Distance between mean terminal features of two path sample sets."""
    a = _check_paths(samples_a, "samples_a")
    b = _check_paths(samples_b, "samples_b")
    mean_a = delta_rs_batch(rs, a).mean(axis=0)
    mean_b = delta_rs_batch(rs, b).mean(axis=0)
    return float(np.linalg.norm(mean_a - mean_b))


def c_rs_w1_supervised(fit: OlsFit, rs: RsParams, past, fake_futures) -> float:
    """Distance between the regression-predicted future feature and the
    Monte-Carlo mean feature of generated futures for one past path."""
    past = np.asarray(past, dtype=np.float64)
    if past.ndim == 1:
        past = past[:, None]
    fakes = _check_paths(fake_futures, "fake_futures")
    rs_p = with_horizon(rs, past.shape[0])
    rs_q = with_horizon(rs, fakes.shape[1])
    feat_p = delta_rs_batch(rs_p, past[None, :, :])[0]
    pred = fit.predict(feat_p[None, :])[0]
    mean_fake = delta_rs_batch(rs_q, fakes).mean(axis=0)
    return float(np.linalg.norm(pred - mean_fake))


def cov_dist(samples_a, samples_b) -> float:
    """Root-sum-square difference of full empirical covariance tensors.

    Covariances are the biased 1/M estimators over all pairs of time points
    and coordinates.
    """
    a = _check_paths(samples_a, "samples_a")
    b = _check_paths(samples_b, "samples_b")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least two sample paths on each side")
    if a.shape[1:] != b.shape[1:]:
        raise ValueError("sample sets must share (T, d)")
    return float(np.linalg.norm(_cov_tensor(a) - _cov_tensor(b)))


def _cov_tensor(x: np.ndarray) -> np.ndarray:
    m = x.shape[0]
    flat = x.reshape(m, -1)
    centered = flat - flat.mean(axis=0)
    return centered.T @ centered / m


def acf_dist(samples_a, samples_b) -> float:
    """Root-sum-square difference of normalized autocorrelations.

    Lags run from 1 to floor(T/2); each side uses the pooled estimator over
    all its sample paths (a single path is allowed).
    """
    a = _check_paths(samples_a, "samples_a")
    b = _check_paths(samples_b, "samples_b")
    if a.shape[1] < 2 or b.shape[1] < 2:
        raise ValueError("need at least two time steps")
    if a.shape[1:] != b.shape[1:]:
        raise ValueError("sample sets must share (T, d)")
    t_len, d = a.shape[1], a.shape[2]
    total = 0.0
    for j in range(d):
        rho_a = _acf_pooled(a[:, :, j], t_len // 2)
        rho_b = _acf_pooled(b[:, :, j], t_len // 2)
        total += np.sum((rho_a[1:] / rho_a[0] - rho_b[1:] / rho_b[0]) ** 2)
    return float(np.sqrt(total))


def _acf_pooled(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Pooled autocovariances for lags 0..max_lag of an (M, T) sample array."""
    out = np.empty(max_lag + 1)
    for k in range(max_lag + 1):
        lead = x[:, : x.shape[1] - k]
        lag = x[:, k:]
        out[k] = np.mean(lead * lag) - np.mean(lead) * np.mean(lag)
    scale = np.mean(x * x)
    if out[0] <= 1e-12 * max(scale, 1e-300):
        raise DegenerateDataError("constant series: zero lag-0 autocovariance")
    return out


# -- Shapiro-Wilk (Royston's polynomial approximation) ------------------------

_SW_C1 = np.array([-2.706056, 4.434685, -2.071190, -0.147981, 0.221157, 0.0])
_SW_C2 = np.array([-3.582633, 5.682633, -1.752461, -0.293762, 0.042981, 0.0])


def shapiro_wilk(sample) -> tuple:
    """W statistic and upper-tail p-value for normality of a 1-D sample."""
    x = np.sort(np.asarray(sample, dtype=np.float64))
    n = x.size
    if not SW_MIN_N <= n <= SW_MAX_N:
        raise ValueError(f"sample size {n} outside [{SW_MIN_N}, {SW_MAX_N}]")
    ssq = np.sum((x - x.mean()) ** 2)
    if ssq <= 0 or x[-1] == x[0]:
        raise DegenerateDataError("zero sample variance")

    m = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    msq = float(m @ m)
    a = np.empty(n)
    if n == 3:
        a[0], a[1], a[2] = -np.sqrt(0.5), 0.0, np.sqrt(0.5)
    else:
        u = 1.0 / np.sqrt(n)
        c = m / np.sqrt(msq)
        a_n = c[-1] + np.polyval(_SW_C1, u)
        if n > 5:
            a_n1 = c[-2] + np.polyval(_SW_C2, u)
            phi = (msq - 2.0 * m[-1] ** 2 - 2.0 * m[-2] ** 2) \
                / (1.0 - 2.0 * a_n ** 2 - 2.0 * a_n1 ** 2)
            a[2:-2] = m[2:-2] / np.sqrt(phi)
            a[-1], a[-2], a[0], a[1] = a_n, a_n1, -a_n, -a_n1
        else:
            phi = (msq - 2.0 * m[-1] ** 2) / (1.0 - 2.0 * a_n ** 2)
            a[1:-1] = m[1:-1] / np.sqrt(phi)
            a[-1], a[0] = a_n, -a_n
    w = min(float((a @ x) ** 2 / ssq), 1.0)

    if n == 3:
        p = 6.0 / np.pi * (np.arcsin(np.sqrt(w)) - np.arcsin(np.sqrt(0.75)))
        return w, float(min(max(p, 0.0), 1.0))
    one_minus = max(1.0 - w, 1e-300)
    if n <= 11:
        gamma = -2.273 + 0.459 * n
        shifted = gamma - np.log(one_minus)
        if shifted <= 0:  # w so small the transform leaves the fitted range
            return w, 0.0
        stat = -np.log(shifted)
        mu = 0.5440 - 0.39978 * n + 0.025054 * n**2 - 0.0006714 * n**3
        sigma = np.exp(1.3822 - 0.77857 * n + 0.062767 * n**2 - 0.0020322 * n**3)
    else:
        ln_n = np.log(n)
        stat = np.log(one_minus)
        mu = -1.5861 - 0.31082 * ln_n - 0.083751 * ln_n**2 + 0.0038915 * ln_n**3
        sigma = np.exp(-0.4803 - 0.082676 * ln_n + 0.0030302 * ln_n**2)
    z = (stat - mu) / sigma
    return w, float(1.0 - ndtr(z))


# -- kernel density ------------------------------------------------------------

def silverman_bandwidth(sample: np.ndarray) -> float:
    x = np.asarray(sample, dtype=np.float64)
    std = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    iqr = q75 - q25
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    if spread <= 0:
        raise DegenerateDataError("sample has no spread; bandwidth undefined")
    return 0.9 * spread * x.size ** (-0.2)


def kde(sample, bandwidth: Optional[float] = None, grid_size: int = 256) -> KdeCurve:
    """Gaussian-kernel density on a grid extending 5 bandwidths past the data."""
    x = np.asarray(sample, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("need at least two observations")
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    grid = np.linspace(x.min() - 5 * h, x.max() + 5 * h, grid_size)
    z = (grid[:, None] - x[None, :]) / h
    density = np.exp(-0.5 * z * z).sum(axis=1) / (x.size * h * np.sqrt(2 * np.pi))
    return KdeCurve(grid=grid, density=density, bandwidth=h)


# -- report assembly -----------------------------------------------------------

def _fingerprint(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _nondegenerate_marginals(real: np.ndarray) -> list:
    """(t, j) indices whose real-data marginal actually varies."""
    out = []
    for t in range(real.shape[1]):
        for j in range(real.shape[2]):
            col = real[:, t, j]
            if col.var() > 1e-12 * max(1.0, float(np.mean(col * col))):
                out.append((t, j))
    return out


def _sw_counts(generated: np.ndarray, marginals, alpha: float) -> tuple:
    passed = 0
    for t, j in marginals:
        col = generated[: SW_MAX_N, t, j]
        try:
            _, p = shapiro_wilk(col)
        except DegenerateDataError:
            p = 0.0
        if p > alpha:
            passed += 1
    return passed, len(marginals)


def evaluate(
    generated,
    test_data,
    rs: RsParams,
    expect_normal: bool = False,
    sw_alpha: float = 0.05,
) -> MetricsReport:
    """Unconditional report: feature distance, covariance and ACF distances,
    and normality pass counts over the non-degenerate time marginals."""
    gen_paths = _check_paths(generated, "generated")
    test = _check_paths(test_data, "test_data")
    train_metric = rs_w1_empirical(rs, test, gen_paths)
    cov_metric = cov_dist(test, gen_paths)
    acf_metric = acf_dist(test, gen_paths)
    sw = None
    if expect_normal:
        sw = _sw_counts(gen_paths, _nondegenerate_marginals(test), sw_alpha)
    fingerprint = _fingerprint({
        "mode": "uncond", "n_generated": gen_paths.shape[0],
        "n_test": test.shape[0], "horizon": test.shape[1], "in_dim": test.shape[2],
        "rs_dim": rs.n_dim, "rs_seed": rs.seed, "sw_alpha": sw_alpha,
        "expect_normal": expect_normal,
    })
    return MetricsReport(
        train_metric=train_metric, cov_metric=cov_metric, acf_metric=acf_metric,
        sw_passed=sw, config_fingerprint=fingerprint,
        notes={
            "train_metric": "feature-mean distance, test vs generated",
            "cov_metric": "pooled 1/M covariance estimator",
            "acf_metric": f"lags 1..{test.shape[1] // 2}, pooled estimator",
            "sw": f"alpha={sw_alpha}" if sw else "not requested",
        },
    )


def evaluate_cond(
    gen: CondGeneratorParams,
    rs: RsParams,
    ols: OlsFit,
    test_pasts,
    test_futures,
    noise_seed: int,
    mc_eval: int = 100,
    max_eval_pasts: int = 200,
    expect_normal: bool = False,
    sw_alpha: float = 0.05,
) -> MetricsReport:
    """Conditional report on held-out windows.

    The supervised train metric averages the per-past distance using
    ``mc_eval`` generated futures per past over at most ``max_eval_pasts``
    pasts. The ACF distance and normality counts pool one generated future
    per test past against the pooled real futures; the covariance metric is
    omitted because each real past has a single observed future.
    """
    pasts = _check_paths(test_pasts, "test_pasts")
    futures = _check_paths(test_futures, "test_futures")
    if pasts.shape[0] != futures.shape[0]:
        raise ValueError("need one future per past")
    n = pasts.shape[0]

    rs_p = with_horizon(rs, gen.past_len)
    rs_q = with_horizon(rs, gen.horizon)
    feats_p = delta_rs_batch(rs_p, pasts)
    targets = ols.predict(feats_p)

    rng = np.random.default_rng(noise_seed)
    pooled_seed = int(rng.integers(0, 2**63 - 1))
    metric_seed = int(rng.integers(0, 2**63 - 1))

    pooled_fake, _ = generate_cond_batch(gen, feats_p, 1, pooled_seed)
    acf_metric = acf_dist(futures, pooled_fake)

    k = min(n, max_eval_pasts)
    sub = np.linspace(0, n - 1, k).astype(int)
    fakes, _ = generate_cond_batch(gen, feats_p[sub], mc_eval, metric_seed)
    mean_feats = delta_rs_batch(rs_q, fakes).reshape(k, mc_eval, rs.n_dim).mean(axis=1)
    train_metric = float(np.mean(np.linalg.norm(targets[sub] - mean_feats, axis=1)))

    sw = None
    if expect_normal:
        sw = _sw_counts(pooled_fake, _nondegenerate_marginals(futures), sw_alpha)
    fingerprint = _fingerprint({
        "mode": "cond", "n_windows": n, "past_len": gen.past_len,
        "future_len": gen.horizon, "rs_dim": rs.n_dim, "rs_seed": rs.seed,
        "mc_eval": mc_eval, "max_eval_pasts": max_eval_pasts,
        "noise_seed": noise_seed, "sw_alpha": sw_alpha, "expect_normal": expect_normal,
    })
    return MetricsReport(
        train_metric=train_metric, cov_metric=None, acf_metric=acf_metric,
        sw_passed=sw, config_fingerprint=fingerprint,
        notes={
            "train_metric": f"mean supervised distance over {k} pasts, {mc_eval} futures each",
            "cov_metric": "omitted: single real future per past",
            "acf_metric": "pooled real futures vs one generated future per past",
            "sw": f"alpha={sw_alpha}" if sw else "not requested",
        },
    )
