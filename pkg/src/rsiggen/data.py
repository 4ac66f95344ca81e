"""Synthetic process simulators, market-data ingestion and dataset handling.

Datasets are (n, T, d) tensors of sample paths, optionally split into train
and test indices and optionally carrying past/future window structure. The
on-disk form is a JSON header next to a CSV tensor so everything stays
diff-able and bit-exact on reload.
"""

from __future__ import annotations

import csv
import datetime
import json
import os
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

UNCONDITIONAL = "unconditional"
WINDOWED = "windowed"


@dataclass
class Dataset:
    samples: np.ndarray  # (n, T, d)
    kind: str = UNCONDITIONAL
    past_len: Optional[int] = None
    future_len: Optional[int] = None
    train_indices: Optional[np.ndarray] = None
    test_indices: Optional[np.ndarray] = None
    provenance: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 2:
            samples = samples[:, :, None]
        if samples.ndim != 3 or samples.shape[0] < 1:
            raise ValueError("samples must be a nonempty (n, T, d) tensor")
        self.samples = samples
        if self.kind not in (UNCONDITIONAL, WINDOWED):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind == WINDOWED:
            if not self.past_len or not self.future_len:
                raise ValueError("windowed datasets need past_len and future_len")
            if self.past_len + self.future_len != samples.shape[1]:
                raise ValueError("windowed datasets require T == past_len + future_len")
        if (self.train_indices is None) != (self.test_indices is None):
            raise ValueError("set both split index arrays or neither")
        if self.train_indices is not None:
            tr = np.asarray(self.train_indices, dtype=np.int64)
            te = np.asarray(self.test_indices, dtype=np.int64)
            combined = np.sort(np.concatenate([tr, te]))
            if not np.array_equal(combined, np.arange(samples.shape[0])):
                raise ValueError("split must partition the sample indices")
            self.train_indices, self.test_indices = tr, te

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def horizon(self) -> int:
        return self.samples.shape[1]

    @property
    def in_dim(self) -> int:
        return self.samples.shape[2]

    def train_samples(self) -> np.ndarray:
        if self.train_indices is None:
            return self.samples
        return self.samples[self.train_indices]

    def test_samples(self) -> np.ndarray:
        if self.test_indices is None:
            return self.samples
        return self.samples[self.test_indices]

    def _windowed_part(self, start, stop, train_only, test_only):
        if self.kind != WINDOWED:
            raise ValueError("not a windowed dataset")
        base = self.samples
        if train_only:
            base = self.train_samples()
        elif test_only:
            base = self.test_samples()
        return base[:, start:stop, :]

    def pasts(self, train_only=False, test_only=False) -> np.ndarray:
        return self._windowed_part(0, self.past_len, train_only, test_only)

    def futures(self, train_only=False, test_only=False) -> np.ndarray:
        return self._windowed_part(self.past_len, None, train_only, test_only)


# -- simulators ----------------------------------------------------------------

def simulate_bm(mu: float, sigma: float, horizon: int, n_paths: int, seed: int) -> Dataset:
    """Random walks started at zero with Normal(mu, sigma^2) increments."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if horizon < 1 or n_paths < 1:
        raise ValueError("horizon and n_paths must be >= 1")
    rng = np.random.default_rng(seed)
    paths = np.zeros((n_paths, horizon))
    if horizon > 1:
        steps = mu + sigma * rng.standard_normal((n_paths, horizon - 1))
        paths[:, 1:] = np.cumsum(steps, axis=1)
    return Dataset(samples=paths,
                   provenance=f"bm(mu={mu}, sigma={sigma}, T={horizon}, seed={seed})")


def simulate_ar(
    phis: Sequence[float],
    sigma: float,
    horizon: int,
    n_paths: int,
    seed: int,
    burn_in: int = 500,
) -> Dataset:
    """Autoregressive paths, burn-in discarded so the start is near-stationary."""
    phis = np.asarray(phis, dtype=np.float64)
    if phis.ndim != 1 or phis.size < 1:
        raise ValueError("phis must be a nonempty coefficient sequence")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if horizon < 1 or n_paths < 1 or burn_in < 0:
        raise ValueError("horizon/n_paths must be >= 1 and burn_in >= 0")

    stationary = _ar_is_stationary(phis)
    if not stationary:
        warnings.warn("AR coefficients are non-stationary (root inside the unit disc)",
                      stacklevel=2)

    rng = np.random.default_rng(seed)
    p = phis.size
    total = burn_in + horizon
    z = rng.normal(0.0, sigma, (n_paths, total))
    x = np.zeros((n_paths, total))
    for t in range(total):
        acc = z[:, t]
        for i in range(1, p + 1):
            if t - i >= 0:
                acc = acc + phis[i - 1] * x[:, t - i]
        x[:, t] = acc
    note = f"ar(phis={phis.tolist()}, sigma={sigma}, T={horizon}, seed={seed})"
    if not stationary:
        note += " [non-stationary]"
    return Dataset(samples=x[:, burn_in:], provenance=note)


def _ar_is_stationary(phis: np.ndarray) -> bool:
    # Roots of 1 - phi_1 x - ... - phi_p x^p must all lie outside the unit disc.
    coeffs = np.concatenate([-phis[::-1], [1.0]])
    roots = np.roots(coeffs)
    return bool(np.all(np.abs(roots) > 1.0)) if roots.size else True


def path_increments(dataset: Dataset) -> Dataset:
    """First differences along time: (n, T, d) paths become (n, T-1, d).

    Random-walk-style data is modelled through its stationary increment
    sequences (the analogue of log-returns); apply this before windowing
    or splitting.
    """
    if dataset.kind != UNCONDITIONAL or dataset.train_indices is not None:
        raise ValueError("take increments before windowing or splitting")
    if dataset.horizon < 2:
        raise ValueError("need at least two time steps to difference")
    return Dataset(samples=np.diff(dataset.samples, axis=1),
                   provenance=dataset.provenance + " | increments")


# -- market data ----------------------------------------------------------------

@dataclass
class PriceSeries:
    dates: list
    close: np.ndarray
    skipped: int = 0


def load_close_prices(path) -> PriceSeries:
    """Read a `date,close` CSV (extra columns ignored, ISO dates), sorted
    ascending; malformed rows are skipped and counted."""
    rows = []
    skipped = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or \
                "date" not in reader.fieldnames or "close" not in reader.fieldnames:
            raise ValueError(f"{path}: need a header with 'date' and 'close' columns")
        for row in reader:
            try:
                day = datetime.date.fromisoformat((row["date"] or "").strip())
                close = float((row["close"] or "").strip())
            except (ValueError, TypeError):
                skipped += 1
                continue
            if not np.isfinite(close):
                skipped += 1
                continue
            rows.append((day, close))
    if not rows:
        raise ValueError(f"{path}: no parseable price rows")
    rows.sort(key=lambda r: r[0])
    return PriceSeries(dates=[r[0] for r in rows],
                       close=np.array([r[1] for r in rows]),
                       skipped=skipped)


def log_returns(prices: np.ndarray) -> np.ndarray:
    prices = np.asarray(prices, dtype=np.float64)
    if prices.size < 2:
        raise ValueError("need at least two prices")
    if np.any(prices <= 0):
        raise ValueError("prices must be strictly positive")
    return np.log(prices[1:] / prices[:-1])


# -- windowing -------------------------------------------------------------------

def _as_series(series) -> np.ndarray:
    series = np.asarray(series, dtype=np.float64)
    if series.ndim == 1:
        series = series[:, None]
    if series.ndim != 2:
        raise ValueError("series must be 1-D or (L, d)")
    return series


def rolling_windows(series, window_len: int, stride: int = 1) -> Dataset:
    """Overlapping fixed-length windows from one long series."""
    series = _as_series(series)
    length = series.shape[0]
    if window_len < 1 or stride < 1:
        raise ValueError("window_len and stride must be >= 1")
    if length < window_len:
        raise ValueError(f"series length {length} shorter than window {window_len}")
    starts = range(0, length - window_len + 1, stride)
    windows = np.stack([series[s: s + window_len] for s in starts])
    return Dataset(samples=windows,
                   provenance=f"rolling_windows(T={window_len}, stride={stride}, L={length})")


def past_future_windows(series, past_len: int, future_len: int) -> Dataset:
    """Stride-1 windows of length p+q tagged with the past/future boundary."""
    series = _as_series(series)
    length = series.shape[0]
    if past_len < 1 or future_len < 1:
        raise ValueError("past_len and future_len must be >= 1")
    total = past_len + future_len
    if length < total:
        raise ValueError(f"series length {length} shorter than p+q={total}")
    windows = np.stack([series[s: s + total] for s in range(length - total + 1)])
    return Dataset(samples=windows, kind=WINDOWED,
                   past_len=past_len, future_len=future_len,
                   provenance=f"past_future_windows(p={past_len}, q={future_len}, L={length})")


def train_test_split(dataset: Dataset, train_frac: float = 0.8, shuffle_seed: int = 0) -> Dataset:
    """Shuffled partition into floor(n * train_frac) training samples."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must lie strictly between 0 and 1")
    n = dataset.n_samples
    if n < 2:
        raise ValueError("need at least two samples to split")
    perm = np.random.default_rng(shuffle_seed).permutation(n)
    n_train = int(np.floor(n * train_frac))
    return Dataset(
        samples=dataset.samples, kind=dataset.kind,
        past_len=dataset.past_len, future_len=dataset.future_len,
        train_indices=np.sort(perm[:n_train]), test_indices=np.sort(perm[n_train:]),
        provenance=dataset.provenance + f" | split(frac={train_frac}, seed={shuffle_seed})",
    )


# -- portable on-disk form --------------------------------------------------------

def save_dataset(dataset: Dataset, json_path) -> None:
    json_path = os.fspath(json_path)
    csv_name = os.path.splitext(os.path.basename(json_path))[0] + ".csv"
    csv_path = os.path.join(os.path.dirname(json_path), csv_name)
    header = {
        "format": "rsiggen-dataset",
        "version": 1,
        "n_samples": dataset.n_samples,
        "horizon": dataset.horizon,
        "in_dim": dataset.in_dim,
        "kind": dataset.kind,
        "past_len": dataset.past_len,
        "future_len": dataset.future_len,
        "train_indices": None if dataset.train_indices is None
        else dataset.train_indices.tolist(),
        "test_indices": None if dataset.test_indices is None
        else dataset.test_indices.tolist(),
        "provenance": dataset.provenance,
        "csv_file": csv_name,
    }
    with open(json_path, "w") as fh:
        json.dump(header, fh, indent=1)
    flat = dataset.samples.reshape(dataset.n_samples, -1)
    cols = ",".join(f"t{t}_d{j}" for t in range(dataset.horizon)
                    for j in range(dataset.in_dim))
    # %.17g round-trips float64 exactly, keeping reloads bit-identical.
    np.savetxt(csv_path, flat, delimiter=",", fmt="%.17g", header=cols, comments="")


def load_dataset(json_path) -> Dataset:
    json_path = os.fspath(json_path)
    with open(json_path) as fh:
        header = json.load(fh)
    if header.get("format") != "rsiggen-dataset":
        raise ValueError(f"{json_path} is not a dataset header")
    csv_path = os.path.join(os.path.dirname(json_path), header["csv_file"])
    flat = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    samples = flat.reshape(header["n_samples"], header["horizon"], header["in_dim"])
    tr = header["train_indices"]
    te = header["test_indices"]
    return Dataset(
        samples=samples, kind=header["kind"],
        past_len=header["past_len"], future_len=header["future_len"],
        train_indices=None if tr is None else np.array(tr, dtype=np.int64),
        test_indices=None if te is None else np.array(te, dtype=np.int64),
        provenance=header["provenance"],
    )
