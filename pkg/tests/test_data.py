import numpy as np
import pytest
from scipy import stats

from rsiggen import (
    Dataset,
    load_dataset,
    past_future_windows,
    rolling_windows,
    save_dataset,
    simulate_ar,
    simulate_bm,
    train_test_split,
)
from rsiggen.data import WINDOWED, load_close_prices, log_returns


class TestSimulateBm:
    def test_zero_volatility_is_linear(self):
        ds = simulate_bm(0.5, 0.0, 6, 3, seed=0)
        for t in range(6):
            np.testing.assert_allclose(ds.samples[:, t, 0], 0.5 * t, atol=1e-15)

    def test_first_value_exactly_zero(self):
        ds = simulate_bm(1.0, 2.0, 5, 100, seed=1)
        assert np.all(ds.samples[:, 0, 0] == 0.0)

    def test_terminal_mean_clt_bound(self):
        ds = simulate_bm(0.0, 1.0, 10, 10_000, seed=2)
        terminal = ds.samples[:, -1, 0]
        assert abs(terminal.mean()) < 5 * np.sqrt(9) / 100

    def test_deterministic(self):
        a = simulate_bm(0.0, 1.0, 5, 10, seed=3)
        b = simulate_bm(0.0, 1.0, 5, 10, seed=3)
        assert np.array_equal(a.samples, b.samples)

    def test_increment_variances_chi2_band(self):
        n = 10_000
        ds = simulate_bm(0.0, 1.0, 8, n, seed=4)
        incs = np.diff(ds.samples[:, :, 0], axis=1)
        lo = stats.chi2.ppf(0.005, n - 1) / (n - 1)
        hi = stats.chi2.ppf(0.995, n - 1) / (n - 1)
        for t in range(incs.shape[1]):
            assert lo <= incs[:, t].var(ddof=1) <= hi

    def test_argument_errors(self):
        with pytest.raises(ValueError):
            simulate_bm(0.0, -1.0, 5, 10, seed=0)
        with pytest.raises(ValueError):
            simulate_bm(0.0, 1.0, 0, 10, seed=0)


class TestSimulateAr:
    def test_zero_coefficient_is_iid(self):
        ds = simulate_ar([0.0], 2.0, 6, 5000, seed=5, burn_in=10)
        pooled = ds.samples[:, :, 0].ravel()
        assert abs(pooled.std() - 2.0) < 0.05
        lag1 = np.corrcoef(pooled[:-1], pooled[1:])[0, 1]
        assert abs(lag1) < 0.02

    def test_ar1_stationary_variance(self):
        ds = simulate_ar([0.9], 1.0, 20, 3000, seed=6)
        var = ds.samples[:, :, 0].var()
        assert abs(var - 1.0 / (1.0 - 0.81)) / (1.0 / (1.0 - 0.81)) < 0.1

    def test_ar1_lag_one_autocorrelation(self):
        ds = simulate_ar([0.1], 1.0, 10, 10_000, seed=7)
        x = ds.samples[:, :, 0]
        lead = x[:, :-1].ravel()
        lag = x[:, 1:].ravel()
        corr = np.corrcoef(lead, lag)[0, 1]
        assert corr == pytest.approx(0.1, abs=0.03)

    def test_nonstationary_warns(self):
        with pytest.warns(UserWarning):
            ds = simulate_ar([1.05], 1.0, 5, 3, seed=8, burn_in=5)
        assert "non-stationary" in ds.provenance

    def test_deterministic(self):
        a = simulate_ar([0.4, -0.2], 1.0, 6, 4, seed=9)
        b = simulate_ar([0.4, -0.2], 1.0, 6, 4, seed=9)
        assert np.array_equal(a.samples, b.samples)

    def test_argument_errors(self):
        with pytest.raises(ValueError):
            simulate_ar([0.5], 0.0, 5, 10, seed=0)
        with pytest.raises(ValueError):
            simulate_ar([], 1.0, 5, 10, seed=0)


class TestLoadClosePrices:
    def test_two_rows(self, tmp_path):
        f = tmp_path / "p.csv"
        f.write_text("date,close\n2020-01-02,100.5\n2020-01-03,101.25\n")
        series = load_close_prices(f)
        assert len(series.close) == 2
        assert series.skipped == 0
        np.testing.assert_allclose(series.close, [100.5, 101.25])

    def test_unsorted_dates_sorted_ascending(self, tmp_path):
        f = tmp_path / "p.csv"
        f.write_text("date,close\n2020-01-05,3\n2020-01-02,1\n2020-01-03,2\n")
        series = load_close_prices(f)
        np.testing.assert_allclose(series.close, [1, 2, 3])
        assert series.dates == sorted(series.dates)

    def test_malformed_rows_skipped_and_counted(self, tmp_path):
        rows = ["date,close"]
        rows += [f"2020-01-{d:02d},{100 + d}" for d in range(1, 10)]
        rows.insert(4, "2020-01-20,not_a_number")
        f = tmp_path / "p.csv"
        f.write_text("\n".join(rows) + "\n")
        series = load_close_prices(f)
        assert len(series.close) == 9
        assert series.skipped == 1

    def test_extra_columns_ignored(self, tmp_path):
        f = tmp_path / "p.csv"
        f.write_text("date,open,close,volume\n2020-01-02,9,10,100\n2020-01-03,10,11,90\n")
        series = load_close_prices(f)
        np.testing.assert_allclose(series.close, [10, 11])

    def test_missing_columns(self, tmp_path):
        f = tmp_path / "p.csv"
        f.write_text("day,price\n2020-01-02,100\n")
        with pytest.raises(ValueError):
            load_close_prices(f)

    def test_empty_result(self, tmp_path):
        f = tmp_path / "p.csv"
        f.write_text("date,close\nbad,bad\n")
        with pytest.raises(ValueError):
            load_close_prices(f)


class TestLogReturns:
    def test_constant_prices(self):
        np.testing.assert_array_equal(log_returns(np.full(5, 7.0)), np.zeros(4))

    def test_single_e_ratio(self):
        out = log_returns(np.array([1.0, np.e]))
        np.testing.assert_allclose(out, [1.0], atol=1e-15)

    def test_naive_loop_oracle(self):
        prices = np.random.default_rng(10).uniform(50, 150, 30)
        expected = np.array([np.log(prices[i + 1] / prices[i])
                             for i in range(29)])
        np.testing.assert_allclose(log_returns(prices), expected, atol=1e-15)

    def test_nonpositive_price(self):
        with pytest.raises(ValueError):
            log_returns(np.array([1.0, -2.0, 3.0]))

    def test_too_short(self):
        with pytest.raises(ValueError):
            log_returns(np.array([1.0]))


class TestRollingWindows:
    def test_exact_fit_single_window(self):
        ds = rolling_windows(np.arange(5.0), 5)
        assert ds.n_samples == 1

    def test_count_formula(self):
        ds = rolling_windows(np.arange(12.0), 10)
        assert ds.n_samples == 3

    def test_count_formula_random_lengths(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            length = int(rng.integers(5, 60))
            window = int(rng.integers(1, length + 1))
            ds = rolling_windows(rng.standard_normal(length), window)
            assert ds.n_samples == length - window + 1

    def test_windows_are_contiguous_slices(self):
        series = np.random.default_rng(12).standard_normal(50)
        ds = rolling_windows(series, 7)
        for i in range(ds.n_samples):
            np.testing.assert_array_equal(ds.samples[i, :, 0], series[i: i + 7])

    def test_too_short(self):
        with pytest.raises(ValueError):
            rolling_windows(np.arange(4.0), 5)


class TestPastFutureWindows:
    def test_count_small(self):
        ds = past_future_windows(np.arange(5.0), 2, 1)
        assert ds.n_samples == 3
        assert ds.kind == WINDOWED

    def test_exact_fit(self):
        ds = past_future_windows(np.arange(6.0), 2, 4)
        assert ds.n_samples == 1

    def test_concat_reproduces_slice(self):
        series = np.random.default_rng(13).standard_normal(30)
        ds = past_future_windows(series, 4, 3)
        pasts, futures = ds.pasts(), ds.futures()
        for i in range(ds.n_samples):
            joined = np.concatenate([pasts[i, :, 0], futures[i, :, 0]])
            np.testing.assert_array_equal(joined, series[i: i + 7])

    def test_exhaustive_index_bookkeeping(self):
        for length in range(2, 51):
            series = np.arange(float(length))
            for p in range(1, length):
                q = length - p
                ds = past_future_windows(series, p, q)
                assert ds.n_samples == 1
                np.testing.assert_array_equal(ds.samples[0, :, 0], series)

    def test_too_short(self):
        with pytest.raises(ValueError):
            past_future_windows(np.arange(4.0), 3, 2)


class TestTrainTestSplit:
    def test_eighty_twenty(self):
        ds = simulate_bm(0.0, 1.0, 4, 10, seed=14)
        split = train_test_split(ds, 0.8, shuffle_seed=0)
        assert len(split.train_indices) == 8
        assert len(split.test_indices) == 2

    def test_partition(self):
        ds = simulate_bm(0.0, 1.0, 4, 37, seed=15)
        split = train_test_split(ds, 0.7, shuffle_seed=1)
        merged = np.sort(np.concatenate([split.train_indices, split.test_indices]))
        np.testing.assert_array_equal(merged, np.arange(37))

    def test_deterministic(self):
        ds = simulate_bm(0.0, 1.0, 4, 20, seed=16)
        a = train_test_split(ds, 0.8, shuffle_seed=9)
        b = train_test_split(ds, 0.8, shuffle_seed=9)
        assert np.array_equal(a.train_indices, b.train_indices)

    def test_bad_fraction(self):
        ds = simulate_bm(0.0, 1.0, 4, 10, seed=17)
        with pytest.raises(ValueError):
            train_test_split(ds, 1.0, shuffle_seed=0)

    def test_too_few_samples(self):
        ds = simulate_bm(0.0, 1.0, 4, 1, seed=18)
        with pytest.raises(ValueError):
            train_test_split(ds, 0.5, shuffle_seed=0)


class TestDatasetValidation:
    def test_windowed_needs_matching_horizon(self):
        with pytest.raises(ValueError):
            Dataset(samples=np.zeros((3, 5, 1)), kind=WINDOWED,
                    past_len=2, future_len=2)

    def test_split_must_partition(self):
        with pytest.raises(ValueError):
            Dataset(samples=np.zeros((4, 3, 1)),
                    train_indices=np.array([0, 1]), test_indices=np.array([1, 3]))


class TestRoundTrip:
    def test_save_load_bit_identical(self, tmp_path):
        ds = simulate_bm(0.3, 1.7, 6, 25, seed=19)
        ds = train_test_split(ds, 0.8, shuffle_seed=2)
        path = tmp_path / "data.json"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert np.array_equal(back.samples, ds.samples)
        assert np.array_equal(back.train_indices, ds.train_indices)
        assert back.provenance == ds.provenance

    def test_windowed_metadata_preserved(self, tmp_path):
        ds = past_future_windows(np.random.default_rng(20).standard_normal(30), 4, 3)
        path = tmp_path / "w.json"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert back.kind == WINDOWED
        assert back.past_len == 4
        assert back.future_len == 3
        assert np.array_equal(back.pasts(), ds.pasts())

    def test_single_sample_round_trip(self, tmp_path):
        ds = Dataset(samples=np.random.default_rng(21).standard_normal((1, 4, 2)))
        path = tmp_path / "one.json"
        save_dataset(ds, path)
        assert np.array_equal(load_dataset(path).samples, ds.samples)
