import numpy as np
import pytest

from scqp.data import (
    PricePanel,
    ReturnPanel,
    estimate_moments,
    generate_market,
    load_prices_csv,
    simulate_prices,
    simulate_returns,
    to_returns,
    write_prices_csv,
)
from scqp.errors import (
    NonMonotoneDates,
    NonPositivePrice,
    NotPositiveDefinite,
    ParseError,
    TooFewRows,
    WindowTooShort,
)


def write(tmp_path, text, name="p.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestGenerateMarket:
    def test_eigenvalue_floor(self):
        m = generate_market(3, seed=7)
        assert np.linalg.eigvalsh(m.sigmas[0]).min() > 1e-4

    def test_deterministic(self):
        a, b = generate_market(6, 2, 2, seed=3), generate_market(6, 2, 2, seed=3)
        for x, y in zip(a.mus + a.sigmas, b.mus + b.sigmas):
            assert x.tobytes() == y.tobytes()

    def test_single_asset(self):
        m = generate_market(1, seed=0)
        assert m.sigmas[0].shape == (1, 1) and m.sigmas[0][0, 0] > 0

    def test_mean_range(self):
        m = generate_market(500, seed=1)
        assert m.mus[0].min() >= -0.001 and m.mus[0].max() <= 0.003

    def test_counts(self):
        m = generate_market(4, 3, 2, seed=0)
        assert (m.p, m.q) == (3, 2)


class TestLoadCsv:
    def test_basic(self, tmp_path):
        panel = load_prices_csv(write(tmp_path, "date,A\nd1,100\nd2,110\n"))
        assert panel.tickers == ("A",)
        np.testing.assert_array_equal(panel.prices[:, 0], [100.0, 110.0])
        assert panel.dates == ("d1", "d2")

    def test_parse_error_location(self, tmp_path):
        path = write(tmp_path, "date,A,B\nd1,100,5\nd2,abc,6\n")
        with pytest.raises(ParseError) as info:
            load_prices_csv(path)
        assert info.value.row == 3 and info.value.column == 2
        assert "row 3" in str(info.value) and "column 2" in str(info.value)

    def test_nonpositive(self, tmp_path):
        with pytest.raises(NonPositivePrice):
            load_prices_csv(write(tmp_path, "date,A\nd1,100\nd2,0\n"))

    def test_dates_must_increase(self, tmp_path):
        with pytest.raises(NonMonotoneDates):
            load_prices_csv(write(tmp_path, "date,A\nd2,100\nd1,110\n"))
        with pytest.raises(NonMonotoneDates):
            load_prices_csv(write(tmp_path, "date,A\nd1,100\nd1,110\n"))

    def test_missing_cell(self, tmp_path):
        with pytest.raises(ParseError):
            load_prices_csv(write(tmp_path, "date,A,B\nd1,100\n"))
        with pytest.raises(ParseError):
            load_prices_csv(write(tmp_path, "date,A,B\nd1,100,\n"))

    def test_round_trip(self, tmp_path):
        panel = simulate_prices(4, 30, seed=2)
        path = tmp_path / "sim.csv"
        write_prices_csv(panel, path)
        back = load_prices_csv(path)
        assert back.dates == panel.dates and back.tickers == panel.tickers
        np.testing.assert_array_equal(back.prices, panel.prices)


class TestToReturns:
    def test_simple(self):
        r = to_returns(PricePanel(("a", "b"), [[100.0], [110.0]], ("X",)))
        assert r.returns[0, 0] == pytest.approx(0.10)

    def test_constant(self):
        r = to_returns(PricePanel(("a", "b", "c"), np.full((3, 2), 7.0), ("X", "Y")))
        np.testing.assert_array_equal(r.returns, 0.0)
        assert r.t == 2

    def test_halving(self):
        r = to_returns(PricePanel(("a", "b"), [[100.0], [50.0]], ("X",)))
        assert r.returns[0, 0] == -0.5

    def test_too_few_rows(self):
        with pytest.raises(TooFewRows):
            to_returns(PricePanel(("a",), [[100.0]], ("X",)))


class TestEstimateMoments:
    RETS = ReturnPanel(np.array([[0.1, 0.0], [-0.1, 0.0]]))

    def test_rank_deficient(self):
        with pytest.raises(NotPositiveDefinite):
            estimate_moments(self.RETS, shrink=0.0)

    def test_shrinkage_rescues(self):
        m = estimate_moments(self.RETS, shrink=0.1)
        np.testing.assert_allclose(m.mus[0], [0.0, 0.0], atol=1e-17)
        # raw covariance diag(0.02, 0), ridge 0.1 * 0.02 / 2
        np.testing.assert_allclose(m.sigmas[0], np.diag([0.021, 0.001]), rtol=1e-12)

    def test_window_too_short(self):
        with pytest.raises(WindowTooShort):
            estimate_moments(self.RETS, windows=[(0, 1)], shrink=0.1)

    def test_windows(self, rng):
        r = ReturnPanel(rng.normal(0, 0.01, size=(50, 3)))
        m = estimate_moments(r, windows=[(0, 50), (30, 50)], shrink=0.0)
        assert (m.p, m.q) == (2, 2)
        np.testing.assert_allclose(m.mus[1], r.returns[30:].mean(axis=0))
        np.testing.assert_allclose(m.sigmas[1], np.cov(r.returns[30:], rowvar=False), rtol=1e-12)

    def test_mean_within_standard_errors(self):
        market = generate_market(5, seed=4)
        mu, sigma = market.mus[0], market.sigmas[0]
        t = 2000
        est = estimate_moments(simulate_returns(mu, sigma, t, seed=5, vol_scale=0.01))
        se = 0.01 * np.sqrt(np.diag(sigma)) / np.sqrt(t)
        assert (np.abs(est.mus[0] - mu) <= 3 * se).all()

    def test_round_trip_large_sample(self):
        market = generate_market(4, seed=8)
        mu, sigma = market.mus[0], 1e-4 * market.sigmas[0]
        t = 100_000
        est = estimate_moments(simulate_returns(mu, sigma, t, seed=9), shrink=0.0)
        sd = np.sqrt(np.diag(sigma))
        assert (np.abs(est.mus[0] - mu) <= 3 * sd / np.sqrt(t)).all()
        rel = np.linalg.norm(est.sigmas[0] - sigma) / np.linalg.norm(sigma)
        assert rel <= 0.05

    def test_spd_with_shrink(self, rng):
        for _ in range(10):
            n = int(rng.integers(2, 30))
            r = ReturnPanel(rng.normal(0, 0.02, size=(int(rng.integers(2, n + 1)), n)))
            m = estimate_moments(r, shrink=1e-4)
            assert np.linalg.eigvalsh(m.sigmas[0]).min() > 0


class TestReturnPanel:
    def test_rejects_total_loss(self):
        with pytest.raises(ValueError):
            ReturnPanel(np.array([[-1.0]]))

    def test_simulated_returns_valid(self):
        r = simulate_returns(np.zeros(2), np.eye(2), 200, seed=0, vol_scale=0.6)
        assert (r.returns > -1).all()
