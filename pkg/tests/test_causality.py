import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from stockformer.causality import (
    CausalityMatrix,
    GrangerConfig,
    causality_matrix,
    f_survival,
    granger_p_value,
    granger_test,
    ols_fit,
    select_target,
)
from stockformer.data import AlignedPanel
from stockformer.errors import DataError

TICKERS = ["XOM", "CVX", "COP", "BP", "PBR", "WTI", "EOG"]
# p-value matrix printed in the source table; row i is the effect ticker
PUBLISHED_P_VALUES = np.array(
    [
        [1.0, 0.3204, 0.1484, 0.5337, 0.9651, 0.5131, 0.4394],
        [0.5223, 1.0, 0.0655, 0.6965, 0.2068, 0.755, 0.2261],
        [0.1156, 0.3724, 1.0, 0.4059, 0.9479, 0.109, 0.126],
        [0.0004, 0.3159, 0.0027, 1.0, 0.4099, 0.5154, 0.0044],
        [0.1228, 0.6649, 0.4954, 0.4999, 1.0, 0.0096, 0.1365],
        [0.0097, 0.5562, 0.094, 0.4936, 0.042, 1.0, 0.0211],
        [0.525, 0.1245, 0.3163, 0.2442, 0.586, 0.0819, 1.0],
    ]
)


def planted(seed, T=1000, coef=0.5):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(T)
    y = np.zeros(T)
    e = rng.standard_normal(T)
    for t in range(2, T):
        y[t] = 0.8 * y[t - 1] + coef * x[t - 2] + e[t]
    return x, y


# -- OLS --------------------------------------------------------------------------


def test_ols_exact_line():
    x = np.linspace(-1, 1, 20)
    fit = ols_fit(x[:, None], 2 * x)
    assert fit.coefficients[0] == pytest.approx(2.0, abs=1e-8)
    assert fit.rss <= 1e-16


def test_ols_intercept_only():
    fit = ols_fit(np.ones((10, 1)), np.full(10, 5.0))
    assert fit.coefficients[0] == pytest.approx(5.0, abs=1e-8)
    assert fit.rss == pytest.approx(0.0, abs=1e-16)


def test_ols_duplicated_column_still_solves():
    x = np.random.default_rng(0).standard_normal(30)
    fit = ols_fit(np.column_stack([np.ones(30), x, x]), 3 * x + 1)
    assert np.all(np.isfinite(fit.coefficients))
    assert fit.coefficients[1] + fit.coefficients[2] == pytest.approx(3.0, abs=1e-6)


def test_ols_matches_lstsq():
    rng = np.random.default_rng(1)
    X, y = rng.standard_normal((50, 4)), rng.standard_normal(50)
    ref, *_ = np.linalg.lstsq(X, y, rcond=None)
    np.testing.assert_allclose(ols_fit(X, y).coefficients, ref, atol=1e-8)


# -- F distribution ----------------------------------------------------------------


@pytest.mark.parametrize("f,d1,d2", [(0.5, 4, 50), (2.3, 4, 983), (10.0, 1, 5), (1e-3, 3, 20)])
def test_f_survival_matches_scipy(f, d1, d2):
    assert f_survival(f, d1, d2) == pytest.approx(stats.f.sf(f, d1, d2), rel=1e-10)


def test_f_survival_zero_is_one():
    assert f_survival(0.0, 4, 10) == 1.0


# -- Granger ----------------------------------------------------------------------


def test_matches_statsmodels_ssr_ftest():
    sm_tools = pytest.importorskip("statsmodels.tsa.stattools")
    for seed in range(5):
        x, y = planted(seed, T=300, coef=0.1)
        f, p = granger_test(x, y, 4)
        res = sm_tools.grangercausalitytests(np.column_stack([y, x]), [4])
        ref_f, ref_p, ref_dfd, _ = res[4][0]["ssr_ftest"]
        assert f == pytest.approx(ref_f, rel=1e-8)
        assert p == pytest.approx(ref_p, rel=1e-8, abs=1e-15)


def test_planted_causality_detected():
    hits = sum(granger_p_value(*planted(s), lag=4) < 0.05 for s in range(20))
    assert hits == 20


def test_independent_noise_mostly_insignificant():
    rng = np.random.default_rng(5)
    ps = [granger_p_value(rng.standard_normal(300), rng.standard_normal(300), 4) for _ in range(60)]
    # p-values are approximately uniform under the null
    assert 0.25 < np.mean(ps) < 0.75


def test_too_short_series():
    lag = 4
    T = 2 * lag + 1
    with pytest.raises(DataError):
        granger_test(np.arange(T, dtype=float), np.sin(np.arange(T, dtype=float)), lag)


def test_x_lags_that_add_nothing_give_p_one():
    rng = np.random.default_rng(2)
    y = rng.standard_normal(100)
    x = np.zeros(100)
    f, p = granger_test(x, y, 2)
    assert f == 0.0 and p == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-4, 1e4), st.integers(1, 5))
def test_scale_equivariance_and_range(seed, c, lag):
    x, y = planted(seed, T=120, coef=0.3)
    f, p = granger_test(x, y, lag)
    f2, p2 = granger_test(c * x, c * y, lag)
    assert 0.0 <= p <= 1.0 and f >= 0.0
    assert abs(p - p2) <= 1e-10


# -- matrix and selection -------------------------------------------------------------


def _panel(k=3, T=400, seed=0):
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((T, k))
    R[1:, 2] += 0.7 * R[:-1, 0]
    return AlignedPanel([f"S{i}" for i in range(k)], "S0", np.arange(T) * 3600, R, "log_percent")


def test_matrix_shape_diagonal_asymmetry():
    m = causality_matrix(_panel())
    assert m.p.shape == (3, 3)
    np.testing.assert_array_equal(np.diag(m.p), 1.0)
    assert m.p[2, 0] < 1e-6
    assert m.p[0, 2] > 0.01
    assert not np.allclose(m.p, m.p.T)


def test_matrix_entry_orientation():
    panel = _panel()
    m = causality_matrix(panel)
    assert m.p[2, 0] == granger_p_value(panel.returns[:, 0], panel.returns[:, 2], 4)


def test_matrix_workers_identical():
    panel = _panel(4)
    assert np.array_equal(causality_matrix(panel).p, causality_matrix(panel, workers=3).p)


def test_table_fixture_selects_wti():
    m = CausalityMatrix(TICKERS, PUBLISHED_P_VALUES)
    sums = dict(zip(TICKERS, m.row_sums()))
    assert sums["WTI"] == pytest.approx(2.2166, abs=1e-9)
    assert sums["BP"] == pytest.approx(2.2487, abs=1e-9)
    assert select_target(m) == "WTI"


def test_single_ticker_matrix():
    assert select_target(CausalityMatrix(["ONLY"], np.ones((1, 1)))) == "ONLY"


def test_tie_goes_to_lower_index():
    p = np.array([[1.0, 0.2, 0.3], [1.0, 0.2, 0.3], [1.0, 0.9, 0.9]])
    assert select_target(CausalityMatrix(["A", "B", "C"], p)) == "A"


@settings(max_examples=50, deadline=None)
@given(st.permutations(range(7)))
def test_selection_invariant_under_reordering(perm):
    perm = list(perm)
    m = CausalityMatrix([TICKERS[i] for i in perm], PUBLISHED_P_VALUES[np.ix_(perm, perm)])
    assert select_target(m) == "WTI"


def test_csv_layout():
    text = CausalityMatrix(TICKERS, PUBLISHED_P_VALUES).to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == ",XOM,CVX,COP,BP,PBR,WTI,EOG,row_sum"
    assert lines[6].startswith("WTI_Y,0.0097,0.5562,0.0940,0.4936,0.0420,1.0000,0.0211,2.2166")
    assert lines[-1] == "selected_target,WTI"


def test_config_validation():
    with pytest.raises(ValueError):
        GrangerConfig(lag=0)
    with pytest.raises(ValueError):
        GrangerConfig(significance=1.5)
