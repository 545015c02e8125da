"""Statistics module tests against independent oracles and pinned reference values."""

import math

import numpy as np
import pytest
from scipy.stats import binom as binom_dist

from pulsepair import stats
from pulsepair.stats import (PoissonCalib, PosteriorChain, bayes_update,
                             calibrate_df50, make_ra_windows, method_a,
                             method_b, p0_df_awgn, p_dtdf_awgn,
                             p_dtdf_awgn_small, ra_probability,
                             rice_rayleigh_ratio)


# ---------------------------------------------------------------------------
# Ricean / Rayleigh density ratio
# ---------------------------------------------------------------------------


def test_rice_ratio_reference_low():
    # r = 5 sigma, line s = 1 sigma: the low end of the pinned range
    assert 16.0 <= rice_rayleigh_ratio(5.0, 1.0) <= 17.0


def test_rice_ratio_reference_high():
    # r = 5 sigma, line s = 4 sigma
    assert rice_rayleigh_ratio(5.0, 4.0) == pytest.approx(14612.0, abs=75.0)


def test_rice_ratio_matches_unscaled_bessel():
    # independent evaluation via the plain Bessel function where it is finite
    for r, s in [(2.0, 1.0), (5.0, 4.0), (10.0, 3.0), (1.0, 0.5)]:
        direct = math.exp(-s * s / 2.0) * float(np.i0(r * s))
        assert rice_rayleigh_ratio(r, s) == pytest.approx(direct, rel=1e-12)


def test_rice_ratio_scale_invariance():
    # (r, s, sigma) -> (kr, ks, k sigma) leaves the ratio unchanged
    base = rice_rayleigh_ratio(5.0, 2.0, 1.0)
    assert rice_rayleigh_ratio(15.0, 6.0, 3.0) == pytest.approx(base, rel=1e-12)


def test_rice_ratio_zero_line_is_unity():
    assert rice_rayleigh_ratio(3.0, 0.0) == pytest.approx(1.0)


def test_rice_ratio_monotone_in_r():
    rs = [rice_rayleigh_ratio(r, 2.0) for r in (1.0, 2.0, 4.0, 8.0)]
    assert rs == sorted(rs)


def test_rice_ratio_rejects_bad_sigma():
    with pytest.raises(ValueError):
        rice_rayleigh_ratio(5.0, 1.0, 0.0)


# ---------------------------------------------------------------------------
# Poisson interarrival probabilities
# ---------------------------------------------------------------------------

CALIB = PoissonCalib(dt50_s=0.27, df50_hz=850e3)


def test_p_dtdf_at_both_medians():
    # both arguments at their medians: (1/2) * (1/2)
    assert p_dtdf_awgn(0.27, 850e3, CALIB) == pytest.approx(0.25, rel=1e-12)


def test_p_dtdf_zero_offsets():
    assert p_dtdf_awgn(0.0, 850e3, CALIB) == 0.0
    assert p_dtdf_awgn(0.27, 0.0, CALIB) == 0.0


def test_p_dtdf_small_form_is_upper_bound():
    rng = np.random.default_rng(5)
    for _ in range(200):
        dt = rng.uniform(0.0, 3.0)
        df = rng.uniform(0.0, 4e6)
        assert p_dtdf_awgn_small(dt, df, CALIB) >= p_dtdf_awgn(dt, df, CALIB)


def test_p_dtdf_small_form_converges():
    # within 1% of the exact product for offsets two decades under the medians
    dt, df = 0.27 / 100.0, 850e3 / 100.0
    exact = p_dtdf_awgn(dt, df, CALIB)
    small = p_dtdf_awgn_small(dt, df, CALIB)
    assert small == pytest.approx(exact, rel=0.01)


def test_p0_reference_gate_values():
    assert p0_df_awgn(5501.7, 850e3) == pytest.approx(0.004486, abs=1e-6)
    assert p0_df_awgn(5215.7, 850e3) == pytest.approx(0.004253, abs=1e-6)
    assert p0_df_awgn(5501.7, 850e3) < 0.03
    assert p0_df_awgn(5215.7, 850e3) < 0.03


def test_p0_clamps_with_warning():
    with pytest.warns(RuntimeWarning):
        assert p0_df_awgn(2e6, 850e3) == 1.0


def test_p0_rejects_bad_median():
    with pytest.raises(ValueError):
        p0_df_awgn(100.0, 0.0)


# ---------------------------------------------------------------------------
# method A: binomial upper tail
# ---------------------------------------------------------------------------


def _enumeration_tail(alpha: float, n: int, n_min: int) -> float:
    """P(X >= n_min) by summing every one of the 2^n Bernoulli outcomes."""
    total = 0.0
    for mask in range(1 << n):
        k = bin(mask).count("1")
        if k >= n_min:
            total += alpha ** k * (1.0 - alpha) ** (n - k)
    return total


def test_method_a_reference_value():
    assert method_a(0.0125, 7, 2) == pytest.approx(0.0031, abs=1e-4)


@pytest.mark.parametrize("alpha", [0.01, 0.1, 0.5])
def test_method_a_matches_enumeration(alpha):
    for n in range(1, 16):
        for n_df in range(0, n + 1):
            expect = _enumeration_tail(alpha, n, n_df)
            assert abs(method_a(alpha, n, n_df) - expect) <= 1e-12


def test_method_a_matches_scipy_survival():
    for alpha, n, n_df in [(0.0125, 7, 2), (0.004486, 40, 2), (0.02, 500, 30),
                           (0.075, 130, 20)]:
        expect = float(binom_dist.sf(n_df - 1, n, alpha))
        assert method_a(alpha, n, n_df) == pytest.approx(expect, rel=1e-9)


def test_method_a_log_gamma_regime_continuous():
    # exact-combinatorics and log-gamma paths agree where they meet
    small = method_a(0.01, 1000, 25)
    big = method_a(0.01, 1001, 25)
    expect_small = float(binom_dist.sf(24, 1000, 0.01))
    expect_big = float(binom_dist.sf(24, 1001, 0.01))
    assert small == pytest.approx(expect_small, rel=1e-9)
    assert big == pytest.approx(expect_big, rel=1e-9)


def test_method_a_large_n():
    assert method_a(1e-4, 50_000, 10) == pytest.approx(
        float(binom_dist.sf(9, 50_000, 1e-4)), rel=1e-8)


def test_method_a_edges():
    assert method_a(0.3, 10, 0) == 1.0
    assert method_a(0.0, 10, 3) == 0.0
    assert method_a(1.0, 10, 10) == 1.0
    with pytest.raises(ValueError):
        method_a(0.5, 5, 6)
    with pytest.raises(ValueError):
        method_a(1.5, 5, 2)
    with pytest.raises(ValueError):
        method_a(0.5, -1, 0)


# ---------------------------------------------------------------------------
# RA windows
# ---------------------------------------------------------------------------


def test_make_ra_windows_default_span():
    windows = make_ra_windows()
    assert windows[0] == (4.5, 4.8)
    assert windows[-1] == pytest.approx((5.7, 6.0))
    assert len(windows) == 5
    for (_, hi), (lo2, _) in zip(windows, windows[1:]):
        assert hi == pytest.approx(lo2)


def test_assign_window_half_open():
    windows = make_ra_windows()
    assert stats.assign_window(4.5, windows) == 0
    assert stats.assign_window(4.8, windows) == 1
    assert stats.assign_window(6.0, windows) is None
    assert stats.assign_window(4.499, windows) is None


def test_ra_probability_theoretical():
    assert ra_probability((4.5, 4.8), ra_obs_hours=4.0) == pytest.approx(0.075)


def test_ra_probability_empirical_is_exact_division():
    assert ra_probability((0, 1), mode="empirical", count=13, total=164) == 13 / 164


def test_ra_probability_errors():
    with pytest.raises(ValueError):
        ra_probability((4.5, 4.8), ra_obs_hours=0.0)
    with pytest.raises(ValueError):
        ra_probability((4.5, 4.8), mode="empirical", count=1, total=0)
    with pytest.raises(ValueError):
        ra_probability((4.5, 4.8), mode="nope")


# ---------------------------------------------------------------------------
# method B
# ---------------------------------------------------------------------------


class _FakePair:
    def __init__(self, ra, snr):
        self.ra_hours = ra
        self.snr_max_db = snr


def _uniform_pairs(rng, n, lo=4.0, hi=8.0):
    return [_FakePair(rng.uniform(lo, hi), rng.normal(12.0, 1.0))
            for _ in range(n)]


def test_method_b_curves_match_binom_pmf_oracle():
    rng = np.random.default_rng(42)
    pairs = _uniform_pairs(rng, 80)
    windows = make_ra_windows()
    probs = [0.075] * 5
    res = method_b(pairs, windows, probabilities=probs)
    ranked = sorted(pairs, key=lambda p: (-p.snr_max_db, p.ra_hours))
    for j, w in enumerate(windows):
        k = 0
        for t, p in enumerate(ranked, start=1):
            if stats.assign_window(p.ra_hours, windows) == j:
                k += 1
            expect = float(binom_dist.pmf(k, t, 0.075))
            assert res.curves[j, t - 1] == pytest.approx(expect, rel=1e-9)
            assert res.counts[j, t - 1] == k


def test_method_b_empirical_probabilities():
    pairs = [_FakePair(4.6, 10), _FakePair(4.7, 11), _FakePair(5.2, 12),
             _FakePair(7.0, 13)]
    res = method_b(pairs, make_ra_windows())
    assert res.probabilities[0] == pytest.approx(0.5)   # two of four in window 0
    assert res.probabilities[2] == pytest.approx(0.25)


def test_method_b_discontinuities_are_entry_drops():
    # a cluster of strongest pairs all inside one window: L falls at each entry
    pairs = [_FakePair(5.2, 20 - i) for i in range(6)]
    pairs += [_FakePair(7.0, 5 - 0.1 * i) for i in range(60)]
    res = method_b(pairs, make_ra_windows(), probabilities=[0.075] * 5)
    assert len(res.discontinuities[2]) >= 5
    lmin, at = res.min_l(2)
    assert lmin < 0.017


def test_method_b_validation():
    with pytest.raises(ValueError):
        method_b([], make_ra_windows())
    pairs = [_FakePair(7.0, 10.0)]   # outside every window
    with pytest.raises(ValueError):
        method_b(pairs, make_ra_windows())   # empirical probabilities all zero


def test_method_b_empty_window_is_degenerate():
    # a window the population never visits contributes a flat L = 1 curve
    pairs = [_FakePair(4.6, 10), _FakePair(4.7, 11), _FakePair(5.2, 12),
             _FakePair(5.21, 13)]
    res = method_b(pairs, make_ra_windows())
    assert np.all(res.curves[1] == 1.0)
    assert res.probabilities[1] == 0.0


def test_method_b_max_trials():
    rng = np.random.default_rng(3)
    pairs = _uniform_pairs(rng, 50)
    res = method_b(pairs, make_ra_windows(), probabilities=[0.075] * 5,
                   max_trials=20)
    assert res.curves.shape == (5, 20)
    assert res.trials[-1] == 20


# ---------------------------------------------------------------------------
# Bayesian chain
# ---------------------------------------------------------------------------


def test_bayes_update_basic():
    assert bayes_update(1.0, 0.0140) == pytest.approx(0.0140)
    assert bayes_update(0.5, 0.4, 0.8) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        bayes_update(0.5, 0.4, 0.0)
    with pytest.raises(ValueError):
        bayes_update(-0.1, 0.4)


def test_bayes_posterior_shrinks_when_likelihood_below_p_data():
    prior = 0.3
    assert bayes_update(prior, 0.2, 0.5) <= prior


def test_chain_replay_reference_sequence():
    chain = PosteriorChain()
    p1 = chain.update("first", 0.0140)
    p2 = chain.update("second", 0.00023, prior=0.0140)
    assert p1 == pytest.approx(0.0140, rel=1e-9)
    assert p2 == pytest.approx(3.2e-6, abs=0.05e-6)
    assert chain.posterior == p2
    assert [s.label for s in chain.steps] == ["first", "second"]


def test_chain_branch_replay():
    chain = PosteriorChain()
    b2 = chain.update("branch", 0.0060, prior=0.0140)
    b3 = chain.update("final", 0.1293, prior=8.5e-5)
    # intermediates carry 2-significant-figure rounding: allow one unit there
    assert b2 == pytest.approx(8.5e-5, abs=0.1e-5)
    assert b3 == pytest.approx(1.1e-5, abs=0.05e-5)


def test_chain_carries_posterior_forward():
    chain = PosteriorChain(prior=0.5)
    chain.update("a", 0.1)
    chain.update("b", 0.2)
    assert chain.posterior == pytest.approx(0.5 * 0.1 * 0.2)


# ---------------------------------------------------------------------------
# interarrival calibration
# ---------------------------------------------------------------------------


def test_calibrate_df50_uniform_population():
    from pulsepair import mc

    d = mc.df50_mc(n_frames=2000, bandwidth_hz=1e6, events_per_frame=150.0,
                   seed=7)
    assert d["agreement"] == pytest.approx(1.0, abs=0.03)
    assert d["n_gaps"] > 1000


def test_calibrate_df50_measures_dt50():
    from pulsepair.constants import FRAME_SECONDS
    from pulsepair.mc import SyntheticEvent

    # one event every third frame: every positive time gap is 3 frames
    events = [SyntheticEvent(60000.0 + 3 * i * FRAME_SECONDS / 86400.0, 1e5 * i)
              for i in range(200)]
    cal = calibrate_df50(events, n_frames=600, bandwidth_hz=2e7)
    assert cal.dt50_s == pytest.approx(3 * FRAME_SECONDS, rel=1e-6)


def test_calibrate_df50_no_gaps():
    from pulsepair.mc import SyntheticEvent

    events = [SyntheticEvent(60000.0 + i * 0.27 / 86400.0, 5e5)
              for i in range(10)]   # one event per frame: no frequency gaps
    cal = calibrate_df50(events, n_frames=10, bandwidth_hz=1e6)
    assert cal.empirical_df50_hz is None
    assert cal.agreement is None
    assert cal.analytic_df50_hz == pytest.approx(math.log(2.0) * 1e6 / 1.0)


def test_calibrate_df50_validation():
    with pytest.raises(ValueError):
        calibrate_df50([], n_frames=0, bandwidth_hz=1e6)
    with pytest.raises(ValueError):
        calibrate_df50([], n_frames=10, bandwidth_hz=1e6)   # no events


def test_poisson_calib_validation():
    with pytest.raises(ValueError):
        PoissonCalib(0.0, 100.0)
    calib = stats.Df50Calibration(None, 5e5, 0, None, 0).calib()
    assert calib.df50_hz == stats.DF50_DEFAULT_HZ
