"""Channelizer tests: spectra, SNR, detection semantics, timing, event files."""

import math

import numpy as np
import pytest
from scipy.stats import kstest

from pulsepair import channelizer as ch
from pulsepair.channelizer import (FrameSpectrum, SpectralEvent,
                                   bin_frequencies, channelize, compute_snr,
                                   detect_events, doppler_compensate,
                                   duty_stride, estimate_noise, gmst_degrees,
                                   mjd_to_ra, read_event_file, rotation_window,
                                   segment_means, write_event_files,
                                   write_event_rows)
from pulsepair.constants import (EARTH_EQUATORIAL_SPEED_M_S, FRAME_SECONDS,
                                 SIDEREAL_HOURS_PER_DAY, SPEED_OF_LIGHT_M_S,
                                 frame_length, get_site)
from pulsepair.synth import (ChannelPlan, collect, generate_awgn,
                             unit_amplitude)

FS = 10_000.0
N = frame_length(FS)   # 2700


def _awgn(duration_s=3.0, sigma=1.0, seed=4):
    plan = ChannelPlan(sample_rate=FS, duration_s=duration_s, seed=seed)
    return collect(generate_awgn(plan, sigma, "R"))


# ---------------------------------------------------------------------------
# framing and duty cycle
# ---------------------------------------------------------------------------


def test_duty_stride_values():
    assert duty_stride(1.0) == 1
    assert duty_stride(0.33) == 3
    assert duty_stride(0.25) == 4


def test_frame_indices_and_count():
    z = _awgn(3.0)
    frames = list(channelize(z, FS))
    assert len(frames) == len(z) // N
    assert [f.frame_index for f in frames] == list(range(len(frames)))


@pytest.mark.parametrize("duty,stride", [(0.25, 4), (0.33, 3)])
def test_duty_cycle_skips_frames_but_keeps_indices(duty, stride):
    z = _awgn(6.0)
    frames = list(channelize(z, FS, duty_cycle=duty))
    assert [f.frame_index for f in frames] == list(range(0, len(z) // N, stride))
    # the processed frames match the same frames at full duty
    full = list(channelize(z, FS))
    for f in frames:
        assert np.array_equal(f.bin_powers, full[f.frame_index].bin_powers)


def test_partial_trailing_frame_discarded():
    z = _awgn(1.0)
    n_full = len(z) // N
    frames = list(channelize(z[:n_full * N + 137], FS))
    assert len(frames) == n_full


def test_block_boundaries_do_not_matter():
    z = _awgn(2.0)
    whole = list(channelize(z, FS))
    rng = np.random.default_rng(0)
    cuts = np.sort(rng.choice(np.arange(1, len(z)), 7, replace=False))
    ragged = np.split(z, cuts)
    blocked = list(channelize(iter(ragged), FS))
    assert len(whole) == len(blocked)
    for a, b in zip(whole, blocked):
        assert np.array_equal(a.bin_powers, b.bin_powers)


def test_channelize_workers_identical():
    z = _awgn(4.0)
    ref = list(channelize(z, FS, workers=1))
    par = list(channelize(z, FS, workers=4))
    assert len(ref) == len(par)
    for a, b in zip(ref, par):
        assert np.array_equal(a.bin_powers, b.bin_powers)


def test_frame_mjd_timestamps():
    start = 58345.0
    z = _awgn(2.0)
    frames = list(channelize(z, FS, start_mjd=start))
    for f in frames:
        expect = start + f.frame_index * FRAME_SECONDS / 86400.0
        assert f.mjd_start == pytest.approx(expect, abs=1e-12)


# ---------------------------------------------------------------------------
# spectral statistics
# ---------------------------------------------------------------------------


def test_awgn_bin_power_mean_and_distribution():
    sigma = 1.3
    z = _awgn(12.0, sigma=sigma)
    frames = list(channelize(z, FS))
    p = np.concatenate([f.bin_powers for f in frames])
    mean_expect = 2.0 * sigma * sigma / N
    assert np.mean(p) == pytest.approx(mean_expect, rel=0.01)
    # normalized powers are unit exponential
    stat = kstest(p / mean_expect, "expon")
    assert stat.pvalue > 0.01


def test_on_bin_tone_power_is_a_squared_units():
    # tone at amplitude a concentrates a^2 in its bin (power-normalized FFT)
    sigma, k, amp = 1.0, 500, 30.0
    a = amp * unit_amplitude(sigma, FS)
    t = np.arange(N)
    z = _awgn(FRAME_SECONDS, sigma=sigma) + (
        a * np.exp(2j * np.pi * k * t / N)).astype(np.complex64)
    frames = list(channelize(z, FS))
    noise_bin = 2.0 * sigma * sigma / N
    snr = frames[0].bin_powers[k] / noise_bin
    assert snr == pytest.approx(amp * amp, rel=0.2)


def test_straddle_tone_splits_power():
    # a tone half way between bins scallops to (2/pi)^2 in each neighbor
    sigma, amp = 0.001, 1.0
    f = (500 + 0.5) / FRAME_SECONDS
    t = np.arange(N)
    a = amp * np.sqrt(2.0 / N)
    z = (a * np.exp(2j * np.pi * f * t / FS)).astype(np.complex64)
    frames = list(channelize(z, FS))
    p = frames[0].bin_powers
    expect = (2.0 / np.pi) ** 2 * a * a
    assert p[500] == pytest.approx(expect, rel=0.01)
    assert p[501] == pytest.approx(expect, rel=0.01)


def test_segment_means_oracle():
    rng = np.random.default_rng(9)
    p = rng.exponential(1.0, 1000)
    sm = segment_means(p, 256)
    assert len(sm) == 4
    assert sm[0] == pytest.approx(p[:256].mean())
    assert sm[3] == pytest.approx(p[768:].mean())   # partial tail: 232 bins


def test_estimate_noise_exact_oracle():
    rng = np.random.default_rng(11)
    hist = [rng.exponential(2.0, 1024) for _ in range(4)]
    est = estimate_noise(hist, bin_index=300)
    expect = np.mean([h[256:512] for h in hist])
    assert est == pytest.approx(expect, rel=1e-12)
    with pytest.raises(ValueError):
        estimate_noise(hist[:3], bin_index=0)


def test_estimate_noise_error_scale():
    # 256 bins x 4 frames averages to ~3% relative error on flat AWGN
    rng = np.random.default_rng(12)
    true = 2.0
    errs = []
    for _ in range(300):
        hist = [rng.exponential(true, 256) for _ in range(4)]
        errs.append(estimate_noise(hist, bin_index=10, segment_bins=256) / true - 1.0)
    errs = np.array(errs)
    assert abs(np.mean(errs)) < 0.01
    assert 0.02 < np.std(errs) < 0.045


def test_compute_snr_hand_values():
    single, comp = compute_snr(10.0, 1.0, window_powers=[10.0, 2.0, 3.0])
    assert single == pytest.approx(10.0)
    assert comp == pytest.approx(10.0 * math.log10(15.0))
    single2, comp2 = compute_snr(5.0, 2.0)
    assert single2 == pytest.approx(10.0 * math.log10(2.5))
    assert comp2 is None


# ---------------------------------------------------------------------------
# detection semantics (constructed spectra, no FFT)
# ---------------------------------------------------------------------------

SITE = get_site("desk")


def _flat_spectra(n_frames, n_bins=1024, spikes=()):
    """Unit-power frames; spikes = [(frame, bin, power), ...]."""
    day = FRAME_SECONDS / 86400.0
    frames = []
    for i in range(n_frames):
        p = np.ones(n_bins)
        for fi, bi, val in spikes:
            if fi == i:
                p[bi] = val
        frames.append(FrameSpectrum(i, 58345.0 + i * day, p))
    return frames


def _detect(spectra, **kw):
    args = dict(sample_rate=FS, center_rf_hz=1.0e9, site=SITE, polarization="R")
    args.update(kw)
    return detect_events(spectra, **args)


def test_single_spike_gives_exactly_one_event():
    events = _detect(_flat_spectra(12, spikes=[(7, 300, 40.0)]))
    assert len(events) == 1
    e = events[0]
    assert e.bin_index == 300
    assert e.mjd == pytest.approx(58345.0 + 7 * FRAME_SECONDS / 86400.0)
    # the spike inflates its own segment mean: nhat = (3 + (1023+40)/1024)/4
    nhat = (3.0 + (255 + 40.0) / 256.0) / 4.0
    assert e.snr_single_db == pytest.approx(10 * math.log10(40.0 / nhat), abs=1e-9)
    assert e.snr_comp_db == pytest.approx(10 * math.log10(42.0 / nhat), abs=1e-9)


def test_event_frequency_uses_fft_order():
    n_bins = 1024
    hi_bin = 900   # above n/2: negative offset from center
    events = _detect(_flat_spectra(12, n_bins=n_bins, spikes=[(7, hi_bin, 40.0)]))
    freqs = bin_frequencies(FS, n_bins)
    assert freqs[hi_bin] < 0
    assert events[0].rf_freq_hz == pytest.approx(1.0e9 + freqs[hi_bin])


def test_no_events_during_priming():
    # frames 0-2 only prime the noise history and never enter a ratio window
    events = _detect(_flat_spectra(12, spikes=[(2, 300, 40.0)]))
    assert events == []
    # frame 3 is the earliest frame that can carry an event, and its window
    # is only complete once frame 5 has arrived
    assert _detect(_flat_spectra(5, spikes=[(3, 300, 40.0)])) == []
    events = _detect(_flat_spectra(6, spikes=[(3, 300, 40.0)]))
    assert len(events) == 1
    assert events[0].mjd == pytest.approx(58345.0 + 3 * FRAME_SECONDS / 86400.0)


def test_composite_catches_frame_straddling_pulse():
    # two consecutive frames at ~11.3 dB each: single threshold met, and the
    # summed window clears the composite cut
    val = 13.5
    events = _detect(_flat_spectra(14, spikes=[(8, 300, val), (9, 300, val)]))
    assert len(events) == 1
    assert events[0].bin_index == 300


def test_all_frames_below_single_threshold_never_fires():
    # 10.9 dB in every frame: the summed power clears the composite threshold
    # but no frame clears the single threshold
    val = 10.0 ** 1.09
    spikes = [(i, 300, val) for i in range(5, 11)]
    events = _detect(_flat_spectra(14, spikes=spikes))
    assert events == []


def test_comp_only_window_needs_both_thresholds():
    # single-frame 11.5 dB spike whose window sum stays below 11.8 dB: no event
    val = 10.0 ** 1.15   # 14.1; window sum 16.1 -> 12.1 dB... clears.  Use
    # a weaker one: 11.05 dB -> 12.7; sum 14.7 -> 11.7 dB < 11.8
    val = 10.0 ** 1.105
    events = _detect(_flat_spectra(14, spikes=[(8, 300, val)]))
    assert events == []


def test_dedupe_keeps_strongest_window():
    # one spike qualifies through three windows; all stamp the same peak frame
    events = _detect(_flat_spectra(16, spikes=[(8, 300, 40.0)]))
    keys = [(e.bin_index, e.mjd) for e in events]
    assert len(keys) == len(set(keys)) == 1


def test_two_separate_pulses_two_events():
    events = _detect(_flat_spectra(20, spikes=[(8, 300, 40.0), (15, 700, 40.0)]))
    assert len(events) == 2
    assert sorted(e.bin_index for e in events) == [300, 700]


def test_detection_thresholds_config():
    # raising the single threshold above the spike's SNR suppresses it
    spectra = _flat_spectra(12, spikes=[(7, 300, 14.0)])
    assert len(_detect(spectra)) == 1
    spectra = _flat_spectra(12, spikes=[(7, 300, 14.0)])
    assert _detect(spectra, single_min_db=12.0) == []


# ---------------------------------------------------------------------------
# sidereal timing and Doppler
# ---------------------------------------------------------------------------


def test_mjd_to_ra_reference_rows():
    gb = get_site("green_bank")
    assert mjd_to_ra(58345.5380613, gb) == pytest.approx(5.183775, abs=0.01)
    assert mjd_to_ra(58346.5382031, gb) == pytest.approx(5.252898, abs=0.01)


def test_sidereal_slope():
    gb = get_site("green_bank")
    slope = (mjd_to_ra(58346.0, gb) - mjd_to_ra(58345.0, gb)) % 24.0
    assert slope == pytest.approx(SIDEREAL_HOURS_PER_DAY - 24.0, abs=1e-6)


def test_gmst_range():
    for mjd in np.linspace(58000.0, 59000.0, 50):
        assert 0.0 <= gmst_degrees(mjd) < 360.0


def _v_los_vector_oracle(mjd, site, ra_hours, dec_deg):
    """Independent line-of-sight speed: (omega x r) . u in equatorial frame."""
    theta = math.radians(gmst_degrees(mjd) + site.longitude_deg)
    phi = math.radians(site.latitude_deg)
    v = EARTH_EQUATORIAL_SPEED_M_S * math.cos(phi) * np.array(
        [-math.sin(theta), math.cos(theta), 0.0])
    alpha = math.radians(ra_hours * 15.0)
    delta = math.radians(dec_deg)
    u = np.array([math.cos(delta) * math.cos(alpha),
                  math.cos(delta) * math.sin(alpha),
                  math.sin(delta)])
    return float(np.dot(v, u))


def test_v_los_matches_vector_oracle():
    gb = get_site("green_bank")
    hw = get_site("haswell")
    for mjd in np.linspace(58345.0, 58346.0, 17):
        ra_point = mjd_to_ra(mjd, gb)
        for site in (gb, hw):
            mine = ch._v_los(mjd, site, ra_point, -7.6)
            oracle = _v_los_vector_oracle(mjd, site, ra_point, -7.6)
            assert mine == pytest.approx(oracle, abs=1e-9)


def test_doppler_reference_site_unchanged():
    gb = get_site("green_bank")
    assert doppler_compensate(1.42e9, 58345.3, gb, gb) == 1.42e9


def test_doppler_shift_bounded_and_present():
    gb = get_site("green_bank")
    hw = get_site("haswell")
    f = 1.42e9
    bound = f * 2 * EARTH_EQUATORIAL_SPEED_M_S / SPEED_OF_LIGHT_M_S
    shifts = [abs(doppler_compensate(f, mjd, hw, gb) - f)
              for mjd in np.linspace(58345.0, 58346.0, 33)]
    assert max(shifts) <= bound
    assert max(shifts) > 100.0   # the sites' rotations genuinely differ


def test_doppler_round_trip_scale():
    # compensation is a pure rescale: linear in frequency
    gb, hw = get_site("green_bank"), get_site("haswell")
    f1 = doppler_compensate(1.0e9, 58345.25, hw, gb)
    f2 = doppler_compensate(2.0e9, 58345.25, hw, gb)
    assert f2 == pytest.approx(2.0 * f1, rel=1e-12)


# ---------------------------------------------------------------------------
# event files
# ---------------------------------------------------------------------------


def _event(mjd, bin_index=100, freq=1.42e9, snr=12.0):
    return SpectralEvent(site_id="desk", polarization="R", mjd=mjd,
                         rf_freq_hz=freq, snr_single_db=snr, snr_comp_db=snr + 0.5,
                         bin_index=bin_index, ra_hours=5.25)


def test_rotation_window_boundaries():
    w = 1.0 / 6.0   # 4 h in days
    assert rotation_window(58345.0) == rotation_window(58345.0 + 0.99 * w)
    assert rotation_window(58345.0 + w) == rotation_window(58345.0) + 1


def test_event_files_round_trip(tmp_path):
    events = [_event(58345.01), _event(58345.02, bin_index=200)]
    paths = write_event_files(events, tmp_path, site_id="desk", polarization="R",
                              header_fields={"n_frames": "100"},
                              config_lines=["a.b = 1"])
    assert len(paths) == 1
    ef = read_event_file(paths[0])
    assert ef.meta["n_frames"] == "100"
    assert ef.meta["site_id"] == "desk"
    assert ef.config_text == "a.b = 1"
    assert len(ef.events) == 2
    got = ef.events[0]
    assert got.mjd == pytest.approx(58345.01, abs=1e-7)
    assert got.bin_index == 100
    assert got.rf_freq_hz == pytest.approx(1.42e9, abs=1e-4)


def test_event_files_split_on_window_boundary(tmp_path):
    w = 1.0 / 6.0
    events = [_event(58345.0 + 0.5 * w), _event(58345.0 + 1.5 * w)]
    paths = write_event_files(events, tmp_path, site_id="x", polarization="L")
    assert len(paths) == 2
    names = sorted(p.name for p in paths)
    assert all(n.startswith("events_x_L_w") for n in names)


def test_empty_event_file_header_only(tmp_path):
    paths = write_event_files([], tmp_path, site_id="desk", polarization="R",
                              start_mjd=58345.0)
    assert len(paths) == 1
    ef = read_event_file(paths[0])
    assert ef.events == []
    assert ef.meta["window"] == str(rotation_window(58345.0))


def test_write_event_rows_round_trip(tmp_path):
    events = [_event(58345.01 + i * 1e-4, bin_index=i) for i in range(5)]
    path = write_event_rows(tmp_path / "kept.csv", events,
                            header_fields={"n_frames": "7"})
    ef = read_event_file(path)
    assert len(ef.events) == 5
    assert ef.meta["n_frames"] == "7"


def test_read_event_file_rejects_other_files(tmp_path):
    bad = tmp_path / "x.csv"
    bad.write_text("not an event file\n")
    with pytest.raises(ValueError):
        read_event_file(bad)
