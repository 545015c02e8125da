"""Independent Monte Carlo oracles for the detection chain.

These deliberately re-derive the detection and calibration semantics with
different code structure from the production modules, so agreement between
the two is evidence about the semantics rather than about shared code.
Spectra are drawn directly in the power domain (iid exponential bin powers,
the AWGN null), bypassing time-domain synthesis and the FFT.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .channelizer import (FrameSpectrum, NOISE_FRAMES, SNR_COMP_MIN_DB,
                          SNR_SINGLE_MIN_DB)
from .constants import FRAME_SECONDS, SEGMENT_BINS

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())


@dataclass(frozen=True)
class McRate:
    """A Monte Carlo counting result with its Poisson standard error."""

    count: int
    n_bin_frames: int

    @property
    def rate(self) -> float:
        return self.count / self.n_bin_frames

    @property
    def sigma(self) -> float:
        return math.sqrt(max(self.count, 1)) / self.n_bin_frames

    def z_score(self, other: "McRate") -> float:
        """Difference between two rates in combined standard errors."""
        return (self.rate - other.rate) / math.hypot(self.sigma, other.sigma)


def draw_noise_spectra(n_frames: int, n_bins: int, *, seed: int,
                       noise_power: float = 1.0,
                       start_mjd: float = 60000.0) -> Iterator[FrameSpectrum]:
    """Yield frames of iid exponential bin powers (the AWGN power null).

    Each frame gets its own counter-based stream keyed by (seed, frame), so
    two consumers with the same arguments see identical data.
    """
    day = FRAME_SECONDS / 86400.0
    for i in range(n_frames):
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence([seed, i])))
        p = rng.exponential(noise_power, n_bins)
        yield FrameSpectrum(frame_index=i, mjd_start=start_mjd + i * day,
                            bin_powers=p)


def crossing_count_oracle(spectra: Iterable[FrameSpectrum], *,
                          single_min_db: float = SNR_SINGLE_MIN_DB,
                          comp_min_db: float = SNR_COMP_MIN_DB,
                          segment_bins: int = SEGMENT_BINS) -> McRate:
    """Count threshold-crossing events with an independent implementation.

    Same contract as the production detector: noise is the mean bin power of
    the event's 256-bin segment over the 4 most recent frames, a 3-frame
    window qualifies when its summed power clears the composite threshold
    and any member frame clears the single threshold, the event lands on
    the peak frame, and (bin, peak frame) occurs at most once.
    """
    a = 10.0 ** (single_min_db / 10.0)
    b = 10.0 ** (comp_min_db / 10.0)
    power_rows: list[np.ndarray] = []      # last 4 frames
    segmean_rows: list[np.ndarray] = []
    ratio_rows: list[tuple[int, np.ndarray]] = []   # last 3 (frame, ratio)
    seen: set[tuple[int, int]] = set()
    n_frames = 0
    n_bins = 0

    for fs in spectra:
        n_frames += 1
        p = np.asarray(fs.bin_powers, dtype=np.float64)
        n_bins = len(p)
        n_full = (n_bins // segment_bins) * segment_bins
        sm = p[:n_full].reshape(-1, segment_bins).mean(axis=1)
        if n_full < n_bins:
            sm = np.append(sm, p[n_full:].mean())
        power_rows.append(p)
        segmean_rows.append(sm)
        if len(power_rows) > NOISE_FRAMES:
            power_rows.pop(0)
            segmean_rows.pop(0)
        if len(power_rows) < NOISE_FRAMES:
            continue
        nhat_seg = (segmean_rows[0] + segmean_rows[1]
                    + segmean_rows[2] + segmean_rows[3]) / 4.0
        reps = [segment_bins] * (n_full // segment_bins)
        if n_full < n_bins:
            reps.append(n_bins - n_full)
        nhat = np.repeat(nhat_seg, reps)
        ratio_rows.append((fs.frame_index, p / nhat))
        if len(ratio_rows) > 3:
            ratio_rows.pop(0)
        if len(ratio_rows) < 3:
            continue
        (f0, r0), (f1, r1), (f2, r2) = ratio_rows
        comp = (power_rows[-3] + power_rows[-2] + power_rows[-1]) / nhat
        hit = (comp >= b) & (np.maximum(np.maximum(r0, r1), r2) >= a)
        for bin_ix in np.flatnonzero(hit):
            if r0[bin_ix] >= r1[bin_ix] and r0[bin_ix] >= r2[bin_ix]:
                peak = f0
            elif r1[bin_ix] >= r2[bin_ix]:
                peak = f1
            else:
                peak = f2
            seen.add((int(bin_ix), peak))
    return McRate(len(seen), n_frames * n_bins)


def crossing_count_production(spectra: Iterable[FrameSpectrum], *,
                              single_min_db: float = SNR_SINGLE_MIN_DB,
                              comp_min_db: float = SNR_COMP_MIN_DB,
                              segment_bins: int = SEGMENT_BINS) -> McRate:
    """Run the production detector over a spectrum stream and count events."""
    from .channelizer import detect_events
    from .constants import get_site

    site = get_site("desk")
    n_frames = 0
    n_bins = 0

    def counted():
        nonlocal n_frames, n_bins
        for fs in spectra:
            n_frames += 1
            n_bins = len(fs.bin_powers)
            yield fs

    events = detect_events(counted(), sample_rate=1.0e6, center_rf_hz=0.0,
                           site=site, polarization="R",
                           single_min_db=single_min_db,
                           comp_min_db=comp_min_db, segment_bins=segment_bins)
    return McRate(len(events), n_frames * n_bins)


def single_window_rate(single_min_db: float = SNR_SINGLE_MIN_DB,
                       comp_min_db: float = SNR_COMP_MIN_DB) -> float:
    """Closed-form qualification probability for one fixed 3-frame window.

    exp(-b) (1 + (b-a) + (b-a)^2/2) with thresholds in linear power units.
    This undercounts the deduped event rate: a peak frame can qualify
    through any of the three windows containing it, and the estimated
    (rather than known) noise floor adds a convexity correction.  Use the
    Monte Carlo oracle when the exact event rate matters.
    """
    a = 10.0 ** (single_min_db / 10.0)
    b = 10.0 ** (comp_min_db / 10.0)
    if b <= a:
        return math.exp(-a)
    d = b - a
    return math.exp(-b) * (1.0 + d + d * d / 2.0)


# ---------------------------------------------------------------------------
# frequency-interarrival oracle
# ---------------------------------------------------------------------------


class SyntheticEvent(NamedTuple):
    """Minimal event stand-in for calibration tests (mjd + frequency)."""

    mjd: float
    rf_freq_hz: float


def draw_poisson_events(*, n_frames: int, bandwidth_hz: float,
                        events_per_frame: float, seed: int,
                        start_mjd: float = 60000.0) -> list[SyntheticEvent]:
    """Uniform Poisson event population: per-frame counts, uniform frequencies."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed])))
    out = []
    day = FRAME_SECONDS / 86400.0
    for i in range(n_frames):
        k = rng.poisson(events_per_frame)
        for f in rng.uniform(0.0, bandwidth_hz, k):
            out.append(SyntheticEvent(start_mjd + i * day, float(f)))
    return out


def df50_mc(*, n_frames: int = 2000, bandwidth_hz: float = 1.0e6,
            events_per_frame: float = 150.0, seed: int = 7) -> dict:
    """Empirical vs analytic frequency-interarrival median on a uniform null.

    Returns the calibration result plus the agreement ratio; the analytic
    value is ln2 / (events per frame per Hz).  Within-frame spacings carry
    an O(1/k) downward bias against the open-ended Poisson analytic, so the
    default density is high enough to sit well inside the 3% band.
    """
    from .stats import calibrate_df50

    events = draw_poisson_events(n_frames=n_frames, bandwidth_hz=bandwidth_hz,
                                 events_per_frame=events_per_frame, seed=seed)
    cal = calibrate_df50(events, n_frames=n_frames, bandwidth_hz=bandwidth_hz)
    return {"empirical_df50_hz": cal.empirical_df50_hz,
            "analytic_df50_hz": cal.analytic_df50_hz,
            "agreement": cal.agreement, "n_gaps": cal.n_frequency_gaps}


def rice_ratio_check(r: float, s: float) -> dict:
    """Cross-check the scaled-Bessel density ratio against plain np.i0.

    Only valid where np.i0 does not overflow (r*s below ~700); the scaled
    form is exact everywhere.
    """
    from .stats import rice_rayleigh_ratio

    scaled = rice_rayleigh_ratio(r, s)
    direct = math.exp(-s * s / 2.0) * float(np.i0(r * s))
    return {"scaled": scaled, "direct": direct,
            "rel_diff": abs(scaled - direct) / direct}
