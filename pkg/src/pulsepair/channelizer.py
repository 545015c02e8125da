"""FFT channelization and threshold detection for 3.7 Hz spectral events.

A frame is 0.27 s of complex baseband; its unwindowed FFT gives one power
spectrum per frame (rectangular weighting is the matched filter for bursts
that fill a whole frame).  Detection applies two thresholds against a local
noise estimate: the single-frame SNR and a three-frame composite SNR, where
the composite power is the summed bin power of three consecutive processed
frames referenced to one frame's noise power.  Events are stamped at the
frame where the single-frame SNR peaks inside the qualifying window, so one
short pulse yields one event even though up to three overlapping windows
cross threshold.
"""

from __future__ import annotations

import logging
import math
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.fft

from .constants import (EARTH_EQUATORIAL_SPEED_M_S, SEGMENT_BINS,
                        SPEED_OF_LIGHT_M_S, SiteGeometry, frame_length)
from .synth import SampleBlock

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

# Storage thresholds, dB.  Defaults everywhere; override via config.
SNR_SINGLE_MIN_DB = 11.0
SNR_COMP_MIN_DB = 11.8

NOISE_FRAMES = 4  # frames averaged for the noise floor estimate

EVENT_FILE_MAGIC = "#pulsepair-events v1"
ROTATION_DAYS = 4.0 / 24.0  # event files roll every 4 h, UTC-aligned

_EVENT_COLUMNS = ("site_id", "polarization", "mjd", "rf_freq_hz",
                  "snr_single_db", "snr_comp_db", "bin_index", "ra_hours")


@dataclass
class FrameSpectrum:
    """Per-bin power for one processed frame.

    Powers are normalized so that pure AWGN gives an expected bin power
    equal to the noise power in one 3.7 Hz channel (|FFT|^2 / N^2).
    """

    frame_index: int
    mjd_start: float
    bin_powers: np.ndarray


@dataclass(frozen=True)
class SpectralEvent:
    site_id: str
    polarization: str
    mjd: float
    rf_freq_hz: float
    snr_single_db: float
    snr_comp_db: float
    bin_index: int
    ra_hours: float


def duty_stride(duty_cycle: float) -> int:
    """Map a receive duty cycle to a frame stride (0.25 -> every 4th frame)."""
    if not 0.0 < duty_cycle <= 1.0:
        raise ValueError(f"duty_cycle {duty_cycle} outside (0, 1]")
    return max(1, int(round(1.0 / duty_cycle)))


def bin_frequencies(sample_rate: float, n_bins: int) -> np.ndarray:
    """Baseband frequency of each FFT bin, Hz."""
    return np.fft.fftfreq(n_bins, d=1.0 / sample_rate)


def _frames_from(samples) -> Iterator[np.ndarray]:
    if isinstance(samples, np.ndarray):
        yield samples
        return
    for b in samples:
        yield b.samples if isinstance(b, SampleBlock) else np.asarray(b)


def channelize(samples, sample_rate: float, *, start_mjd: float = 0.0,
               duty_cycle: float = 1.0, workers: int = 1) -> Iterator[FrameSpectrum]:
    """Chop a sample stream into frames and FFT the ones on duty.

    ``samples`` may be a single array, or an iterable of arrays /
    :class:`SampleBlock`.  Frame boundaries are counted from the start of
    the stream regardless of block boundaries; a trailing partial frame is
    discarded (logged at debug level).  Frame indices always count *all*
    frames, so at duty 0.25 the yielded indices are 0, 4, 8, ...
    """
    n = frame_length(sample_rate)
    stride = duty_stride(duty_cycle)
    frame_days = n / sample_rate / 86400.0

    def spectrum(idx: int, frame: np.ndarray) -> FrameSpectrum:
        x = scipy.fft.fft(frame)
        p = np.abs(x).astype(np.float64)
        p *= p
        p /= float(n) * float(n)
        return FrameSpectrum(idx, start_mjd + idx * frame_days, p)

    def frames() -> Iterator[tuple[int, np.ndarray]]:
        buf: list[np.ndarray] = []
        buffered = 0
        idx = 0
        for chunk in _frames_from(samples):
            buf.append(chunk)
            buffered += len(chunk)
            while buffered >= n:
                flat = np.concatenate(buf) if len(buf) > 1 else buf[0]
                frame, rest = flat[:n], flat[n:]
                buf = [rest] if len(rest) else []
                buffered = len(rest)
                if idx % stride == 0:
                    yield idx, np.ascontiguousarray(frame)
                idx += 1
        if buffered:
            log.debug("discarding %d-sample partial trailing frame", buffered)

    if workers <= 1:
        for idx, frame in frames():
            yield spectrum(idx, frame)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        window: deque = deque()
        for idx, frame in frames():
            window.append(pool.submit(spectrum, idx, frame))
            if len(window) > workers + 2:
                yield window.popleft().result()
        while window:
            yield window.popleft().result()


# ---------------------------------------------------------------------------
# noise estimation and SNR
# ---------------------------------------------------------------------------


def segment_means(bin_powers: np.ndarray, segment_bins: int = SEGMENT_BINS) -> np.ndarray:
    """Mean bin power of each spectral segment (256-bin tiling).

    The band is tiled from bin 0; a final partial segment averages whatever
    bins remain.
    """
    n = len(bin_powers)
    full = n // segment_bins
    out = np.empty(full + (1 if n % segment_bins else 0), dtype=np.float64)
    if full:
        out[:full] = bin_powers[:full * segment_bins].reshape(full, segment_bins).mean(axis=1)
    if n % segment_bins:
        out[full] = bin_powers[full * segment_bins:].mean()
    return out


def estimate_noise(history: Sequence[np.ndarray], bin_index: int,
                   segment_bins: int = SEGMENT_BINS,
                   n_frames: int = NOISE_FRAMES) -> float:
    """Noise power in one 3.7 Hz channel, from the segment containing a bin.

    Averages the ~950 Hz segment (256 contiguous bins) that contains
    ``bin_index`` over the ``n_frames`` most recent frames; dividing the
    segment total by its bin count is the bandwidth-ratio scaling back down
    to a single channel.  Requires at least ``n_frames`` frames of history.
    """
    if len(history) < n_frames:
        raise ValueError(f"noise estimate needs >= {n_frames} frames, got {len(history)}")
    recent = history[-n_frames:]
    nbins = len(recent[0])
    if not 0 <= bin_index < nbins:
        raise IndexError(f"bin_index {bin_index} outside 0..{nbins - 1}")
    s = (bin_index // segment_bins) * segment_bins
    e = min(s + segment_bins, nbins)
    return float(np.mean([np.asarray(p[s:e], dtype=np.float64).mean() for p in recent]))


def compute_snr(bin_power: float, noise: float,
                window_powers: Sequence[float] | None = None) -> tuple[float, float | None]:
    """(single-frame SNR, composite SNR) in dB.

    Both are measured (S+N)/N ratios -- noise is never subtracted.  The
    composite uses the summed power of the (normally three) window frames
    against the same one-frame noise estimate, so a pulse split across two
    frames keeps its full energy in the composite measure.
    """
    single = 10.0 * math.log10(bin_power / noise)
    comp = None
    if window_powers is not None:
        comp = 10.0 * math.log10(float(np.sum(window_powers)) / noise)
    return single, comp


def detect_events(spectra: Iterable[FrameSpectrum], *, sample_rate: float,
                  center_rf_hz: float, site: SiteGeometry, polarization: str,
                  reference: SiteGeometry | None = None,
                  single_min_db: float = SNR_SINGLE_MIN_DB,
                  comp_min_db: float = SNR_COMP_MIN_DB,
                  segment_bins: int = SEGMENT_BINS) -> list[SpectralEvent]:
    """Scan a spectrum stream and return threshold-crossing events.

    A window of three consecutive processed frames qualifies when its
    composite SNR meets ``comp_min_db`` and any frame in the window meets
    ``single_min_db``; the event lands on the peak single-SNR frame of the
    window.  The first few frames only prime the noise estimator (4 frames)
    and the composite window, so nothing can be emitted before then.
    """
    ref = reference or site
    alpha = 10.0 ** (single_min_db / 10.0)
    beta = 10.0 ** (comp_min_db / 10.0)
    freqs = None
    seg_idx = None

    powers: deque = deque(maxlen=NOISE_FRAMES)          # (frame, mjd, p, seg_means)
    ratios: deque = deque(maxlen=3)                     # (frame, mjd, p/noise)
    best: dict[tuple[int, int], SpectralEvent] = {}

    for fs in spectra:
        p = fs.bin_powers
        if freqs is None:
            freqs = bin_frequencies(sample_rate, len(p))
            seg_idx = np.arange(len(p)) // segment_bins
        powers.append((fs.frame_index, fs.mjd_start, p, segment_means(p, segment_bins)))
        if len(powers) < NOISE_FRAMES:
            continue
        nhat_seg = np.mean([sm for (_, _, _, sm) in powers], axis=0)
        nhat = nhat_seg[seg_idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios.append((fs.frame_index, fs.mjd_start, p / nhat))
        if len(ratios) < 3:
            continue
        sum3 = powers[-3][2] + powers[-2][2] + powers[-1][2]
        with np.errstate(divide="ignore", invalid="ignore"):
            comp_ratio = sum3 / nhat
        rstack = np.stack([r for (_, _, r) in ratios])
        rmax = rstack.max(axis=0)
        hit = (comp_ratio >= beta) & (rmax >= alpha)
        if not hit.any():
            continue
        for b in np.nonzero(hit)[0]:
            k = int(np.argmax(rstack[:, b]))
            frame_k, mjd_k, _ = ratios[k]
            single_db = 10.0 * math.log10(rstack[k, b])
            comp_db = 10.0 * math.log10(comp_ratio[b])
            key = (int(b), frame_k)
            prev = best.get(key)
            if prev is None or comp_db > prev.snr_comp_db:
                best[key] = SpectralEvent(
                    site_id=site.site_id, polarization=polarization,
                    mjd=mjd_k, rf_freq_hz=center_rf_hz + float(freqs[b]),
                    snr_single_db=single_db, snr_comp_db=comp_db,
                    bin_index=int(b), ra_hours=mjd_to_ra(mjd_k, ref))
    return sorted(best.values(), key=lambda e: (e.mjd, e.bin_index))


# ---------------------------------------------------------------------------
# sidereal timing and Earth-rotation Doppler
# ---------------------------------------------------------------------------


def gmst_degrees(mjd: float) -> float:
    """Greenwich mean sidereal time, degrees, from the IAU polynomial fit."""
    d = mjd + 2400000.5 - 2451545.0
    t = d / 36525.0
    theta = 280.46061837 + 360.98564736629 * d + t * t * (0.000387933 - t / 38710000.0)
    return theta % 360.0


def mjd_to_ra(mjd: float, site: SiteGeometry) -> float:
    """RA (hours) on the site's meridian at this instant: the local sidereal time.

    For an azimuth-180 transit instrument the pointing RA *is* the LST, so
    this is the RA coordinate attached to every event.
    """
    return ((gmst_degrees(mjd) + site.longitude_deg) % 360.0) / 15.0


def _v_los(mjd: float, site: SiteGeometry, pointing_ra_hours: float,
           pointing_dec_deg: float) -> float:
    """Line-of-sight Earth-rotation speed toward the pointing, m/s (+ = approaching)."""
    lst_h = mjd_to_ra(mjd, site)
    hour_angle = math.radians((lst_h - pointing_ra_hours) * 15.0)
    return (-EARTH_EQUATORIAL_SPEED_M_S * math.cos(math.radians(site.latitude_deg))
            * math.cos(math.radians(pointing_dec_deg)) * math.sin(hour_angle))


def doppler_compensate(rf_freq_hz: float, mjd: float, site: SiteGeometry,
                       reference: SiteGeometry) -> float:
    """Shift an observed frequency to the reference site's rotational frame.

    The hypothetical source sits on the reference site's meridian (its
    pointing direction) at this MJD.  Each site's rotational velocity is
    projected onto that direction and the differential shift removed:
    f -> f * (1 - (v_site - v_ref)/c).  For the reference site itself the
    projection is zero (hour angle 0), so the correction is bounded by
    f * 465 m/s / c for any pair of sites.
    """
    if site.site_id == reference.site_id:
        return rf_freq_hz
    ra_point = mjd_to_ra(mjd, reference)
    dec = reference.pointing_dec_deg
    dv = _v_los(mjd, site, ra_point, dec) - _v_los(mjd, reference, ra_point, dec)
    return rf_freq_hz * (1.0 - dv / SPEED_OF_LIGHT_M_S)


# ---------------------------------------------------------------------------
# event files: CSV with a hyperparameter header line, rolled every 4 h UTC
# ---------------------------------------------------------------------------


def rotation_window(mjd: float) -> int:
    """Index of the 4-hour UTC-aligned window containing this MJD."""
    return int(math.floor(mjd / ROTATION_DAYS))


def _format_event(e: SpectralEvent) -> str:
    return (f"{e.site_id},{e.polarization},{e.mjd:.7f},{e.rf_freq_hz:.4f},"
            f"{e.snr_single_db:.3f},{e.snr_comp_db:.3f},{e.bin_index},{e.ra_hours:.6f}")


def write_event_files(events: Sequence[SpectralEvent], out_dir, *,
                      site_id: str, polarization: str,
                      header_fields: dict | None = None,
                      config_lines: Sequence[str] = (),
                      start_mjd: float | None = None) -> list[Path]:
    """Write events into per-window CSV files (4 h UTC rotation).

    An empty event list still produces a header-only file for the window
    containing ``start_mjd`` when that is given.  Header line carries the
    format version plus sorted key=value hyperparameters; the resolved run
    config follows as ``#cfg`` comment lines.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict[int, list[SpectralEvent]] = {}
    for e in events:
        groups.setdefault(rotation_window(e.mjd), []).append(e)
    if not groups and start_mjd is not None:
        groups[rotation_window(start_mjd)] = []
    paths = []
    for w in sorted(groups):
        path = out_dir / f"events_{site_id}_{polarization}_w{w}.csv"
        fields = dict(header_fields or {})
        fields.update(site_id=site_id, polarization=polarization, window=w,
                      window_start_mjd=f"{w * ROTATION_DAYS:.6f}")
        kv = " ".join(f"{k}={fields[k]}" for k in sorted(fields))
        with open(path, "w") as f:
            f.write(f"{EVENT_FILE_MAGIC} {kv}\n")
            for line in config_lines:
                f.write(f"#cfg {line}\n")
            f.write(",".join(_EVENT_COLUMNS) + "\n")
            for e in sorted(groups[w], key=lambda e: (e.mjd, e.bin_index)):
                f.write(_format_event(e) + "\n")
        paths.append(path)
    return paths


def write_event_rows(path, events: Sequence[SpectralEvent], *,
                     header_fields: dict | None = None,
                     config_lines: Sequence[str] = ()) -> Path:
    """Write one event CSV without window grouping (filtered-output files)."""
    path = Path(path)
    fields = dict(header_fields or {})
    kv = " ".join(f"{k}={fields[k]}" for k in sorted(fields))
    with open(path, "w") as f:
        f.write((EVENT_FILE_MAGIC + " " + kv).rstrip() + "\n")
        for line in config_lines:
            f.write(f"#cfg {line}\n")
        f.write(",".join(_EVENT_COLUMNS) + "\n")
        for e in sorted(events, key=lambda e: (e.mjd, e.bin_index)):
            f.write(_format_event(e) + "\n")
    return path


@dataclass
class EventFile:
    path: Path
    meta: dict[str, str]
    config_text: str
    events: list[SpectralEvent]


def read_event_file(path) -> EventFile:
    path = Path(path)
    meta: dict[str, str] = {}
    cfg: list[str] = []
    events: list[SpectralEvent] = []
    with open(path) as f:
        first = f.readline().rstrip("\n")
        if not first.startswith(EVENT_FILE_MAGIC):
            raise ValueError(f"{path}: not an event file (header {first[:40]!r})")
        for tok in first[len(EVENT_FILE_MAGIC):].split():
            k, _, v = tok.partition("=")
            meta[k] = v
        for line in f:
            line = line.rstrip("\n")
            if line.startswith("#cfg "):
                cfg.append(line[5:])
                continue
            if not line or line.startswith("site_id,") or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != len(_EVENT_COLUMNS):
                raise ValueError(f"{path}: malformed event row {line!r}")
            events.append(SpectralEvent(
                site_id=parts[0], polarization=parts[1], mjd=float(parts[2]),
                rf_freq_hz=float(parts[3]), snr_single_db=float(parts[4]),
                snr_comp_db=float(parts[5]), bin_index=int(parts[6]),
                ra_hours=float(parts[7])))
    return EventFile(path, meta, "\n".join(cfg), events)
