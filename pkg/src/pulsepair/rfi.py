"""Machine RFI excision over stored spectral events.

Four processes, all computed from the *raw* event list so that the kept set
is a pure function of (input file, config) and independent of the order the
processes are applied in:

* persistent  -- segments (256-bin, ~950 Hz) whose event count over the file
  window is anomalously high versus the AWGN expectation.
* dynamic     -- a first-order IIR filter of event SNR per segment; while the
  filtered level exceeds threshold the segment is masked in time.
* harmonic    -- events within +-25 kHz (inclusive) of a multiple of 500 kHz.
* static      -- configured always-bad bands for a given receiver.

Every dropped event is attributed to exactly one process (first match in the
application order) and leaves one ``drop`` audit record; every IIR update
leaves an ``update`` record.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import quad

from .channelizer import SNR_COMP_MIN_DB, SNR_SINGLE_MIN_DB, SpectralEvent, bin_frequencies
from .constants import SEGMENT_BINS, frame_length

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

PROCESSES = ("persistent", "dynamic", "harmonic", "static")

EXCISED_FRACTION_WARN = 0.20


@dataclass(frozen=True)
class ExcisionConfig:
    static_bands: tuple[tuple[float, float], ...] = ()
    persistent_factor: float = 10.0
    # Floor on the persistent trigger count: in short windows the expected
    # count is << 1 and the Gaussian-tail margin collapses, so a couple of
    # chance noise events would otherwise mask a segment.
    persistent_min_count: int = 4
    iir_alpha: float = 0.1
    iir_threshold_db: float | None = None  # None -> auto (expected level + 6 dB)
    harmonic_base_hz: float = 500_000.0
    harmonic_halfwidth_hz: float = 25_000.0
    snr_single_min_db: float = SNR_SINGLE_MIN_DB
    snr_comp_min_db: float = SNR_COMP_MIN_DB

    def __post_init__(self):
        for lo, hi in self.static_bands:
            if hi < lo:
                raise ValueError(f"static band ({lo}, {hi}) inverted")
        if not 0.0 < self.iir_alpha <= 1.0:
            raise ValueError("iir_alpha must be in (0, 1]")


# Static set for the 26 ft dish: everything below the bandpass edge,
# above the upper edge, and the known-bad 1424-1426 MHz slice.
STATIC_BANDS_26FT: tuple[tuple[float, float], ...] = (
    (0.0, 1400.8e6),
    (1424.0e6, 1426.0e6),
    (1447.0e6, 1.0e12),
)


@dataclass
class MaskInterval:
    process: str
    segment: int
    f_low_hz: float
    f_high_hz: float
    mjd_start: float
    mjd_end: float
    detail: str = ""


@dataclass
class AuditRecord:
    process: str
    f_low_hz: float
    f_high_hz: float
    mjd: float
    value: float
    action: str   # "drop" or "update"


@dataclass
class ExcisionResult:
    kept: list[SpectralEvent]
    dropped: list[SpectralEvent]
    masks: list[MaskInterval]
    audit: list[AuditRecord]
    excised_fraction: float
    warnings: list[str] = field(default_factory=list)


def expected_noise_rate(single_min_db: float = SNR_SINGLE_MIN_DB,
                        comp_min_db: float = SNR_COMP_MIN_DB) -> float:
    """Expected AWGN threshold-crossing probability per bin-frame.

    For iid exponential bin powers X,Y,Z (mean = noise), the chance that one
    frame clears the single threshold a while the 3-frame sum clears the
    composite threshold b is exp(-b) * (1 + (b-a) + (b-a)^2/2) for b >= a,
    falling back to exp(-a) when the composite threshold is the weaker cut.
    """
    a = 10.0 ** (single_min_db / 10.0)
    b = 10.0 ** (comp_min_db / 10.0)
    if b <= a:
        return math.exp(-a)
    d = b - a
    return math.exp(-b) * (1.0 + d + d * d / 2.0)


def expected_event_comp_db(single_min_db: float = SNR_SINGLE_MIN_DB,
                           comp_min_db: float = SNR_COMP_MIN_DB) -> float:
    """Mean composite SNR (dB) of AWGN threshold crossings.

    Conditional on a crossing, the 3-frame sum s has density
    exp(-s) (s-a)^2 / 2 for s >= max(a, b); this integrates 10 log10(s)
    against it.  Used to place the default IIR threshold.
    """
    a = 10.0 ** (single_min_db / 10.0)
    b = 10.0 ** (comp_min_db / 10.0)
    lo = max(a, b)
    norm, _ = quad(lambda s: math.exp(-(s - lo)) * (s - a) ** 2 / 2.0, lo, lo + 60.0)
    num, _ = quad(lambda s: 10.0 * math.log10(s) * math.exp(-(s - lo)) * (s - a) ** 2 / 2.0,
                  lo, lo + 60.0)
    return num / norm


def iir_threshold_db(cfg: ExcisionConfig) -> float:
    if cfg.iir_threshold_db is not None:
        return cfg.iir_threshold_db
    return expected_event_comp_db(cfg.snr_single_min_db, cfg.snr_comp_min_db) + 6.0


@lru_cache(maxsize=8)
def _cached_freqs(sample_rate: float, n_bins: int) -> np.ndarray:
    f = bin_frequencies(sample_rate, n_bins)
    f.setflags(write=False)
    return f


def segment_bounds(segment: int, sample_rate: float, center_rf_hz: float,
                   n_bins: int, segment_bins: int = SEGMENT_BINS) -> tuple[float, float]:
    """RF range of one spectral segment.

    Segments tile the FFT bin order, so the one straddling the Nyquist wrap
    spans the two outer band edges; all others are contiguous.
    """
    freqs = _cached_freqs(sample_rate, n_bins)
    s = segment * segment_bins
    e = min(s + segment_bins, n_bins)
    if not s < n_bins:
        raise IndexError(f"segment {segment} outside band")
    chunk = center_rf_hz + freqs[s:e]
    return float(chunk.min()), float(chunk.max())


def harmonic_zone(rf_freq_hz: float, base_hz: float, halfwidth_hz: float
                  ) -> tuple[float, float] | None:
    """The +-halfwidth zone around the nearest base-frequency multiple, if hit.

    The boundary is inclusive: an event exactly halfwidth away is excised.
    """
    h = base_hz * round(rf_freq_hz / base_hz)
    if abs(rf_freq_hz - h) <= halfwidth_hz:
        return (h - halfwidth_hz, h + halfwidth_hz)
    return None


def in_static_band(rf_freq_hz: float, bands: Sequence[tuple[float, float]]
                   ) -> tuple[float, float] | None:
    """Return the first configured band containing the frequency (inclusive)."""
    for lo, hi in bands:
        if lo <= rf_freq_hz <= hi:
            return (lo, hi)
    return None


def persistent_segment_counts(events: Sequence[SpectralEvent],
                              segment_bins: int = SEGMENT_BINS) -> dict[int, int]:
    counts: dict[int, int] = {}
    for e in events:
        seg = e.bin_index // segment_bins
        counts[seg] = counts.get(seg, 0) + 1
    return counts


def persistent_trigger_count(expected: float, factor: float, min_count: int) -> float:
    """Event count above which a segment is declared persistently contaminated."""
    return max(factor * expected, expected + 5.0 * math.sqrt(expected), float(min_count))


def _iir_scan(events: Sequence[SpectralEvent], cfg: ExcisionConfig,
              seg_bounds, window_end: float,
              segment_bins: int = SEGMENT_BINS
              ) -> tuple[set[int], list[MaskInterval], list[AuditRecord]]:
    """Run the per-segment IIR filter over the raw event sequence.

    Returns (indices of dropped events, mask intervals, update audit rows).
    The event whose update first pushes the filter over threshold opens the
    mask and is itself dropped; the first event whose update brings it back
    under closes the mask and is kept.
    """
    theta = iir_threshold_db(cfg)
    state: dict[int, float] = {}
    open_since: dict[int, float] = {}
    dropped: set[int] = set()
    masks: list[MaskInterval] = []
    audit: list[AuditRecord] = []
    order = sorted(range(len(events)), key=lambda i: (events[i].mjd, events[i].bin_index))
    for i in order:
        e = events[i]
        seg = e.bin_index // segment_bins
        y = (1.0 - cfg.iir_alpha) * state.get(seg, 0.0) + cfg.iir_alpha * e.snr_comp_db
        state[seg] = y
        lo, hi = seg_bounds(seg)
        audit.append(AuditRecord("dynamic", lo, hi, e.mjd, y, "update"))
        if y > theta:
            dropped.add(i)
            if seg not in open_since:
                open_since[seg] = e.mjd
        elif seg in open_since:
            masks.append(MaskInterval("dynamic", seg, lo, hi, open_since.pop(seg), e.mjd,
                                      detail=f"iir<= {theta:.3f}dB"))
    for seg, t0 in sorted(open_since.items()):
        lo, hi = seg_bounds(seg)
        masks.append(MaskInterval("dynamic", seg, lo, hi, t0, window_end,
                                  detail="open at window end"))
    return dropped, masks, audit


def apply_excision(events: Sequence[SpectralEvent], cfg: ExcisionConfig, *,
                   n_frames: int, sample_rate: float, center_rf_hz: float,
                   n_bins: int | None = None,
                   window: tuple[float, float] | None = None,
                   order: Sequence[str] = PROCESSES,
                   segment_bins: int = SEGMENT_BINS) -> ExcisionResult:
    """Apply all four excision processes to one event file's worth of events.

    ``n_frames`` is the number of processed frames behind the file (sets the
    expected per-segment AWGN count for the persistent test).  ``order``
    only fixes which process an event dropped by several is attributed to;
    the kept set itself never depends on it.
    """
    if sorted(order) != sorted(PROCESSES):
        raise ValueError(f"order must be a permutation of {PROCESSES}, got {order}")
    if n_bins is None:
        n_bins = frame_length(sample_rate)
    if window is None:
        mjds = [e.mjd for e in events]
        window = (min(mjds, default=0.0), max(mjds, default=0.0))

    def seg_bounds(seg: int) -> tuple[float, float]:
        return segment_bounds(seg, sample_rate, center_rf_hz, n_bins, segment_bins)

    # --- masks from raw events -------------------------------------------
    rate = expected_noise_rate(cfg.snr_single_min_db, cfg.snr_comp_min_db)
    expected = rate * segment_bins * n_frames
    trigger = persistent_trigger_count(expected, cfg.persistent_factor,
                                       cfg.persistent_min_count)
    counts = persistent_segment_counts(events, segment_bins)
    persistent_segs = {s for s, c in counts.items() if c > trigger}
    masks: list[MaskInterval] = []
    for seg in sorted(persistent_segs):
        lo, hi = seg_bounds(seg)
        masks.append(MaskInterval("persistent", seg, lo, hi, window[0], window[1],
                                  detail=f"count={counts[seg]} trigger={trigger:.2f}"))

    iir_dropped, iir_masks, audit = _iir_scan(events, cfg, seg_bounds, window[1],
                                              segment_bins)
    masks.extend(iir_masks)

    # --- per-event verdicts, attributed in application order --------------
    kept: list[SpectralEvent] = []
    dropped: list[SpectralEvent] = []
    for i, e in enumerate(events):
        seg = e.bin_index // segment_bins
        verdicts = {
            "persistent": seg in persistent_segs,
            "dynamic": i in iir_dropped,
            "harmonic": harmonic_zone(e.rf_freq_hz, cfg.harmonic_base_hz,
                                      cfg.harmonic_halfwidth_hz) is not None,
            "static": in_static_band(e.rf_freq_hz, cfg.static_bands) is not None,
        }
        hit = next((p for p in order if verdicts[p]), None)
        if hit is None:
            kept.append(e)
            continue
        dropped.append(e)
        if hit == "persistent":
            lo, hi = seg_bounds(seg)
            audit.append(AuditRecord(hit, lo, hi, e.mjd, float(counts[seg]), "drop"))
        elif hit == "dynamic":
            lo, hi = seg_bounds(seg)
            audit.append(AuditRecord(hit, lo, hi, e.mjd, e.snr_comp_db, "drop"))
        elif hit == "harmonic":
            lo, hi = harmonic_zone(e.rf_freq_hz, cfg.harmonic_base_hz,
                                   cfg.harmonic_halfwidth_hz)
            audit.append(AuditRecord(hit, lo, hi, e.mjd, e.rf_freq_hz, "drop"))
        else:
            lo, hi = in_static_band(e.rf_freq_hz, cfg.static_bands)
            audit.append(AuditRecord(hit, lo, hi, e.mjd, e.rf_freq_hz, "drop"))

    frac = excised_band_fraction(cfg, persistent_segs | {m.segment for m in iir_masks},
                                 sample_rate, center_rf_hz, n_bins, segment_bins)
    warnings: list[str] = []
    if frac > EXCISED_FRACTION_WARN:
        msg = f"excised fraction {frac:.1%} exceeds {EXCISED_FRACTION_WARN:.0%} of the band"
        warnings.append(msg)
        log.warning(msg)
    audit.sort(key=lambda a: (a.mjd, a.process, a.action))
    return ExcisionResult(kept, dropped, masks, audit, frac, warnings)


def excised_band_fraction(cfg: ExcisionConfig, masked_segments: Iterable[int],
                          sample_rate: float, center_rf_hz: float, n_bins: int,
                          segment_bins: int = SEGMENT_BINS) -> float:
    """Fraction of the band's bins inside any frequency-domain mask."""
    rf = center_rf_hz + bin_frequencies(sample_rate, n_bins)
    bad = np.zeros(n_bins, dtype=bool)
    for seg in masked_segments:
        bad[seg * segment_bins:(seg + 1) * segment_bins] = True
    base, hw = cfg.harmonic_base_hz, cfg.harmonic_halfwidth_hz
    if base > 0:
        bad |= np.abs(rf - base * np.round(rf / base)) <= hw
    for lo, hi in cfg.static_bands:
        bad |= (rf >= lo) & (rf <= hi)
    return float(bad.mean())


# ---------------------------------------------------------------------------
# mask / audit files
# ---------------------------------------------------------------------------


def write_masks_file(path, masks: Sequence[MaskInterval], *,
                     header_fields: dict | None = None,
                     config_lines: Sequence[str] = ()) -> Path:
    path = Path(path)
    fields = dict(header_fields or {})
    kv = " ".join(f"{k}={fields[k]}" for k in sorted(fields))
    with open(path, "w") as f:
        f.write(("#pulsepair-masks v1 " + kv).rstrip() + "\n")
        for line in config_lines:
            f.write(f"#cfg {line}\n")
        f.write("process,segment,f_low_hz,f_high_hz,mjd_start,mjd_end,detail\n")
        for m in masks:
            f.write(f"{m.process},{m.segment},{m.f_low_hz:.4f},{m.f_high_hz:.4f},"
                    f"{m.mjd_start:.7f},{m.mjd_end:.7f},{m.detail}\n")
    return path


def write_audit_file(path, audit: Sequence[AuditRecord], *,
                     header_fields: dict | None = None,
                     config_lines: Sequence[str] = ()) -> Path:
    path = Path(path)
    fields = dict(header_fields or {})
    kv = " ".join(f"{k}={fields[k]}" for k in sorted(fields))
    with open(path, "w") as f:
        f.write(("#pulsepair-audit v1 " + kv).rstrip() + "\n")
        for line in config_lines:
            f.write(f"#cfg {line}\n")
        f.write("process,f_low_hz,f_high_hz,mjd,value,action\n")
        for a in audit:
            f.write(f"{a.process},{a.f_low_hz:.4f},{a.f_high_hz:.4f},"
                    f"{a.mjd:.7f},{a.value:.6g},{a.action}\n")
    return path
