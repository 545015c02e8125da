"""Cross-file coincidence pairing and pulse-pair association.

Pairs are formed between two RFI-filtered event files (two sites, or the two
polarizations of one site).  Time offsets are quantized to whole 0.27 s
frames; frequency offsets are taken after compensating each event to the
reference site's rotational frame.  A "delta-t = 0" pair means both events
sit in the same frame (identical stored 7-decimal MJD).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .channelizer import SpectralEvent, doppler_compensate, mjd_to_ra
from .constants import FRAME_SECONDS, SITES, SiteGeometry
from .stats import p0_df_awgn

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

DT_MAX_S = 3.0
DF_MAX_HZ = 400.0
ANCHOR_DF_MAX_HZ = 15.5
ASSOCIATION_P_GATE = 0.03


@dataclass(frozen=True)
class PulsePair:
    event_a: SpectralEvent
    event_b: SpectralEvent
    delta_t_s: float          # (frame_a - frame_b) * 0.27
    delta_f_hz: float         # compensated f_a - f_b
    snr_max_db: float         # max of the two composite SNRs
    mjd: float                # event_a's frame MJD
    ra_hours: float           # reference-site pointing RA at that MJD

    @property
    def is_simultaneous(self) -> bool:
        return self.delta_t_s == 0.0

    def key(self) -> tuple:
        return (round(self.mjd, 7), self.event_a.rf_freq_hz, self.event_b.rf_freq_hz)


@dataclass
class AssociationSet:
    """An anchor pair plus its same-frame companions.

    ``n_df`` is the member count N; ``n_trials`` counts the same-frame pairs
    at or above the weakest member's SNR (the anchor itself is excluded from
    both).
    """

    anchor: PulsePair
    members: list[PulsePair]
    n_trials: int

    @property
    def n_df(self) -> int:
        return len(self.members)

    @property
    def max_member_df_hz(self) -> float:
        return max((abs(m.delta_f_hz) for m in self.members), default=0.0)


def _frame_of(mjd: float) -> int:
    return int(round(mjd * 86400.0 / FRAME_SECONDS))


def _geometry(site_id: str, reference: SiteGeometry,
              sites: Mapping[str, SiteGeometry] | None) -> SiteGeometry:
    if site_id == reference.site_id:
        return reference
    if sites and site_id in sites:
        return sites[site_id]
    if site_id in SITES:
        return SITES[site_id]
    raise KeyError(f"no geometry for site {site_id!r}; pass it via sites=")


def find_pairs(events_a: Sequence[SpectralEvent], events_b: Sequence[SpectralEvent],
               *, reference: SiteGeometry,
               sites: Mapping[str, SiteGeometry] | None = None,
               dt_max_s: float = DT_MAX_S,
               df_max_hz: float = DF_MAX_HZ) -> list[PulsePair]:
    """All cross-file pairs within the time/frequency coincidence window.

    Events from non-reference sites have their frequencies Doppler-shifted
    into the reference frame before the |delta_f| cut.  delta_f is
    f_a - f_b, so swapping the file arguments negates it.
    """
    max_frames = int(math.floor(dt_max_s / FRAME_SECONDS + 1e-9))

    def compensated(e: SpectralEvent) -> float:
        g = _geometry(e.site_id, reference, sites)
        return doppler_compensate(e.rf_freq_hz, e.mjd, g, reference)

    by_frame: dict[int, list[tuple[SpectralEvent, float]]] = {}
    for e in events_b:
        by_frame.setdefault(_frame_of(e.mjd), []).append((e, compensated(e)))

    out: list[PulsePair] = []
    for ea in events_a:
        fa = compensated(ea)
        ka = _frame_of(ea.mjd)
        for kb in range(ka - max_frames, ka + max_frames + 1):
            for eb, fb in by_frame.get(kb, ()):
                df = fa - fb
                if abs(df) > df_max_hz:
                    continue
                out.append(PulsePair(
                    event_a=ea, event_b=eb,
                    delta_t_s=(ka - kb) * FRAME_SECONDS,
                    delta_f_hz=df,
                    snr_max_db=max(ea.snr_comp_db, eb.snr_comp_db),
                    mjd=ea.mjd,
                    ra_hours=mjd_to_ra(ea.mjd, reference)))
    out.sort(key=lambda p: (p.mjd, abs(p.delta_f_hz)))
    return out


def find_anchors(pairs: Sequence[PulsePair],
                 df_anchor_max_hz: float = ANCHOR_DF_MAX_HZ) -> list[PulsePair]:
    """Simultaneous near-zero-offset pairs, strongest first (MJD breaks ties)."""
    anchors = [p for p in pairs
               if p.is_simultaneous and abs(p.delta_f_hz) <= df_anchor_max_hz]
    anchors.sort(key=lambda p: (-p.snr_max_db, p.mjd))
    return anchors


def find_associated(pairs: Sequence[PulsePair], anchor: PulsePair, *,
                    df50_hz: float,
                    p_gate: float = ASSOCIATION_P_GATE) -> AssociationSet:
    """Companion pairs in the anchor's frame that are individually unlikely.

    A companion qualifies as a member when its single-pair chance probability
    p0(|delta_f|) is below ``p_gate``.  ``pairs`` should be the simultaneous
    pairs found around the anchor with the widened frequency window the gate
    implies (p_gate * df50 / ln 2), not the narrow reporting window.
    """
    anchor_mjd = round(anchor.mjd, 7)
    same_frame = [p for p in pairs
                  if p.is_simultaneous
                  and round(p.mjd, 7) == anchor_mjd
                  and p.key() != anchor.key()]
    members = [p for p in same_frame
               if p0_df_awgn(abs(p.delta_f_hz), df50_hz) < p_gate]
    if not members:
        return AssociationSet(anchor, [], 0)
    floor = min(p.snr_max_db for p in members)
    n_trials = sum(1 for p in same_frame if p.snr_max_db >= floor)
    members.sort(key=lambda p: abs(p.delta_f_hz))
    return AssociationSet(anchor, members, n_trials)


# ---------------------------------------------------------------------------
# pair report file
# ---------------------------------------------------------------------------

PAIR_REPORT_MAGIC = "#pulsepair-pairs v1"
_PAIR_COLUMNS = ("ra_hours", "mjd_a", "mjd_b", "snr_max_db",
                 "freq_a_mhz", "freq_b_mhz", "delta_f_hz")


@dataclass(frozen=True)
class PairRow:
    ra_hours: float
    mjd_a: float
    mjd_b: float
    snr_max_db: float
    freq_a_mhz: float
    freq_b_mhz: float
    delta_f_hz: float


def pair_row(p: PulsePair) -> PairRow:
    return PairRow(p.ra_hours, p.event_a.mjd, p.event_b.mjd, p.snr_max_db,
                   p.event_a.rf_freq_hz / 1e6, p.event_b.rf_freq_hz / 1e6,
                   p.delta_f_hz)


def write_pair_report(path, pairs: Sequence[PulsePair], *,
                      header_fields: dict | None = None,
                      config_lines: Sequence[str] = ()) -> Path:
    """Write pairs sorted by decreasing SNR as the delimited report."""
    path = Path(path)
    fields = dict(header_fields or {})
    kv = " ".join(f"{k}={fields[k]}" for k in sorted(fields))
    rows = [pair_row(p) for p in
            sorted(pairs, key=lambda p: (-p.snr_max_db, p.mjd))]
    with open(path, "w") as f:
        f.write((PAIR_REPORT_MAGIC + " " + kv).rstrip() + "\n")
        for line in config_lines:
            f.write(f"#cfg {line}\n")
        f.write(",".join(_PAIR_COLUMNS) + "\n")
        for r in rows:
            f.write(f"{r.ra_hours:.6f},{r.mjd_a:.7f},{r.mjd_b:.7f},{r.snr_max_db:.3f},"
                    f"{r.freq_a_mhz:.7f},{r.freq_b_mhz:.7f},{r.delta_f_hz:.1f}\n")
    return path


def read_pair_report(path) -> list[PairRow]:
    rows: list[PairRow] = []
    with open(path) as f:
        first = f.readline()
        if not first.startswith(PAIR_REPORT_MAGIC):
            raise ValueError(f"{path}: not a pair report")
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("ra_hours"):
                continue
            v = line.split(",")
            rows.append(PairRow(float(v[0]), float(v[1]), float(v[2]), float(v[3]),
                                float(v[4]), float(v[5]), float(v[6])))
    return rows


def write_association_report(path, sets: Sequence[tuple[AssociationSet, float, float]], *,
                             header_fields: dict | None = None,
                             config_lines: Sequence[str] = ()) -> Path:
    """One row per anchor: member count, trial count, alpha, and likelihood."""
    path = Path(path)
    fields = dict(header_fields or {})
    kv = " ".join(f"{k}={fields[k]}" for k in sorted(fields))
    with open(path, "w") as f:
        f.write(("#pulsepair-associations v1 " + kv).rstrip() + "\n")
        for line in config_lines:
            f.write(f"#cfg {line}\n")
        f.write("anchor_ra_hours,anchor_mjd,anchor_snr_db,anchor_delta_f_hz,"
                "n_members,n_trials,max_member_df_hz,alpha,likelihood\n")
        for s, alpha, lk in sets:
            a = s.anchor
            f.write(f"{a.ra_hours:.6f},{a.mjd:.7f},{a.snr_max_db:.3f},{a.delta_f_hz:.1f},"
                    f"{s.n_df},{s.n_trials},{s.max_member_df_hz:.1f},"
                    f"{alpha:.6g},{lk:.6g}\n")
    return path
