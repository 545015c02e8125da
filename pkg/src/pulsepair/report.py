"""Report emission: delimited data series and rendered figures.

Pair populations are emitted as per-quantity CSV series against right
ascension, and the RA-window likelihood curves as one CSV of L versus
trial number per window.  With figure emission enabled, each series is
also rendered to a PNG next to its CSV.
"""

from __future__ import annotations

import logging
import os
from typing import Iterable, Sequence

from .stats import MethodBResult

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

SERIES_MAGIC = "#pulsepair-series v1"

# (series name, value accessor label, y-axis label)
_SCATTER_SERIES = (
    ("delta_f_vs_ra", "delta_f_hz", "delta f (Hz)"),
    ("snr_vs_ra", "snr_max_db", "SNR max (dB)"),
    ("freq_vs_ra", "freq_a_mhz", "frequency (MHz)"),
    ("mjd_vs_ra", "mjd_a", "MJD"),
)

_FMT = {
    "ra_hours": "%.6f",
    "delta_f_hz": "%.1f",
    "snr_max_db": "%.3f",
    "freq_a_mhz": "%.7f",
    "mjd_a": "%.7f",
}


def _write_series_csv(path: str, columns: Sequence[str], rows: Iterable[tuple],
                      formats: Sequence[str], *, header_fields: dict | None = None,
                      config_lines: Sequence[str] = ()) -> None:
    fields = dict(header_fields or {})
    kv = " ".join(f"{k}={v}" for k, v in sorted(fields.items()))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write((SERIES_MAGIC + " " + kv).rstrip() + "\n")
        for line in config_lines:
            f.write(f"#cfg {line}\n")
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(fmt % v for fmt, v in zip(formats, row)) + "\n")


def _pair_value(pair, name: str) -> float:
    if name == "freq_a_mhz":
        freq = getattr(pair, "freq_a_mhz", None)
        if freq is None:
            freq = pair.event_a.rf_freq_hz / 1.0e6
        return freq
    if name == "mjd_a":
        return getattr(pair, "mjd_a", None) or pair.mjd
    return getattr(pair, name)


def write_scatter_series(pairs: Sequence, out_dir: str, *,
                         stem: str = "series",
                         header_fields: dict | None = None,
                         config_lines: Sequence[str] = ()) -> list[str]:
    """One CSV per quantity-vs-RA series; returns the paths written.

    Accepts pair objects or report rows; rows are ordered by RA then value
    so identical populations always serialize identically.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, attr, _ in _SCATTER_SERIES:
        rows = sorted((p.ra_hours, _pair_value(p, attr)) for p in pairs)
        path = os.path.join(out_dir, f"{stem}_{name}.csv")
        _write_series_csv(path, ("ra_hours", attr), rows,
                          (_FMT["ra_hours"], _FMT[attr]),
                          header_fields=header_fields, config_lines=config_lines)
        paths.append(path)
    log.info("wrote %d scatter series to %s", len(paths), out_dir)
    return paths


def write_likelihood_curves(result: MethodBResult, out_dir: str, *,
                            stem: str = "likelihood",
                            header_fields: dict | None = None,
                            config_lines: Sequence[str] = ()) -> str:
    """L-versus-trials CSV: one likelihood and count column per RA window."""
    os.makedirs(out_dir, exist_ok=True)
    names = [f"{lo:.2f}_{hi:.2f}" for lo, hi in result.windows]
    columns = ["trial"] + [f"l_{n}" for n in names] + [f"count_{n}" for n in names]
    rows = []
    for i, t in enumerate(result.trials):
        rows.append((int(t),
                     *(float(result.curves[j, i]) for j in range(len(names))),
                     *(int(result.counts[j, i]) for j in range(len(names)))))
    fmts = ["%d"] + ["%.6e"] * len(names) + ["%d"] * len(names)
    path = os.path.join(out_dir, f"{stem}_vs_trials.csv")
    _write_series_csv(path, columns, rows, fmts,
                      header_fields=header_fields, config_lines=config_lines)
    return path


# ---------------------------------------------------------------------------
# figure rendering
# ---------------------------------------------------------------------------


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    return plt


_PNG_META = {"Software": "pulsepair"}


def render_scatter_figures(pairs: Sequence, out_dir: str, *,
                           stem: str = "series") -> list[str]:
    """Render each quantity-vs-RA series to a PNG next to its CSV."""
    plt = _plt()
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, attr, ylabel in _SCATTER_SERIES:
        xy = sorted((p.ra_hours, _pair_value(p, attr)) for p in pairs)
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        if xy:
            x, y = zip(*xy)
            ax.scatter(x, y, s=12, marker="+", color="tab:blue")
        ax.set_xlabel("right ascension (hours)")
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, f"{stem}_{name}.png")
        fig.savefig(path, dpi=120, metadata=_PNG_META)
        plt.close(fig)
        paths.append(path)
    return paths


def render_likelihood_figure(result: MethodBResult, out_dir: str, *,
                             stem: str = "likelihood") -> str:
    """Log-scale L curves against trial number, one line per RA window."""
    plt = _plt()
    os.makedirs(out_dir, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for j, (lo, hi) in enumerate(result.windows):
        ax.plot(result.trials, result.curves[j], lw=1.0,
                label=f"{lo:.2f}-{hi:.2f} h")
    ax.set_yscale("log")
    ax.set_xlabel("trials (pairs, decreasing SNR)")
    ax.set_ylabel("binomial density L")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8, title="RA window")
    fig.tight_layout()
    path = os.path.join(out_dir, f"{stem}_vs_trials.png")
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return path
