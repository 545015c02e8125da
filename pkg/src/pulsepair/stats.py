"""Chance-probability statistics for pulse-pair populations.

Covers the Ricean/Rayleigh amplitude argument, Poisson interarrival
probabilities with their measured medians, the binomial tail ("method A")
and per-RA-window binomial density curves ("method B"), RA window
probabilities, and sequential Bayesian posterior updates.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln, i0e, logsumexp

from .constants import FRAME_SECONDS

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

DF50_DEFAULT_HZ = 850_000.0   # measured frequency-interarrival median fallback

# method A switches from exact integer combinatorics to log-gamma sums here
_EXACT_COMB_MAX_N = 1000


def rice_rayleigh_ratio(r: float, s: float, sigma: float = 1.0) -> float:
    """Ricean-to-Rayleigh density ratio at amplitude r for line component s.

    exp(-s^2 / 2 sigma^2) * I0(r s / sigma^2), evaluated with the
    exponentially-scaled Bessel function so large arguments don't overflow.
    ``sigma`` is the per-quadrature noise deviation.
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    x = r * s / (sigma * sigma)
    return math.exp(-s * s / (2.0 * sigma * sigma) + x) * float(i0e(x))


@dataclass(frozen=True)
class PoissonCalib:
    """Measured interarrival medians for the event population."""

    dt50_s: float
    df50_hz: float

    def __post_init__(self):
        if self.dt50_s <= 0 or self.df50_hz <= 0:
            raise ValueError("interarrival medians must be positive")


def p_dtdf_awgn(dt_s: float, df_hz: float, calib: PoissonCalib) -> float:
    """Chance probability of a noise pair within |dt| and |df| of a given event.

    Product of the two exponential interarrival CDFs, each parameterized by
    its measured median: (1 - 2^(-dt/dt50)) * (1 - 2^(-df/df50)).
    """
    a = 1.0 - math.exp(-math.log(2.0) * abs(dt_s) / calib.dt50_s)
    b = 1.0 - math.exp(-math.log(2.0) * abs(df_hz) / calib.df50_hz)
    return a * b


def p_dtdf_awgn_small(dt_s: float, df_hz: float, calib: PoissonCalib) -> float:
    """Small-argument form of :func:`p_dtdf_awgn`: (ln2)^2 dt df / (dt50 df50).

    Always an upper bound on the exact expression (1 - e^-x <= x).
    """
    ln2 = math.log(2.0)
    return (ln2 * abs(dt_s) / calib.dt50_s) * (ln2 * abs(df_hz) / calib.df50_hz)


def p0_df_awgn(df_hz: float, df50_hz: float = DF50_DEFAULT_HZ) -> float:
    """Single-pair chance probability for a simultaneous pair at offset df.

    ln2 * |df| / df50, clamped to 1 (with a warning) once the linearized
    form leaves its range of validity.
    """
    if df50_hz <= 0:
        raise ValueError("df50_hz must be > 0")
    p = math.log(2.0) * abs(df_hz) / df50_hz
    if p > 1.0:
        warnings.warn(f"p0_df_awgn({df_hz:g} Hz) = {p:.3g} clamped to 1.0; "
                      "offset is outside the linear regime", RuntimeWarning,
                      stacklevel=2)
        return 1.0
    return p


# ---------------------------------------------------------------------------
# method A: binomial upper tail
# ---------------------------------------------------------------------------


def method_a(alpha: float, n_trials: int, n_df: int) -> float:
    """P(X >= n_df) for X ~ Binomial(n_trials, alpha).

    Exact integer combinatorics up to n_trials = 1000; log-gamma summation
    beyond that.  n_df = 0 is certain (probability 1).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    if n_trials < 0 or n_df < 0:
        raise ValueError("counts must be non-negative")
    if n_df > n_trials:
        raise ValueError(f"n_df {n_df} exceeds n_trials {n_trials}")
    if n_df == 0:
        return 1.0
    if alpha == 0.0:
        return 0.0
    if alpha == 1.0:
        return 1.0
    if n_trials <= _EXACT_COMB_MAX_N:
        total = 0.0
        for x in range(n_df, n_trials + 1):
            total += math.comb(n_trials, x) * alpha ** x * (1.0 - alpha) ** (n_trials - x)
        return min(total, 1.0)
    x = np.arange(n_df, n_trials + 1, dtype=np.float64)
    logpmf = (gammaln(n_trials + 1) - gammaln(x + 1) - gammaln(n_trials - x + 1)
              + x * math.log(alpha) + (n_trials - x) * math.log1p(-alpha))
    return float(min(1.0, math.exp(logsumexp(logpmf))))


# ---------------------------------------------------------------------------
# RA windows and method B: binomial density vs. trial count
# ---------------------------------------------------------------------------


def make_ra_windows(center_hours: float = 5.25, width_hours: float = 0.3,
                    count: int = 5) -> list[tuple[float, float]]:
    """``count`` contiguous equal-width RA windows centered on ``center``.

    The default five 0.3 h windows cover 4.5-6.0 h.  Windows are half-open
    [lo, hi).
    """
    if width_hours <= 0 or count < 1:
        raise ValueError("need positive width and at least one window")
    first = center_hours - width_hours * count / 2.0
    return [(first + i * width_hours, first + (i + 1) * width_hours)
            for i in range(count)]


def assign_window(ra_hours: float, windows: Sequence[tuple[float, float]]) -> int | None:
    for i, (lo, hi) in enumerate(windows):
        if lo <= ra_hours < hi:
            return i
    return None


def ra_probability(window: tuple[float, float], *, mode: str = "theoretical",
                   ra_obs_hours: float | None = None,
                   count: int | None = None, total: int | None = None) -> float:
    """Probability that one pair lands in an RA window.

    theoretical: window width / observed RA span.  empirical: window count /
    total count over the whole population.
    """
    if mode == "theoretical":
        if ra_obs_hours is None or ra_obs_hours <= 0:
            raise ValueError("theoretical mode needs ra_obs_hours > 0")
        lo, hi = window
        if hi < lo:
            raise ValueError("window inverted")
        return (hi - lo) / ra_obs_hours
    if mode == "empirical":
        if total is None or total <= 0 or count is None or count < 0:
            raise ValueError("empirical mode needs count >= 0 and total > 0")
        return count / total
    raise ValueError(f"unknown mode {mode!r}")


def _log_binom_pmf(k: np.ndarray, t: np.ndarray, p: float) -> np.ndarray:
    return (gammaln(t + 1) - gammaln(k + 1) - gammaln(t - k + 1)
            + k * math.log(p) + (t - k) * math.log1p(-p))


@dataclass
class MethodBResult:
    windows: list[tuple[float, float]]
    probabilities: np.ndarray            # per-window pair probability
    trials: np.ndarray                   # 1..T (global SNR rank)
    counts: np.ndarray                   # (n_windows, T) window count in top-t
    curves: np.ndarray                   # (n_windows, T) binomial density L
    # trial numbers where a pair entered the window and L dropped
    discontinuities: list[list[int]] = field(default_factory=list)

    def min_l(self, window: int) -> tuple[float, int]:
        """(lowest L, trial number where it occurs) for one window."""
        i = int(np.argmin(self.curves[window]))
        return float(self.curves[window, i]), int(self.trials[i])


def method_b(pairs: Iterable, windows: Sequence[tuple[float, float]],
             probabilities: Sequence[float] | None = None,
             max_trials: int | None = None) -> MethodBResult:
    """Per-window binomial density of window membership among SNR-ranked pairs.

    Pairs (anything with ``ra_hours`` and ``snr_max_db``) are ranked by
    decreasing SNR; after t trials a window holding k of the top t has
    likelihood L(t) = C(t,k) p^k (1-p)^(t-k).  A fresh pair entering the
    window produces a step discontinuity; downward steps to low L flag an
    anomalous concentration, a systematically high-L window an anomalous
    absence.  Window probabilities default to the empirical share of the
    *whole* population falling in each window.
    """
    ranked = sorted(pairs, key=lambda p: (-p.snr_max_db, p.ra_hours))
    if not ranked:
        raise ValueError("no pairs given")
    which = np.array([-1 if (w := assign_window(p.ra_hours, windows)) is None else w
                      for p in ranked])
    if probabilities is None:
        probs = np.array([(which == j).mean() for j in range(len(windows))])
    else:
        probs = np.asarray(probabilities, dtype=np.float64)
    if len(probs) != len(windows):
        raise ValueError("need one probability per window")
    if np.any(probs < 0.0) or np.any(probs > 1.0):
        raise ValueError(f"window probabilities outside [0, 1]: {probs}")
    if not np.any(probs > 0.0):
        raise ValueError("no window has a nonzero pair probability; "
                         "nothing to test")
    T = len(ranked) if max_trials is None else min(max_trials, len(ranked))
    t = np.arange(1, T + 1, dtype=np.float64)
    counts = np.empty((len(windows), T))
    curves = np.empty((len(windows), T))
    disc: list[list[int]] = []
    for j in range(len(windows)):
        k = np.cumsum(which[:T] == j).astype(np.float64)
        p = float(probs[j])
        if p == 0.0:
            # degenerate window: certain to stay empty, L carries no signal
            L = np.where(k == 0, 1.0, 0.0)
        elif p == 1.0:
            L = np.where(k == t, 1.0, 0.0)
        else:
            L = np.exp(_log_binom_pmf(k, t, p))
        counts[j] = k
        curves[j] = L
        entered = np.flatnonzero(np.diff(k, prepend=0.0) > 0)
        disc.append([int(t[i]) for i in entered
                     if i > 0 and L[i] < L[i - 1]])
    return MethodBResult(list(windows), probs, t.astype(int), counts, curves, disc)


# ---------------------------------------------------------------------------
# Bayesian chain
# ---------------------------------------------------------------------------


def bayes_update(prior: float, likelihood: float, p_data: float = 1.0) -> float:
    """posterior = likelihood * prior / p_data."""
    if p_data <= 0:
        raise ValueError("p_data must be > 0")
    if prior < 0 or likelihood < 0:
        raise ValueError("prior and likelihood must be non-negative")
    return likelihood * prior / p_data


@dataclass(frozen=True)
class ChainStep:
    label: str
    prior: float
    likelihood: float
    p_data: float
    posterior: float


class PosteriorChain:
    """Sequential posterior updates; each step's posterior feeds the next prior."""

    def __init__(self, prior: float = 1.0):
        self.initial_prior = prior
        self.steps: list[ChainStep] = []

    @property
    def posterior(self) -> float:
        return self.steps[-1].posterior if self.steps else self.initial_prior

    def update(self, label: str, likelihood: float, p_data: float = 1.0,
               prior: float | None = None) -> float:
        pr = self.posterior if prior is None else prior
        post = bayes_update(pr, likelihood, p_data)
        self.steps.append(ChainStep(label, pr, likelihood, p_data, post))
        return post


# ---------------------------------------------------------------------------
# interarrival calibration
# ---------------------------------------------------------------------------


@dataclass
class Df50Calibration:
    empirical_df50_hz: float | None
    analytic_df50_hz: float
    n_frequency_gaps: int
    dt50_s: float | None
    n_time_gaps: int

    @property
    def agreement(self) -> float | None:
        if self.empirical_df50_hz is None:
            return None
        return self.empirical_df50_hz / self.analytic_df50_hz

    def calib(self, dt50_default: float = FRAME_SECONDS,
              df50_default: float = DF50_DEFAULT_HZ) -> PoissonCalib:
        return PoissonCalib(self.dt50_s or dt50_default,
                            self.empirical_df50_hz or df50_default)


def calibrate_df50(events: Sequence, *, n_frames: int,
                   bandwidth_hz: float) -> Df50Calibration:
    """Measure the median frequency interarrival of same-frame events.

    Empirical df50 is the median gap between frequency-adjacent events
    within one frame, pooled over frames; the analytic value is
    ln2 / (events per frame per Hz) for a Poisson population of the same
    mean density.  The ratio of the two is the AWGN-consistency check.
    Also measures dt50, the median positive gap between consecutive event
    times.
    """
    if n_frames <= 0 or bandwidth_hz <= 0:
        raise ValueError("need positive n_frames and bandwidth_hz")
    by_frame: dict[int, list[float]] = {}
    mjds = []
    for e in events:
        fr = int(round(e.mjd * 86400.0 / FRAME_SECONDS))
        by_frame.setdefault(fr, []).append(e.rf_freq_hz)
        mjds.append(e.mjd)
    gaps: list[float] = []
    for freqs in by_frame.values():
        if len(freqs) > 1:
            freqs = np.sort(np.asarray(freqs))
            gaps.extend(np.diff(freqs))
    emp = float(np.median(gaps)) if gaps else None
    density = len(mjds) / (n_frames * bandwidth_hz)   # events per frame per Hz
    if density <= 0:
        raise ValueError("no events; analytic df50 undefined")
    analytic = math.log(2.0) / density
    tgaps = np.diff(np.sort(np.asarray(mjds))) * 86400.0
    tgaps = tgaps[tgaps > FRAME_SECONDS / 2.0]        # exclude same-frame
    dt50 = float(np.median(tgaps)) if len(tgaps) else None
    return Df50Calibration(emp, analytic, len(gaps), dt50, int(len(tgaps)))
