"""Synthetic dual-channel IQ generation: calibrated AWGN plus pulse-pair bursts.

Streams are produced block-by-block (one analysis frame per block) with a
counter-based RNG keyed on (seed, channel, block), so output is byte-identical
no matter how many workers generate blocks or in what order.
"""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .constants import FRAME_SECONDS, frame_length

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

BURST_CASES = ("RL", "LR", "RR", "LL")

_IQ_MAGIC = b"PPIQ0001"
_IQ_VERSION = 1
_IQ_FIXED = struct.Struct("<8sHHdddd16s8sQQ")


@dataclass(frozen=True)
class ChannelPlan:
    """Sample-rate/center-frequency plan for one synthesis run."""

    sample_rate: float = 1_000_000.0
    center_rf_hz: float = 1_425_000_000.0
    duration_s: float = 60.0
    start_mjd: float = 58345.0
    labels: tuple[str, ...] = ("R", "L")
    site_id: str = "desk"
    seed: int = 0

    def __post_init__(self):
        if self.sample_rate <= 0 or self.sample_rate > 62_500_000.0:
            raise ValueError(f"sample_rate {self.sample_rate} outside (0, 62.5e6]")
        if self.duration_s < 0:
            raise ValueError("duration_s must be >= 0")
        if len(set(self.labels)) != len(self.labels) or not self.labels:
            raise ValueError(f"channel labels must be unique and non-empty: {self.labels}")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate))

    @property
    def frame_len(self) -> int:
        return frame_length(self.sample_rate)


@dataclass(frozen=True)
class BurstSpec:
    """One two-element burst.

    ``case`` routes element 1 (``f1``, ``a1``, starting at ``t_start_s``) and
    element 2 (``f2``, ``a2``, starting ``gap_s`` later) onto the channel
    whose label matches the first/second case letter.  Amplitude factors are
    in calibrated units: a=1 adds, on average, exactly one noise-bin's worth
    of power to a single 3.7 Hz channel (0 dB gain, see
    :func:`unit_amplitude`).
    """

    case: str
    t_start_s: float
    gap_s: float = 0.0
    duration_s: float = FRAME_SECONDS
    f1_hz: float = 0.0
    f2_hz: float = 0.0
    a1: float = 1.0
    a2: float = 1.0

    def __post_init__(self):
        if self.case not in BURST_CASES:
            raise ValueError(f"case {self.case!r} not one of {BURST_CASES}")
        if self.a1 < 1.0 or self.a2 < 1.0:
            raise ValueError("amplitude factors must be >= 1")
        if self.duration_s <= 0:
            raise ValueError("burst duration must be positive")

    def elements(self) -> tuple[tuple[str, float, float, float], ...]:
        """(channel label, start time, frequency, amplitude) per element."""
        return (
            (self.case[0], self.t_start_s, self.f1_hz, self.a1),
            (self.case[1], self.t_start_s + self.gap_s, self.f2_hz, self.a2),
        )


@dataclass(frozen=True)
class SignalModel:
    """Noise level plus the burst set to inject.

    ``background_sigma`` adds an optional second wideband Gaussian component
    (an unmodulated carrier floor); it defaults to off.
    """

    noise_sigma: float = 1.0
    bursts: tuple[BurstSpec, ...] = ()
    background_sigma: float = 0.0

    def __post_init__(self):
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be > 0")
        if self.background_sigma < 0:
            raise ValueError("background_sigma must be >= 0")


@dataclass
class SampleBlock:
    """A timestamped block of complex baseband samples for one channel."""

    channel: str
    index: int
    start_mjd: float
    sample_rate: float
    samples: np.ndarray


def unit_amplitude(noise_sigma: float, sample_rate: float) -> float:
    """Tone amplitude that yields 0 dB expected gain in one 3.7 Hz bin.

    Per-quadrature noise sigma gives total complex noise power 2*sigma^2
    spread over ``frame_length`` FFT bins, so the per-bin noise power is
    2*sigma^2/N; a tone of amplitude sqrt(2/N)*sigma concentrates exactly
    that much power in its bin.
    """
    return noise_sigma * np.sqrt(2.0 / frame_length(sample_rate))


def _block_rng(seed: int, channel_index: int, block_index: int, stream: int) -> np.random.Generator:
    # Philox is counter-based: the key alone fixes the block's samples.
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(
        [seed, channel_index, block_index, stream])))


def _noise_block(seed: int, channel_index: int, block_index: int, n: int,
                 sigma: float, stream: int = 0) -> np.ndarray:
    rng = _block_rng(seed, channel_index, block_index, stream)
    z = rng.standard_normal(2 * n, dtype=np.float32).view(np.complex64)
    z *= np.float32(sigma)
    return z


def _validate_bursts(plan: ChannelPlan, model: SignalModel) -> None:
    half = plan.sample_rate / 2.0
    for b in model.bursts:
        for ch, t0, f, _a in b.elements():
            if ch not in plan.labels:
                raise ValueError(f"burst case {b.case!r} needs channel {ch!r}, plan has {plan.labels}")
            if t0 < 0 or t0 + b.duration_s > plan.duration_s + 1e-9:
                raise ValueError(f"burst element at t={t0}s (+{b.duration_s}s) outside stream duration")
            if abs(f) > half:
                raise ValueError(f"burst frequency {f} Hz outside +-{half} Hz baseband")


def generate_awgn(plan: ChannelPlan, sigma: float, channel: str,
                  workers: int = 1) -> Iterator[SampleBlock]:
    """Yield one channel's noise-only stream, block by block.

    Blocks are one analysis frame long and individually reproducible from
    (seed, channel index, block index), which is what makes multi-worker
    generation deterministic.
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if channel not in plan.labels:
        raise ValueError(f"unknown channel {channel!r}")
    ci = plan.labels.index(channel)
    nblk = plan.frame_len
    total = plan.n_samples
    n_blocks = (total + nblk - 1) // nblk

    def make(bi: int) -> SampleBlock:
        n = min(nblk, total - bi * nblk)
        z = _noise_block(plan.seed, ci, bi, n, sigma)
        mjd = plan.start_mjd + (bi * nblk) / plan.sample_rate / 86400.0
        return SampleBlock(channel, bi, mjd, plan.sample_rate, z)

    if workers <= 1:
        for bi in range(n_blocks):
            yield make(bi)
        return
    # Keep a bounded window of blocks in flight; results are consumed in
    # index order, so the stream is identical to the single-worker path.
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = {}
        next_submit = 0
        for bi in range(n_blocks):
            while next_submit < min(bi + workers + 2, n_blocks):
                pending[next_submit] = pool.submit(make, next_submit)
                next_submit += 1
            yield pending.pop(bi).result()


def inject_bursts(blocks: Iterable[SampleBlock], plan: ChannelPlan,
                  model: SignalModel, channel: str) -> Iterator[SampleBlock]:
    """Add the model's bursts (and optional background) onto a block stream.

    With no bursts routed to this channel and background off, blocks pass
    through untouched.
    """
    _validate_bursts(plan, model)
    ci = plan.labels.index(channel)
    nblk = plan.frame_len
    for block in blocks:
        z = block.samples
        b0 = block.index * nblk
        b1 = b0 + len(z)
        if model.background_sigma > 0:
            z = z + _noise_block(plan.seed, ci, block.index, len(z),
                                 model.background_sigma, stream=1)
        for burst in model.bursts:
            for ch, t0, f, a in burst.elements():
                if ch != channel:
                    continue
                s0 = int(round(t0 * plan.sample_rate))
                s1 = s0 + int(round(burst.duration_s * plan.sample_rate))
                lo, hi = max(s0, b0), min(s1, b1)
                if lo >= hi:
                    continue
                amp = a * unit_amplitude(model.noise_sigma, plan.sample_rate)
                idx = np.arange(lo, hi, dtype=np.float64)
                tone = amp * np.exp(2j * np.pi * f * idx / plan.sample_rate)
                if z is block.samples:
                    z = z.copy()
                z[lo - b0:hi - b0] += tone.astype(np.complex64)
        if z is not block.samples:
            block = SampleBlock(block.channel, block.index, block.start_mjd,
                                block.sample_rate, z)
        yield block


def synthesize_channel(plan: ChannelPlan, model: SignalModel, channel: str,
                       workers: int = 1) -> Iterator[SampleBlock]:
    """Noise generation and burst injection composed for one channel."""
    return inject_bursts(generate_awgn(plan, model.noise_sigma, channel, workers),
                         plan, model, channel)


def synthesize(plan: ChannelPlan, model: SignalModel,
               workers: int = 1) -> dict[str, Iterator[SampleBlock]]:
    """Per-channel block iterators for the whole plan."""
    return {ch: synthesize_channel(plan, model, ch, workers) for ch in plan.labels}


def collect(blocks: Iterable[SampleBlock | np.ndarray]) -> np.ndarray:
    """Concatenate a block stream into one array (test/analysis helper)."""
    arrs = [b.samples if isinstance(b, SampleBlock) else np.asarray(b) for b in blocks]
    if not arrs:
        return np.zeros(0, dtype=np.complex64)
    return np.concatenate(arrs)


# ---------------------------------------------------------------------------
# IQ file format
#
# Little-endian fixed header:
#   magic "PPIQ0001" (8s), version (u16), flags (u16), sample_rate (f64),
#   center_rf_hz (f64), start_mjd (f64), gain (f64), site_id (16s NUL-padded),
#   polarization (8s NUL-padded), n_samples (u64), n_clipped (u64)
# then a u32 length-prefixed UTF-8 block holding the resolved run
# configuration, then interleaved signed 8-bit I,Q samples.  A float value v
# is stored as clip(round(v * gain), -127, 127); gain therefore sets the
# full-scale amplitude 127/gain, and readback divides codes by gain.
# ---------------------------------------------------------------------------


@dataclass
class IqMeta:
    sample_rate: float
    center_rf_hz: float
    start_mjd: float
    gain: float
    site_id: str
    polarization: str
    n_samples: int
    n_clipped: int
    config_text: str = ""

    @property
    def clip_fraction(self) -> float:
        return self.n_clipped / self.n_samples if self.n_samples else 0.0


def write_iq_file(path, blocks, *, sample_rate: float, center_rf_hz: float,
                  start_mjd: float, site_id: str, polarization: str,
                  gain: float, config_text: str = "",
                  clip_warn_fraction: float = 1e-3) -> IqMeta:
    """Quantize a sample stream to interleaved int8 IQ and write it.

    ``blocks`` may be an ndarray, or any iterable of ndarrays/SampleBlocks.
    Returns the header metadata, including the clipped-sample count; a
    clipping fraction above ``clip_warn_fraction`` is logged as a warning
    (the data is still written, saturated).
    """
    if gain <= 0:
        raise ValueError("gain must be > 0")
    if isinstance(blocks, np.ndarray):
        blocks = [blocks]
    cfg = config_text.encode()
    n_samples = 0
    n_clipped = 0
    with open(path, "wb") as f:
        f.write(_IQ_FIXED.pack(_IQ_MAGIC, _IQ_VERSION, 0, sample_rate, center_rf_hz,
                               start_mjd, gain, site_id.encode()[:16],
                               polarization.encode()[:8], 0, 0))
        f.write(struct.pack("<I", len(cfg)))
        f.write(cfg)
        for b in blocks:
            z = b.samples if isinstance(b, SampleBlock) else np.asarray(b)
            flat = np.empty(2 * len(z), dtype=np.float32)
            flat[0::2] = z.real
            flat[1::2] = z.imag
            codes = np.rint(flat * np.float32(gain))
            n_clipped += int(np.count_nonzero(np.abs(codes) > 127))
            np.clip(codes, -127, 127, out=codes)
            codes.astype(np.int8).tofile(f)
            n_samples += len(z)
        # back-patch the sample/clip counters now that the stream is known
        f.seek(_IQ_FIXED.size - 16)
        f.write(struct.pack("<QQ", n_samples, n_clipped))
    meta = IqMeta(sample_rate, center_rf_hz, start_mjd, gain, site_id,
                  polarization, n_samples, n_clipped, config_text)
    if meta.clip_fraction > clip_warn_fraction:
        log.warning("%s: clipping fraction %.3g exceeds limit %.3g",
                    path, meta.clip_fraction, clip_warn_fraction)
    return meta


def _read_meta(f) -> IqMeta:
    raw = f.read(_IQ_FIXED.size)
    if len(raw) != _IQ_FIXED.size:
        raise ValueError("truncated IQ header")
    (magic, version, _flags, fs, rf, mjd, gain, site, pol,
     n_samples, n_clipped) = _IQ_FIXED.unpack(raw)
    if magic != _IQ_MAGIC:
        raise ValueError(f"bad IQ magic {magic!r}")
    if version != _IQ_VERSION:
        raise ValueError(f"unsupported IQ version {version}")
    (cfg_len,) = struct.unpack("<I", f.read(4))
    cfg = f.read(cfg_len).decode()
    return IqMeta(fs, rf, mjd, gain, site.rstrip(b"\0").decode(),
                  pol.rstrip(b"\0").decode(), n_samples, n_clipped, cfg)


def read_iq_meta(path) -> IqMeta:
    """Read just the header of an IQ file (metadata + embedded config)."""
    with open(path, "rb") as f:
        return _read_meta(f)


def read_iq_file(path) -> tuple[np.ndarray, IqMeta]:
    """Load a whole IQ file back to complex64 (small files / tests)."""
    with open(path, "rb") as f:
        meta = _read_meta(f)
        codes = np.fromfile(f, dtype=np.int8, count=2 * meta.n_samples)
    flat = codes.astype(np.float32) / np.float32(meta.gain)
    return flat[0::2] + 1j * flat[1::2], meta


def iter_iq_blocks(path, block_samples: int | None = None) -> tuple[IqMeta, Iterator[np.ndarray]]:
    """Stream an IQ file in fixed-size blocks without loading it whole.

    Defaults to one analysis frame per block.  The trailing partial block,
    if any, is yielded as-is (the channelizer discards partial frames).
    """
    f = open(path, "rb")
    meta = _read_meta(f)
    n = block_samples or frame_length(meta.sample_rate)

    def gen() -> Iterator[np.ndarray]:
        try:
            remaining = meta.n_samples
            while remaining > 0:
                take = min(n, remaining)
                codes = np.fromfile(f, dtype=np.int8, count=2 * take)
                if len(codes) < 2 * take:
                    raise ValueError(f"{path}: payload shorter than header n_samples")
                flat = codes.astype(np.float32) / np.float32(meta.gain)
                yield flat[0::2] + 1j * flat[1::2]
                remaining -= take
        finally:
            f.close()

    return meta, gen()
