"""Shared physical constants, timebase parameters, and site geometry presets."""

from __future__ import annotations

from dataclasses import dataclass

# Analysis frame length in seconds.  The FFT of one frame gives the
# 1/0.27 s ~ 3.7 Hz channel width that every downstream threshold and
# hyperparameter assumes, so this is not independently tunable.
FRAME_SECONDS = 0.27

# Width of a noise-estimation / excision spectral segment, in FFT bins.
# 256 contiguous bins x 3.7 Hz is the ~950 Hz band used both for the
# noise floor estimate and as the excision granularity.
SEGMENT_BINS = 256

SPEED_OF_LIGHT_M_S = 299_792_458.0

# Sidereal rate: one mean sidereal day advances RA by 24 h in
# 24/24.06570982 solar hours.
SIDEREAL_HOURS_PER_DAY = 24.06570982

# Earth equatorial rotation speed, m/s (w_earth * R_equatorial).
EARTH_EQUATORIAL_SPEED_M_S = 465.1

# Earth sidereal angular rate, rad/s.
EARTH_OMEGA_RAD_S = 7.292115e-5

EARTH_RADIUS_M = 6_378_137.0


def frame_length(sample_rate: float) -> int:
    """Number of complex samples per analysis frame."""
    n = int(round(sample_rate * FRAME_SECONDS))
    if n < 2:
        raise ValueError(f"sample_rate {sample_rate} too low for {FRAME_SECONDS}s frames")
    return n


@dataclass(frozen=True)
class SiteGeometry:
    """A fixed transit telescope: geodetic position plus pointing.

    Longitude is east-positive degrees.  The dish is assumed parked on the
    local meridian (azimuth 180 deg) at a fixed declination, the drift-scan
    configuration all timing/Doppler math in this package assumes.
    """

    site_id: str
    latitude_deg: float
    longitude_deg: float
    pointing_az_deg: float = 180.0
    pointing_dec_deg: float = -7.6


# Observatory presets.  Coordinates are good to ~0.01 deg, comfortably inside
# the 0.01 h RA tolerance used by the timing tests.  "desk" is the benchtop
# loopback setup; it shares the green_bank geometry so desk captures carry
# meaningful RA labels and need no Doppler correction against that site.
SITES: dict[str, SiteGeometry] = {
    "green_bank": SiteGeometry("green_bank", 38.4331, -79.8397),
    "haswell": SiteGeometry("haswell", 38.4556, -103.1535),
    "dunbarton": SiteGeometry("dunbarton", 43.1020, -71.6070),
    "desk": SiteGeometry("desk", 38.4331, -79.8397),
}


def get_site(name: str) -> SiteGeometry:
    try:
        return SITES[name]
    except KeyError:
        raise KeyError(f"unknown site {name!r}; known: {sorted(SITES)}") from None
