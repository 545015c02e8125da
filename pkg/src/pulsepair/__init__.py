"""Narrowband pulse-pair detection pipeline.

Synthesizes two-channel IQ captures with calibrated burst injections,
channelizes them into 0.27 s power spectra, detects SNR threshold
crossings, excises interference, pairs events across channels or sites
by interarrival time and frequency, and scores pair populations with
binomial and Bayesian chance-probability statistics.
"""

import logging

from .constants import FRAME_SECONDS, SEGMENT_BINS, SITES, SiteGeometry, get_site

__all__ = [
    "FRAME_SECONDS",
    "SEGMENT_BINS",
    "SITES",
    "SiteGeometry",
    "get_site",
    "__version__",
]

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())
