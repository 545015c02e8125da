"""Run configuration: INI files, defaults, resolution, and embedding.

Every pipeline output embeds the fully-resolved configuration (defaults
merged under user values) plus its hash, so any artifact can be
regenerated byte-identically from its own header.  Worker count is
execution detail, not configuration, and is excluded from the resolved
form.
"""

from __future__ import annotations

import configparser
import hashlib
import logging
import os
from dataclasses import dataclass, field

from .constants import SITES, SiteGeometry

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

CONFIG_ENV_VAR = "PULSEPAIR_CONFIG_DIR"

# keys that may differ between runs that must produce identical bytes
_VOLATILE = {("run", "workers")}

VALID_DUTY_CYCLES = (0.25, 0.33, 1.0)

DEFAULTS: dict[str, dict[str, str]] = {
    "run": {
        "out": "out",
        "seed": "1",
        "workers": "1",
        "emit_figures": "false",
    },
    "synth": {
        "sample_rate_hz": "1e6",
        "center_rf_hz": "1.425e9",
        "duration_s": "60.0",
        "start_mjd": "58345.0",
        "noise_sigma": "1.0",
        "background_sigma": "0.0",
        "site": "desk",
        "labels": "R,L",
        "gain": "24.0",
    },
    "detect": {
        "duty_cycle": "1.0",
        "single_min_db": "11.0",
        "comp_min_db": "11.8",
        "segment_bins": "256",
        "polarization": "",
        "site": "",
    },
    "excise": {
        "order": "persistent,dynamic,harmonic,static",
        "persistent_factor": "10.0",
        "persistent_min_count": "4",
        "iir_alpha": "0.1",
        "iir_threshold_db": "",
        "harmonic_base_hz": "500e3",
        "harmonic_halfwidth_hz": "25e3",
        "static_bands": "",
    },
    "pairs": {
        "dt_max_s": "3.0",
        "df_max_hz": "400.0",
        "anchor_df_max_hz": "15.5",
        "association_gate": "0.03",
        "df50_hz": "850e3",
        "reference_site": "green_bank",
    },
    "analyze": {
        "ra_center_hours": "5.25",
        "ra_width_hours": "0.3",
        "ra_window_count": "5",
        "ra_obs_hours": "4.0",
        "df50_hz": "850e3",
        "dt50_s": "0.27",
        "window_probability": "empirical",
    },
    "mc": {
        "n_frames": "400",
        "n_bins": "270000",
        "oracle_seed": "101",
        "production_seed": "202",
        "df50_seed": "7",
        "df50_n_frames": "2000",
        "df50_events_per_frame": "150.0",
        "df50_bandwidth_hz": "1e6",
    },
}


class ConfigError(Exception):
    """Invalid, missing, or malformed configuration."""


@dataclass
class RunConfig:
    """One run's configuration: user INI merged over package defaults."""

    parser: configparser.RawConfigParser
    path: str | None = None
    overrides: dict = field(default_factory=dict)

    # -- lookups ---------------------------------------------------------

    def get(self, section: str, key: str, fallback: str | None = None) -> str:
        if self.parser.has_option(section, key):
            return self.parser.get(section, key)
        if section in DEFAULTS and key in DEFAULTS[section]:
            return DEFAULTS[section][key]
        if fallback is not None:
            return fallback
        raise ConfigError(f"{self._where()}: missing [{section}] {key}")

    def getfloat(self, section: str, key: str, fallback: str | None = None) -> float:
        raw = self.get(section, key, fallback)
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{self._where()}: [{section}] {key} = {raw!r} "
                              "is not a number") from exc

    def getint(self, section: str, key: str, fallback: str | None = None) -> int:
        raw = self.get(section, key, fallback)
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{self._where()}: [{section}] {key} = {raw!r} "
                              "is not an integer") from exc

    def getbool(self, section: str, key: str, fallback: str | None = None) -> bool:
        raw = self.get(section, key, fallback).strip().lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{self._where()}: [{section}] {key} = {raw!r} "
                          "is not a boolean")

    def getlist(self, section: str, key: str, fallback: str | None = None) -> list[str]:
        raw = self.get(section, key, fallback)
        return [t.strip() for t in raw.split(",") if t.strip()]

    def set(self, section: str, key: str, value: str) -> None:
        if not self.parser.has_section(section):
            self.parser.add_section(section)
        self.parser.set(section, key, value)

    def _where(self) -> str:
        return self.path or "<config>"

    # -- domain accessors ------------------------------------------------

    def duty_cycle(self) -> float:
        duty = self.getfloat("detect", "duty_cycle")
        if not any(abs(duty - v) < 1e-9 for v in VALID_DUTY_CYCLES):
            raise ConfigError(f"{self._where()}: duty_cycle {duty} not one of "
                              f"{VALID_DUTY_CYCLES}")
        return duty

    def site(self, name: str) -> SiteGeometry:
        """Resolve a site by name: [site.NAME] section first, then presets."""
        section = f"site.{name}"
        if self.parser.has_section(section):
            return SiteGeometry(
                site_id=name,
                latitude_deg=self.getfloat(section, "latitude_deg"),
                longitude_deg=self.getfloat(section, "longitude_deg"),
                pointing_az_deg=self.getfloat(section, "pointing_az_deg", "180.0"),
                pointing_dec_deg=self.getfloat(section, "pointing_dec_deg", "-7.6"),
            )
        if name in SITES:
            return SITES[name]
        raise ConfigError(f"{self._where()}: unknown site {name!r} "
                          "(no [site.{name}] section, not a preset)")

    def static_bands(self) -> tuple[tuple[float, float], ...]:
        """Parse 'lo1-hi1,lo2-hi2' in Hz; the name '26ft' selects the preset."""
        from .rfi import STATIC_BANDS_26FT

        raw = self.get("excise", "static_bands").strip()
        if not raw:
            return ()
        if raw == "26ft":
            return STATIC_BANDS_26FT
        bands = []
        for tok in raw.split(","):
            tok = tok.strip()
            if not tok:
                continue
            try:
                lo, hi = (float(x) for x in tok.split("-"))
            except ValueError as exc:
                raise ConfigError(f"{self._where()}: bad band {tok!r}; "
                                  "expected 'low-high' in Hz") from exc
            bands.append((lo, hi))
        return tuple(bands)

    def bursts(self) -> list[dict]:
        """[burst.N] sections sorted by N, as keyword dictionaries."""
        out = []
        for name in sorted(self.parser.sections()):
            if not name.startswith("burst."):
                continue
            try:
                ix = int(name.split(".", 1)[1])
            except ValueError as exc:
                raise ConfigError(f"{self._where()}: bad section [{name}]") from exc
            out.append((ix, {
                "case": self.get(name, "case"),
                "t_start_s": self.getfloat(name, "t_start_s"),
                "gap_s": self.getfloat(name, "gap_s", "0.0"),
                "duration_s": self.getfloat(name, "duration_s", "0.27"),
                "f1_hz": self.getfloat(name, "f1_hz"),
                "f2_hz": self.getfloat(name, "f2_hz"),
                "a1": self.getfloat(name, "a1"),
                "a2": self.getfloat(name, "a2"),
            }))
        return [kw for _, kw in sorted(out)]

    def chain_steps(self) -> list[tuple[str, float | None, float, float]]:
        """[chain] stepN = label, prior, likelihood[, p_data]; prior '.' carries."""
        if not self.parser.has_section("chain"):
            return []
        steps = []
        for key in sorted(self.parser.options("chain"),
                          key=lambda k: (len(k), k)):
            if not key.startswith("step"):
                continue
            parts = [t.strip() for t in self.parser.get("chain", key).split(",")]
            if len(parts) not in (3, 4):
                raise ConfigError(f"{self._where()}: [chain] {key} needs "
                                  "'label, prior, likelihood[, p_data]'")
            label = parts[0]
            prior = None if parts[1] == "." else float(parts[1])
            likelihood = float(parts[2])
            p_data = float(parts[3]) if len(parts) == 4 else 1.0
            steps.append((label, prior, likelihood, p_data))
        return steps

    # -- resolution and embedding ---------------------------------------

    def resolved_lines(self) -> list[str]:
        """Canonical 'section.key = value' lines, defaults merged, sorted."""
        merged: dict[tuple[str, str], str] = {}
        for section, keys in DEFAULTS.items():
            for key, value in keys.items():
                merged[(section, key)] = value
        for section in self.parser.sections():
            for key in self.parser.options(section):
                merged[(section, key)] = self.parser.get(section, key)
        return [f"{s}.{k} = {v}" for (s, k), v in sorted(merged.items())
                if (s, k) not in _VOLATILE]

    def resolved_text(self) -> str:
        return "\n".join(self.resolved_lines()) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.resolved_text().encode()).hexdigest()[:16]

    def header_fields(self) -> dict[str, str]:
        return {"config_sha256": self.config_hash()}


def _fresh_parser() -> configparser.RawConfigParser:
    return configparser.RawConfigParser()


def resolve_config_path(name: str) -> str:
    """A bare name that doesn't exist locally is looked up in the config dir."""
    if os.path.exists(name):
        return name
    cfg_dir = os.environ.get(CONFIG_ENV_VAR)
    if cfg_dir:
        candidate = os.path.join(cfg_dir, name)
        if os.path.exists(candidate):
            return candidate
    return name


def load_config(path: str) -> RunConfig:
    resolved = resolve_config_path(path)
    parser = _fresh_parser()
    try:
        with open(resolved, "r", encoding="utf-8") as f:
            parser.read_file(f, source=resolved)
    except OSError as exc:
        raise ConfigError(f"cannot read config {resolved!r}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {resolved!r}: {exc}") from exc
    return RunConfig(parser, resolved)


def config_from_text(text: str, path: str | None = None) -> RunConfig:
    parser = _fresh_parser()
    try:
        parser.read_string(text, source=path or "<embedded>")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config text: {exc}") from exc
    return RunConfig(parser, path)


def config_from_resolved_lines(lines: list[str], path: str | None = None) -> RunConfig:
    """Rebuild a RunConfig from canonical 'section.key = value' lines."""
    parser = _fresh_parser()
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            dotted, value = line.split("=", 1)
            section, key = dotted.strip().rsplit(".", 1)
        except ValueError as exc:
            raise ConfigError(f"bad resolved-config line {line!r}") from exc
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key.strip(), value.strip())
    return RunConfig(parser, path)


def read_embedded(path: str) -> RunConfig:
    """Recover the resolved configuration embedded in a pipeline artifact.

    IQ capture files carry a config text blob in their header; delimited
    reports carry '#cfg ' prefixed lines.
    """
    with open(path, "rb") as f:
        magic = f.read(8)
    if magic == b"PPIQ0001":
        from .synth import read_iq_meta

        meta = read_iq_meta(path)
        if not meta.config_text:
            raise ConfigError(f"{path}: no embedded config")
        return config_from_resolved_lines(
            meta.config_text.splitlines(), path)
    lines = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.startswith("#cfg "):
                lines.append(line[len("#cfg "):].rstrip("\n"))
            elif not line.startswith("#"):
                break
    if not lines:
        raise ConfigError(f"{path}: no embedded config")
    return config_from_resolved_lines(lines, path)
