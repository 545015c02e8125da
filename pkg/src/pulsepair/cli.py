"""Batch command-line front end for the pulse-pair pipeline.

One binary, one subcommand per stage: synth, detect, excise, pairs,
analyze, mc-verify.  Every parameter lives in an INI config; the flags
only pick the config and override the seed, output directory, and figure
emission.  Outputs embed the resolved config so each stage can be
regenerated byte-identically from its own artifacts.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import channelizer, pairs, report, rfi, stats, synth
from .config import ConfigError, RunConfig, load_config

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VALIDATION = 4


class ValidationError(Exception):
    """A numerical verification failed (mc-verify out of tolerance)."""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.get("run", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit_figures(cfg: RunConfig) -> bool:
    return cfg.getbool("run", "emit_figures")


def _excision_config(cfg: RunConfig) -> rfi.ExcisionConfig:
    raw_thr = cfg.get("excise", "iir_threshold_db").strip()
    return rfi.ExcisionConfig(
        static_bands=cfg.static_bands(),
        persistent_factor=cfg.getfloat("excise", "persistent_factor"),
        persistent_min_count=cfg.getint("excise", "persistent_min_count"),
        iir_alpha=cfg.getfloat("excise", "iir_alpha"),
        iir_threshold_db=float(raw_thr) if raw_thr else None,
        harmonic_base_hz=cfg.getfloat("excise", "harmonic_base_hz"),
        harmonic_halfwidth_hz=cfg.getfloat("excise", "harmonic_halfwidth_hz"),
        snr_single_min_db=cfg.getfloat("detect", "single_min_db"),
        snr_comp_min_db=cfg.getfloat("detect", "comp_min_db"),
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    plan = synth.ChannelPlan(
        sample_rate=cfg.getfloat("synth", "sample_rate_hz"),
        center_rf_hz=cfg.getfloat("synth", "center_rf_hz"),
        duration_s=cfg.getfloat("synth", "duration_s"),
        start_mjd=cfg.getfloat("synth", "start_mjd"),
        labels=tuple(cfg.getlist("synth", "labels")),
        site_id=cfg.get("synth", "site"),
        seed=cfg.getint("run", "seed"),
    )
    model = synth.SignalModel(
        noise_sigma=cfg.getfloat("synth", "noise_sigma"),
        bursts=tuple(synth.BurstSpec(**kw) for kw in cfg.bursts()),
        background_sigma=cfg.getfloat("synth", "background_sigma"),
    )
    gain = cfg.getfloat("synth", "gain")
    workers = cfg.getint("run", "workers")
    resolved = cfg.resolved_text()
    for label, blocks in synth.synthesize(plan, model, workers).items():
        path = out / f"iq_{plan.site_id}_{label}.iq"
        meta = synth.write_iq_file(
            path, blocks, sample_rate=plan.sample_rate,
            center_rf_hz=plan.center_rf_hz, start_mjd=plan.start_mjd,
            site_id=plan.site_id, polarization=label, gain=gain,
            config_text=resolved)
        print(f"synth: {path} samples={meta.n_samples} "
              f"clip_fraction={meta.clip_fraction:.3g}")
    return EXIT_OK


def cmd_detect(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    inputs = cfg.getlist("detect", "inputs", "")
    if not inputs:
        raise ConfigError("[detect] inputs: no IQ files listed")
    duty = cfg.duty_cycle()
    workers = cfg.getint("run", "workers")
    inline = cfg.getbool("detect", "inline_excision", "false")
    exc = _excision_config(cfg) if inline else None
    for ip in inputs:
        meta, blocks = synth.iter_iq_blocks(ip)
        site_name = cfg.get("detect", "site").strip() or meta.site_id
        site = cfg.site(site_name)
        n_processed = 0

        def counted(stream):
            nonlocal n_processed
            for spec in stream:
                n_processed += 1
                yield spec

        spectra = channelizer.channelize(blocks, meta.sample_rate,
                                         start_mjd=meta.start_mjd,
                                         duty_cycle=duty, workers=workers)
        events = channelizer.detect_events(
            counted(spectra), sample_rate=meta.sample_rate,
            center_rf_hz=meta.center_rf_hz, site=site,
            polarization=meta.polarization,
            single_min_db=cfg.getfloat("detect", "single_min_db"),
            comp_min_db=cfg.getfloat("detect", "comp_min_db"),
            segment_bins=cfg.getint("detect", "segment_bins"))
        n_raw = len(events)
        if exc is not None:
            events = [e for e in events
                      if not rfi.harmonic_zone(e.rf_freq_hz, exc)
                      and not rfi.in_static_band(e.rf_freq_hz, exc)]
        fields = dict(cfg.header_fields())
        fields.update(n_frames=str(n_processed),
                      sample_rate_hz=f"{meta.sample_rate:g}",
                      center_rf_hz=f"{meta.center_rf_hz:g}",
                      duty_cycle=f"{duty:g}")
        paths = channelizer.write_event_files(
            events, out, site_id=site.site_id, polarization=meta.polarization,
            header_fields=fields, config_lines=cfg.resolved_lines(),
            start_mjd=meta.start_mjd)
        dropped_note = f" pre_excision={n_raw}" if exc is not None else ""
        for p in paths:
            print(f"detect: {p} events={len(events)} frames={n_processed}"
                  + dropped_note)
    return EXIT_OK


def cmd_excise(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    inputs = cfg.getlist("excise", "inputs", "")
    if not inputs:
        raise ConfigError("[excise] inputs: no event files listed")
    exc = _excision_config(cfg)
    order = tuple(cfg.getlist("excise", "order"))
    for ip in inputs:
        ef = channelizer.read_event_file(ip)
        try:
            n_frames = int(ef.meta["n_frames"])
            sample_rate = float(ef.meta["sample_rate_hz"])
            center_rf = float(ef.meta["center_rf_hz"])
        except KeyError as exc_key:
            raise ConfigError(f"{ip}: event header missing {exc_key}") from exc_key
        result = rfi.apply_excision(ef.events, exc, n_frames=n_frames,
                                    sample_rate=sample_rate,
                                    center_rf_hz=center_rf, order=order)
        stem = Path(ip).stem
        fields = dict(ef.meta)
        fields.update(cfg.header_fields())
        kept_path = channelizer.write_event_rows(
            out / f"{stem}.kept.csv", result.kept, header_fields=fields,
            config_lines=cfg.resolved_lines())
        masks_path = rfi.write_masks_file(
            out / f"{stem}.masks.csv", result.masks, header_fields=fields,
            config_lines=cfg.resolved_lines())
        audit_path = rfi.write_audit_file(
            out / f"{stem}.audit.csv", result.audit, header_fields=fields,
            config_lines=cfg.resolved_lines())
        n_drop_rows = sum(1 for a in result.audit if a.action == "drop")
        print(f"excise: {kept_path} kept={len(result.kept)} "
              f"dropped={len(result.dropped)} audit_drop_rows={n_drop_rows} "
              f"excised_fraction={result.excised_fraction:.4f}")
        for w in result.warnings:
            log.warning("%s: %s", ip, w)
        print(f"excise: {masks_path} masks={len(result.masks)}")
        print(f"excise: {audit_path} rows={len(result.audit)}")
    return EXIT_OK


def cmd_pairs(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    input_a = cfg.get("pairs", "input_a", "")
    input_b = cfg.get("pairs", "input_b", "")
    if not input_a or not input_b:
        raise ConfigError("[pairs] input_a/input_b: need two event files")
    ev_a = channelizer.read_event_file(input_a).events
    ev_b = channelizer.read_event_file(input_b).events
    reference = cfg.site(cfg.get("pairs", "reference_site"))
    sites = {sid: cfg.site(sid)
             for sid in {e.site_id for e in ev_a} | {e.site_id for e in ev_b}}
    dt_max = cfg.getfloat("pairs", "dt_max_s")
    df_max = cfg.getfloat("pairs", "df_max_hz")
    df50 = cfg.getfloat("pairs", "df50_hz")
    gate = cfg.getfloat("pairs", "association_gate")

    found = pairs.find_pairs(ev_a, ev_b, reference=reference, sites=sites,
                             dt_max_s=dt_max, df_max_hz=df_max)
    fields = cfg.header_fields()
    lines = cfg.resolved_lines()
    pair_path = pairs.write_pair_report(out / "pairs.csv", found,
                                        header_fields=fields, config_lines=lines)
    print(f"pairs: {pair_path} pairs={len(found)}")

    anchors = pairs.find_anchors(
        found, df_anchor_max_hz=cfg.getfloat("pairs", "anchor_df_max_hz"))
    # association search casts the net the gate implies, not the narrow
    # reporting window
    wide_df = gate * df50 / math.log(2.0)
    wide = (pairs.find_pairs(ev_a, ev_b, reference=reference, sites=sites,
                             dt_max_s=dt_max, df_max_hz=wide_df)
            if anchors else [])
    rows = []
    for anchor in anchors:
        aset = pairs.find_associated(wide, anchor, df50_hz=df50, p_gate=gate)
        if aset.members:
            alpha = stats.p0_df_awgn(aset.max_member_df_hz, df50)
            lk = stats.method_a(alpha, aset.n_trials, aset.n_df)
        else:
            alpha, lk = gate, 1.0
        rows.append((aset, alpha, lk))
    assoc_path = pairs.write_association_report(out / "associations.csv", rows,
                                                header_fields=fields,
                                                config_lines=lines)
    print(f"pairs: {assoc_path} anchors={len(rows)}")

    series = report.write_scatter_series(found, str(out), stem="pairs",
                                         header_fields=fields, config_lines=lines)
    print(f"pairs: wrote {len(series)} series files")
    if _emit_figures(cfg):
        figs = report.render_scatter_figures(found, str(out), stem="pairs")
        print(f"pairs: rendered {len(figs)} figures")
    return EXIT_OK


def cmd_analyze(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    lines_out: list[str] = []

    windows = stats.make_ra_windows(cfg.getfloat("analyze", "ra_center_hours"),
                                    cfg.getfloat("analyze", "ra_width_hours"),
                                    cfg.getint("analyze", "ra_window_count"))
    ra_obs = cfg.getfloat("analyze", "ra_obs_hours")
    for lo, hi in windows:
        p = stats.ra_probability((lo, hi), ra_obs_hours=ra_obs)
        lines_out.append(f"ra_window {lo:.2f}-{hi:.2f} p_theoretical = {p:.6g}")

    if cfg.parser.has_option("method_a", "alpha"):
        alpha = cfg.getfloat("method_a", "alpha")
        n = cfg.getint("method_a", "n_trials")
        n_df = cfg.getint("method_a", "n_df")
        pa = stats.method_a(alpha, n, n_df)
        lines_out.append(f"method_a alpha={alpha:g} n={n} n_df={n_df} p = {pa:.6g}")

    chain_steps = cfg.chain_steps()
    if chain_steps:
        chain = stats.PosteriorChain()
        for label, prior, likelihood, p_data in chain_steps:
            post = chain.update(label, likelihood, p_data, prior=prior)
            lines_out.append(f"chain {label} posterior = {post:.6g}")
        lines_out.append(f"chain final posterior = {chain.posterior:.6g}")

    pairs_input = cfg.get("analyze", "pairs_input", "").strip()
    if pairs_input:
        rows = pairs.read_pair_report(pairs_input)
        mode = cfg.get("analyze", "window_probability", "empirical")
        if mode == "theoretical":
            probs = [stats.ra_probability(w, ra_obs_hours=ra_obs) for w in windows]
        elif mode == "empirical":
            probs = None
        else:
            raise ConfigError(f"window_probability {mode!r} not "
                              "'empirical' or 'theoretical'")
        mb = stats.method_b(rows, windows, probabilities=probs)
        curve_path = report.write_likelihood_curves(
            mb, str(out), header_fields=cfg.header_fields(),
            config_lines=cfg.resolved_lines())
        lines_out.append(f"method_b pairs = {len(rows)}")
        for j, (lo, hi) in enumerate(windows):
            lmin, at = mb.min_l(j)
            lines_out.append(f"method_b window {lo:.2f}-{hi:.2f} "
                             f"min_l = {lmin:.6g} at_trial = {at} "
                             f"discontinuities = {len(mb.discontinuities[j])}")
        print(f"analyze: {curve_path}")
        if _emit_figures(cfg):
            fig = report.render_likelihood_figure(mb, str(out))
            print(f"analyze: {fig}")

    path = out / "analysis.txt"
    kv = " ".join(f"{k}={v}" for k, v in sorted(cfg.header_fields().items()))
    with open(path, "w") as f:
        f.write(("#pulsepair-analysis v1 " + kv).rstrip() + "\n")
        for line in cfg.resolved_lines():
            f.write(f"#cfg {line}\n")
        for line in lines_out:
            f.write(line + "\n")
    print(f"analyze: {path}")
    for line in lines_out:
        print(f"  {line}")
    return EXIT_OK


def cmd_mc_verify(cfg: RunConfig) -> int:
    from . import mc

    out = _out_dir(cfg)
    n_frames = cfg.getint("mc", "n_frames")
    n_bins = cfg.getint("mc", "n_bins")
    single = cfg.getfloat("detect", "single_min_db")
    comp = cfg.getfloat("detect", "comp_min_db")

    oracle = mc.crossing_count_oracle(
        mc.draw_noise_spectra(n_frames, n_bins,
                              seed=cfg.getint("mc", "oracle_seed")),
        single_min_db=single, comp_min_db=comp)
    prod = mc.crossing_count_production(
        mc.draw_noise_spectra(n_frames, n_bins,
                              seed=cfg.getint("mc", "production_seed")),
        single_min_db=single, comp_min_db=comp)
    z = prod.z_score(oracle)

    d = mc.df50_mc(n_frames=cfg.getint("mc", "df50_n_frames"),
                   bandwidth_hz=cfg.getfloat("mc", "df50_bandwidth_hz"),
                   events_per_frame=cfg.getfloat("mc", "df50_events_per_frame"),
                   seed=cfg.getint("mc", "df50_seed"))

    r_lo = stats.rice_rayleigh_ratio(5.0, 1.0)
    r_hi = stats.rice_rayleigh_ratio(5.0, 4.0)
    chk = mc.rice_ratio_check(5.0, 4.0)

    lines = [
        f"bin_frames = {oracle.n_bin_frames}",
        f"oracle_rate = {oracle.rate:.6g} +- {oracle.sigma:.3g}",
        f"production_rate = {prod.rate:.6g} +- {prod.sigma:.3g}",
        f"rate_z = {z:.3f}",
        f"single_window_closed_form = {mc.single_window_rate(single, comp):.6g}",
        f"df50_empirical_hz = {d['empirical_df50_hz']:.6g}",
        f"df50_analytic_hz = {d['analytic_df50_hz']:.6g}",
        f"df50_agreement = {d['agreement']:.6g}",
        f"rice_ratio_5_1 = {r_lo:.6g}",
        f"rice_ratio_5_4 = {r_hi:.6g}",
        f"rice_check_rel_diff = {chk['rel_diff']:.3g}",
    ]
    path = out / "mc_report.txt"
    kv = " ".join(f"{k}={v}" for k, v in sorted(cfg.header_fields().items()))
    with open(path, "w") as f:
        f.write(("#pulsepair-mc v1 " + kv).rstrip() + "\n")
        for line in cfg.resolved_lines():
            f.write(f"#cfg {line}\n")
        for line in lines:
            f.write(line + "\n")
    print(f"mc-verify: {path}")
    for line in lines:
        print(f"  {line}")

    problems = []
    if abs(z) > 3.0:
        problems.append(f"crossing rate differs from oracle by {z:.2f} sigma")
    if abs(d["agreement"] - 1.0) > 0.03:
        problems.append(f"df50 agreement {d['agreement']:.4f} outside 3%")
    if not 16.0 <= r_lo <= 17.0 or abs(r_hi - 14612.0) > 75.0:
        problems.append("Ricean ratio outside expected range")
    if chk["rel_diff"] > 1e-9:
        problems.append("scaled Bessel cross-check failed")
    if problems:
        raise ValidationError("; ".join(problems))
    print("mc-verify: all checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "synth": cmd_synth,
    "detect": cmd_detect,
    "excise": cmd_excise,
    "pairs": cmd_pairs,
    "analyze": cmd_analyze,
    "mc-verify": cmd_mc_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulsepair",
        description="Synthesize, detect, excise, pair, and analyze "
                    "narrowband pulse-pair data.")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="increase log verbosity (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True,
                       help="INI config path (bare names are searched in "
                            "$PULSEPAIR_CONFIG_DIR)")
        p.add_argument("--seed", type=int, default=None,
                       help="override [run] seed")
        p.add_argument("--out", default=None, help="override [run] out")
        p.add_argument("--emit-figures", action="store_true",
                       help="render PNG figures alongside the CSV series")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.set("run", "seed", str(args.seed))
        if args.out is not None:
            cfg.set("run", "out", args.out)
        if args.emit_figures:
            cfg.set("run", "emit_figures", "true")
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("i/o error: %s", exc)
        return EXIT_IO
    except ValidationError as exc:
        log.error("validation failed: %s", exc)
        return EXIT_VALIDATION
    except (ValueError, ArithmeticError) as exc:
        log.error("validation error: %s", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
