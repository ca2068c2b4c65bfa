"""Sweep, reach, PSD and scatter campaigns driven by an ExperimentConfig.

Results of a sweep live in one output directory:

``runs.jsonl``
    one JSON record per finished (format, fiber, distance, power, seed)
    tuple, appended by a single writer as runs complete; this is what
    resuming reads.
``sweep.csv``
    the MetricReport rows in configuration order.
``manifest.json``
    config hash, tool version, per-run seed/wall time/status and the list
    of output files.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from . import __version__
from .config import CSV_SCHEMA, ConfigError, ExperimentConfig, RunManifest, RunRecord
from .constellation import get_format, save_constellation
from .metrics import (MetricReport, ThresholdNotBracketed, circumferential_variance,
                      effective_snr, error_power, gmi_monte_carlo, reach_at_threshold,
                      write_reports)
from .nli_analysis import (power_fluctuation_psd, predicted_phase_noise_power, spm_filter,
                           xpm_filter)
from .channel import FIBER_PRESETS, propagate
from .txrx import DspOutput, receive, set_launch_power, transmit

log = logging.getLogger(__name__)


def _key(fmt: str, fiber: str, distance: float, power: float, seed: int) -> tuple:
    return (fmt, fiber, round(float(distance), 6), round(float(power), 6), int(seed))


def simulate(cfg: ExperimentConfig, fmt_name: str, distance: float, power: float,
             seed: int) -> DspOutput:
    """Transmit, propagate over ``distance`` km and receive the center channel.

    ``distance == 0`` is back-to-back: no fiber, no amplifier noise.
    """
    fmt = get_format(fmt_name)
    frame, wave = transmit(fmt, cfg.plan, cfg.n_symbols, cfg.sps, seed)
    wave = set_launch_power(wave, power)
    if distance == 0:
        return receive(wave, frame)
    link = cfg.link(distance)
    out = propagate(wave, link, seed)
    return receive(out, frame, link.fiber, distance)


def _run_one(cfg_dict: dict, key: tuple) -> dict:
    fmt_name, fiber, distance, power, seed = key
    cfg = ExperimentConfig.from_dict(cfg_dict)
    t0 = time.perf_counter()
    try:
        dsp = simulate(cfg, fmt_name, distance, power, seed)
        fmt = get_format(fmt_name)
        rep = MetricReport(fmt_name, fiber, distance, power, seed, cfg.n_symbols,
                           float(effective_snr(dsp)), gmi_monte_carlo(dsp, fmt),
                           error_power(dsp))
        return {"key": list(key), "status": "ok", "report": rep.row(),
                "wall_time": time.perf_counter() - t0, "error": ""}
    except Exception as e:  # recorded per tuple; the sweep goes on
        log.exception("run %s failed", key)
        return {"key": list(key), "status": "failed", "report": None,
                "wall_time": time.perf_counter() - t0, "error": f"{type(e).__name__}: {e}"}


def _load_records(path: Path) -> dict:
    recs = {}
    if path.is_file():
        for line in path.read_text().splitlines():
            if line.strip():
                r = json.loads(line)
                recs[tuple(r["key"])] = r
    return recs


def _prepare_dir(cfg: ExperimentConfig, out: Path, resume: bool) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    stored = out / "config.yaml"
    runs = out / "runs.jsonl"
    if resume and stored.is_file():
        old = ExperimentConfig.load(stored)
        if old.config_hash() != cfg.config_hash():
            raise ConfigError(f"{out} holds results of a different configuration")
    elif runs.exists():
        runs.unlink()
    cfg.dump(stored)
    return _load_records(runs)


def _coarse_keys(cfg: ExperimentConfig) -> list:
    fiber = cfg.fiber.upper()
    return [_key(f, fiber, d, p, s) for f in cfg.formats for d in cfg.distances_for(f)
            for p in cfg.powers for s in cfg.seeds_for(f)]


def _refine_keys(cfg: ExperimentConfig, reports: list) -> list:
    if cfg.refine_step <= 0:
        return []
    fiber = cfg.fiber.upper()
    keys = []
    for f in cfg.formats:
        for d in cfg.distances_for(f):
            opt = optimum(reports, f, d)
            if opt is None:
                continue
            for p in (opt["power"] - cfg.refine_step, opt["power"] + cfg.refine_step):
                keys += [_key(f, fiber, d, p, s) for s in cfg.seeds_for(f)]
    return keys


def _execute(cfg: ExperimentConfig, keys: list, records: dict, runs_path: Path,
             workers: int) -> int:
    todo = [k for k in dict.fromkeys(keys) if records.get(k, {}).get("status") != "ok"]
    if not todo:
        return 0
    log.info("%d runs to compute (%d done)", len(todo), len(records))
    cfg_dict = cfg.to_dict()
    with open(runs_path, "a") as fh:
        def write(rec):
            records[tuple(rec["key"])] = rec
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
            log.info("%s %s (%.1f s)", rec["status"], rec["key"], rec["wall_time"])

        if workers <= 1:
            for k in todo:
                write(_run_one(cfg_dict, k))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futs = [pool.submit(_run_one, cfg_dict, k) for k in todo]
                for fut in as_completed(futs):
                    write(fut.result())
    return len(todo)


def _reports(records: dict, keys: list) -> list:
    out = []
    for k in dict.fromkeys(keys):
        r = records.get(k)
        if r is not None and r["status"] == "ok":
            out.append(MetricReport(**r["report"]))
    return out


def _order(cfg: ExperimentConfig):
    rank = {f: i for i, f in enumerate(cfg.formats)}
    return lambda r: (rank[r.format], r.distance_km, r.launch_power_dbm, r.seed)


def run_sweep(cfg: ExperimentConfig, out_dir=None, workers: int = 1,
              resume: bool = True) -> RunManifest:
    """Run every tuple of ``cfg`` (skipping finished ones when resuming)."""
    cfg.validate()
    out = cfg.out_path(out_dir)
    records = _prepare_dir(cfg, out, resume)
    runs_path = out / "runs.jsonl"
    coarse = _coarse_keys(cfg)
    computed = _execute(cfg, coarse, records, runs_path, workers)
    refine = _refine_keys(cfg, _reports(records, coarse))
    computed += _execute(cfg, refine, records, runs_path, workers)
    keys = list(dict.fromkeys(coarse + refine))
    reports = sorted(_reports(records, keys), key=_order(cfg))

    header = f"schema {CSV_SCHEMA}; config {cfg.config_hash()}; version {__version__}"
    write_reports(reports, out / "sweep.csv", header)
    _write_rows(out / "optimum.csv", header, optimum_table(cfg, reports))
    _write_rows(out / "comparison.csv", header, comparison_table(cfg, reports))

    manifest = RunManifest(cfg.config_hash(), __version__)
    for k in keys:
        r = records.get(k)
        if r is None:
            continue
        manifest.runs.append(RunRecord(list(k), int(k[4]), r["status"], r["wall_time"],
                                       r["error"]))
    manifest.outputs = [str(out / n) for n in ("sweep.csv", "optimum.csv", "comparison.csv",
                                                "config.yaml", "runs.jsonl")]
    manifest.computed = computed
    manifest.write(out / "manifest.json")
    return manifest


def read_sweep(path) -> list:
    """MetricReport rows of a sweep CSV."""
    with open(path) as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        out = []
        for r in rows:
            out.append(MetricReport(r["format"], r["fiber"], float(r["distance_km"]),
                                    float(r["launch_power_dbm"]), int(r["seed"]),
                                    int(r["n_symbols"]), float(r["snr_eff_db"]), float(r["gmi"]),
                                    float(r["error_power"])))
    return out


# ---------------------------------------------------------------------------
# summaries


def power_curve(reports: list, fmt: str, distance: float) -> list:
    """Seed-averaged ``(power, gmi, snr_db, n_seeds)`` tuples in power order."""
    by_p = {}
    for r in reports:
        if r.format == fmt and abs(r.distance_km - distance) < 1e-6:
            by_p.setdefault(round(r.launch_power_dbm, 6), []).append(r)
    return [(p, float(np.mean([r.gmi for r in rs])), float(np.mean([r.snr_eff_db for r in rs])),
             len(rs)) for p, rs in sorted(by_p.items())]


def optimum(reports: list, fmt: str, distance: float) -> dict | None:
    """Launch power with the largest seed-averaged GMI.

    Ties (for instance GMI saturated at the SE) go to the higher effective
    SNR, then to the lower power.
    """
    c = power_curve(reports, fmt, distance)
    if not c:
        return None
    i = max(range(len(c)), key=lambda k: (c[k][1], c[k][2], -k))
    p, g, s, n = c[i]
    return {"power": p, "gmi": g, "snr_db": s, "n_seeds": n}


def value_at(reports: list, fmt: str, distance: float, power: float) -> tuple | None:
    for p, g, s, _ in power_curve(reports, fmt, distance):
        if abs(p - power) < 1e-6:
            return g, s
    return None


def format_pairs(formats: list) -> list:
    """(QCM, SP) format names of equal spectral efficiency, in SE order."""
    qcm = {get_format(f).bits_per_symbol: f for f in formats if "QCM" in f}
    sp = {get_format(f).bits_per_symbol: f for f in formats if "SP-" in f}
    return [(se, qcm[se], sp[se]) for se in sorted(set(qcm) & set(sp))]


def optimum_table(cfg: ExperimentConfig, reports: list) -> list:
    rows = []
    for f in cfg.formats:
        for d in cfg.distances_for(f):
            o = optimum(reports, f, d)
            if o is not None:
                rows.append({"format": f, "fiber": cfg.fiber.upper(), "distance_km": d,
                             "opt_power_dbm": o["power"], "gmi": o["gmi"],
                             "snr_eff_db": o["snr_db"], "n_seeds": o["n_seeds"]})
    return rows


def comparison_table(cfg: ExperimentConfig, reports: list) -> list:
    """QCM vs SP at each shared distance.

    ``snr_gain_db`` compares the two formats at the SP optimal power;
    ``gmi_gain`` compares each format at its own optimal power.
    """
    rows = []
    for se, q, s in format_pairs(cfg.formats):
        for d in sorted(set(cfg.distances_for(q)) & set(cfg.distances_for(s))):
            oq, os_ = optimum(reports, q, d), optimum(reports, s, d)
            if oq is None or os_ is None:
                continue
            at = value_at(reports, q, d, os_["power"])
            snr_gain = at[1] - os_["snr_db"] if at else float("nan")
            rows.append({"se": se, "qcm": q, "sp": s, "fiber": cfg.fiber.upper(),
                         "distance_km": d, "qcm_opt_power_dbm": oq["power"],
                         "sp_opt_power_dbm": os_["power"], "snr_gain_db": snr_gain,
                         "gmi_gain": oq["gmi"] - os_["gmi"], "qcm_gmi": oq["gmi"],
                         "sp_gmi": os_["gmi"]})
    return rows


def _write_rows(path: Path, header: str, rows: list, columns: list | None = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        if not rows and not columns:
            return
        w = csv.DictWriter(fh, fieldnames=columns or list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


# ---------------------------------------------------------------------------
# reach


def reach_table(cfg: ExperimentConfig, reports: list) -> tuple:
    """Per-format reach at ``code_rate * SE`` and QCM-over-SP reach gains."""
    per_format = []
    reach = {}
    for f in cfg.formats:
        se = get_format(f).bits_per_symbol
        samples = []
        for d in cfg.distances_for(f):
            o = optimum(reports, f, d)
            if o is not None:
                samples.append((d, o["gmi"]))
        row = {"format": f, "fiber": cfg.fiber.upper(), "se": se,
               "threshold": cfg.code_rate * se, "reach_km": float("nan"), "status": "ok"}
        try:
            res = reach_at_threshold(samples, cfg.code_rate, se)
            row["reach_km"] = res.reach_km
            reach[f] = res.reach_km
        except ThresholdNotBracketed as e:
            row["status"] = f"not bracketed: {e}"
        per_format.append(row)
    gains = []
    for se, q, s in format_pairs(cfg.formats):
        if q in reach and s in reach:
            gains.append({"se": se, "qcm": q, "sp": s, "qcm_reach_km": reach[q],
                          "sp_reach_km": reach[s],
                          "reach_gain_pct": 100 * (reach[q] / reach[s] - 1)})
    return per_format, gains


def run_reach(cfg: ExperimentConfig, out_dir=None, workers: int = 1,
              resume: bool = True) -> RunManifest:
    """Sweep every format's distance grid, then interpolate the reach."""
    manifest = run_sweep(cfg, out_dir, workers, resume)
    out = cfg.out_path(out_dir)
    reports = read_sweep(out / "sweep.csv")
    per_format, gains = reach_table(cfg, reports)
    header = f"schema {CSV_SCHEMA}; config {cfg.config_hash()}; version {__version__}"
    _write_rows(out / "reach.csv", header, per_format)
    _write_rows(out / "reach_gain.csv", header, gains,
                ["se", "qcm", "sp", "qcm_reach_km", "sp_reach_km", "reach_gain_pct"])
    manifest.outputs += [str(out / "reach.csv"), str(out / "reach_gain.csv")]
    manifest.write(out / "manifest.json")
    return manifest


# ---------------------------------------------------------------------------
# power-fluctuation spectra


def run_psd(cfg: ExperimentConfig, out_dir=None, seed: int = 0) -> RunManifest:
    """PSD curves, SPM/XPM filter magnitudes and band-average gaps."""
    cfg.validate()
    out = cfg.out_path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    psds = {f: power_fluctuation_psd(get_format(f), cfg.rolloff, cfg.psd_symbols, seed,
                                     cfg.sps, cfg.psd_nperseg, cfg.symbol_rate)
            for f in cfg.formats}
    freqs = next(iter(psds.values())).freqs
    fiber = FIBER_PRESETS[cfg.fiber.upper()]
    spm = spm_filter(fiber, cfg.filter_span, freqs)
    xpm = xpm_filter(fiber, cfg.filter_span, cfg.spacing, freqs)
    header = f"schema {CSV_SCHEMA}; config {cfg.config_hash()}; version {__version__}; seed {seed}"

    curves = []
    with np.errstate(divide="ignore"):
        for i, f0 in enumerate(freqs):
            row = {"freq_hz": float(f0)}
            for f, p in psds.items():
                row[f"psd_db_{f}"] = float(10 * np.log10(p.psd[i]))
            row["spm_mag_db"] = float(20 * np.log10(spm.magnitude[i] / spm.dc_gain))
            row["xpm_mag_db"] = float(20 * np.log10(xpm.magnitude[i] / xpm.dc_gain))
            curves.append(row)
    _write_rows(out / "psd.csv", header, curves)

    control = power_fluctuation_psd(get_format("PM-QPSK"), 0.0, cfg.psd_symbols, seed, 1,
                                    cfg.psd_nperseg, cfg.symbol_rate)
    levels = [{"format": f, "band_average_db": p.band_average_db} for f, p in psds.items()]
    levels.append({"format": "PM-QPSK (sinc, 1 sample/symbol)",
                   "band_average_db": control.band_average_db})
    _write_rows(out / "psd_levels.csv", header, levels)

    gaps = []
    for se, q, s in format_pairs(cfg.formats):
        gaps.append({
            "se": se, "qcm": q, "sp": s,
            "gap_db": float(psds[s].band_average_db - psds[q].band_average_db),
            "spm_noise_ratio_db": float(10 * np.log10(predicted_phase_noise_power(psds[s], spm)
                                                      / predicted_phase_noise_power(psds[q], spm))),
            "xpm_noise_ratio_db": float(10 * np.log10(predicted_phase_noise_power(psds[s], xpm)
                                                      / predicted_phase_noise_power(psds[q], xpm))),
        })
    _write_rows(out / "psd_gaps.csv", header, gaps,
                ["se", "qcm", "sp", "gap_db", "spm_noise_ratio_db", "xpm_noise_ratio_db"])

    manifest = RunManifest(cfg.config_hash(), __version__)
    manifest.runs.append(RunRecord(["psd"], seed, "ok", time.perf_counter() - t0))
    manifest.outputs = [str(out / n) for n in ("psd.csv", "psd_levels.csv", "psd_gaps.csv")]
    manifest.computed = 1
    manifest.write(out / "manifest_psd.json")
    return manifest


# ---------------------------------------------------------------------------
# constellation tables and scatter data


def dump_constellation(name: str, path) -> None:
    save_constellation(get_format(name), path)


def scatter(dsp: DspOutput, path) -> None:
    """Transmitted and received 4D symbols, one row per symbol."""
    cols = ["index", "tx_xi", "tx_xq", "tx_yi", "tx_yq", "rx_xi", "rx_xq", "rx_yi", "rx_yq"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, t, r in zip(dsp.tx_indices, dsp.tx, dsp.rx):
            w.writerow([int(i), *map(repr, map(float, t)), *map(repr, map(float, r))])


def run_scatter(cfg: ExperimentConfig, fmt_name: str, distance: float, power: float,
                seed: int, path) -> dict:
    """Simulate one operating point, write its scatter CSV, return summary statistics."""
    dsp = simulate(cfg, fmt_name, distance, power, seed)
    scatter(dsp, path)
    return {"format": fmt_name, "distance_km": distance, "launch_power_dbm": power,
            "seed": seed, "snr_eff_db": effective_snr(dsp),
            "circumferential_variance": circumferential_variance(dsp)}
