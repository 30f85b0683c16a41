"""Result files: JSON summaries and CSV tables with fixed schemas.

Every JSON document carries ``schema_version``. The wall-clock timestamp
lives only in ``run_info.json`` so that ``summary.json`` is byte-identical
across runs with the same config and seed.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, fields
from datetime import datetime, timezone
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .config import dump_config
from .experiments import CONDITION_KEYS, DoAResults, ErankResults, TrialRecord, summarize

SCHEMA_VERSION = 1

TRIAL_COLUMNS = tuple(f.name for f in fields(TrialRecord))
SUMMARY_COLUMNS = CONDITION_KEYS + ("trials", "failures", "mean_error", "std_error", "half_angle")
ERANK_COLUMNS = ("mode", "sweep", "value", "frequency", "frames", "effective_rank",
                 "singular_values_above_threshold", "rows", "columns")
DOA_ERANK_COLUMNS = ("velocity", "source_kind", "modulation", "frames_per_group",
                     "effective_rank", "singular_values_above_threshold")
SPECTRUM_COLUMNS = ("condition", "theta_deg", "phi_deg", "value")


def _clean(value):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python numbers."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(path: Path, payload: dict) -> None:
    doc = {"schema_version": SCHEMA_VERSION, **payload}
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_csv(path: Path, columns, rows) -> None:
    """Write ``rows`` (dicts); an empty list still produces the header."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(row.get(k)) for k in columns})


def _csv_value(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def _prepare(directory) -> Path:
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _run_info(out: Path, cfg, extra=None) -> None:
    info = {"timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "version": __version__, "warnings": list(cfg.warnings)}
    info.update(extra or {})
    write_json(out / "run_info.json", info)


def emit_report(results, directory=None, jobs: int = 1) -> Path:
    """Write the files for a DoA or effective-rank study; returns the directory."""
    cfg = results.config
    out = _prepare(directory or cfg.output.directory)
    (out / "config.toml").write_text(dump_config(cfg))
    if isinstance(results, ErankResults):
        write_csv(out / "erank.csv", ERANK_COLUMNS, results.rows)
        write_json(out / "summary.json", {"name": cfg.name, "study": "erank", "seed": cfg.seed,
                                          "config": cfg.to_dict(), "erank": results.rows})
        _run_info(out, cfg, {"jobs": jobs})
        return out

    summary = summarize(results.records)
    write_csv(out / "trials.csv", TRIAL_COLUMNS, [asdict(r) for r in results.records])
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    write_csv(out / "erank.csv", DOA_ERANK_COLUMNS, results.eranks)
    if cfg.output.spectra:
        write_csv(out / "spectra.csv", SPECTRUM_COLUMNS, _spectrum_rows(results.spectra))
    write_json(out / "summary.json", {
        "name": cfg.name, "study": "doa", "seed": cfg.seed, "config": cfg.to_dict(),
        "conditions": summary, "erank": results.eranks,
        "half_angle_reference": [{"velocity": v, "half_angle": v * 0.75 / 2}
                                 for v in cfg.motion.angular_velocity],
        "failures": [asdict(r) for r in results.records if r.failure]})
    _run_info(out, cfg, {"jobs": jobs})
    return out


def _spectrum_rows(spectra: dict):
    for key, spec in spectra.items():
        label = "|".join(str(k) for k in key)
        theta = np.degrees(spec.theta)
        phi = np.degrees(spec.phi)
        for i, t in enumerate(theta):
            for j, p in enumerate(phi):
                yield {"condition": label, "theta_deg": float(t), "phi_deg": float(p),
                       "value": float(spec.values[i, j])}
