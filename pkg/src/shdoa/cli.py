"""Command-line entry point: ``shdoa run|erank|synth|estimate|validate``.

Exit status is 0 on success, 2 when the configuration or an input file is
invalid, and 1 on any other runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config, with_overrides
from .errors import ConfigurationError, FormatError

log = logging.getLogger("shdoa")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shdoa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="config file or preset name")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory")
        return p

    p = add("run", "run the configured study and write the report")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--trials", type=int, help="override the trial count")
    add("erank", "effective-rank analysis only")
    p = add("synth", "synthesize microphone signals to WAVE files")
    p.add_argument("--snr", type=float, help="add noise at this SNR (dB)")
    p = add("estimate", "run the estimators on a recording")
    p.add_argument("--audio", required=True, help="multichannel WAVE file")
    p.add_argument("--trajectory", help="per-frame pose CSV (default: static array)")
    add("validate", "check a config and print warnings")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        cfg = with_overrides(cfg, seed=args.seed, trials=getattr(args, "trials", None),
                             out=args.out)
        for warning in cfg.warnings:
            print(f"warning: {warning}", file=sys.stderr)
        return _dispatch(args, cfg)
    except (ConfigurationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _dispatch(args, cfg: ExperimentConfig) -> int:
    from . import experiments as ex
    from .report import emit_report, write_json

    if args.command == "validate":
        print(f"{args.config}: ok")
        return EXIT_OK
    if args.command == "run":
        if cfg.study == "erank":
            results = ex.run_erank(cfg)
        else:
            results = ex.run_doa(cfg, jobs=max(1, args.jobs))
        out = emit_report(results, jobs=args.jobs)
        print(out / "summary.json")
        return EXIT_OK
    if args.command == "erank":
        if cfg.study != "erank":
            raise ConfigurationError("erank needs a config with study = \"erank\"", "study")
        out = emit_report(ex.run_erank(cfg))
        print(out / "erank.csv")
        return EXIT_OK
    if args.command == "synth":
        return _synth(args, cfg)
    return _estimate(args, cfg, write_json)


def _synth(args, cfg) -> int:
    from . import experiments as ex
    from .motion import write_trajectory
    from .simulator import add_noise, make_rng
    from .report import write_json
    from .spectral import write_wav

    if cfg.study != "doa":
        raise ConfigurationError("synth needs a DoA study config", "study")
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    geom = ex.build_geometry(cfg)
    p = cfg.stft.params()
    files = []
    for i, (velocity, kind, level, d_index, direction) in enumerate(ex._units(cfg)):
        clean, traj = ex.synth_unit(cfg, velocity, kind, level, direction, geom)
        if args.snr is not None:
            rng = make_rng(cfg.seed, 1, d_index, 0)
            clean = add_noise(clean, ex.noise_spec(cfg, args.snr), stft_params=p, rng=rng)
        wav = out / f"synth_{i:03d}.wav"
        csv_path = out / f"synth_{i:03d}_trajectory.csv"
        write_wav(wav, clean, p.fs)
        write_trajectory(csv_path, traj)
        files.append({"audio": wav.name, "trajectory": csv_path.name, "velocity": velocity,
                      "source_kind": kind, "modulation": level, "direction_index": d_index,
                      "direction_deg": [float(x) * 180 / 3.141592653589793 for x in direction]})
    write_json(out / "synth.json", {"name": cfg.name, "seed": cfg.seed, "snr": args.snr,
                                    "files": files})
    print(out / "synth.json")
    return EXIT_OK


def _estimate(args, cfg, write_json) -> int:
    from .experiments import estimate_recording
    from .motion import read_trajectory
    from .spectral import read_wav

    signals = read_wav(args.audio, fs=cfg.stft.fs)
    traj = read_trajectory(args.trajectory) if args.trajectory else None
    result = estimate_recording(cfg, signals, traj)
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "estimate.json", {"name": cfg.name, "audio": str(args.audio),
                                       "trajectory": args.trajectory, **result})
    print(json.dumps(result["results"], indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
