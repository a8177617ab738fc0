"""Command-line front end.

Subcommands::

    spintrap spectrum   synthesize a field-swept spectrum
    spintrap transient  single-pulse photocurrent transient
    spintrap run        parse, compile, and run a .seq pulse program
    spintrap nutation   mz versus pulse duration (Rabi oscillations)
    spintrap fit        fit a trace CSV and emit a JSON report

All commands accept ``--config <json>`` (see :mod:`spintrap.config`),
``--seed <int>``, and ``--out <path>``.  Exit codes: 0 success, 2 invalid
configuration/usage, 3 sequence error, 4 data error.  Outputs are CSV traces
(or JSON for ``fit``) stamped with the resolved config hash; identical
configuration and seed give byte-identical data sections regardless of
``--workers``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__, blochsim, fitkit, seqlang, spectrum, trapdyn
from .config import ConfigError, RunConfig, config_hash, load_config
from .spincore import equilibrium_state, gyromagnetic_ratio
from .trace import CsvFormatError, MixedConfigHashError, SignalTrace, read_trace_csv, write_trace_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SEQUENCE = 3
EXIT_DATA = 4


def _load_config_file(args) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
    _apply_overrides(args, data)
    return load_config(data, seed=getattr(args, "seed", None))


def _apply_overrides(args, data: dict) -> None:
    """Fold per-command flags into the config dict before validation."""

    def put(section, key, value):
        if value is not None:
            data.setdefault(section, {})[key] = value

    put("spectrum", "b_start_tesla", getattr(args, "b_start", None))
    put("spectrum", "b_stop_tesla", getattr(args, "b_stop", None))
    put("spectrum", "n_points", getattr(args, "n_points", None) if args.command == "spectrum" else None)
    put("spectrum", "lineshape", getattr(args, "lineshape", None))
    put("species", "nuclear_polarization", getattr(args, "nuclear_polarization", None))
    put("species", "linewidth_tesla", getattr(args, "linewidth", None))
    put("environment", "rabi_frequency_hz", getattr(args, "rabi_frequency", None))
    put("ensemble", "n_static", getattr(args, "n_static", None))
    put("ensemble", "n_noise", getattr(args, "n_noise", None))


def _base_meta(config: RunConfig) -> dict:
    return {
        "created": datetime.now(timezone.utc).isoformat(),
        "config_hash": config_hash(config),
        "rng_seed": config.ensemble.rng_seed,
        "tool_version": __version__,
    }


def _write_output(trace: SignalTrace, config: RunConfig, path: str, extra_meta=None) -> None:
    meta = dict(trace.meta)
    meta.pop("y_stderr", None)  # kept in-memory only; the file format is x,y
    meta.update(_base_meta(config))
    meta.update(extra_meta or {})
    out = dataclasses.replace(trace, meta=meta)
    write_trace_csv(out, path)
    print(f"wrote {path} ({len(out)} points)")


def cmd_spectrum(args) -> int:
    config = _load_config_file(args)
    trace = spectrum.simulate_field_sweep(
        config.species_amplitudes(), config.environment, config.spectrum.sweep_spec()
    )
    _write_output(trace, config, args.out, {"command": "spectrum"})
    return EXIT_OK


def cmd_transient(args) -> int:
    config = _load_config_file(args)
    env, species, trap = config.environment, config.species, config.trap
    if args.flip_fraction is not None:
        fraction = args.flip_fraction
        if not 0.0 <= fraction <= 1.0:
            raise ConfigError(f"--flip-fraction must lie in [0, 1], got {fraction}")
    else:
        eq = equilibrium_state(env, species)
        w1 = 2.0 * math.pi * env.rabi_frequency
        duration = math.radians(args.pulse_angle_deg) / w1
        det = gyromagnetic_ratio(species.g_factor) * args.field_offset_tesla
        final = blochsim.apply_pulse(eq, w1, "+x", duration, det)
        fraction = trapdyn.flip_fraction_from_state(final.mz, eq.mz)
    grid = np.linspace(0.0, args.t_max, args.n_points)
    trace = trapdyn.transient_response(fraction, trap, grid)
    _write_output(trace, config, args.out, {"command": "transient", "flip_fraction": fraction})
    return EXIT_OK


def _sweep_axis_kind(ast: seqlang.SequenceAst) -> str:
    sweep = ast.sweep
    if sweep is None:
        return "time"
    for stmt in ast.statements:
        if isinstance(stmt, seqlang.DelayStmt) and stmt.duration == sweep.name:
            return "tau"
    return "pulse_duration"


def _channel_units(channel: str) -> str:
    return "C" if channel == "charge" else "dimensionless"


def cmd_run(args) -> int:
    config = _load_config_file(args)
    try:
        with open(args.seqfile, "r", encoding="utf-8") as fh:
            source = fh.read()
    except FileNotFoundError:
        raise seqlang.SequenceError(f"sequence file not found: {args.seqfile}")
    ast = seqlang.parse(source)
    env, species, relax = config.environment, config.species, config.relaxation
    ensemble, trap = config.ensemble, config.trap

    sweep = ast.sweep
    channels = sorted(set(ast.acquire_channels))
    if sweep is None:
        timeline = seqlang.compile_timeline(ast, env)
        traces = blochsim.run_timeline_by_channel(
            timeline, env, species, relax, ensemble, trap, workers=args.workers
        )
    else:
        values = seqlang.sweep_values(sweep)
        per_channel: dict[str, list[float]] = {c: [] for c in channels}
        for i, value in enumerate(values):
            timeline = seqlang.compile_timeline(ast, env, sweep_value=float(value), sweep_index=i)
            point = blochsim.run_timeline_by_channel(
                timeline, env, species, relax, ensemble, trap, workers=args.workers
            )
            for channel in channels:
                # one row per sweep point; the last acquire defines the value
                per_channel[channel].append(point[channel].y[-1])
        axis_kind = _sweep_axis_kind(ast)
        traces = {
            channel: SignalTrace(
                axis_kind=axis_kind,
                x=tuple(float(v) for v in values),
                y=tuple(per_channel[channel]),
                units=_channel_units(channel),
                meta={"sweep_variable": sweep.name},
            )
            for channel in channels
        }

    for channel, trace in traces.items():
        path = args.out
        if len(traces) > 1:
            stem, dot, ext = args.out.rpartition(".")
            path = f"{stem}_{channel}{dot}{ext}" if dot else f"{args.out}_{channel}"
        _write_output(trace, config, path, {"command": "run", "channel": channel,
                                            "sequence_file": args.seqfile})
    return EXIT_OK


def cmd_nutation(args) -> int:
    config = _load_config_file(args)
    durations = np.linspace(0.0, args.t_max, args.n_points)
    trace = blochsim.nutation_curve(
        durations, config.environment, config.species, config.relaxation, config.ensemble
    )
    _write_output(trace, config, args.out, {"command": "nutation"})
    return EXIT_OK


def cmd_fit(args) -> int:
    trace = read_trace_csv(args.csvfile, allow_mixed_hash=args.force)
    result = fitkit.fit(args.model, trace)
    report = {
        "model_id": result.model_id,
        "params": result.params,
        "param_uncertainties": result.param_uncertainties,
        "rss": result.rss,
        "n_points": result.n_points,
        "converged": result.converged,
        "config_hash": trace.meta.get("config_hash"),
        "tool_version": __version__,
    }
    if args.compare_with:
        comparison = fitkit.compare_models(trace, args.model, args.compare_with)
        report["comparison"] = {
            "models": [args.model, args.compare_with],
            "preferred": comparison.preferred,
            "delta_criterion": comparison.delta_criterion,
        }
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return EXIT_OK


def _add_common(p, default_out):
    p.add_argument("--config", help="JSON config file (see spintrap.config)")
    p.add_argument("--seed", type=int, help="override ensemble.rng_seed")
    p.add_argument("--out", default=default_out, help=f"output path (default {default_out})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spintrap",
        description="Spin-trap electrical readout simulator for Si:P at high field",
    )
    parser.add_argument("--version", action="version", version=f"spintrap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="synthesize a field-swept spectrum")
    _add_common(p, "spectrum.csv")
    p.add_argument("--b-start", type=float, help="sweep start in Tesla")
    p.add_argument("--b-stop", type=float, help="sweep stop in Tesla")
    p.add_argument("--n-points", type=int, help="points across the sweep")
    p.add_argument("--lineshape", choices=spectrum.LINESHAPES)
    p.add_argument("--nuclear-polarization", type=float, help="override the 31P nuclear polarization")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("transient", help="single-pulse photocurrent transient")
    _add_common(p, "transient.csv")
    p.add_argument("--flip-fraction", type=float, help="bypass the pulse and set the flipped fraction")
    p.add_argument("--pulse-angle-deg", type=float, default=180.0)
    p.add_argument("--field-offset-tesla", type=float, default=0.0,
                   help="static-field offset from resonance for the pulse")
    p.add_argument("--t-max", type=float, default=15e-3, help="transient span in seconds")
    p.add_argument("--n-points", type=int, default=1501)
    p.set_defaults(func=cmd_transient)

    p = sub.add_parser("run", help="run a .seq pulse program")
    p.add_argument("seqfile")
    _add_common(p, "run.csv")
    p.add_argument("--workers", type=int, default=1, help="parallel blocks (does not change results)")
    p.add_argument("--n-static", type=int, help="override ensemble.n_static")
    p.add_argument("--n-noise", type=int, help="override ensemble.n_noise")
    p.add_argument("--linewidth", type=float, help="override species linewidth in Tesla")
    p.add_argument("--rabi-frequency", type=float, help="override drive Rabi frequency in Hz")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("nutation", help="mz versus resonant pulse duration")
    _add_common(p, "nutation.csv")
    p.add_argument("--t-max", type=float, default=4e-6, help="longest pulse in seconds")
    p.add_argument("--n-points", type=int, default=81)
    p.add_argument("--linewidth", type=float, help="override species linewidth in Tesla")
    p.set_defaults(func=cmd_nutation)

    p = sub.add_parser("fit", help="fit a trace CSV, emit JSON")
    p.add_argument("csvfile")
    p.add_argument("--model", required=True, choices=fitkit.MODEL_IDS)
    p.add_argument("--compare-with", choices=fitkit.MODEL_IDS,
                   help="also fit this model and report which one the information criterion prefers")
    p.add_argument("--force", action="store_true", help="allow mixed config hashes in the input")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except seqlang.SequenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SEQUENCE
    except (CsvFormatError, MixedConfigHashError, fitkit.DegenerateDataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
