"""Command-line entry point: ``viralsde analyze|simulate|control|sweep``.

Every subcommand takes a JSON configuration (``--config``) or a preset name
(``--preset``); if both are given the file's keys override the preset.
The remaining flags override individual fields.  Exit status: 0 success,
2 configuration error, 3 control sweep did not converge, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import (
    PRESETS,
    ConfigError,
    RunConfig,
    SweepSpec,
    apply_axis,
    config_to_dict,
    parse_config,
    parse_sweep_spec,
)
from .control import SCENARIOS, paired_difference, scenario_compare
from .model import equilibria, feasible_region_violations
from .simulate import TimeGrid, run_ensemble
from .stability import stability_report

__all__ = [
    "main",
    "build_parser",
    "load_config",
    "cmd_analyze",
    "cmd_simulate",
    "cmd_control",
    "cmd_sweep",
    "analyze_dict",
    "sweep_rows",
    "transition_bracket",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_IO = 4


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not serialisable: {type(value).__name__}")


def _finite(value):
    # JSON has no infinities; keep them as strings
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(v) for v in value]
    return value


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_finite(doc), indent=2, default=_json_default) + "\n")


def load_config(
    config_path: Optional[str] = None,
    preset_name: Optional[str] = None,
    seed: Optional[int] = None,
    paths: Optional[int] = None,
    dt: Optional[float] = None,
    t_end: Optional[float] = None,
    out: Optional[str] = None,
) -> RunConfig:
    """Build a :class:`RunConfig` from a file and/or preset plus flag overrides."""
    doc = {}
    if config_path is not None:
        text = Path(config_path).read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"malformed document: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("", "top level must be an object")
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset_name!r}")
        doc = {"preset": preset_name, **{k: v for k, v in doc.items() if k != "preset"}}
    config = parse_config(doc)

    changes = {}
    if seed is not None:
        changes["base_seed"] = seed
    if paths is not None:
        if paths < 1:
            raise ConfigError("n_paths", "must be >= 1")
        changes["n_paths"] = paths
    if dt is not None or t_end is not None:
        g = config.grid
        try:
            changes["grid"] = TimeGrid(
                g.t0, g.t_end if t_end is None else t_end, g.dt if dt is None else dt
            )
        except ValueError as exc:
            raise ConfigError("grid", str(exc)) from None
    if out is not None:
        changes["output_dir"] = out
    if config.control is not None and (seed is not None or paths is not None):
        sweep = config.control.sweep
        sweep = dataclasses.replace(
            sweep,
            base_seed=sweep.base_seed if seed is None else seed,
            n_paths=sweep.n_paths if paths is None else paths,
        )
        changes["control"] = dataclasses.replace(config.control, sweep=sweep)
    return config.replace(**changes) if changes else config


def _out_dir(config: RunConfig) -> Path:
    path = Path(config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def analyze_dict(config: RunConfig) -> dict:
    report = stability_report(config.params, config.noise, config.epsilon)
    summary = equilibria(config.params)
    return {
        "params": dataclasses.asdict(config.params),
        "noise": dataclasses.asdict(config.noise),
        **summary.to_dict(),
        "stability": report.to_dict(),
        # eigenvalue-based definiteness is the authoritative extinction label
        "extinction_predicted": report.negative_definite,
    }


def cmd_analyze(config: RunConfig) -> dict:
    doc = analyze_dict(config)
    _write_json(_out_dir(config) / "analysis.json", doc)
    verdict = "extinction" if doc["extinction_predicted"] else "no extinction guarantee"
    print(f"R0={doc['r0']:.4f} lambda_max={doc['stability']['eigenvalues'][1]:.4f} {verdict}")
    return doc


def cmd_simulate(config: RunConfig) -> dict:
    ens = run_ensemble(
        config.initial,
        config.grid,
        config.params,
        config.noise,
        n_paths=config.n_paths,
        base_seed=config.base_seed,
        retention=config.retention,
        extinction_threshold=config.extinction_threshold,
        record_every=config.record_every,
    )
    out = _out_dir(config)
    doc = ens.stats.to_dict()
    doc["time_unit"] = config.time_unit
    doc["config"] = config_to_dict(config)
    if ens.samples is not None and (config.n_max is not None or config.b_max is not None):
        doc["feasible_region_violations"] = feasible_region_violations(
            ens.samples, config.n_max, config.b_max
        )
    _write_json(out / "stats.json", doc)
    for k in ens.retained:
        ens.trajectory(int(k)).to_csv(out / f"trajectory_{int(k):05d}.csv")
    s, i, b = ens.stats.mean[-1]
    print(
        f"extinction_probability={ens.stats.extinction_probability:.4f} "
        f"terminal_mean S={s:.4f} I={i:.4f} B={b:.4f}"
    )
    return doc


def cmd_control(config: RunConfig) -> tuple[dict, bool]:
    if config.control is None:
        raise ConfigError("control", "the control subcommand needs a control section")
    ctl = config.control
    comparison = scenario_compare(
        config.initial,
        config.grid,
        config.params,
        config.noise,
        ctl.weights,
        tuple(SCENARIOS),
        ctl.adjoint_n,
        ctl.sweep,
    )
    out = _out_dir(config)
    comparison.to_csv(out / "scenarios.csv")
    res = comparison.results
    doc = {
        "converged": comparison.converged,
        "scenarios": comparison.to_dict(),
        "paired_differences": {
            "combined-antiviral_only": paired_difference(res["combined"], res["antiviral_only"]),
            "antiviral_only-none": paired_difference(res["antiviral_only"], res["none"]),
        },
        "config": config_to_dict(config),
    }
    _write_json(out / "control.json", doc)
    for name, r in res.items():
        print(f"{name}: J={r.cost:.4f} se={r.cost_se:.4f} iterations={r.iterations} converged={r.converged}")
    return doc, comparison.converged


def _cell_metrics(config: RunConfig, metrics: Sequence[str]) -> dict:
    report = stability_report(config.params, config.noise, config.epsilon)
    row = {}
    need_ensemble = {"extinction_probability", "lyapunov_max", "terminal_mean_B"} & set(metrics)
    stats = None
    if need_ensemble:
        stats = run_ensemble(
            config.initial, config.grid, config.params, config.noise,
            n_paths=config.n_paths, base_seed=config.base_seed,
            extinction_threshold=config.extinction_threshold,
            record_every=config.record_every,
        ).stats
    for m in metrics:
        if m == "extinction_probability":
            row[m] = stats.extinction_probability
        elif m == "lyapunov_max":
            row[m] = stats.lyapunov_max
        elif m == "terminal_mean_B":
            row[m] = float(stats.mean[-1, 2])
        elif m == "condition_a":
            row[m] = report.condition_a.holds
        elif m == "condition_b":
            row[m] = report.condition_b.holds
        elif m == "negative_definite":
            row[m] = report.negative_definite
    return row


def sweep_rows(config: RunConfig, spec: SweepSpec) -> list[dict]:
    """Evaluate every grid cell independently; one dict per cell."""
    grids = [ax.values() for ax in spec.axes]
    rows = []
    for combo in np.array(np.meshgrid(*grids, indexing="ij")).reshape(len(grids), -1).T:
        cell = config
        row = {}
        for ax, value in zip(spec.axes, combo):
            cell = apply_axis(cell, ax.name, float(value))
            row[ax.name] = float(value)
        row.update(_cell_metrics(cell, spec.metrics))
        rows.append(row)
    return rows


def transition_bracket(rows: list[dict], axis: str, metric: str = "extinction_probability",
                       level: float = 0.5) -> Optional[tuple[float, float]]:
    """First adjacent pair of axis values whose metric values straddle ``level``."""
    pts = sorted((r[axis], r[metric]) for r in rows if r.get(metric) is not None)
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        if (y0 - level) * (y1 - level) <= 0 and y0 != y1:
            return (x0, x1)
    return None


def cmd_sweep(config: RunConfig, spec: SweepSpec) -> dict:
    rows = sweep_rows(config, spec)
    out = _out_dir(config)
    names = [ax.name for ax in spec.axes] + list(spec.metrics)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=names, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    doc = {"rows": rows}
    if len(spec.axes) == 1 and "extinction_probability" in spec.metrics:
        doc["transition_bracket"] = transition_bracket(rows, spec.axes[0].name)
        print(f"extinction transition bracket ({spec.axes[0].name}): {doc['transition_bracket']}")
    _write_json(out / "sweep.json", doc)
    print(f"{len(rows)} cells written to {out / 'sweep.csv'}")
    return doc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="viralsde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("analyze", "closed-form thresholds and stability criteria"),
        ("simulate", "Monte-Carlo ensemble of the uncontrolled model"),
        ("control", "optimal treatment by forward-backward sweep"),
        ("sweep", "analytic and ensemble metrics over a parameter grid"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--preset", choices=sorted(PRESETS), help="start from a named preset")
        p.add_argument("--seed", type=int, help="base seed")
        p.add_argument("--paths", type=int, help="number of sample paths")
        p.add_argument("--dt", type=float, help="time step")
        p.add_argument("--t-end", type=float, dest="t_end", help="final time")
        p.add_argument("--out", help="output directory")
        if name == "sweep":
            p.add_argument("--spec", required=True, help="JSON sweep specification file")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.preset, args.seed, args.paths, args.dt, args.t_end, args.out)
        spec = None
        if args.command == "sweep":
            spec = parse_sweep_spec(Path(args.spec).read_text())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"config error: malformed sweep specification: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            if args.command == "analyze":
                cmd_analyze(config)
            elif args.command == "simulate":
                cmd_simulate(config)
            elif args.command == "control":
                _, converged = cmd_control(config)
                if not converged:
                    print("control sweep did not converge; partial results written", file=sys.stderr)
                    return EXIT_NOT_CONVERGED
            else:
                cmd_sweep(config, spec)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
