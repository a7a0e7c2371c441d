"""
gelsim command line: equilibrium | stability | curve | run | sweep.

Exit codes: 0 success, 1 unexpected error, 2 configuration error,
3 stability-gate failure, 4 linear-solver failure, 5 equilibrium failure.
"""

import argparse
import hashlib
import itertools
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from config import Config, get_config, material_from_config, parse_config, resolve
from dynamics import ScenarioConfig, SimState, simulate
from equilibrium import solve_spherical, uniqueness_condition
from errors import ConfigError, GelSimError
from logging_config import ContextLogger, error_tracker, log_performance, setup_logging
from postprocess import FLOAT_FORMAT, debonding_report, export_fields, pi_curve, stress_field, stress_summary
from stability import certify

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def input_hash(raw: Mapping[str, Any]) -> str:
    """Git blob hash of the canonical JSON of the resolved inputs"""
    data = json.dumps(dict(raw), sort_keys=True, separators=(",", ":"), default=_json_default).encode("utf8")
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class RunManifest:
    config: Dict[str, Any]
    input_hash: str
    scales: Dict[str, float]
    outputs: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)

    def write(self, path) -> str:
        try:
            with open(path, "w", encoding="utf8") as f:
                json.dump(asdict(self), f, indent=2, sort_keys=True, default=_json_default)
                f.write("\n")
        except OSError as e:
            raise OSError(f"cannot write manifest '{path}': {e}") from e
        return str(path)


def run_scenario(config: ScenarioConfig, out_dir) -> RunManifest:
    """
    Equilibrium, stability gate, time loop and postprocessing for one scenario.
    The manifest is written only when every stage succeeded.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = ContextLogger(__name__, {"variant": config.variant.value if config.variant else None,
                                   "level": config.level, "scenario": config.preset})
    timings: Dict[str, float] = {}
    outputs: Dict[str, str] = {}

    start = time.time()
    eq = solve_spherical(config.params)
    report = certify(eq, config.params)
    timings["equilibrium"] = time.time() - start

    snapshots: List[Tuple[SimState, SimState]] = []

    def keep_snapshot(prev: SimState, nxt: SimState, record) -> None:
        if config.snapshot_every and nxt.step % config.snapshot_every == 0 and nxt.step < config.n_steps:
            snapshots.append((prev, nxt))

    start = time.time()
    result = simulate(config, equilibrium=eq, callback=keep_snapshot)
    timings["simulate"] = time.time() - start

    start = time.time()
    energy_path = out / "energy.csv"
    try:
        result.energy_frame().to_csv(energy_path, index=False, float_format=FLOAT_FORMAT)
    except OSError as e:
        raise OSError(f"cannot write energy records '{energy_path}': {e}") from e
    outputs["energy_csv"] = str(energy_path)

    for prev, nxt in snapshots:
        field_n = stress_field(nxt, prev, result.moduli, config, result.mesh)
        for kind, path in export_fields(nxt, field_n, result.mesh, out / f"step_{nxt.step:05d}").items():
            outputs[f"step_{nxt.step:05d}_{kind}"] = path

    final_field = stress_field(result.final, result.previous, result.moduli, config, result.mesh)
    for kind, path in export_fields(result.final, final_field, result.mesh, out / "final").items():
        outputs[f"final_{kind}"] = path
    debond = debonding_report(final_field, result.mesh, config.params)
    timings["postprocess"] = time.time() - start

    residuals = [r.residual for r in result.records]
    summary = {
        "f0": eq.f0,
        "phi0": eq.phi0,
        "lambda_t": result.moduli.lambda_t,
        "mu_t": result.moduli.mu_t,
        "kappa_perm": result.moduli.kappa_perm,
        "spherical_ok": report.spherical_ok,
        "general_ok": report.general_ok,
        "initial_energy": result.operators.energy(result.initial),
        "final_energy": result.operators.energy(result.final),
        "max_energy_residual": max(residuals) if residuals else 0.0,
        "t_final": result.final.t,
        "debond": debond.as_dict(),
        **stress_summary(final_field, result.mesh),
    }
    manifest = RunManifest(
        config=dict(config.raw) if config.raw else {"variant": config.variant, "level": config.level,
                                                     "dt": config.dt, "n_steps": config.n_steps,
                                                     "P0": config.P0, "params": asdict(config.params)},
        input_hash="",
        scales={"stress_Pa": config.scales.stress, "time_s": config.scales.time,
                "length_m": config.scales.length},
        outputs=outputs,
        timings=timings,
        summary=summary,
    )
    manifest.input_hash = input_hash(manifest.config)
    manifest_path = out / "manifest.json"
    manifest.outputs["manifest"] = str(manifest_path)
    manifest.write(manifest_path)
    log_performance("run_scenario", sum(timings.values()))
    log.info(f"Run complete: {manifest_path} (hash {manifest.input_hash[:12]}, debond {debond.verdict.value})")
    return manifest


# argument handling ----------------------------------------------------------------

def _parse_value(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def parse_grid(specs: Optional[Sequence[str]]) -> Dict[str, List[Any]]:
    """['s=1,2', 'r=1.1'] -> {'s': [1.0, 2.0], 'r': [1.1]}"""
    grid: Dict[str, List[Any]] = {}
    for entry in specs or ():
        name, sep, values = entry.partition("=")
        name = name.strip()
        if not sep or not name or not values.strip():
            raise ConfigError(f"expected name=v1,v2,... got {entry!r}", key=name or None)
        grid[name] = [_parse_value(v.strip()) for v in values.split(",") if v.strip()]
    return grid


def grid_points(grid: Mapping[str, Sequence[Any]]) -> List[Dict[str, Any]]:
    names = list(grid)
    return [dict(zip(names, combo)) for combo in itertools.product(*(grid[n] for n in names))]


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "preset": args.preset,
        "level": args.level,
        "n_steps": args.steps,
        "dt": args.dt,
        "variant": getattr(args, "variant", None),
        "snapshot_every": getattr(args, "snapshot_every", None),
    }


def _scenario(args: argparse.Namespace, settings: Config, extra: Optional[Mapping[str, Any]] = None) -> ScenarioConfig:
    overrides = {**_overrides(args), **(extra or {})}
    t_final = getattr(args, "t_final", None)
    if t_final is not None:
        dt = resolve(args.config, overrides)["dt"]
        overrides["n_steps"] = max(1, int(round(t_final / dt)))
    return parse_config(args.config, overrides, krylov_level=settings.KRYLOV_LEVEL)


def _out_dir(args: argparse.Namespace, settings: Config) -> Path:
    return Path(args.out or settings.OUTPUT_DIR)


def _print_json(data: Mapping[str, Any]) -> None:
    print(json.dumps(data, indent=2, sort_keys=True, default=_json_default))


def cmd_equilibrium(args: argparse.Namespace, settings: Config) -> int:
    raw = resolve(args.config, _overrides(args))
    params, _ = material_from_config(raw)
    eq = solve_spherical(params)
    holds, lhs, rhs = uniqueness_condition(params)
    _print_json({**eq.as_dict(), "roots": list(eq.roots), "uniqueness_holds": holds,
                 "uniqueness_lhs": lhs, "uniqueness_rhs": rhs, "diagnostics": list(eq.diagnostics)})
    return EXIT_OK


def _stability_row(args: argparse.Namespace, point: Mapping[str, Any]) -> Dict[str, Any]:
    raw = resolve(args.config, {**_overrides(args), **point})
    params, _ = material_from_config(raw)
    eq = solve_spherical(params)
    return {**point, "f0": eq.f0, "phi0": eq.phi0, **certify(eq, params).margins()}


def cmd_stability(args: argparse.Namespace, settings: Config) -> int:
    grid = parse_grid(args.param)
    if not grid:
        _print_json(_stability_row(args, {}))
        return EXIT_OK

    rows = []
    for point in grid_points(grid):
        try:
            rows.append({**_stability_row(args, point), "error": ""})
        except GelSimError as e:
            error_tracker.log_error(e, "stability grid", scenario=json.dumps(point, sort_keys=True))
            rows.append({**point, "error": f"{type(e).__name__}: {e}"})
    table = pd.DataFrame(rows)
    out = _out_dir(args, settings)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "stability.csv"
    table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    print(table.to_string(index=False))
    logger.info(f"Stability table written to {path} ({len(rows)} rows)")
    return EXIT_OK


def cmd_curve(args: argparse.Namespace, settings: Config) -> int:
    raw = resolve(args.config, _overrides(args))
    params, _ = material_from_config(raw)
    chis = [float(v) for v in str(args.chi).split(",") if v.strip()]
    table = pi_curve(params, chis, args.points)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / "pi_curve.csv", index=False, float_format=FLOAT_FORMAT)
    sys.stdout.write(table.to_csv(index=False, float_format=FLOAT_FORMAT))
    for chi, flagged in table.groupby("chi")["monotonicity_change"].first().items():
        logger.info(f"chi={chi:g}: monotonicity change {'flagged' if flagged else 'not flagged'}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace, settings: Config) -> int:
    config = _scenario(args, settings)
    manifest = run_scenario(config, _out_dir(args, settings))
    _print_json({"manifest": manifest.outputs["manifest"], "input_hash": manifest.input_hash,
                 "debond": manifest.summary["debond"]["verdict"], "final_energy": manifest.summary["final_energy"]})
    return EXIT_OK


def _sweep_one(args: argparse.Namespace, settings: Config, index: int, point: Mapping[str, Any],
               out: Path) -> Dict[str, Any]:
    row: Dict[str, Any] = {"index": index, **point}
    try:
        config = _scenario(args, settings, point)
        manifest = run_scenario(config, out / f"scenario_{index:03d}")
    except GelSimError as e:
        error_tracker.log_error(e, "sweep", scenario=json.dumps(point, sort_keys=True))
        row.update(status="failed", exit_code=e.exit_code, error=f"{type(e).__name__}: {e}")
        return row
    summary = {k: v for k, v in manifest.summary.items() if not isinstance(v, dict)}
    row.update(status="ok", exit_code=EXIT_OK, error="", input_hash=manifest.input_hash,
               debond_verdict=manifest.summary["debond"]["verdict"],
               debond_max=manifest.summary["debond"]["max_boundary_pressure"], **summary)
    return row


def cmd_sweep(args: argparse.Namespace, settings: Config) -> int:
    grid = parse_grid(args.param)
    if not grid:
        raise ConfigError("sweep needs at least one --param name=v1,v2,...", key="param")
    points = grid_points(grid)
    out = _out_dir(args, settings)
    out.mkdir(parents=True, exist_ok=True)
    error_tracker.reset()

    start = time.time()
    workers = max(1, min(settings.THREADS, len(points)))
    logger.info(f"Sweeping {len(points)} scenarios on {workers} workers")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(lambda item: _sweep_one(args, settings, item[0], item[1], out), enumerate(points)))
    log_performance("sweep", time.time() - start)

    table = pd.DataFrame(rows).sort_values("index")
    table.to_csv(out / "sweep.csv", index=False, float_format=FLOAT_FORMAT)
    if args.xlsx:
        with pd.ExcelWriter(out / "sweep.xlsx", engine="openpyxl") as writer:
            table.to_excel(writer, sheet_name="sweep", index=False)
    print(table.to_string(index=False))

    failures = table[table["status"] != "ok"]
    if len(failures):
        logger.error(f"{len(failures)} of {len(points)} scenarios failed: {error_tracker.get_error_summary()}")
        return int(failures["exit_code"].iloc[0])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON scenario file")
    common.add_argument("--preset", help="fig1 | fig2 (aliases stiff | soft-permeable)")
    common.add_argument("--level", type=int, help="mesh refinement level")
    common.add_argument("--steps", type=int, help="number of time steps")
    common.add_argument("--dt", type=float, help="nondimensional time step")
    common.add_argument("--out", help="output directory")
    common.add_argument("--param", action="append", help="grid entry name=v1,v2,... (repeatable)")
    common.add_argument("--log-level", help="console log level")

    parser = argparse.ArgumentParser(prog="gelsim", description="Linearized gel dynamics on the unit square")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("equilibrium", parents=[common], help="solve the spherical equilibrium")
    p.set_defaults(handler=cmd_equilibrium)

    p = sub.add_parser("stability", parents=[common], help="certify stability margins")
    p.set_defaults(handler=cmd_stability)

    p = sub.add_parser("curve", parents=[common], help="osmotic pressure curves")
    p.add_argument("--chi", default="0.5", help="comma-separated Flory parameters")
    p.add_argument("--points", type=int, default=50)
    p.set_defaults(handler=cmd_curve)

    for name, handler, text in (("run", cmd_run, "run one scenario"),
                                ("sweep", cmd_sweep, "run a parameter grid")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--variant", help="inviscid-impermeable | inviscid-permeable | viscous-impermeable | viscous-permeable")
        p.add_argument("--t-final", type=float, help="final time, converted to steps")
        p.add_argument("--snapshot-every", type=int, help="export fields every k steps")
        if name == "sweep":
            p.add_argument("--xlsx", action="store_true", help="also write sweep.xlsx")
        p.set_defaults(handler=handler)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        settings = get_config()
    except ConfigError as e:
        print(f"gelsim: {e}", file=sys.stderr)
        return e.exit_code
    setup_logging(settings.LOG_DIR, args.log_level or settings.LOG_LEVEL, settings.CONSOLE_ONLY)

    try:
        return args.handler(args, settings)
    except GelSimError as e:
        error_tracker.log_error(e, args.command)
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected failure in {args.command}: {e}")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
