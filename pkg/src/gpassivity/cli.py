"""Command-line entry point: ``gpassivity run | sweep | validate``.

Exit status: 0 success, 1 error, 2 a monitored inequality was violated.
"""

from __future__ import annotations

import argparse
import io
import itertools
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import (
    DEFAULTS,
    ConfigError,
    ScenarioConfig,
    build_config,
    format_number,
    load_config,
    parse_override,
    run_config,
)
from .errors import PassivityError

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2

# sweep axis aliases: scalar axis name -> list parameter it sets
_AXIS_ALIASES = {"alpha": "alphas", "chi": "chi"}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML config file (a JSON report is accepted too)")
    p.add_argument("--scenario", choices=sorted(DEFAULTS), help="scenario id (overrides the config)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="parameter override, repeatable")
    p.add_argument("--chi", type=float, help="lazy-demon awake probability (shortcut for --set chi=...)")
    p.add_argument("--gamma", type=float, help="heat-leak decay rate (shortcut for --set gamma=...)")
    p.add_argument("--out", help="output directory (default: config output.path or '.')")
    p.add_argument("--format", choices=["csv", "json", "both"], help="output format")
    p.add_argument("--seed", type=int, default=None, help="reserved; every channel is evaluated exactly")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gpassivity", description="Global passivity scenarios and inequality checks")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one scenario")
    _add_common(run)
    sw = sub.add_parser("sweep", help="run a scenario over a grid of one or two parameters")
    _add_common(sw)
    sw.add_argument(
        "--axis", action="append", required=True, metavar="NAME=START:STOP:STEP|V1,V2,...",
        help="sweep axis; give once or twice",
    )
    sw.add_argument("--threads", type=int, default=1, help="worker threads for grid points")
    val = sub.add_parser("validate", help="check a config without running it")
    _add_common(val)
    return ap


def resolve_config(args) -> ScenarioConfig:
    """Merge the config file, ``--scenario`` and overrides into a validated config."""
    if args.config:
        base = load_config(args.config)
        data = {"scenario": base.scenario, "parameters": dict(base.parameters), "output": dict(base.output)}
        if args.scenario and args.scenario != base.scenario:
            data = {"scenario": args.scenario, "parameters": {}, "output": dict(base.output)}
    elif args.scenario:
        data = {"scenario": args.scenario, "parameters": {}, "output": {}}
    else:
        raise ConfigError("give --scenario or --config")
    overrides = [parse_override(s) for s in args.set]
    if args.chi is not None:
        overrides.append(("chi", args.chi))
    if args.gamma is not None:
        overrides.append(("gamma", args.gamma))
    for k, v in overrides:
        data["parameters"][k] = v
    if args.out:
        data["output"]["path"] = args.out
    if args.format:
        data["output"]["format"] = args.format
    return build_config(data, args.config or "<command line>")


def result_csv(result, columns=None) -> str:
    """CSV text: the index column first, then the series in declared order."""
    names = list(result.series) if columns is None else list(columns)
    missing = [c for c in names if c not in result.series]
    if missing:
        raise ConfigError(f"unknown series {missing}; available {list(result.series)}")
    buf = io.StringIO()
    buf.write(",".join([result.index_name] + names) + "\n")
    for i, t in enumerate(result.index):
        row = [format_number(t)] + [format_number(result.series[c][i]) for c in names]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def _json_clean(x):
    if isinstance(x, dict):
        return {str(k): _json_clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_json_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return None if np.isnan(x) else x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def result_json(result, cfg: ScenarioConfig, columns=None) -> str:
    names = list(result.series) if columns is None else list(columns)
    report = {
        "config": cfg.record(),
        "scenario": result.scenario,
        "series": {result.index_name: result.index, **{c: result.series[c] for c in names}},
        "detection": result.detection,
        "flags": result.flags,
        "violated": result.violated,
    }
    return json.dumps(_json_clean(report), indent=2, sort_keys=False) + "\n"


def write_outputs(result, cfg: ScenarioConfig, stem: str) -> list[Path]:
    out = Path(cfg.output.get("path") or ".")
    out.mkdir(parents=True, exist_ok=True)
    fmt = cfg.output.get("format", "both")
    cols = cfg.output.get("series")
    written = []
    if fmt in ("csv", "both"):
        p = out / f"{stem}.csv"
        p.write_text(result_csv(result, cols))
        written.append(p)
    if fmt in ("json", "both"):
        p = out / f"{stem}.json"
        p.write_text(result_json(result, cfg, cols))
        written.append(p)
    return written


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    result = run_config(cfg)
    for p in write_outputs(result, cfg, cfg.scenario):
        print(f"wrote {p}")
    bad = [k for k, v in result.flags.items() if v]
    if bad:
        print(f"violations: {', '.join(bad)}")
        return EXIT_VIOLATION
    print("no violations")
    return EXIT_OK


def parse_axis(text: str) -> tuple[str, list[float]]:
    """``name=start:stop:step`` (stop inclusive) or ``name=v1,v2,...``."""
    if "=" not in text:
        raise ConfigError(f"axis {text!r} must look like name=start:stop:step or name=v1,v2")
    name, spec = text.split("=", 1)
    name = name.strip()
    try:
        if ":" in spec:
            start, stop, step = (float(x) for x in spec.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            n = int(round((stop - start) / step))
            values = [float(np.round(start + k * step, 12)) for k in range(n + 1)]
        else:
            values = [float(x) for x in spec.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"axis {text!r}: cannot parse values") from exc
    if not values:
        raise ConfigError(f"axis {text!r} has no values")
    return name, values


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and len(v) == 1:
            # a per-alpha record swept one alpha at a time collapses onto its parent key
            (inner,) = v.values()
            out.update(_flatten({k: inner}, prefix))
        elif isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif v is None or isinstance(v, (bool, int, float, np.floating, np.integer)):
            out[key] = v
    return out


def _sweep_point(base: dict, point: dict):
    data = {"scenario": base["scenario"], "parameters": dict(base["parameters"]), "output": {}}
    for name, value in point.items():
        target = _AXIS_ALIASES.get(name, name)
        default = DEFAULTS[base["scenario"]].get(target)
        data["parameters"][target] = [value] if isinstance(default, list) else value
    try:
        cfg = build_config(data, "<sweep>")
        res = run_config(cfg)
        row = _flatten(res.detection)
        row["violated"] = res.violated
        return row, None
    except (PassivityError, ValueError) as exc:
        return {}, f"{type(exc).__name__}: {exc}"


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    axes = [parse_axis(a) for a in args.axis]
    if len(axes) > 2:
        raise ConfigError("at most two sweep axes are supported")
    names = [a[0] for a in axes]
    defaults = DEFAULTS[cfg.scenario]
    for n in names:
        if _AXIS_ALIASES.get(n, n) not in defaults:
            raise ConfigError(f"unknown sweep axis {n!r} for scenario {cfg.scenario!r}")
    points = sorted(itertools.product(*[a[1] for a in axes]))
    base = cfg.record()
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        results = list(pool.map(lambda vals: _sweep_point(base, dict(zip(names, vals))), points))
    metric_cols: list[str] = []
    for row, _ in results:
        for k in row:
            if k not in metric_cols:
                metric_cols.append(k)
    out = Path(cfg.output.get("path") or ".")
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.scenario}_sweep"
    fmt = cfg.output.get("format", "both")
    if fmt in ("csv", "both"):
        lines = [",".join(names + metric_cols + ["error"])]
        for vals, (row, err) in zip(points, results):
            cells = [format_number(v) for v in vals]
            for c in metric_cols:
                v = row.get(c)
                cells.append(str(v).lower() if isinstance(v, bool) else format_number(v))
            cells.append('"' + err.replace('"', "'") + '"' if err else "")
            lines.append(",".join(cells))
        (out / f"{stem}.csv").write_text("\n".join(lines) + "\n")
        print(f"wrote {out / f'{stem}.csv'}")
    if fmt in ("json", "both"):
        rows = [{"axes": dict(zip(names, vals)), "result": row, "error": err} for vals, (row, err) in zip(points, results)]
        report = {"config": base, "axes": {n: v for n, v in axes}, "rows": rows}
        (out / f"{stem}.json").write_text(json.dumps(_json_clean(report), indent=2) + "\n")
        print(f"wrote {out / f'{stem}.json'}")
    errors = sum(1 for _, e in results if e)
    if errors:
        print(f"{errors} of {len(points)} grid points failed")
        return EXIT_ERROR
    if any(row.get("violated") for row, _ in results):
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = resolve_config(args)
    print(f"config ok: scenario {cfg.scenario}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "sweep": cmd_sweep, "validate": cmd_validate}[args.command]
    try:
        return handler(args)
    except (PassivityError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
