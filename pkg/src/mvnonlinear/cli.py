"""Command-line driver.

    mv-nonlinear check      --market FILE [--x0 X --K K]
    mv-nonlinear value      --market FILE --t 0,0.5 --x 0.5:1.5:11 (--d D | --x0 X --K K)
    mv-nonlinear policy     (same as value)
    mv-nonlinear frontier   --market FILE --x0 X --K-min vertex --K-max 2 --K-steps 21
    mv-nonlinear simulate   --market FILE --x0 X --K K --paths N --steps M --seed S
    mv-nonlinear verify-hjb --market FILE (--d D | --x0 X --K K) [--grid-* ...]

``--model NAME --model-params FILE`` replaces ``--market``.  ``--config``
takes a JSON run configuration (a path or inline JSON); a previously
emitted JSON result is accepted too, and its echoed configuration is
replayed.  Explicit flags override the configuration.

Exit status: 0 success, 2 bad input, 3 numerical failure.  Failures print
one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .catalog import MODELS, market_from_model
from .closed_form import feedback_policy, frontier_sweep, lagrange_d_star, value_function
from .errors import ConfigError, InvalidMarket, MVError
from .hjb_fd import GridConfig, compare_to_closed_form, default_grid, refinement_study, solve_hjb
from .market import MarketParams, ProblemSpec, market_from_dict, market_to_dict, validate_market
from .mc_engine import SimConfig, estimate_frontier_point

COMMANDS = ("value", "policy", "frontier", "simulate", "verify-hjb", "check")
FORMATS = ("json", "csv")
GRID_FLAGS = {
    "x_min": float, "x_max": float, "n_x": int, "n_t": int, "control_bound": float, "n_pi": int,
    "scheme": str, "frame": str, "drift": str, "control_search": str,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mv-nonlinear", description=__doc__.split("\n\n")[0],
                     formatter_class=argparse.RawDescriptionHelpFormatter, allow_abbrev=False)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name in COMMANDS:
        p = sub.add_parser(name, allow_abbrev=False)
        p.add_argument("--config", help="run configuration: JSON file or inline JSON")
        src = p.add_argument_group("market")
        src.add_argument("--market", help="market definition file (JSON)")
        src.add_argument("--model", choices=sorted(MODELS))
        src.add_argument("--model-params", help="model parameter file (JSON)")
        prob = p.add_argument_group("problem")
        prob.add_argument("--x0", type=float)
        prob.add_argument("--K", type=_k_value)
        prob.add_argument("--d", type=float, help="shifted target; defaults to d* from --x0/--K")
        if name == "frontier":
            prob.add_argument("--K-min", dest="K_min", type=_k_value, help="number or 'vertex'")
            prob.add_argument("--K-max", dest="K_max", type=_k_value, help="number or 'vertex'")
            prob.add_argument("--K-steps", dest="K_steps", type=int)
        if name in ("value", "policy"):
            prob.add_argument("--t", help="times: a,b,c or start:stop:num")
            prob.add_argument("--x", help="wealths: a,b,c or start:stop:num")
        if name == "verify-hjb":
            g = p.add_argument_group("grid")
            for key, typ in GRID_FLAGS.items():
                g.add_argument("--grid-" + key.replace("_", "-"), dest="grid_" + key, type=typ)
            g.add_argument("--refine", action="store_true", default=None,
                           help="also solve on (dx/2, dt/4) and report the observed order")
            g.add_argument("--dump-csv", help="write the value surface as t,x,v rows")
        if name == "simulate":
            s = p.add_argument_group("simulation")
            s.add_argument("--paths", type=int)
            s.add_argument("--steps", type=int)
            s.add_argument("--seed", type=int)
            s.add_argument("--batch-size", dest="batch_size", type=int)
            s.add_argument("--antithetic", action="store_true", default=None)
            s.add_argument("--confidence", type=float)
        out = p.add_argument_group("output")
        out.add_argument("--out", help="output file (default: stdout)")
        out.add_argument("--format", choices=FORMATS)
    return parser


def _k_value(text):
    if text == "vertex":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'vertex', got {text!r}") from None


def parse_points(text) -> list[float]:
    """``"a,b,c"`` or ``"start:stop:num"`` (inclusive linspace)."""
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return [float(text)]
    try:
        if ":" in text:
            a, b, n = text.split(":")
            return np.linspace(float(a), float(b), int(n)).tolist()
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse point list {text!r}") from None


@dataclass
class RunConfig:
    """Fully resolved run: everything needed to reproduce the output."""

    command: str
    market: MarketParams
    market_source: dict
    problem: dict = field(default_factory=dict)
    grid: GridConfig | None = None
    sim: SimConfig | None = None
    options: dict = field(default_factory=dict)
    output: dict = field(default_factory=lambda: {"path": None, "format": "json"})

    def to_dict(self) -> dict:
        out = {
            "format": 1,
            "command": self.command,
            "market": market_to_dict(self.market),
            "market_source": self.market_source,
            "problem": self.problem,
            "options": self.options,
            # the destination is not part of the run; keeps artifacts comparable byte for byte
            "output": {"format": self.output["format"]},
        }
        if self.grid is not None:
            out["grid"] = self.grid.as_dict()
        if self.sim is not None:
            out["sim"] = self.sim.as_dict()
        return out


def _read_json(source: str, what: str):
    text = source
    if not source.lstrip().startswith("{"):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"{what}: cannot read {source!r}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _config_dict(source: str) -> dict:
    raw = _read_json(source, "config")
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    # an emitted artifact: replay its echoed configuration
    if "metadata" in raw and isinstance(raw["metadata"], dict) and "config" in raw["metadata"]:
        raw = raw["metadata"]["config"]
    if raw.get("format", 1) != 1:
        raise ConfigError(f"config format: unsupported version {raw.get('format')!r}, expected 1")
    allowed = {"format", "command", "market", "market_source", "model", "problem", "grid", "sim",
               "options", "output"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")
    return raw


def _resolve_market(cfg: dict) -> tuple[MarketParams, dict]:
    market, model = cfg.get("market"), cfg.get("model")
    if market is not None and model is not None:
        raise ConfigError("market: give either a market definition or a model, not both")
    if market is not None:
        source = {"kind": "market", "path": market} if isinstance(market, str) else {"kind": "market"}
        obj = _read_json(market, "market") if isinstance(market, str) else market
        params = market_from_dict(obj)
    elif model is not None:
        if not isinstance(model, dict) or "name" not in model or "params" not in model:
            raise ConfigError("model: expected {'name': ..., 'params': ...}")
        name, mp = model["name"], model["params"]
        source = {"kind": "model", "name": name}
        obj = _read_json(mp, "model-params") if isinstance(mp, str) else mp
        if isinstance(mp, str):
            source["path"] = mp
        source["params"] = obj
        params = market_from_model(name, obj)
    else:
        raise ConfigError("market: missing key 'market' (use --market FILE or --model NAME --model-params FILE)")
    return params, source


def _merge_flags(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = json.loads(json.dumps(cfg))  # deep copy
    cfg["command"] = args.command
    if args.market is not None:
        cfg["market"] = args.market
        cfg.pop("model", None)
    if args.model is not None or args.model_params is not None:
        if args.model is None or args.model_params is None:
            raise ConfigError("--model and --model-params must be given together")
        cfg["model"] = {"name": args.model, "params": args.model_params}
        cfg.pop("market", None)
    problem = cfg.setdefault("problem", {})
    for key in ("x0", "K", "d", "K_min", "K_max", "K_steps", "t", "x"):
        val = getattr(args, key, None)
        if val is not None:
            problem[key] = val
    grid = cfg.setdefault("grid", {})
    for key in GRID_FLAGS:
        val = getattr(args, "grid_" + key, None)
        if val is not None:
            grid[key] = val
    sim = cfg.setdefault("sim", {})
    for flag, key in (("paths", "n_paths"), ("steps", "n_steps"), ("seed", "seed"),
                      ("batch_size", "batch_size"), ("antithetic", "antithetic")):
        val = getattr(args, flag, None)
        if val is not None:
            sim[key] = val
    options = cfg.setdefault("options", {})
    for key in ("confidence", "refine", "dump_csv"):
        val = getattr(args, key, None)
        if val is not None:
            options[key] = val
    output = cfg.setdefault("output", {})
    if args.out is not None:
        output["path"] = args.out
    if args.format is not None:
        output["format"] = args.format
    return cfg


def _need(problem: dict, key: str, command: str):
    if problem.get(key) is None:
        raise ConfigError(f"missing key '{key}' (required by '{command}')")
    return problem[key]


def _float(problem: dict, key: str, command: str, market: MarketParams | None = None, x0=None):
    val = _need(problem, key, command)
    if val == "vertex":
        if market is None or x0 is None:
            raise ConfigError(f"{key}: 'vertex' needs x0")
        return market.riskless_growth(x0)
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise ConfigError(f"{key}: expected a finite number, got {val!r}")
    return float(val)


def finalize(cfg: dict) -> RunConfig:
    """Validate a merged configuration dict and fill every default."""
    command = cfg.get("command")
    if command not in COMMANDS:
        raise ConfigError(f"command: expected one of {COMMANDS}, got {command!r}")
    market, source = _resolve_market(cfg)
    if isinstance(cfg.get("market"), dict) and isinstance(cfg.get("market_source"), dict):
        source = cfg["market_source"]
    report = validate_market(market)
    if report and command != "check":
        raise InvalidMarket(report)
    raw = dict(cfg.get("problem") or {})
    problem: dict[str, Any] = {}
    if raw.get("x0") is not None:
        problem["x0"] = _float(raw, "x0", command)
    if command in ("value", "policy", "verify-hjb"):
        if raw.get("d") is not None:
            problem["d"] = _float(raw, "d", command)
        else:
            if raw.get("x0") is None or raw.get("K") is None:
                raise ConfigError(f"missing key 'd' (or both 'x0' and 'K') required by '{command}'")
            problem["K"] = _float(raw, "K", command, market, problem["x0"])
            spec = ProblemSpec(problem["x0"], problem["K"], market)
            problem["d"] = lagrange_d_star(market, spec).d
    if command in ("value", "policy"):
        problem["t"] = parse_points(_need(raw, "t", command))
        problem["x"] = parse_points(_need(raw, "x", command))
    if command == "frontier":
        x0 = _float(raw, "x0", command)
        if raw.get("K_min") is None and raw.get("K") is not None:
            raw["K_min"] = raw["K_max"] = raw["K"]
            raw.setdefault("K_steps", 1)
        problem["K_min"] = _float(raw, "K_min", command, market, x0)
        problem["K_max"] = _float(raw, "K_max", command, market, x0)
        steps = raw.get("K_steps", 21)
        if isinstance(steps, bool) or not isinstance(steps, int) or steps < 1:
            raise ConfigError(f"K_steps: expected an integer >= 1, got {steps!r}")
        if steps == 1 and problem["K_max"] != problem["K_min"]:
            raise ConfigError("K_steps: 1 requires K_min == K_max")
        problem["K_steps"] = steps
    if command == "simulate":
        _float(raw, "x0", command)
        problem["K"] = _float(raw, "K", command, market, problem["x0"])
        ProblemSpec(problem["x0"], problem["K"], market)
    if command == "check" and raw.get("K") is not None:
        if "x0" not in problem:
            raise ConfigError("missing key 'x0' (needed to check K)")
        problem["K"] = _float(raw, "K", command, market, problem["x0"])

    grid = None
    if command == "verify-hjb":
        g = {k: v for k, v in (cfg.get("grid") or {}).items() if v is not None}
        unknown = set(g) - set(GRID_FLAGS) - {"max_policy_iter"}
        if unknown:
            raise ConfigError(f"grid: unknown keys {sorted(unknown)}")
        grid = default_grid(market, problem["d"], **g)
    sim = None
    if command == "simulate":
        s = {k: v for k, v in (cfg.get("sim") or {}).items() if v is not None}
        unknown = set(s) - {"n_paths", "n_steps", "seed", "batch_size", "antithetic"}
        if unknown:
            raise ConfigError(f"sim: unknown keys {sorted(unknown)}")
        s.setdefault("n_paths", 100_000)
        sim = SimConfig(**s)

    options = dict(cfg.get("options") or {})
    unknown = set(options) - {"confidence", "refine", "dump_csv"}
    if unknown:
        raise ConfigError(f"options: unknown keys {sorted(unknown)}")
    if command == "simulate":
        conf = options.setdefault("confidence", 0.95)
        if not (isinstance(conf, (int, float)) and 0.0 < conf < 1.0):
            raise ConfigError(f"confidence: expected a number in (0, 1), got {conf!r}")
    if command == "verify-hjb":
        options.setdefault("refine", False)
        options.setdefault("dump_csv", None)

    output = {"path": None, "format": "json", **(cfg.get("output") or {})}
    if output["format"] not in FORMATS:
        raise ConfigError(f"output format: expected one of {FORMATS}, got {output['format']!r}")
    return RunConfig(command, market, source, problem, grid, sim, options, output)


def load_config(source: str) -> RunConfig:
    """Load and validate a run configuration (file path or inline JSON)."""
    return finalize(_config_dict(source))


# -- commands --------------------------------------------------------------------


def _cmd_check(rc: RunConfig):
    report = validate_market(rc.market)
    result = {"violations": [v.as_dict() for v in report]}
    if "K" in rc.problem:
        spec = ProblemSpec(rc.problem["x0"], rc.problem["K"], rc.market)
        result["problem"] = {"x0": spec.x0, "K": spec.K, "vertex": spec.vertex, "at_vertex": spec.at_vertex}
    rows = [["curve", "time", "rule", "message"]] + [[v.curve, v.time, v.rule, v.message] for v in report]
    error = InvalidMarket(report) if report else None
    return result, rows, error


def _cmd_value(rc: RunConfig):
    d = rc.problem["d"]
    rows = [["t", "x", "d", "value"]]
    points = []
    for t in rc.problem["t"]:
        vals = np.atleast_1d(value_function(rc.market, t, np.array(rc.problem["x"]), d))
        for x, v in zip(rc.problem["x"], vals):
            points.append({"t": t, "x": x, "value": float(v)})
            rows.append([t, x, d, float(v)])
    return {"d": d, "points": points}, rows, None


def _cmd_policy(rc: RunConfig):
    d = rc.problem["d"]
    rows = [["t", "x", "d", "pi", "region"]]
    points = []
    for t in rc.problem["t"]:
        for x in rc.problem["x"]:
            dec = feedback_policy(rc.market, t, x, d)
            points.append({"t": t, "x": x, "pi": dec.pi, "region": dec.region.value})
            rows.append([t, x, d, dec.pi, dec.region.value])
    return {"d": d, "points": points}, rows, None


def _cmd_frontier(rc: RunConfig):
    p = rc.problem
    Ks = np.linspace(p["K_min"], p["K_max"], p["K_steps"]).tolist()
    points = frontier_sweep(rc.market, p["x0"], Ks)
    cols = ["K", "variance", "std_dev", "d_star", "lambda_star"]
    rows = [cols] + [[pt.as_dict()[c] for c in cols] for pt in points]
    return {"x0": p["x0"], "points": [pt.as_dict() for pt in points]}, rows, None


def _cmd_simulate(rc: RunConfig):
    spec = ProblemSpec(rc.problem["x0"], rc.problem["K"], rc.market)
    est = estimate_frontier_point(rc.market, spec, rc.sim, confidence=rc.options["confidence"])
    result = est.as_dict()
    result["variance_reduction"] = "antithetic" if rc.sim.antithetic else "none"
    rows = [["quantity", "value"]] + _flatten(result)
    return result, rows, None


def _cmd_verify_hjb(rc: RunConfig):
    d = rc.problem["d"]
    if rc.options["refine"]:
        report, _ = refinement_study(rc.market, d, rc.grid)
        solution = None
    else:
        solution = solve_hjb(rc.market, d, rc.grid)
        report = compare_to_closed_form(solution, rc.market)
    if rc.options.get("dump_csv"):
        solution = solution or solve_hjb(rc.market, d, rc.grid)
        solution.to_csv(rc.options["dump_csv"])
    result = report.as_dict()
    result["d"] = d
    rows = [["quantity", "value"]] + _flatten(result)
    return result, rows, None


def _flatten(obj, prefix=""):
    rows = []
    for key, val in obj.items():
        name = f"{prefix}{key}"
        if isinstance(val, dict):
            rows += _flatten(val, name + ".")
        elif isinstance(val, (list, tuple)):
            rows += [[f"{name}[{i}]", v] for i, v in enumerate(val)]
        else:
            rows.append([name, val])
    return rows


HANDLERS = {
    "check": _cmd_check,
    "value": _cmd_value,
    "policy": _cmd_policy,
    "frontier": _cmd_frontier,
    "simulate": _cmd_simulate,
    "verify-hjb": _cmd_verify_hjb,
}


def _emit(rc: RunConfig, result, rows, stdout):
    fmt, path = rc.output["format"], rc.output.get("path")
    metadata = {
        "tool": "mv-nonlinear",
        "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
        "config": rc.to_dict(),
    }
    if fmt == "json":
        text = json.dumps({"metadata": metadata, "result": result}, indent=2, allow_nan=True) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerows(rows)
        text = buf.getvalue()
    if path:
        Path(path).write_text(text)
        if fmt == "csv":
            Path(str(path) + ".meta.json").write_text(json.dumps(metadata, indent=2) + "\n")
    else:
        stdout.write(text)


def _fail(exc: MVError, stderr) -> int:
    line = {"error": exc.code, "message": str(exc)}
    if isinstance(exc, InvalidMarket):
        line["violations"] = [v.as_dict() for v in exc.violations]
    if hasattr(exc, "K"):
        line["K"] = exc.K
    stderr.write(json.dumps(line) + "\n")
    return exc.exit_status


def run(argv=None, stdout=None, stderr=None) -> int:
    """Parse ``argv``, execute the command, write outputs; return the exit status."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        cfg = _config_dict(args.config) if args.config else {}
        rc = finalize(_merge_flags(cfg, args))
        result, rows, error = HANDLERS[rc.command](rc)
        _emit(rc, result, rows, stdout)
        if error is not None:
            return _fail(error, stderr)
        return 0
    except MVError as exc:
        return _fail(exc, stderr)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
