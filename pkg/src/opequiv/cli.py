"""Command-line experiment driver.

Each subcommand reads a JSON config, validates it, runs one experiment and
writes ``<out>/<command>.csv`` plus a ``<command>.json`` mirror.  The CSV's
first line is a ``#`` comment carrying the timestamp; everything after it is
a deterministic function of the config and seed.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .channels import (
    DMC,
    BudgetAdversaryChannel,
    ChannelSet,
    ConstantChannel,
    IdentityChannel,
    bsc,
    estimate_membership,
)
from .codecs import (
    erasure_prefix_codebook,
    quantize_type,
    run_channel_trials,
    run_converse_experiment,
    run_source_trials,
)
from .core import CommonRandomness, DistortionSpec, Pmf
from .errors import ConfigError, InvalidChannel, InvalidPmf, NoConvergence, ResourceLimit
from .oracle import blahut_arimoto, distortion_range
from .stack import (
    SourceCodecLayer,
    build_reliable_on_lossy,
    build_separation_system,
    evaluate_end_to_end,
    ternary_symmetric,
)
from .typecalc import exact_F_chan, midpoint_rate, optimize_qY, phase_transition_curve

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE, EXIT_NO_CONVERGENCE = 0, 2, 3, 4

# ---------------------------------------------------------------- schemas

_NUM = {"type": "number"}
_PMF = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}
_DISTORTION = {
    "type": "object",
    "oneOf": [
        {"required": ["matrix"], "properties": {
            "matrix": {"type": "array", "minItems": 1,
                       "items": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}}}}},
        {"required": ["hamming"], "properties": {"hamming": {"type": "integer", "minimum": 1}}},
    ],
}
_GRID = {
    "oneOf": [
        {"type": "array", "items": _NUM, "minItems": 1},
        {"type": "object", "required": ["start", "stop", "num"], "additionalProperties": False,
         "properties": {"start": _NUM, "stop": _NUM, "num": {"type": "integer", "minimum": 1}}},
    ]
}
_CHANNEL = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["identity", "bsc", "dmc", "ternary_symmetric", "constant", "adversary",
                          "source_code"]},
        "label": {"type": "string"},
        "flip": {"type": "number", "minimum": 0, "maximum": 1},
        "delta": {"type": "number", "minimum": 0, "maximum": 1},
        "matrix": {"type": "array", "items": {"type": "array", "items": _NUM}},
        "symbol": {"type": "integer", "minimum": 0},
        "fraction": {"type": "number", "minimum": 0},
        "rate": {"type": "number", "minimum": 0},
        "qY": _PMF,
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "D": {"type": "number", "minimum": 0},
    },
    "allOf": [
        {"if": {"properties": {"kind": {"const": "bsc"}}}, "then": {"required": ["flip"]}},
        {"if": {"properties": {"kind": {"const": "dmc"}}}, "then": {"required": ["matrix"]}},
        {"if": {"properties": {"kind": {"const": "ternary_symmetric"}}}, "then": {"required": ["delta"]}},
        {"if": {"properties": {"kind": {"const": "constant"}}}, "then": {"required": ["symbol"]}},
        {"if": {"properties": {"kind": {"const": "adversary"}}}, "then": {"required": ["fraction"]}},
        {"if": {"properties": {"kind": {"const": "source_code"}}}, "then": {"required": ["rate"]}},
    ],
}
_BASE = {
    "pX": _PMF,
    "distortion": _DISTORTION,
    "D": {"type": "number", "minimum": 0},
    "eps": {"type": "number", "exclusiveMinimum": 0},
    "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
    "trials": {"type": "integer", "minimum": 1},
    "note": {"type": "string"},
    "kind": {"type": "string"},
}


def _schema(required, **props):
    return {"type": "object", "required": ["pX", "distortion", *required],
            "properties": {**_BASE, **props}, "additionalProperties": False}


SCHEMAS = {
    "rd": _schema(["D_grid"], D_grid=_GRID, tol={"type": "number", "exclusiveMinimum": 0},
                  include_dmax={"type": "boolean"}),
    "sweep": _schema(
        ["D", "n", "rates"],
        n={"type": "integer", "minimum": 1},
        ns={"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3},
        grid_step={"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
        rates=_GRID,
    ),
    "trials": _schema(
        ["mode", "D", "n", "R", "trials"],
        mode={"enum": ["channel", "source", "converse"]},
        n={"type": "integer", "minimum": 1},
        R={"type": "number", "minimum": 0},
        Rs={"type": "number", "minimum": 0},
        qY=_PMF,
        channel=_CHANNEL,
        source_code={"type": "object", "required": ["kind", "k"], "additionalProperties": False,
                     "properties": {"kind": {"const": "erasure_prefix"},
                                    "k": {"type": "integer", "minimum": 0}}},
    ),
    "membership": _schema(
        ["D", "ns", "trials", "channel"],
        ns={"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        channel=_CHANNEL,
        threshold={"type": "number", "minimum": 0, "maximum": 1},
    ),
    "separate": _schema(
        ["mode", "D", "n", "R", "trials", "channels"],
        mode={"enum": ["separation", "reliable_on_lossy"]},
        n={"type": "integer", "minimum": 1},
        R={"type": "number", "minimum": 0},
        Rs={"type": "number", "minimum": 0},
        qY=_PMF,
        channels={"type": "array", "items": _CHANNEL, "minItems": 1},
        channel_code={"type": "object", "additionalProperties": False,
                      "properties": {"pX": _PMF, "distortion": _DISTORTION,
                                     "D": {"type": "number", "minimum": 0},
                                     "eps": {"type": "number", "exclusiveMinimum": 0}}},
        membership_trials={"type": "integer", "minimum": 0},
        redraw={"type": "boolean"},
    ),
}

# --------------------------------------------------------------- config io


def _path(parts):
    return "/".join(str(p) for p in parts)


def validate_config(command, config):
    """Schema plus semantic checks; raises ConfigError naming the offending field."""
    if not isinstance(config, dict):
        raise ConfigError("", "config must be a JSON object")
    error = jsonschema.exceptions.best_match(
        jsonschema.Draft202012Validator(SCHEMAS[command]).iter_errors(config))
    if error is not None:
        raise ConfigError(_path(error.absolute_path), error.message)
    p = _pmf(config["pX"], "pX")
    d = _distortion(config["distortion"], config.get("D", 0.0), "distortion")
    if d.input_size != p.size:
        raise ConfigError("distortion", f"{d.input_size} rows but pX has {p.size} symbols")
    if "qY" in config:
        q = _pmf(config["qY"], "qY")
        if q.size != d.output_size:
            raise ConfigError("qY", f"{q.size} entries but distortion has {d.output_size} columns")
    if command == "trials" and config["mode"] == "converse" and "Rs" not in config \
            and "source_code" not in config:
        raise ConfigError("Rs", "converse mode needs Rs or source_code")
    if command == "trials" and config["mode"] == "channel" and "channel" not in config:
        raise ConfigError("channel", "channel mode needs a channel")
    if command == "separate" and config["mode"] == "separation" and "Rs" not in config:
        raise ConfigError("Rs", "separation mode needs Rs")
    return config


def _pmf(weights, path):
    try:
        return Pmf(weights)
    except InvalidPmf as exc:
        raise ConfigError(path, str(exc)) from None


def _distortion(spec, budget, path):
    if "hamming" in spec:
        return DistortionSpec.hamming(spec["hamming"], budget)
    rows = spec["matrix"]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{path}/matrix", "rows have different lengths")
    return DistortionSpec(rows, budget)


def load_config(command, path, seed=None):
    try:
        config = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("", f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from None
    if seed is not None:
        config["seed"] = seed
    return validate_config(command, config)


def _grid(spec):
    if isinstance(spec, dict):
        return np.linspace(spec["start"], spec["stop"], spec["num"]).tolist()
    return [float(v) for v in spec]


def _jsonable(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Pmf):
        return obj.weights.tolist()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def write_outputs(out_dir, command, header, rows, summary, config, note=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    meta = f"# opequiv {__version__} {command} generated={stamp} seed={config.get('seed', 0)}"
    if note:
        meta += f" note={note}"
    csv_path = out / f"{command}.csv"
    with csv_path.open("w", newline="") as fh:
        fh.write(meta + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    mirror = {"command": command, "config": config, "columns": list(header),
              "rows": [list(r) for r in rows], "summary": summary}
    if note:
        mirror["note"] = note
    json_path = out / f"{command}.json"
    json_path.write_text(json.dumps(mirror, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return csv_path, json_path


def read_csv_body(path):
    """CSV text without the ``#`` metadata line."""
    lines = Path(path).read_text().splitlines(keepends=True)
    return "".join(line for line in lines if not line.startswith("#"))


# ---------------------------------------------------------------- channels


def build_channel(spec, p, d, cr):
    """Instantiate a channel from its config entry."""
    kind = spec["kind"]
    if kind == "identity":
        return IdentityChannel(p.size)
    if kind == "bsc":
        return bsc(spec["flip"])
    if kind == "dmc":
        return DMC(spec["matrix"], name=spec.get("label"))
    if kind == "ternary_symmetric":
        return DMC(ternary_symmetric(spec["delta"]), name=spec.get("label"))
    if kind == "constant":
        return ConstantChannel(spec["symbol"], p.size, d.output_size)
    if kind == "adversary":
        return BudgetAdversaryChannel(d, spec["fraction"])
    if kind == "source_code":
        q = spec.get("qY")
        layer = SourceCodecLayer(p, d.with_budget(spec.get("D", d.budget)), spec.get("eps", 0.02),
                                 spec["rate"], cr, q=q, label="lossy")
        return layer.as_channel()
    raise ConfigError("kind", f"unknown channel kind {kind!r}")


def _channel_set(specs, p, d, cr, path):
    members, labels = [], []
    for i, spec in enumerate(specs):
        try:
            members.append(build_channel(spec, p, d, cr.child("channel-spec", i)))
        except (InvalidChannel, ValueError) as exc:
            raise ConfigError(f"{path}/{i}", str(exc)) from None
        labels.append(spec.get("label", f"{i}:{spec['kind']}"))
    try:
        return ChannelSet(members, labels)
    except InvalidChannel as exc:
        raise ConfigError(path, str(exc)) from None


def _common(config):
    p = Pmf(config["pX"])
    d = _distortion(config["distortion"], config.get("D", 0.0), "distortion")
    cr = CommonRandomness(config.get("seed", 0))
    return p, d, cr


# --------------------------------------------------------------- commands


def cmd_rd(config, out, threads=1):
    p, d, _ = _common(config)
    grid = _grid(config["D_grid"])
    d_min, d_max = distortion_range(p, d)
    if config.get("include_dmax", True) and not any(abs(v - d_max) < 1e-15 for v in grid):
        grid.append(d_max)
    grid = sorted(grid)
    tol = config.get("tol", 1e-9)
    points = [blahut_arimoto(p, d, D, tol=tol) for D in grid]
    rows = [(pt.D, pt.R, pt.iterations, pt.gap) for pt in points]
    summary = {"D_min": d_min, "D_max": d_max}
    return write_outputs(out, "rd", ("D", "R", "iterations", "gap"), rows, summary, config,
                         config.get("note"))


def cmd_sweep(config, out, threads=1):
    p, d, _ = _common(config)
    eps = config.get("eps", 0.02)
    n = config["n"]
    est = optimize_qY(p, d, eps, config.get("ns", n), config.get("grid_step", 0.05), threads=threads)
    q_counts = quantize_type(est.qY_star, n)
    log_F = exact_F_chan(n, q_counts, p, d, eps)
    curve = phase_transition_curve(n, _grid(config["rates"]), log_F)
    q = est.qY_star.weights.tolist()
    rows = [(*q, n, r, log_F, s) for r, s in curve]
    header = (*(f"qY{i}" for i in range(len(q))), "n", "R", "logF", "survival")
    summary = {**est.to_dict(), "log_F": log_F,
               "midpoint_rate": midpoint_rate(n, log_F) if np.isfinite(log_F) else None}
    return write_outputs(out, "sweep", header, rows, summary, config, config.get("note"))


def cmd_trials(config, out, threads=1):
    p, d, cr = _common(config)
    eps = config.get("eps", 0.02)
    n, R, trials, mode = config["n"], config["R"], config["trials"], config["mode"]
    q = Pmf(config["qY"]) if "qY" in config else Pmf.uniform(d.output_size)
    summary = {"mode": mode}
    if mode == "channel":
        channel = build_channel(config["channel"], p, d, cr.child("channel-spec"))
        hist = run_channel_trials(channel, n, R, p, d, eps, trials, cr)
    elif mode == "source":
        hist = run_source_trials(p, d, eps, n, R, q, trials, cr)
    else:
        book = None
        if "source_code" in config:
            book = erasure_prefix_codebook(n, config["source_code"]["k"], p.size)
        res = run_converse_experiment(config.get("Rs", 0.0), R, n, p, d, eps, trials, cr, q=q,
                                      source_codebook=book)
        hist = res.histogram
        summary.update(source_words=res.source_words, channel_words=res.channel_words,
                       distinct_outputs=res.distinct_outputs, pigeonhole_bound=res.pigeonhole_bound,
                       slack_3sigma=res.slack(3.0))
    summary.update(trials=hist.trials, success_fraction=hist.success_fraction,
                   error_fraction=hist.error_fraction)
    return write_outputs(out, "trials", ("tag", "count", "fraction"), hist.rows(), summary, config,
                         config.get("note"))


def cmd_membership(config, out, threads=1):
    p, d, cr = _common(config)
    channel = build_channel(config["channel"], p, d, cr.child("channel-spec"))
    report = estimate_membership(channel, p, d, config["ns"], config["trials"], cr)
    summary = {"channel": channel.describe(), "decreasing": report.is_decreasing()}
    if "threshold" in config:
        summary["passes"] = report.passes(config["threshold"])
    return write_outputs(out, "membership", ("n", "p_hat", "ci", "trials"), report.csv_rows(),
                         summary, config, config.get("note"))


def cmd_separate(config, out, threads=1):
    p, d, cr = _common(config)
    eps = config.get("eps", 0.02)
    n, R, trials = config["n"], config["R"], config["trials"]
    channels = _channel_set(config["channels"], p, d, cr, "channels")
    if config["mode"] == "separation":
        cc = config.get("channel_code", {})
        cp = Pmf(cc["pX"]) if "pX" in cc else None
        cd = None
        if "distortion" in cc or "D" in cc:
            cd = _distortion(cc.get("distortion", config["distortion"]), cc.get("D", d.budget),
                             "channel_code/distortion")
        stack = build_separation_system(p, d, eps, n, R, config["Rs"], cr.child("stack"),
                                        q=config.get("qY"), channel_p=cp, channel_d=cd,
                                        channel_eps=cc.get("eps"))
        stack.inner = channels
        metric = "distortion"
        redraw = config.get("redraw", False)
    else:
        stack = build_reliable_on_lossy(channels, p, d, eps, n, R, cr.child("stack"),
                                        membership_trials=config.get("membership_trials", 200))
        metric = "message-error"
        redraw = config.get("redraw", True)
    reports = evaluate_end_to_end(stack, channels, metric, trials, cr.child("evaluate"), n,
                                  redraw=redraw)
    summary = {"stack": stack.describe(), "metric": metric}
    header = ("channel", "metric", "failures", "trials", "fraction", "ci")
    return write_outputs(out, "separate", header, [r.row() for r in reports], summary, config,
                         config.get("note"))


COMMANDS = {
    "rd": cmd_rd,
    "sweep": cmd_sweep,
    "trials": cmd_trials,
    "membership": cmd_membership,
    "separate": cmd_separate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="opequiv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "rd": "rate-distortion curve (Blahut-Arimoto oracle)",
        "sweep": "threshold exponent and phase-transition curve from exact type counts",
        "trials": "random-coding Monte Carlo trials (channel, source or converse)",
        "membership": "excess-distortion probability of a channel",
        "separate": "layered stacks evaluated over a channel set",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None, help="override the config's master seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads where supported")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.command, args.config, args.seed)
        csv_path, json_path = COMMANDS[args.command](config, args.out, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceLimit as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except NoConvergence as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
