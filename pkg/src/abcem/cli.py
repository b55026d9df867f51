"""Command line: ``abcem run <config.json> [--out DIR]``, ``abcem preset <name>``, ``abcem list``.

A config is a JSON object.  ``preset`` loads a parameter table, ``override``
replaces individual parameters, and the remaining keys pick the experiment,
scheme, step size, run length, seeds and sweep axes.
"""

from __future__ import annotations

import argparse
import enum
import json
import os
import sys
import tempfile
from typing import Optional, Sequence

from . import __version__
from .experiments import (EXPERIMENTS, SCHEMES, ExperimentConfig, OuReport,
                          _fmt, run_experiment, warmup_steps)
from .fw import FwParams
from .lls import LlsParams

TOP_LEVEL_KEYS = ("experiment", "preset", "override", "scheme", "dt", "steps", "horizon",
                  "seed", "runs", "sweep", "out")


class ConfigError(ValueError):
    pass


def _jsonable(value):
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    return value


def _table_block(params) -> dict:
    return {k: _jsonable(v) for k, v in params.__dict__.items()}


PRESETS = {
    "fw-basic": {"experiment": "fw_run", "steps": 20000, "seed": 1, "runs": 1,
                 "params": _table_block(FwParams())},
    "lls-basic": {"experiment": "lls_run", "steps": 200, "seed": 1, "runs": 1,
                  "params": _table_block(LlsParams())},
    "lls-3agents": {"experiment": "lls_run", "steps": 20000, "seed": 1, "runs": 1,
                    "params": _table_block(LlsParams(
                        num_agents=99, interest_rate=0.0001, dividend_lo=0.00015,
                        dividend_hi=0.00015, total_shares=9900,
                        memory_spec=[10] * 33 + [141] * 33 + [256] * 33,
                        initial_dividend=0.004))},
}


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def parse_config(text: str) -> ExperimentConfig:
    """Validated experiment config from JSON text.

    Parse problems raise :class:`ConfigError` naming the offending key;
    model invariant violations surface as the model's validation errors.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    _require(isinstance(doc, dict), "config must be a JSON object")
    for key in doc:
        _require(key in TOP_LEVEL_KEYS, f"unknown key {key!r}")
    base: dict = {}
    preset = doc.get("preset")
    if preset is not None:
        _require(preset in PRESETS, f"key 'preset': unknown preset {preset!r}")
        base = json.loads(json.dumps(PRESETS[preset]))
    experiment = doc.get("experiment", base.get("experiment"))
    _require(experiment is not None, "missing required key 'experiment'")
    _require(experiment in EXPERIMENTS, f"key 'experiment': unknown experiment {experiment!r}")
    params = dict(base.get("params", {}))
    override = doc.get("override", {})
    _require(isinstance(override, dict), "key 'override' must be an object")
    params.update(override)
    scheme = doc.get("scheme", "explicit")
    _require(scheme in SCHEMES, f"key 'scheme': must be one of {SCHEMES}")
    kw = {}
    for key, check, what in (("dt", _is_number, "a number"),
                             ("horizon", _is_number, "a number"),
                             ("steps", lambda v: isinstance(v, int) and not isinstance(v, bool),
                              "an integer"),
                             ("seed", lambda v: isinstance(v, int) and not isinstance(v, bool),
                              "an integer"),
                             ("runs", lambda v: isinstance(v, int) and not isinstance(v, bool),
                              "an integer"),
                             ("out", lambda v: isinstance(v, str), "a string")):
        value = doc.get(key, base.get(key))
        if value is not None:
            _require(check(value), f"key {key!r} must be {what}")
            kw[key] = value
    # a preset's own run length yields to an explicit horizon
    if "horizon" in doc and "steps" not in doc:
        kw.pop("steps", None)
    sweep = doc.get("sweep", {})
    _require(isinstance(sweep, dict), "key 'sweep' must be an object")
    for axis, values in sweep.items():
        _require(isinstance(values, list), f"key 'sweep.{axis}' must be a list")
    return ExperimentConfig(experiment=experiment, params=params, scheme=scheme,
                            sweep={k: list(v) for k, v in sweep.items()},
                            preset=preset, **kw)


def config_to_json(config: ExperimentConfig) -> str:
    """Canonical JSON that ``parse_config`` maps back to the same config."""
    doc = {"experiment": config.experiment, "override": config.params,
           "scheme": config.scheme, "seed": config.seed, "runs": config.runs}
    for key in ("preset", "dt", "steps", "horizon", "out"):
        value = getattr(config, key)
        if value is not None:
            doc[key] = value
    if config.sweep:
        doc["sweep"] = config.sweep
    return json.dumps(doc, indent=2, sort_keys=True)


def expand_preset(name: str) -> ExperimentConfig:
    return parse_config(json.dumps({"preset": name}))


def _csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_outputs(result, path: str, config: Optional[ExperimentConfig] = None) -> list:
    """Write the result's CSV tables plus ``metadata.json`` into directory ``path``.

    Everything is first written to temporary files in the same directory and
    then renamed into place, so an error leaves no partial output.
    """
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path!r}: {exc}") from exc
    files = {name: _csv_text(header, rows) for name, (header, rows) in result.tables().items()}
    meta = {"code_version": __version__, "result": result.metadata()}
    if config is not None:
        steps = None
        if config.experiment.startswith("lls") or config.experiment.startswith("fw"):
            dt = config.dt if config.dt is not None else config.params.get("dt", 1.0)
            steps = config.steps_for(dt)
        meta.update(config=json.loads(config_to_json(config)),
                    seeds=[[config.seed, k] for k in range(config.runs)],
                    warmup_policy="floor(0.1 * steps) steps discarded before boundary statistics",
                    warmup_steps=None if steps is None else warmup_steps(steps))
    files["metadata.json"] = json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n"
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=path)
            staged.append((tmp, os.path.join(path, name)))
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
    except OSError as exc:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise OSError(f"writing outputs to {path!r} failed: {exc}") from exc
    for tmp, final in staged:
        os.replace(tmp, final)
    return [final for _, final in staged]


def _summary_line(config, result) -> str:
    if isinstance(result, OuReport):
        return result.report()
    return f"{config.experiment}: {len(result.tables())} table(s) written"


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="abcem", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run an experiment from a JSON config")
    run_p.add_argument("config")
    run_p.add_argument("--out", default=None, help="output directory")
    pre_p = sub.add_parser("preset", help="print the expanded config of a preset")
    pre_p.add_argument("name")
    sub.add_parser("list", help="list experiments and presets")
    args = parser.parse_args(argv)

    if args.command == "list":
        print("experiments:")
        for name in EXPERIMENTS:
            print(f"  {name}")
        print("presets:")
        for name in PRESETS:
            print(f"  {name}")
        return 0

    if args.command == "preset":
        try:
            print(config_to_json(expand_preset(args.name)))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        return 0

    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config {args.config!r}: {exc}", file=sys.stderr)
        return 2
    try:
        config = parse_config(text)
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = args.out or config.out or "."
    try:
        result = run_experiment(config)
        write_outputs(result, out, config)
    except Exception as exc:   # runtime failures map to exit code 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    # runs that stopped early keep their rows up to the failure but fail the command
    failures = result.failures() if hasattr(result, "failures") else []
    for line in failures:
        print(f"error: {line}", file=sys.stderr)
    print(_summary_line(config, result))
    return 2 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
