"""Command-line front end: configs, the experiment catalog, reproducible runs.

Configs are TOML files with flat keys plus two optional tables,
``[arcs]`` and ``[thresholds]``.  Every key is validated against the
named experiment's allow-list before anything is sampled, unknown keys
and type mismatches are rejected with a line-numbered diagnostic, and a
config that survives :func:`parse_config` round-trips through
:func:`emit_config` unchanged.  Exit codes are stable: 0 the run's
claims all PASS, 1 at least one FAIL, 2 config error, 3 INCONCLUSIVE.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import re
import sys
from dataclasses import dataclass, field

import tomli

from .experiments import (EXPERIMENT_CATALOG, HEIGHT_GAP, StripConfig,
                          isomorphism_experiment, multi_arc_parity_experiment,
                          rectangle_crossing_experiment,
                          strip_parity_experiment)
from .identities import beta_of, calibrate, dynkin_check
from .lattice import build_rect_domain

REPORT_DIR_ENV = "LOOPSOUP_LAB_REPORT_DIR"

__all__ = ["ConfigError", "RunConfig", "parse_config", "emit_config",
           "run", "main", "REPORT_DIR_ENV"]


class ConfigError(Exception):
    """A config file problem, carrying a path and a 1-based line number."""

    def __init__(self, message, path="<config>", line=1):
        super().__init__(message)
        self.message = message
        self.path = path
        self.line = line

    def __str__(self):
        return f"{self.path}:{self.line}: {self.message}"


@dataclass(frozen=True)
class RunConfig:
    """A fully validated run request (defaults already filled in).

    ``options`` holds the experiment-specific structural keys (``n_arcs``
    for multi-arc-parity; ``height``/``box_width``/``extent``/``n_boxes``
    and friends for strip-parity; ``coupling``/``killing``/``cluster_rule``
    for rectangle-crossing) and ``thresholds`` the statistical knobs, both
    validated against the experiment's allow-list.
    """

    experiment: str
    nx: int = None
    ny: int = None
    arcs: dict = None
    alpha: float = 0.5
    beta: object = "calibrated"
    u: float = HEIGHT_GAP
    replicas: int = None
    k_max: int = 64
    seed: int = 0
    workers: int = 1
    report: str = None
    csv: str = None
    options: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# key schema

_BETA = ("beta",)          # sentinel: float or the string "calibrated"
_ARCSPEC = ("arcs",)       # sentinel: side name or [side, start, stop] runs

_COMMON = {
    "experiment": str,
    "seed": int,
    "workers": int,
    "replicas": int,
    "report": str,
    "csv": str,
}

_SCHEMA = {
    "isomorphism": {
        "required": {"nx": int, "ny": int},
        "optional": {"alpha": float, "k_max": int},
        "thresholds": {"level": float, "moment_z_max": float},
    },
    "multi-arc-parity": {
        "required": {"n_arcs": int},
        "optional": {"beta": _BETA, "u": float,
                     "count_samples": int, "current_samples": int},
        "thresholds": {"level": float, "z_max": float},
    },
    "rectangle-crossing": {
        "required": {"nx": int, "ny": int},
        "optional": {"arcs": _ARCSPEC, "alpha": float, "beta": _BETA,
                     "k_max": int, "coupling": float, "killing": float,
                     "cluster_rule": str},
        "thresholds": {"level": float, "z_max": float, "min_class": int,
                       "energy_cap": int, "energy_permutations": int},
    },
    "strip-parity": {
        "required": {"height": int, "box_width": int,
                     "extent": int, "n_boxes": int},
        "optional": {"beta": _BETA, "spacing": int, "offset": int,
                     "epsilon": float},
        "thresholds": {"z_max": float},
    },
}

# RunConfig fields that are plain config keys (everything else lands in
# options/thresholds).
_FIELD_KEYS = {"experiment", "nx", "ny", "arcs", "alpha", "beta", "u",
               "replicas", "k_max", "seed", "workers", "report", "csv"}

_POSITIVE = {"nx", "ny", "replicas", "workers", "k_max", "n_arcs", "height",
             "box_width", "extent", "n_boxes", "count_samples",
             "current_samples", "spacing", "energy_cap",
             "energy_permutations", "min_class"}


# ---------------------------------------------------------------------------
# line lookup for diagnostics

_KEY_RE = re.compile(r'^\s*(?:"(?P<quoted>[^"]*)"|(?P<bare>[A-Za-z0-9_-]+))\s*=')
_TABLE_RE = re.compile(r"^\s*\[\s*(?P<name>[^\]\s]+)\s*\]")


def _key_line(text, key, table=None):
    """Best-effort 1-based line of ``key`` (under ``table`` if given)."""
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        hit = _TABLE_RE.match(line)
        if hit:
            current = hit.group("name")
            if key is None and current == table:
                return lineno
            continue
        hit = _KEY_RE.match(line)
        if hit and current == table:
            name = hit.group("quoted")
            if name is None:
                name = hit.group("bare")
            if name == key:
                return lineno
    for lineno, line in enumerate(text.splitlines(), start=1):
        if key is not None and key in line:
            return lineno
    return 1


def _type_name(value):
    return {str: "string", int: "integer", float: "float",
            bool: "boolean"}.get(type(value), type(value).__name__)


# ---------------------------------------------------------------------------
# parsing

def _check_value(key, value, kind, path, line):
    """Coerce and type-check one scalar config value."""
    if kind is _BETA:
        if value == "calibrated":
            return "calibrated"
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key {key!r} must be a positive number or "
                              f"\"calibrated\", got {_type_name(value)}",
                              path, line)
        if value <= 0:
            raise ConfigError(f"key {key!r} must be positive", path, line)
        return float(value)
    if kind is _ARCSPEC:
        return _check_arcs(value, path, line)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key {key!r} expects a float, got "
                              f"{_type_name(value)}", path, line)
        return float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ConfigError(f"key {key!r} expects {_type_name(kind())}, got "
                          f"{_type_name(value)}", path, line)
    return value


def _check_arcs(table, path, line):
    """Validate an ``[arcs]`` table: labels 1..n, side specs, no overlap."""
    if not isinstance(table, dict) or not table:
        raise ConfigError("arcs must be a non-empty table of "
                          "label = side entries", path, line)
    arcs = {}
    for raw_label, spec in table.items():
        try:
            label = int(raw_label)
        except (TypeError, ValueError):
            raise ConfigError(f"arc label {raw_label!r} is not an integer",
                              path, line) from None
        arcs[label] = _check_arc_value(raw_label, spec, path, line)
    if sorted(arcs) != list(range(1, len(arcs) + 1)):
        raise ConfigError(f"arc labels must be 1..{len(arcs)}, got "
                          f"{sorted(arcs)}", path, line)
    return arcs


def _check_arc_value(label, spec, path, line):
    sides = ("left", "right", "top", "bottom")
    if isinstance(spec, str):
        if spec not in sides:
            raise ConfigError(f"arc {label!r}: unknown side {spec!r}",
                              path, line)
        return spec
    if (isinstance(spec, list) and len(spec) == 3 and spec[0] in sides
            and all(isinstance(v, int) for v in spec[1:])):
        return (spec[0], spec[1], spec[2])
    raise ConfigError(f"arc {label!r}: expected a side name or "
                      f"[side, start, stop], got {spec!r}", path, line)


def _validate_semantics(cfg, text, path):
    """Cross-key checks that need the whole config (still exit code 2)."""
    def err(msg, key, table=None):
        raise ConfigError(msg, path, _key_line(text, key, table))

    if cfg.alpha < 0:
        err("alpha must be >= 0", "alpha")
    if cfg.u <= 0:
        err("u must be positive", "u")
    if cfg.seed < 0:
        err("seed must be >= 0", "seed")
    for key in _POSITIVE:
        value = cfg.options.get(key, getattr(cfg, key, None))
        if value is not None and value < 1:
            err(f"{key} must be >= 1", key)
    if cfg.options.get("offset", 0) < 0:
        err("offset must be >= 0", "offset")
    eps = cfg.options.get("epsilon")
    if eps is not None and not 0 < eps < 0.5:
        err("epsilon must lie in (0, 1/2)", "epsilon")
    exp = cfg.experiment
    if exp == "multi-arc-parity" and not 2 <= cfg.options["n_arcs"] <= 6:
        err("n_arcs must be between 2 and 6", "n_arcs")
    if exp == "rectangle-crossing":
        rule = cfg.options.get("cluster_rule", "vertex")
        if rule not in ("vertex", "cable"):
            err("cluster_rule must be 'vertex' or 'cable'", "cluster_rule")
        if cfg.arcs is not None and sorted(cfg.arcs) != [1, 2]:
            err("rectangle-crossing needs exactly arcs 1 and 2",
                None, "arcs")
        try:
            build_rect_domain(cfg.nx, cfg.ny, _arc_spec(cfg))
        except ValueError as exc:
            key = "arcs" if "arc" in str(exc) else "nx"
            err(str(exc), None if key == "arcs" else key,
                "arcs" if key == "arcs" else None)
    if exp == "strip-parity":
        try:
            _strip_config(cfg)
        except ValueError as exc:
            key = "spacing" if "overlap" in str(exc) else "extent"
            err(str(exc), key)
    if exp == "isomorphism":
        try:
            build_rect_domain(cfg.nx, cfg.ny)
        except ValueError as exc:
            err(str(exc), "nx")


def _parse_text(text, path="<config>"):
    """Parse and validate TOML config text into a RunConfig."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        hit = re.search(r"line (\d+)", str(exc))
        line = int(hit.group(1)) if hit else 1
        raise ConfigError(f"TOML syntax: {exc}", path, line) from None

    if "experiment" not in doc:
        raise ConfigError("missing required key 'experiment'", path, 1)
    experiment = doc["experiment"]
    if experiment not in _SCHEMA:
        raise ConfigError(
            f"unknown experiment {experiment!r}; choose from "
            f"{', '.join(sorted(_SCHEMA))}", path,
            _key_line(text, "experiment"))
    schema = _SCHEMA[experiment]
    allowed = dict(_COMMON)
    allowed.update(schema["required"])
    allowed.update(schema["optional"])

    values, options, thresholds = {}, {}, {}
    for key, value in doc.items():
        if key == "thresholds":
            line = _key_line(text, None, "thresholds")
            if not isinstance(value, dict):
                raise ConfigError("thresholds must be a table", path, line)
            for tkey, tval in value.items():
                if tkey not in schema["thresholds"]:
                    raise ConfigError(
                        f"unknown threshold {tkey!r} for experiment "
                        f"{experiment!r}", path,
                        _key_line(text, tkey, "thresholds"))
                thresholds[tkey] = _check_value(
                    tkey, tval, schema["thresholds"][tkey], path,
                    _key_line(text, tkey, "thresholds"))
            continue
        if key not in allowed:
            line = (_key_line(text, None, "arcs") if key == "arcs"
                    else _key_line(text, key))
            raise ConfigError(
                f"unknown key {key!r} for experiment {experiment!r}",
                path, line)
        line = (_key_line(text, None, "arcs") if key == "arcs"
                else _key_line(text, key))
        checked = _check_value(key, value, allowed[key], path, line)
        if key in _FIELD_KEYS:
            values[key] = checked
        else:
            options[key] = checked

    for key in schema["required"]:
        if key not in values and key not in options:
            raise ConfigError(
                f"experiment {experiment!r} requires key {key!r}", path, 1)

    cfg = RunConfig(options=options, thresholds=thresholds, **values)
    _validate_semantics(cfg, text, path)
    return cfg


def parse_config(path):
    """Read, parse and validate a TOML config file.

    Raises :class:`ConfigError` (mapped to exit code 2 by the CLI) on
    unknown keys, type mismatches, overlapping arcs, or any other
    validation failure, with a line-numbered diagnostic.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path)) from None
    return _parse_text(text, str(path))


# ---------------------------------------------------------------------------
# canonical emission

def _toml_scalar(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    raise TypeError(f"cannot emit {value!r}")


_EMIT_ORDER = ("experiment", "nx", "ny", "n_arcs", "height", "box_width",
               "extent", "n_boxes", "spacing", "offset", "alpha", "beta",
               "u", "coupling", "killing", "cluster_rule", "count_samples",
               "current_samples", "epsilon", "replicas", "k_max", "seed",
               "workers", "report", "csv")


def emit_config(cfg):
    """Canonical TOML for a RunConfig; re-parsing yields an equal config."""
    schema = _SCHEMA[cfg.experiment]
    allowed = set(_COMMON) | set(schema["required"]) | set(schema["optional"])
    flat = {"experiment": cfg.experiment}
    for key in _FIELD_KEYS - {"experiment", "arcs"}:
        value = getattr(cfg, key)
        if key in allowed and value is not None:
            flat[key] = value
    for key, value in cfg.options.items():
        if value is not None:
            flat[key] = value
    lines = [f"{key} = {_toml_scalar(flat[key])}"
             for key in _EMIT_ORDER if key in flat]
    if cfg.arcs:
        lines.append("")
        lines.append("[arcs]")
        for label in sorted(cfg.arcs):
            lines.append(f"{label} = {_toml_scalar(cfg.arcs[label])}")
    if cfg.thresholds:
        lines.append("")
        lines.append("[thresholds]")
        for key in sorted(cfg.thresholds):
            lines.append(f"{key} = {_toml_scalar(cfg.thresholds[key])}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# execution

_EXIT_CODE = {"PASS": 0, "FAIL": 1, "INCONCLUSIVE": 3}
_calibration_cache = {}


def _arc_spec(cfg):
    if cfg.arcs is not None:
        return cfg.arcs
    return {1: "left", 2: "right"}


def _strip_config(cfg):
    opts = cfg.options
    return StripConfig(
        height=opts["height"], box_width=opts["box_width"],
        extent=opts["extent"], n_boxes=opts["n_boxes"],
        replicas=cfg.replicas if cfg.replicas is not None else 20_000,
        spacing=opts.get("spacing"), offset=opts.get("offset", 0),
        epsilon=opts.get("epsilon", 0.05), beta=cfg.beta,
        master_seed=cfg.seed, **cfg.thresholds)


def _domain_key(cfg):
    if cfg.experiment == "multi-arc-parity":
        return ("multi", cfg.options["n_arcs"])
    if cfg.experiment == "strip-parity":
        opts = cfg.options
        return ("strip", opts["height"], opts["box_width"], opts["extent"])
    return ("rect", cfg.nx, cfg.ny)


def calibrated_constants(cfg):
    """Calibration constants for this run's domain, cached per domain."""
    key = _domain_key(cfg)
    if key not in _calibration_cache:
        domain = None
        if key[0] == "rect":
            domain = build_rect_domain(cfg.nx, cfg.ny, _arc_spec(cfg))
        _calibration_cache[key] = calibrate(domain)
    return _calibration_cache[key]


def _resolved_beta(cfg):
    """The numeric intensity: 'calibrated' resolves before any sampling."""
    calibrated_constants(cfg)
    if cfg.beta == "calibrated":
        return beta_of(cfg.u)
    return cfg.beta


def execute(cfg):
    """Run the configured experiment and return its report."""
    exp, opts, thr = cfg.experiment, cfg.options, cfg.thresholds
    if exp == "isomorphism":
        calibrated_constants(cfg)
        kwargs = dict(alpha=cfg.alpha, master_seed=cfg.seed,
                      workers=cfg.workers, k_max=cfg.k_max, **thr)
        if cfg.replicas is not None:
            kwargs["replicas"] = cfg.replicas
        return isomorphism_experiment(cfg.nx, cfg.ny, **kwargs)
    if exp == "multi-arc-parity":
        kwargs = dict(beta=_resolved_beta(cfg), u=cfg.u,
                      master_seed=cfg.seed, workers=cfg.workers, **thr)
        for key in ("count_samples", "current_samples"):
            if key in opts:
                kwargs[key] = opts[key]
        return multi_arc_parity_experiment(opts["n_arcs"], **kwargs)
    if exp == "rectangle-crossing":
        kwargs = dict(beta=_resolved_beta(cfg), alpha=cfg.alpha,
                      master_seed=cfg.seed, workers=cfg.workers,
                      k_max=cfg.k_max, arcs=_arc_spec(cfg), **thr)
        if cfg.replicas is not None:
            kwargs["replicas"] = cfg.replicas
        for key in ("coupling", "killing", "cluster_rule"):
            if key in opts:
                kwargs[key] = opts[key]
        return rectangle_crossing_experiment(cfg.nx, cfg.ny, **kwargs)
    if exp == "strip-parity":
        scfg = dataclasses.replace(_strip_config(cfg),
                                   beta=_resolved_beta(cfg))
        return strip_parity_experiment(scfg, workers=cfg.workers)
    raise ConfigError(f"unknown experiment {exp!r}")


def _curve_csv(curve):
    """Data-only plot emission: one CSV row per curve point."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(curve[0].keys()))
    writer.writeheader()
    writer.writerows(curve)
    return buf.getvalue()


def report_paths(cfg, report_dir=None):
    """Where the report JSON and optional CSVs go.

    The directory is, in increasing priority: the config's ``report``
    directory part (default the working directory), then ``report_dir``
    or the ``LOOPSOUP_LAB_REPORT_DIR`` environment variable.
    """
    name = cfg.report or f"{cfg.experiment}-seed{cfg.seed}.json"
    directory = os.path.dirname(name) or "."
    override = report_dir or os.environ.get(REPORT_DIR_ENV)
    if override:
        directory = override
    json_path = os.path.join(directory, os.path.basename(name))
    csv_stem = None
    if cfg.csv is not None:
        stem = cfg.csv[:-4] if cfg.csv.endswith(".csv") else cfg.csv
        csv_stem = os.path.join(directory, os.path.basename(stem))
    return json_path, csv_stem


def write_report(report, cfg, report_dir=None):
    """Write the canonical JSON report (and CSVs); return written paths."""
    json_path, csv_stem = report_paths(cfg, report_dir)
    os.makedirs(os.path.dirname(json_path) or ".", exist_ok=True)
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    written = [json_path]
    if csv_stem is not None:
        claims_path = csv_stem + "-claims.csv"
        with open(claims_path, "w", encoding="utf-8") as fh:
            fh.write(report.claims_csv())
        written.append(claims_path)
        curve = report.extras.get("curve")
        if curve:
            curve_path = csv_stem + "-curve.csv"
            with open(curve_path, "w", encoding="utf-8") as fh:
                fh.write(_curve_csv(curve))
            written.append(curve_path)
    return written


def run(cfg, report_dir=None, out=None):
    """Execute a config end to end; returns the exit code."""
    report = execute(cfg)
    written = write_report(report, cfg, report_dir)
    out = out or sys.stdout
    for claim in report.claims:
        print(f"{claim.verdict:<12} {claim.claim_id}: {claim.description}",
              file=out)
    for path in written:
        print(f"wrote {path}", file=out)
    print(f"{report.experiment}: {report.verdict}", file=out)
    return _EXIT_CODE[report.verdict]


def list_catalog(out=None):
    """Print the experiment catalog: names, claim ids, what each checks."""
    out = out or sys.stdout
    for name in sorted(EXPERIMENT_CATALOG):
        entry = EXPERIMENT_CATALOG[name]
        print(name, file=out)
        print(f"  claims: {', '.join(entry['claims'])}", file=out)
        print(f"  checks: {entry['summary']}", file=out)
    return 0


def run_calibrate(cfg, out=None):
    """Resolve and validate the calibration for a config's domain."""
    out = out or sys.stdout
    const = calibrated_constants(cfg)
    doc = {
        "height_gap": const.height_gap,
        "beta": const.beta if cfg.beta == "calibrated" else cfg.beta,
        "u": cfg.u,
        "beta_coefficient": const.beta_coefficient,
        "continuum_ratio": const.continuum_ratio,
    }
    if cfg.experiment in ("isomorphism", "rectangle-crossing"):
        domain = build_rect_domain(cfg.nx, cfg.ny, _arc_spec(cfg))
        killing = cfg.options.get("killing", 0.2)
        check = dynkin_check(domain, killing, u=cfg.u)
        doc["dynkin_residual"] = check.abs_err
        doc["dynkin_ok"] = bool(check.exact_ok)
    print(json.dumps(doc, sort_keys=True, indent=2), file=out)
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="loopsoup-lab",
        description="Exact-identity and Monte Carlo checks for loop soups, "
                    "discrete free fields and boundary-excursion processes.",
        epilog=f"Set {REPORT_DIR_ENV} to redirect report output.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser(
        "run", help="run the experiment described by a TOML config",
        description="Config keys: experiment (required) plus that "
                    "experiment's domain keys; optional alpha, beta "
                    "(number or \"calibrated\"), u, replicas, k_max, seed, "
                    "workers, report (JSON path), csv (CSV stem), [arcs] "
                    "and [thresholds] tables.  Defaults: alpha=0.5, "
                    "beta=\"calibrated\", u=sqrt(1/2), k_max=64, seed=0, "
                    "workers=1.")
    p_run.add_argument("config", help="path to a TOML config file")
    p_run.add_argument("--seed", type=int, help="override the master seed")
    p_run.add_argument("--replicas", type=int,
                       help="override the replica count")
    p_run.add_argument("--workers", type=int,
                       help="override the worker count")
    p_run.add_argument("--report-dir",
                       help=f"report directory (beats {REPORT_DIR_ENV})")

    sub.add_parser("list", help="print the experiment catalog")

    p_cal = sub.add_parser(
        "calibrate", help="resolve and validate calibration for a config")
    p_cal.add_argument("config", help="path to a TOML config file")

    return parser


def _apply_overrides(cfg, args):
    updates = {}
    for key in ("seed", "replicas", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            if value < (0 if key == "seed" else 1):
                raise ConfigError(f"--{key} must be "
                                  f"{'>= 0' if key == 'seed' else '>= 1'}")
            updates[key] = value
    return dataclasses.replace(cfg, **updates) if updates else cfg


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "list":
            return list_catalog()
        cfg = parse_config(args.config)
        cfg = _apply_overrides(cfg, args)
        if args.command == "calibrate":
            return run_calibrate(cfg)
        return run(cfg, report_dir=getattr(args, "report_dir", None))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
