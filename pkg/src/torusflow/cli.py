"""Command-line entry point: ``torusflow {flow2,flow4,check,symbol,describe}``.

Exit codes: 0 success, 1 invalid configuration, 2 integrator abort,
3 failed check.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import MISSING, asdict, fields
from pathlib import Path

import numpy as np

from . import checks, symbol
from .flow import ConfigError, FlowError, RunConfig, run

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("torusflow")


class ConfigParseError(ValueError):
    pass


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(pairs: list[str] | None) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigParseError(f"override {item!r} is not of the form key=value")
        out[key.strip()] = _parse_value(value.strip())
    return out


def parse_config(path: str | Path | None, overrides: list[str] | dict | None = None, defaults: dict | None = None) -> RunConfig:
    """Read a flat JSON object, apply ``key=value`` overrides, validate."""
    data = dict(defaults or {})
    if path is not None:
        text = Path(path).read_text()
        try:
            loaded = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        if not isinstance(loaded, dict):
            raise ConfigParseError(f"{path}: top level must be a JSON object")
        data.update(loaded)
    if isinstance(overrides, dict):
        data.update(overrides)
    else:
        data.update(parse_overrides(overrides))
    return RunConfig.from_mapping(data)


def _cmd_flow(args, dim: int) -> int:
    try:
        config = parse_config(args.config, args.set, defaults={"dim": dim})
    except (ConfigParseError, ConfigError, OSError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if config.dim != dim:
        print(f"configuration error: dim: flow{dim} needs dim={dim}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or config.out_dir or f"out_flow{dim}"
    config = RunConfig(**{**asdict(config), "out_dir": out})

    def progress(state):
        if state.steps % 500 == 0:
            log.info("step %d t=%.6g phi=%.6e dt=%.3e", state.steps, state.t, state.phi, state.dt)

    try:
        result = run(config, progress)
    except FlowError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    print(json.dumps(result.summary, indent=2))
    if result.aborted:
        print(f"integration aborted: {result.reason}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def _cmd_check(args) -> int:
    report = checks.run_checks(args.level)
    print(report.text())
    if not report.passed:
        first = next(r for r in report.results if not r.passed)
        print(f"first failure: {first.line()}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def _cmd_symbol(args) -> int:
    samples = 10_000 if args.level == "full" else 2_000
    res = checks.symbol_suite(np.random.default_rng(0), samples)
    print("principal symbol verification")
    for r in res:
        print("  " + r.line())
    g = checks.TorusGrid(4, 8)
    k = np.array([1, 2, 0, -1])
    probe = symbol.symbol_probe(g, symbol.elliptic_operator(1.5), k)
    exact = symbol.symbol_t4(1.5, 2 * np.pi * k)
    err = float(np.max(np.abs(probe.entries - exact.entries)) / np.max(np.abs(exact.entries)))
    probe_res = checks.CheckResult("T^4 plane-wave probe vs assembled symbol", err, 1e-10)
    print("  " + probe_res.line())
    ok = all(r.passed for r in res) and probe_res.passed
    return EXIT_OK if ok else EXIT_CHECK


DESCRIPTION = """\
torusflow: moment-map flow of diffeomorphisms on T^2 and T^4

conventions
  torus        [0,1)^n, n = dim in {2, 4}, uniform grid, Fourier pseudospectral
  orientation  dx1^...^dxn; forms indexed by increasing multi-indices
  d*           L^2 adjoint of d (d* d h = -Laplacian h)
  sigma        dx^dy on T^2
  omega        dx1^dx3 + dx2^dx4 on T^4 (anti-self-dual)
  maps         F = x + u(x), u periodic; Df[c, a] = d_a F^c; f_* X = Df X
  energy       T^2: 1/2 int (1 - H)^2;  T^4: 1/2 |((f^-1)* omega)^- - omega^-|^2
  flow         dF/dt = -grad phi(f) + Df W(f), then f o p with dp/ds = -W(p)

config keys (JSON object, flat)"""


def _cmd_describe(args) -> int:
    print(DESCRIPTION)
    for fld in fields(RunConfig):
        default = "required" if fld.default is MISSING else repr(fld.default)
        print(f"  {fld.name:<18} {default}")
    if args.config:
        try:
            config = parse_config(args.config, args.set)
        except (ConfigParseError, ConfigError, OSError, TypeError) as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print("\nresolved configuration")
        print(json.dumps(asdict(config), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="torusflow", description="Moment-map flows on T^2 and T^4.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("flow2", "run the modified flow on T^2"),
        ("flow4", "run the modified flow on T^4"),
        ("check", "run the invariant suites"),
        ("symbol", "verify the principal symbols"),
        ("describe", "print conventions and configuration keys"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--level", choices=("fast", "full"), default="fast")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    if args.command == "flow2":
        return _cmd_flow(args, 2)
    if args.command == "flow4":
        return _cmd_flow(args, 4)
    if args.command == "check":
        return _cmd_check(args)
    if args.command == "symbol":
        return _cmd_symbol(args)
    return _cmd_describe(args)


if __name__ == "__main__":
    sys.exit(main())
