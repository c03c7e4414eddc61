"""Command-line front end.

Exit codes: 0 clean, 1 bad config or input, 2 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .config import ConfigInvalid, ScenarioConfig
from .metrics import audit_events, read_events, write_events
from .sim import InvariantViolation, Scenario

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def load_config(path: str | Path, overrides: Sequence[str] = (), seed: int | None = None) -> ScenarioConfig:
    cfg = ScenarioConfig.load(path).with_overrides(overrides)
    if seed is not None:
        cfg = cfg.with_overrides([f"rng_seed={seed}"])
    return cfg.validate()


def write_outputs(sim: Scenario, out_dir: str | Path, figures: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = sim.report()
    paths = {
        "metrics": out / "metrics.json",
        "events": out / "events.jsonl",
        "burn_log": out / "burn_log.csv",
        "rounds": out / "rounds.jsonl",
        "transcripts": out / "transcripts.jsonl",
    }
    paths["metrics"].write_text(report.to_json(), encoding="utf-8")
    write_events(sim.log, paths["events"])
    paths["burn_log"].write_text(sim.tokens.burn_log_csv(), encoding="utf-8")
    write_events((o.to_json() for o in sim.outcomes), paths["rounds"])
    write_events(sim.transcript, paths["transcripts"])
    if figures:
        from .plots import render_all

        for p in render_all(report, out / "figures"):
            paths[p.stem] = p
    return paths


def run(
    config_path: str | Path,
    output_dir: str | Path,
    overrides: Sequence[str] = (),
    seed: int | None = None,
    figures: bool = True,
) -> int:
    try:
        cfg = load_config(config_path, overrides, seed)
    except ConfigInvalid as exc:
        _err(f"{exc.field}: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    sim = Scenario(cfg)
    code = EXIT_OK
    try:
        sim.advance(cfg.horizon_ticks)
        sim.finish()
    except InvariantViolation as exc:
        _err(str(exc))
        code = EXIT_INVARIANT
    paths = write_outputs(sim, output_dir, figures=figures and code == EXIT_OK)
    r = sim.report()
    print(f"chain_length={r.chain_length} challenges={r.challenges['issued']} "
          f"failed={r.challenges['failed']} slashes={len(r.slashes)}")
    for name, p in paths.items():
        print(f"{name}\t{p}")
    return code


def validate(config_path: str | Path) -> int:
    try:
        load_config(config_path)
    except ConfigInvalid as exc:
        _err(f"{exc.field}: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    print("config ok")
    return EXIT_OK


def audit(events_path: str | Path) -> int:
    try:
        events = read_events(events_path)
    except (OSError, json.JSONDecodeError) as exc:
        _err(f"cannot read event log: {exc}")
        return EXIT_CONFIG
    violations = audit_events(events)
    if violations:
        print(f"audit failed: {violations[0]}")
        return EXIT_INVARIANT
    print(f"audit ok: {len(events)} events")
    return EXIT_OK


def acceptance(quick: bool = False) -> int:
    from .acceptance import run_all

    results = run_all(quick=quick)
    for r in results:
        print(r.line())
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed" + (" (quick)" if quick else ""))
    return EXIT_OK if passed == len(results) else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tdchain", description="Torrent-driven chain simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write reports")
    r.add_argument("-c", "--config", required=True)
    r.add_argument("-o", "--output", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    r.add_argument("--no-figures", action="store_true")

    v = sub.add_parser("validate", help="check a config file")
    v.add_argument("-c", "--config", required=True)

    a = sub.add_parser("audit", help="recompute conservation laws from an event log")
    a.add_argument("-e", "--events", required=True)

    acc = sub.add_parser("acceptance", help="run the built-in acceptance suite")
    acc.add_argument("--quick", action="store_true", help="smaller sample sizes")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return run(args.config, args.output, args.override, args.seed, not args.no_figures)
    if args.command == "validate":
        return validate(args.config)
    if args.command == "audit":
        return audit(args.events)
    return acceptance(args.quick)


if __name__ == "__main__":
    sys.exit(main())
