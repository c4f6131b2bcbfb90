"""``simcli``: run, verify, replay and inspect simulations.

Exit codes: 0 ok, 1 findings (or a failed replay / unfinished run),
2 usage or parse error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import EvpayError, ParseError, SimError, TickLimitExceeded
from .scenario import load_scenario
from .sim import inspect, replay, run, verify

OK, FINDINGS, USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"simcli: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE)


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None


def cmd_run(args) -> int:
    scenario = load_scenario(_read(args.scenario), args.seed)
    status = OK
    try:
        result = run(scenario)
    except TickLimitExceeded as exc:
        print(f"simcli: {exc}", file=sys.stderr)
        result, status = exc.result, FINDINGS
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "events.jsonl").write_text(result.events.to_jsonl())
    (out / "ledger.jsonl").write_text(result.ledger.to_jsonl())
    (out / "report.json").write_text(json.dumps(result.report, indent=2) + "\n")
    for s in result.report["sessions"]:
        print(f"{s['session_id']}: {s['final_phase']} at {s['station']}, "
              f"{s['total_wh']} Wh, cost {s['total_cost']}")
    print(f"wrote {out}/events.jsonl, ledger.jsonl, report.json")
    return status


def cmd_verify(args) -> int:
    findings = verify(_read(args.events), _read(args.ledger))
    for f in findings:
        print(json.dumps(f.to_dict()))
    print(f"{len(findings)} finding(s)", file=sys.stderr)
    return FINDINGS if findings else OK


def cmd_replay(args) -> int:
    scenario = load_scenario(_read(args.scenario), args.seed)
    same = replay(_read(args.events), scenario)
    print("identical" if same else "differs")
    return OK if same else FINDINGS


def cmd_inspect(args) -> int:
    try:
        view = inspect(_read(args.events), args.channel)
    except KeyError as exc:
        print(f"simcli: {exc.args[0]}", file=sys.stderr)
        return FINDINGS
    print(json.dumps(view, indent=2))
    return OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="simcli", description="EV charging payment simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run a scenario and write its artifacts")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="audit an event log against a ledger")
    p.add_argument("--events", required=True)
    p.add_argument("--ledger", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("replay", help="check that a scenario reproduces an event log")
    p.add_argument("--events", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("scenario")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("inspect", help="show one channel's history")
    p.add_argument("--channel", required=True)
    p.add_argument("--events", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, SimError) as exc:
        print(f"simcli: {type(exc).__name__}: {exc}", file=sys.stderr)
        return USAGE
    except EvpayError as exc:
        print(f"simcli: {type(exc).__name__}: {exc}", file=sys.stderr)
        return FINDINGS


if __name__ == "__main__":
    sys.exit(main())
