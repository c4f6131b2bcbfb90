"""Tamper with run artifacts and watch the auditor catch it.

    python demos/audit.py
"""

import json
from pathlib import Path

from evpay import load_scenario, replay, run, verify

scenario = load_scenario((Path(__file__).parent / "canonical.toml").read_text())
result = run(scenario)
events, ledger = result.events.to_jsonl(), result.ledger.to_jsonl()

print("pristine artifacts:", [f.kind for f in verify(events, ledger)])

lines = ledger.splitlines(keepends=True)
print("ChannelOpen deleted from the ledger:",
      sorted({f.kind for f in verify(events, "".join(lines[:1] + lines[2:]))}))

recs = [json.loads(line) for line in events.splitlines()]
state = next(r for r in recs if r["type"] == "ChannelState" and r["seq"] == 10)
state["balance_a"] -= 1000
state["balance_b"] += 1000
edited = "".join(json.dumps(r) + "\n" for r in recs)
print("channel state amount edited:", sorted({f.kind for f in verify(edited, ledger)}))

print("replay with the same seed:", replay(events, scenario))
print("replay with another seed:", replay(events, scenario.with_seed(scenario.seed + 1)))
