"""What happens when one side stops cooperating mid-session.

    python demos/faults.py
"""

from pathlib import Path

from evpay import load_scenario, run, verify

BASE = (Path(__file__).parent / "canonical.toml").read_text()

for kind, story in [
    ("EvStopsPaying", "The vehicle stops sending channel updates at tick 40."),
    ("CsStopsMetering", "The station goes silent at tick 40."),
]:
    text = BASE + f'\n[[faults]]\ntick = 40\nkind = "{kind}"\nsession = "ev1-1"\n'
    result = run(load_scenario(text))
    s = result.report["sessions"][0]
    refusal = next(r for r in result.events.of_type("PhaseTransition")
                   if r["event"]["type"] == "CounterpartyRefusal")
    print(f"{kind}: {story}")
    print(f"  refusal raised by the {refusal['event']['by']} at tick {refusal['tick']}")
    print(f"  billed {s['total_cost']}, paid through the channel {s['payments_made']}")
    print(f"  force-close settles at the last co-signed state: {s['settled_split']}")
    print(f"  audit findings: {len(verify(result.events.to_jsonl(), result.ledger.to_jsonl()))}\n")
