"""One vehicle, one station: walk through a full charging session.

    python demos/case_study.py
"""

from pathlib import Path

from evpay import load_scenario, run, verify

HERE = Path(__file__).parent

scenario = load_scenario((HERE / "canonical.toml").read_text())
result = run(scenario)
session = result.report["sessions"][0]

print("A vehicle at 10% charge looks for a station, authenticates it, and")
print("opens a payment channel with both sides escrowing the same deposit.")
print(f"  deposit per party: {session['deposit']} micro-tokens")

print("\nPhase transitions:")
for rec in result.events.of_type("PhaseTransition"):
    if rec["from"] != rec["to"]:
        print(f"  tick {rec['tick']:>3}: {rec['from']} -> {rec['to']} on {rec['event']['type']}")

readings = result.events.of_type("MeterReading")
print(f"\nThe station metered {len(readings)} intervals of {readings[0]['delta_wh']} Wh;")
print("each reading was paid off-chain by a co-signed channel update.")
print(f"  energy {session['total_wh']} Wh, cost {session['total_cost']} micro-tokens")

split = session["settled_split"]
print("\nOnly the open and the close reach the ledger:")
print(f"  ledger holds {len(result.ledger)} transactions (genesis, open, close)")
print(f"  station gains {split['station'] - session['deposit']}, vehicle gets back {split['vehicle']}")

findings = verify(result.events.to_jsonl(), result.ledger.to_jsonl())
print(f"\nIndependent audit of the event log and ledger: {len(findings)} findings")
