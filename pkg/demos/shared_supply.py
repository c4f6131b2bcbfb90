"""Three vehicles competing for two stations on one feeder.

    python demos/shared_supply.py
"""

from collections import defaultdict
from pathlib import Path

from evpay import load_scenario, run

result = run(load_scenario((Path(__file__).parent / "shared_supply.toml").read_text()))

print("Power per tick is split max-min fairly across active stations on the feeder.")
per_tick = defaultdict(dict)
for r in result.events.of_type("MeterReading"):
    per_tick[r["tick"]][r["session_id"]] = r["delta_wh"]
for tick in (0, 29, 30, 60):
    print(f"  tick {tick:>2}: Wh delivered {per_tick.get(tick, {})}")

print("\nSessions:")
for s in result.report["sessions"]:
    print(f"  {s['session_id']} at {s['station']}: {s['final_phase']}, "
          f"{s['total_wh']} Wh for {s['total_cost']} micro-tokens")

c = result.report["conservation"]
print(f"\nConfirmed wallet balances sum to {c['confirmed_wallet_total']} "
      f"of {c['genesis_total']} minted; all channels closed: {c['all_channels_closed']}")
