"""Energy metering, tariffs, per-session billing and shared-supply allocation.

Energy is counted in integer watt-hours and money in integer micro-tokens,
so every cost is exact.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .errors import NegativeDelta, TimeRegression


@dataclass(frozen=True)
class PriceSchedule:
    """Piecewise-constant tariff: ``steps`` are ``(from_tick, micro-tokens per Wh)``."""

    steps: tuple[tuple[int, int], ...]

    def __post_init__(self):
        steps = tuple((int(t), int(p)) for t, p in self.steps)
        object.__setattr__(self, "steps", steps)
        if not steps or steps[0][0] != 0:
            raise ValueError("a tariff starts at tick 0")
        for (t0, _), (t1, _) in zip(steps, steps[1:]):
            if t1 <= t0:
                raise ValueError("tariff steps must have strictly increasing ticks")
        if any(p < 0 for _, p in steps):
            raise ValueError("unit prices must be non-negative")

    @classmethod
    def flat(cls, price: int) -> "PriceSchedule":
        return cls(((0, price),))


def price_at(schedule: PriceSchedule, tick: int) -> int:
    if tick < 0:
        raise ValueError("tick must be non-negative")
    starts = [t for t, _ in schedule.steps]
    return schedule.steps[bisect.bisect_right(starts, tick) - 1][1]


@dataclass(frozen=True)
class MeterReading:
    session_id: str
    interval_index: int
    delta_wh: int
    tick: int
    unit_price: int
    cost: int

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "interval_index": self.interval_index,
            "delta_wh": self.delta_wh,
            "tick": self.tick,
            "unit_price": self.unit_price,
            "cost": self.cost,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MeterReading":
        return cls(**{k: d[k] for k in ("session_id", "interval_index", "delta_wh",
                                        "tick", "unit_price", "cost")})


@dataclass
class Meter:
    session_id: str
    cumulative_wh: int = 0
    readings: list[MeterReading] = field(default_factory=list)


def record_tick(meter: Meter, delta_wh: int, tick: int, schedule: PriceSchedule) -> MeterReading:
    if delta_wh < 0:
        raise NegativeDelta(str(delta_wh))
    if meter.readings and tick < meter.readings[-1].tick:
        raise TimeRegression(f"tick {tick} before {meter.readings[-1].tick}")
    price = price_at(schedule, tick)
    reading = MeterReading(meter.session_id, len(meter.readings), delta_wh, tick, price, delta_wh * price)
    meter.readings.append(reading)
    meter.cumulative_wh += delta_wh
    return reading


def session_total(meter: Meter) -> int:
    return sum(r.delta_wh * r.unit_price for r in meter.readings)


@dataclass(frozen=True)
class SupplyGroup:
    capacity_w: int
    stations: tuple[tuple[str, int, int], ...]  # (station_id, connector_limit_w, demand_w)

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(tuple(s) for s in self.stations))
        if self.capacity_w <= 0:
            raise ValueError("capacity must be positive")
        for sid, limit, demand in self.stations:
            if limit <= 0 or demand < 0:
                raise ValueError(f"station {sid}: limits must be positive, demand non-negative")


def allocate_power(group: SupplyGroup) -> list[tuple[str, int]]:
    """Max-min fair (water-filling) grants in whole watts.

    Each station asks for ``min(demand, limit)``. Under contention every
    station gets ``min(ask, level)`` where ``level`` is the largest integer
    water level the capacity can sustain. Stations with identical asks get
    identical grants; up to ``n - 1`` watts of capacity may stay unassigned.
    """
    asks = [min(demand, limit) for _, limit, demand in group.stations]
    if sum(asks) <= group.capacity_w:
        return [(sid, a) for (sid, _, _), a in zip(group.stations, asks)]
    remaining = group.capacity_w
    unsatisfied = sorted(asks)
    # freeze every station whose ask fits under the current equal share
    while unsatisfied and unsatisfied[0] * len(unsatisfied) <= remaining:
        remaining -= unsatisfied.pop(0)
    level = remaining // len(unsatisfied)
    return [(sid, min(a, level)) for (sid, _, _), a in zip(group.stations, asks)]


def energy_for(granted_w: int, tick_duration_h: Fraction, carry: Fraction = Fraction(0)) -> tuple[int, Fraction]:
    """Whole Wh delivered in one tick and the fractional remainder to carry."""
    exact = granted_w * tick_duration_h + carry
    whole = exact.numerator // exact.denominator
    return whole, exact - whole


def billing_summary(meter: Meter) -> dict:
    return {
        "session_id": meter.session_id,
        "total_wh": meter.cumulative_wh,
        "total_cost": session_total(meter),
        "n_readings": len(meter.readings),
    }


def fold_cost(readings: Sequence[tuple[int, int]], schedule: PriceSchedule) -> int:
    """Cost of ``(delta_wh, tick)`` pairs priced directly from the tariff."""
    return sum(delta * price_at(schedule, tick) for delta, tick in readings)
