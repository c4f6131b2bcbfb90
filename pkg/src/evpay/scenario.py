"""Scenario files: TOML in, validated ``Scenario`` out.

See ``docs/scenario.md`` for the field-by-field schema.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field, replace
from fractions import Fraction

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agents import Battery, StationInfo
from .errors import DanglingReference, InvalidValue, ParseError
from .ledger import DEFAULT_DIFFICULTY, MAX_DIFFICULTY
from .metering import PriceSchedule
from .wallet import Address, Wallet

FAULT_KINDS = ("EvStopsPaying", "CsStopsMetering")
_ID = re.compile(r"^[A-Za-z0-9_.-]+$")


def session_id_for(vehicle_id: str) -> str:
    return f"{vehicle_id}-1"


@dataclass(frozen=True)
class StationSpec:
    station_id: str
    position: tuple[int, int]
    connector_limit_w: int
    tariff: PriceSchedule
    supply_group: str | None = None
    balance: int = 0


@dataclass(frozen=True)
class VehicleSpec:
    vehicle_id: str
    position: tuple[int, int]
    battery: Battery
    max_power_w: int | None = None
    balance: int = 0


@dataclass(frozen=True)
class Fault:
    tick: int
    kind: str
    session: str


@dataclass(frozen=True)
class Scenario:
    seed: int
    ticks: int
    tick_duration_h: Fraction
    difficulty: int = DEFAULT_DIFFICULTY
    lambda_distance: int = 10
    confirm_settlements: bool = False
    patience: int = 3
    supply_groups: dict[str, int] = field(default_factory=dict)
    stations: tuple[StationSpec, ...] = ()
    vehicles: tuple[VehicleSpec, ...] = ()
    faults: tuple[Fault, ...] = ()

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def wallet(self, agent_id: str) -> Wallet:
        return Wallet.derive(self.seed, agent_id)

    def station_info(self, station: StationSpec) -> StationInfo:
        return StationInfo(station.station_id, station.position, station.tariff,
                           self.wallet(station.station_id).address, station.connector_limit_w)

    def allocations(self) -> list[tuple[Address, int]]:
        agents = [(v.vehicle_id, v.balance) for v in self.vehicles]
        agents += [(s.station_id, s.balance) for s in self.stations]
        return [(self.wallet(name).address, amount) for name, amount in agents]


def _get(table: dict, key: str, kind, where: str, default=...):
    if key not in table:
        if default is ...:
            raise ParseError(f"{where}: missing field '{key}'")
        return default
    value = table[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ParseError(f"{where}.{key}: expected an integer, got {value!r}")
    if kind is bool and not isinstance(value, bool):
        raise ParseError(f"{where}.{key}: expected true/false, got {value!r}")
    if kind is str and not isinstance(value, str):
        raise ParseError(f"{where}.{key}: expected a string, got {value!r}")
    return value


def _fraction(value, where: str) -> Fraction:
    if isinstance(value, bool):
        raise ParseError(f"{where}: expected a number or 'p/q' string")
    try:
        return Fraction(str(value)) if not isinstance(value, str) else Fraction(value)
    except (ValueError, ZeroDivisionError):
        raise ParseError(f"{where}: cannot read {value!r} as a rational number") from None


def _position(value, where: str) -> tuple[int, int]:
    if (not isinstance(value, list) or len(value) != 2
            or any(isinstance(c, bool) or not isinstance(c, int) for c in value)):
        raise ParseError(f"{where}.position: expected [x, y] integers")
    return value[0], value[1]


def _check_id(value: str, where: str) -> str:
    if not _ID.match(value):
        raise InvalidValue(f"{where}: id {value!r} may only use letters, digits, '_', '.', '-'")
    return value


def load_scenario(text: str, seed: int | None = None) -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"TOML syntax: {exc}") from None

    scenario_seed = _get(doc, "seed", int, "scenario")
    if seed is not None:
        scenario_seed = seed
    ticks = _get(doc, "ticks", int, "scenario")
    tick_h = _fraction(_get(doc, "tick_duration_h", object, "scenario"), "scenario.tick_duration_h")
    difficulty = _get(doc, "difficulty", int, "scenario", DEFAULT_DIFFICULTY)
    lam = _get(doc, "lambda_distance", int, "scenario", 10)
    confirm = _get(doc, "confirm_settlements", bool, "scenario", False)
    patience = _get(doc, "patience", int, "scenario", 3)
    if not 0 <= scenario_seed < 2**64:
        raise InvalidValue("seed must fit in 64 bits")
    if ticks <= 0:
        raise InvalidValue("ticks must be positive")
    if tick_h <= 0:
        raise InvalidValue("tick_duration_h must be positive")
    if not 0 <= difficulty <= MAX_DIFFICULTY:
        raise InvalidValue(f"difficulty must be within 0..{MAX_DIFFICULTY}")
    if lam < 0 or patience < 0:
        raise InvalidValue("lambda_distance and patience must be non-negative")

    groups: dict[str, int] = {}
    for i, g in enumerate(doc.get("supply_groups", [])):
        where = f"supply_groups[{i}]"
        gid = _check_id(_get(g, "id", str, where), where)
        cap = _get(g, "capacity_w", int, where)
        if cap <= 0:
            raise InvalidValue(f"{where}.capacity_w must be positive")
        if gid in groups:
            raise InvalidValue(f"{where}: duplicate supply group {gid!r}")
        groups[gid] = cap

    seen: set[str] = set()
    stations = []
    for i, s in enumerate(doc.get("stations", [])):
        where = f"stations[{i}]"
        sid = _check_id(_get(s, "id", str, where), where)
        if sid in seen:
            raise InvalidValue(f"{where}: duplicate agent id {sid!r}")
        seen.add(sid)
        group = _get(s, "supply_group", str, where, None)
        if group is not None and group not in groups:
            raise DanglingReference(f"{where}: unknown supply group {group!r}")
        limit = _get(s, "connector_limit_w", int, where)
        if limit <= 0:
            raise InvalidValue(f"{where}.connector_limit_w must be positive")
        raw_tariff = _get(s, "tariff", object, where)
        if isinstance(raw_tariff, int) and not isinstance(raw_tariff, bool):
            raw_tariff = [[0, raw_tariff]]
        try:
            tariff = PriceSchedule(tuple(tuple(step) for step in raw_tariff))
        except (TypeError, ValueError) as exc:
            raise InvalidValue(f"{where}.tariff: {exc}") from None
        balance = _get(s, "balance", int, where, 0)
        if balance < 0:
            raise InvalidValue(f"{where}.balance must be non-negative")
        stations.append(StationSpec(sid, _position(_get(s, "position", list, where), where),
                                    limit, tariff, group, balance))

    vehicles = []
    for i, v in enumerate(doc.get("vehicles", [])):
        where = f"vehicles[{i}]"
        vid = _check_id(_get(v, "id", str, where), where)
        if vid in seen:
            raise InvalidValue(f"{where}: duplicate agent id {vid!r}")
        seen.add(vid)
        try:
            battery = Battery(
                _get(v, "capacity_wh", int, where),
                _get(v, "level_wh", int, where),
                _fraction(_get(v, "low_threshold", object, where, "1/5"), f"{where}.low_threshold"),
                _fraction(_get(v, "target", object, where, "9/10"), f"{where}.target"),
            )
        except ValueError as exc:
            raise InvalidValue(f"{where}: {exc}") from None
        max_power = _get(v, "max_power_w", int, where, None)
        if max_power is not None and max_power <= 0:
            raise InvalidValue(f"{where}.max_power_w must be positive")
        balance = _get(v, "balance", int, where, 0)
        if balance < 0:
            raise InvalidValue(f"{where}.balance must be non-negative")
        vehicles.append(VehicleSpec(vid, _position(_get(v, "position", list, where), where),
                                    battery, max_power, balance))

    sessions = {session_id_for(v.vehicle_id) for v in vehicles}
    faults = []
    for i, f in enumerate(doc.get("faults", [])):
        where = f"faults[{i}]"
        kind = _get(f, "kind", str, where)
        if kind not in FAULT_KINDS:
            raise InvalidValue(f"{where}.kind must be one of {', '.join(FAULT_KINDS)}")
        tick = _get(f, "tick", int, where)
        if tick < 0:
            raise InvalidValue(f"{where}.tick must be non-negative")
        session = _get(f, "session", str, where)
        if session not in sessions:
            raise DanglingReference(f"{where}: unknown session {session!r}")
        faults.append(Fault(tick, kind, session))

    return Scenario(scenario_seed, ticks, tick_h, difficulty, lam, confirm, patience,
                    groups, tuple(stations), tuple(vehicles), tuple(faults))
