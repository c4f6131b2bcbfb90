"""Tick-driven simulation of vehicles charging at stations.

One ``Simulation`` owns every piece of mutable state: the ledger, the
broker, the channels and the agent machines. Each tick runs, in order:
scripted faults, vehicle BMS checks and session starts, power allocation
per supply group, station meter ticks (readings flow over the bus and are
paid through the channel), then the vehicle-side silence watchdog.

Everything the run does is appended to an ``EventLog``; the same scenario
and seed always yield the same log bytes.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass

from . import agents as ag
from .agents import Phase, SessionState, StationState, step_session, run_station
from .bus import Broker, Message
from .channel import Channel, ChannelState, ChannelStatus, apply_update, close_channel, cosign, force_close, open_channel, propose_update
from .errors import (
    InsufficientBalance,
    Overdraw,
    ParseError,
    PowerUnavailable,
    TickLimitExceeded,
    ZeroDeposit,
)
from .ledger import (
    Finding,
    Kind,
    Ledger,
    Transaction,
    View,
    attach_transaction,
    balances,
    build_transaction,
    confirmation_status,
    create_genesis,
    select_tips,
    validate_dag,
)
from .metering import Meter, MeterReading, SupplyGroup, allocate_power, price_at, session_total
from .rng import Xoshiro256
from .scenario import Scenario, session_id_for
from .wallet import Address, Wallet

PROMOTER = "__promoter__"
PROVIDER_CLIENT = "provider"


def _jsonable(obj):
    if isinstance(obj, bytes):
        return obj.hex()
    if isinstance(obj, Address):
        return obj.hex
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if hasattr(obj, "__dataclass_fields__"):
        return {k: _jsonable(getattr(obj, k)) for k in obj.__dataclass_fields__}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    return obj


def describe(obj) -> dict:
    return {"type": type(obj).__name__, **_jsonable(obj)}


class EventLog:
    """Append-only, tick-stamped records; serialized as JSONL."""

    def __init__(self):
        self.records: list[dict] = []

    def append(self, tick: int, kind: str, /, **fields) -> dict:
        if self.records and tick < self.records[-1]["tick"]:
            raise ValueError("event log ticks must not decrease")
        record = {"tick": tick, "type": kind, **fields}
        self.records.append(record)
        return record

    def of_type(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["type"] == kind]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "EventLog":
        log = cls()
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"event log line {n}: {exc}") from None
            if not isinstance(record, dict) or "tick" not in record or "type" not in record:
                raise ParseError(f"event log line {n}: not a tick-stamped record")
            log.records.append(record)
        return log


@dataclass
class RunResult:
    events: EventLog
    report: dict
    ledger: Ledger
    completed: bool = True


@dataclass
class _Vehicle:
    vehicle_id: str
    position: tuple[int, int]
    battery: ag.Battery
    max_power_w: int | None
    wallet: Wallet
    session: str | None = None

    @property
    def client(self) -> str:
        return f"vehicle:{self.vehicle_id}"


@dataclass
class _SessionBook:
    vehicle_id: str
    station_id: str | None = None
    meter: Meter | None = None
    refused_by: str = "station"
    last_reading: int = 0


class Simulation:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.rng = Xoshiro256(scenario.seed)
        self.tick = 0
        self.log = EventLog()
        self.broker = Broker()
        self.ledger = create_genesis(scenario.allocations(), scenario.difficulty)
        self.station_wallets = {s.station_id: scenario.wallet(s.station_id) for s in scenario.stations}
        self.stations: dict[str, StationState] = {
            s.station_id: StationState(scenario.station_info(s), scenario.tick_duration_h, scenario.patience)
            for s in scenario.stations
        }
        self.station_group = {s.station_id: s.supply_group for s in scenario.stations}
        self.vehicles: dict[str, _Vehicle] = {
            v.vehicle_id: _Vehicle(v.vehicle_id, v.position, v.battery, v.max_power_w,
                                   scenario.wallet(v.vehicle_id))
            for v in scenario.vehicles
        }
        self.sessions: dict[str, SessionState] = {}
        self.books: dict[str, _SessionBook] = {}
        self.channels: dict[str, Channel] = {}
        self.reserved: dict[str, str] = {}
        self.muted: set[str] = set()
        self.withholding: set[str] = set()

        self.log.append(0, "RunStarted", seed=scenario.seed, difficulty=scenario.difficulty,
                        tick_duration_h=str(scenario.tick_duration_h), ticks=scenario.ticks,
                        stations=[s.station_id for s in scenario.stations],
                        vehicles=[v.vehicle_id for v in scenario.vehicles])
        self._log_tx(self.ledger[self.ledger.genesis_id])
        for sid in self.stations:
            self.broker.subscribe(f"station:{sid}", ag.requests_topic(sid))
        self.broker.subscribe(PROVIDER_CLIENT, "meter/readings/+")

    # logging helpers ------------------------------------------------------

    def _log_tx(self, tx: Transaction) -> None:
        self.log.append(self.tick, "TxAttached", tx=tx.to_dict())

    def _log_state(self, sid: str, state: ChannelState) -> None:
        self.log.append(self.tick, "ChannelState", session_id=sid, **state.to_record())

    # session plumbing -------------------------------------------------------

    def dispatch(self, sid: str, event) -> None:
        state = self.sessions[sid]
        new, actions = step_session(state, event)
        self.sessions[sid] = new
        self.log.append(self.tick, "PhaseTransition", session_id=sid, **{
            "from": state.phase.value, "event": describe(event), "to": new.phase.value,
            "actions": [describe(a) for a in actions]})
        for action in actions:
            self._perform(sid, action)

    def _vehicle_of(self, sid: str) -> _Vehicle:
        return self.vehicles[self.books[sid].vehicle_id]

    def _release(self, sid: str) -> None:
        station_id = self.books[sid].station_id
        if station_id is None:
            return
        if self.reserved.get(station_id) == sid:
            del self.reserved[station_id]
        st = self.stations[station_id]
        if st.session is not None and st.session.session_id == sid:
            st.release()

    def _perform(self, sid: str, action) -> None:
        book = self.books[sid]
        vehicle = self._vehicle_of(sid)
        session = self.sessions[sid]

        if isinstance(action, ag.QueryRegistry):
            free = [self.stations[s].info for s in self.stations if s not in self.reserved]
            if not free:
                return  # stay Discovering, retried next tick
            chosen = ag.select_station(vehicle.position, free, session.energy_needed_wh,
                                       self.tick, self.scenario.lambda_distance)
            self.reserved[chosen] = sid
            book.station_id = chosen
            price = price_at(self.stations[chosen].info.tariff, self.tick)
            self.dispatch(sid, ag.StationSelected(chosen, price))

        elif isinstance(action, ag.RequestWallet):
            challenge = ag.auth_challenge(sid, self.tick, self.rng.next_u64())
            address, sig = ag.answer_challenge(self.station_wallets[action.station_id], challenge)
            if ag.check_answer(challenge, address, sig):
                self.dispatch(sid, ag.AuthOk(address))
            else:
                self._fail(sid, "station failed authentication")

        elif isinstance(action, ag.OpenChannel):
            cs_wallet = self.station_wallets[book.station_id]
            try:
                channel = open_channel(self.ledger, vehicle.wallet, cs_wallet, action.deposit,
                                       self.rng, self.tick)
            except (InsufficientBalance, ZeroDeposit) as exc:
                self._fail(sid, f"cannot open channel: {exc}")
                return
            self.channels[sid] = channel
            self._log_tx(self.ledger[channel.open_tx])
            self._log_state(sid, channel.current)
            self.dispatch(sid, ag.ChannelOpened(channel.channel_id, channel.deposit))

        elif isinstance(action, ag.Subscribe):
            self.broker.subscribe(vehicle.client, action.topic_filter)
            book.last_reading = self.tick

        elif isinstance(action, ag.PublishChargeRequest):
            channel = self.channels[sid]
            payload = {"session_id": sid, "energy_wh": action.energy_wh,
                       "channel_id": channel.channel_id.hex(),
                       "parties": [p.hex for p in channel.parties],
                       "deposit": channel.deposit, "max_power_w": vehicle.max_power_w}
            self._publish(vehicle.client, ag.requests_topic(book.station_id), payload)

        elif isinstance(action, ag.PayUpdate):
            if sid in self.withholding:
                return
            channel = self.channels[sid]
            try:
                state = propose_update(channel, vehicle.wallet.address, action.amount)
            except Overdraw as exc:
                self._fail(sid, f"channel exhausted: {exc}")
                return
            apply_update(channel, state, *cosign(state, vehicle.wallet, self.station_wallets[book.station_id]))
            self._log_state(sid, channel.current)
            run_station(self.stations[book.station_id], ag.PaymentUpdate(sid, channel.current))

        elif isinstance(action, ag.CloseChannel):
            tx_id = close_channel(self.channels[sid], self.ledger, self.rng, vehicle.wallet, self.tick)
            self._log_tx(self.ledger[tx_id])
            self._release(sid)
            self.dispatch(sid, ag.Settled(tx_id))

        elif isinstance(action, ag.ForceClose):
            channel = self.channels.get(sid)
            if channel is None or channel.status is ChannelStatus.CLOSED:
                self._release(sid)
                return
            issuer = (self.station_wallets[book.station_id] if book.refused_by == "station"
                      else vehicle.wallet)
            tx_id = force_close(channel, self.ledger, self.rng, issuer, self.tick)
            self._log_tx(self.ledger[tx_id])
            self._release(sid)
            if self.sessions[sid].phase is Phase.SETTLING:
                self.dispatch(sid, ag.Settled(tx_id))

    def _fail(self, sid: str, reason: str) -> None:
        self.dispatch(sid, ag.FatalError(reason))
        self._release(sid)

    def _publish(self, publisher: str, topic: str, payload: dict) -> None:
        msg = self.broker.message(publisher, topic, payload, self.tick)
        for delivery in self.broker.publish(msg):
            self.log.append(self.tick, "BusDelivery", client=delivery.client, **msg.to_record())
            self._deliver(delivery.client, msg)

    def _deliver(self, client: str, msg: Message) -> None:
        body = msg.json()
        if client.startswith("station:"):
            station = self.stations[client.split(":", 1)[1]]
            book = self.books[body["session_id"]]
            request = ag.ChargeRequest(body["session_id"], body["energy_wh"],
                                       bytes.fromhex(body["channel_id"]),
                                       tuple(Address.from_hex(p) for p in body["parties"]),
                                       body["deposit"], body["max_power_w"])
            run_station(station, request)
            book.meter = station.session.meter
        elif client.startswith("vehicle:"):
            sid = body["session_id"]
            if self.sessions[sid].phase is not Phase.CHARGING:
                return
            reading = MeterReading.from_dict(body)
            vehicle = self._vehicle_of(sid)
            vehicle.battery = vehicle.battery.charged(reading.delta_wh)
            self.books[sid].last_reading = self.tick
            self.dispatch(sid, ag.MeterReadingEvent(reading))

    # tick loop ----------------------------------------------------------------

    def done(self) -> bool:
        for v in self.vehicles.values():
            if v.session is None:
                if ag.needs_charge(v.battery):
                    return False
            elif self.sessions[v.session].phase not in ag.TERMINAL:
                return False
        return True

    def _grants(self) -> dict[str, int]:
        groups: dict[str, list[str]] = defaultdict(list)
        for sid in self.stations:
            groups[self.station_group[sid] or f"__own__{sid}"].append(sid)
        out = {}
        for gid, members in groups.items():
            capacity = (self.scenario.supply_groups[gid] if gid in self.scenario.supply_groups
                        else self.stations[members[0]].info.connector_limit_w)
            group = SupplyGroup(capacity, tuple(
                (m, self.stations[m].info.connector_limit_w, self.stations[m].demand_w()) for m in members))
            out.update(allocate_power(group))
        return out

    def step(self) -> None:
        t = self.tick
        for fault in self.scenario.faults:
            if fault.tick == t:
                (self.withholding if fault.kind == "EvStopsPaying" else self.muted).add(fault.session)
                self.log.append(t, "Fault", kind=fault.kind, session_id=fault.session)

        for v in self.vehicles.values():
            if v.session is None and ag.needs_charge(v.battery):
                sid = session_id_for(v.vehicle_id)
                v.session = sid
                self.sessions[sid] = SessionState(sid)
                self.books[sid] = _SessionBook(v.vehicle_id)
                self.dispatch(sid, ag.BmsLow(ag.estimate_energy_needed(v.battery)))
            elif v.session is not None and self.sessions[v.session].phase is Phase.DISCOVERING:
                self._perform(v.session, ag.QueryRegistry())

        grants = self._grants()
        for station_id, station in self.stations.items():
            if station.session is None or station.session.session_id in self.muted:
                continue
            sid = station.session.session_id
            try:
                _, actions = run_station(station, ag.Tick(t, grants[station_id]))
            except PowerUnavailable as exc:
                self._fail(sid, str(exc))
                continue
            for action in actions:
                if isinstance(action, ag.PublishReading):
                    self.log.append(t, "MeterReading", **action.reading.to_dict())
                    self._publish(f"station:{station_id}", ag.readings_topic(sid), action.reading.to_dict())
                elif isinstance(action, ag.EmitTargetReached):
                    if self.sessions[sid].phase is Phase.CHARGING:
                        self.dispatch(sid, ag.TargetReached())
                elif isinstance(action, ag.EmitCounterpartyRefusal):
                    if self.sessions[sid].phase is Phase.CHARGING:
                        self.books[sid].refused_by = "station"
                        self.dispatch(sid, ag.CounterpartyRefusal("station"))

        for sid, session in self.sessions.items():
            book = self.books[sid]
            if session.phase is Phase.CHARGING and t - book.last_reading >= ag.REFUSAL_GRACE:
                book.refused_by = "vehicle"
                self.dispatch(sid, ag.CounterpartyRefusal("vehicle"))
        self.tick += 1

    def promote_settlements(self) -> None:
        """Reference pending channel transactions until each has two approvers."""
        promoter = self.scenario.wallet(PROMOTER)
        targets = [tx.id for tx in self.ledger.transactions.values()
                   if tx.kind in (Kind.CHANNEL_OPEN, Kind.CHANNEL_CLOSE)]
        for target in targets:
            while confirmation_status(self.ledger, target) is View.PENDING:
                t1, t2 = select_tips(self.ledger, self.rng)
                branch = t1 if t1 != target else t2
                tx = build_transaction(Kind.PLAIN, promoter.address, (target, branch), (),
                                       self.tick, self.ledger.difficulty, promoter.sign)
                attach_transaction(self.ledger, tx)
                self._log_tx(tx)

    def run(self) -> RunResult:
        while self.tick < self.scenario.ticks and not self.done():
            self.step()
        completed = self.done()
        end = max(self.tick - 1, 0)
        self.tick = end
        if completed and self.scenario.confirm_settlements:
            self.promote_settlements()
        self.log.append(end, "RunFinished", completed=completed, transactions=len(self.ledger),
                        sessions={sid: s.phase.value for sid, s in self.sessions.items()})
        result = RunResult(self.log, self.report(), self.ledger, completed)
        if not completed:
            live = sorted(sid for sid, s in self.sessions.items() if s.phase not in ag.TERMINAL)
            raise TickLimitExceeded(f"sessions still live at tick limit: {', '.join(live) or 'waiting vehicles'}",
                                    result)
        return result

    # report -------------------------------------------------------------------

    def report(self) -> dict:
        sessions = []
        for sid, state in self.sessions.items():
            book = self.books[sid]
            meter = book.meter or Meter(sid)
            channel = self.channels.get(sid)
            entry = {
                "session_id": sid,
                "vehicle": book.vehicle_id,
                "station": book.station_id,
                "final_phase": state.phase.value,
                "energy_wh": meter.cumulative_wh,
                "total_wh": meter.cumulative_wh,
                "n_readings": len(meter.readings),
                "total_cost": session_total(meter),
                "payments_made": 0,
                "settled_split": None,
                "on_ledger_tx_count": 0,
                "channel_id": None,
                "deposit": 0,
            }
            if channel is not None:
                entry["channel_id"] = channel.channel_id.hex()
                entry["deposit"] = channel.deposit
                entry["payments_made"] = channel.current.balances[1] - channel.deposit
                entry["on_ledger_tx_count"] = len(channel_transactions(self.ledger, channel.channel_id))
                if channel.close_tx is not None:
                    close = self.ledger[channel.close_tx]
                    entry["settled_split"] = {"vehicle": close.transfers[0].amount,
                                              "station": close.transfers[1].amount}
            sessions.append(entry)
        return {"sessions": sessions, "conservation": conservation(self.ledger),
                "ledger": {"transactions": len(self.ledger), "tips": len(self.ledger.tips)}}


def channel_transactions(ledger: Ledger, channel_id: bytes) -> list[Transaction]:
    """The ChannelOpen with this id plus every ChannelClose spending its escrow."""
    if channel_id not in ledger.transactions:
        return []
    opening = ledger[channel_id]
    escrow = opening.transfers[0].recipient
    closes = [tx for tx in ledger.transactions.values()
              if tx.kind is Kind.CHANNEL_CLOSE and tx.transfers and tx.transfers[0].sender == escrow]
    return [opening] + closes


def conservation(ledger: Ledger) -> dict:
    escrows = set(ledger.escrows)
    genesis = ledger.genesis_total()
    pending = balances(ledger, View.PENDING)
    confirmed = balances(ledger, View.CONFIRMED)
    open_escrow = sum(v for a, v in pending.items() if a in escrows)
    pending_wallets = sum(v for a, v in pending.items() if a not in escrows)
    confirmed_wallets = sum(v for a, v in confirmed.items() if a not in escrows)
    return {
        "genesis_total": genesis,
        "pending_wallet_total": pending_wallets,
        "open_escrow_total": open_escrow,
        "confirmed_total": sum(confirmed.values()),
        "confirmed_wallet_total": confirmed_wallets,
        "all_channels_closed": open_escrow == 0,
        "ok": pending_wallets + open_escrow == genesis and sum(confirmed.values()) == genesis,
    }


def run(scenario: Scenario) -> RunResult:
    return Simulation(scenario).run()


def run_any(scenario: Scenario) -> RunResult:
    """Like ``run`` but returns the partial result instead of raising at the tick limit."""
    try:
        return run(scenario)
    except TickLimitExceeded as exc:
        return exc.result


def replay(events_text: str, scenario: Scenario) -> bool:
    EventLog.from_jsonl(events_text)
    return run_any(scenario).events.to_jsonl() == events_text


# audit -----------------------------------------------------------------------


def _load_ledger(text: str, difficulty: int) -> Ledger:
    try:
        return Ledger.from_jsonl(text, difficulty)
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"ledger: {exc}") from None


def _logged_transactions(log: EventLog) -> dict[str, Transaction]:
    out = {}
    for r in log.of_type("TxAttached"):
        try:
            tx = Transaction.from_dict(r["tx"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"event log TxAttached: {exc}") from None
        out[tx.hex] = tx
    return out


def _channel_records(log: EventLog) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = defaultdict(list)
    for r in log.of_type("ChannelState"):
        out[r["channel_id"]].append(r)
    return out


def verify(events_text: str, ledger_text: str) -> list[Finding]:
    """Audit a run's event log against its ledger; an empty list means clean."""
    log = EventLog.from_jsonl(events_text)
    started = log.of_type("RunStarted")
    if not started:
        raise ParseError("event log has no RunStarted record")
    ledger = _load_ledger(ledger_text, started[0]["difficulty"])
    findings = validate_dag(ledger)

    for prev, rec in zip(log.records, log.records[1:]):
        if rec["tick"] < prev["tick"]:
            findings.append(Finding("LogOrder", None, f"tick {rec['tick']} after {prev['tick']}"))

    logged = _logged_transactions(log)
    on_ledger = {tx.hex: tx for tx in ledger.transactions.values()}
    for h in logged:
        if h not in on_ledger:
            findings.append(Finding("MissingTransaction", h, "logged but absent from the ledger"))
        elif logged[h].to_dict() != on_ledger[h].to_dict():
            findings.append(Finding("TxMismatch", h, "ledger copy differs from the logged one"))
    for h in on_ledger:
        if h not in logged:
            findings.append(Finding("UnloggedTransaction", h, "on the ledger but never logged"))

    faulted = {r["session_id"] for r in log.of_type("Fault")}
    billed: dict[str, int] = defaultdict(int)
    next_index: dict[str, int] = defaultdict(int)
    for r in log.of_type("MeterReading"):
        sid = r["session_id"]
        if r["cost"] != r["delta_wh"] * r["unit_price"]:
            findings.append(Finding("ReadingCost", None, f"{sid} interval {r['interval_index']}: "
                                    f"cost {r['cost']} != {r['delta_wh']} x {r['unit_price']}"))
        if r["interval_index"] != next_index[sid]:
            findings.append(Finding("ReadingIndex", None, f"{sid}: expected interval "
                                    f"{next_index[sid]}, got {r['interval_index']}"))
        next_index[sid] = r["interval_index"] + 1
        billed[sid] += r["cost"]

    for cid, records in _channel_records(log).items():
        findings += _audit_channel(cid, records, logged.get(cid) or on_ledger.get(cid), ledger,
                                   billed, faulted)

    open_escrow = conservation(ledger)["open_escrow_total"]
    if open_escrow:
        findings.append(Finding("OpenEscrow", None, f"{open_escrow} still held in channel escrows"))
    return findings


def _audit_channel(cid: str, records: list[dict], opening: Transaction | None, ledger: Ledger,
                   billed: dict[str, int], faulted: set[str]) -> list[Finding]:
    if opening is None or opening.kind is not Kind.CHANNEL_OPEN or len(opening.transfers) != 2:
        return [Finding("UnknownChannel", cid, "channel states without a ChannelOpen")]
    findings = []
    parties = (opening.transfers[0].sender, opening.transfers[1].sender)
    deposit = opening.transfers[0].amount
    states = []
    for n, rec in enumerate(records):
        try:
            state = ChannelState.from_record(rec, parties)
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"ChannelState record: {exc}") from None
        if state.seq != n:
            findings.append(Finding("SeqGap", cid, f"state {n} carries seq {state.seq}"))
        if sum(state.balances) != 2 * deposit or min(state.balances) < 0:
            findings.append(Finding("ChannelConservation", cid,
                                    f"seq {state.seq} balances {state.balances} vs escrow {2 * deposit}"))
        if not state.is_cosigned():
            findings.append(Finding("BadCosignature", cid, f"seq {state.seq} is not co-signed"))
        states.append(state)

    footprint = channel_transactions(ledger, bytes.fromhex(cid))
    if len(footprint) != 2:
        findings.append(Finding("ChannelFootprint", cid, f"{len(footprint)} on-ledger transactions, expected 2"))
    closes = footprint[1:]
    if closes and states:
        last = states[-1]
        split = tuple(t.amount for t in closes[0].transfers)
        if split != last.balances:
            findings.append(Finding("SettlementMismatch", cid,
                                    f"closed at {split}, last co-signed state is {last.balances}"))

    sid = records[0].get("session_id")
    if states and sid is not None:
        paid = states[-1].balances[1] - deposit
        if sid in faulted:
            if paid > billed[sid]:
                findings.append(Finding("Overpayment", cid, f"{sid} paid {paid} for {billed[sid]} billed"))
        elif paid != billed[sid]:
            findings.append(Finding("PaymentIncomplete", cid, f"{sid} paid {paid} of {billed[sid]} billed"))
    return findings


def inspect(events_text: str, channel: str) -> dict:
    """History of one channel (id or unique id prefix) reconstructed from the event log."""
    log = EventLog.from_jsonl(events_text)
    by_channel = _channel_records(log)
    matches = [cid for cid in by_channel if cid.startswith(channel.lower())]
    if len(matches) != 1:
        raise KeyError(f"{len(matches)} channels match {channel!r}")
    cid = matches[0]
    records = by_channel[cid]
    logged = _logged_transactions(log)
    opening = logged.get(cid)
    escrow = opening.transfers[0].recipient if opening and opening.transfers else None
    closes = [tx.to_dict() for tx in logged.values()
              if tx.kind is Kind.CHANNEL_CLOSE and tx.transfers and tx.transfers[0].sender == escrow]
    sid = records[0].get("session_id")
    return {
        "channel_id": cid,
        "session_id": sid,
        "open": opening.to_dict() if opening else None,
        "states": [{k: r[k] for k in ("tick", "seq", "balance_a", "balance_b")} for r in records],
        "close": closes,
        "readings": sum(1 for r in log.of_type("MeterReading") if r["session_id"] == sid),
    }
