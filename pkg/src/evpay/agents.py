"""Vehicle and charging-station protocol machines.

``step_session`` is the vehicle-side session: a pure transition function
from (state, event) to (state, actions). ``run_station`` is the station
side; it owns the meter for its one active session and decides when
charging ends or when the vehicle has stopped paying.

Actions are plain data. The simulation loop carries them out (opening the
channel, publishing on the bus) and feeds the outcome back as events.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence, Union

from .channel import ChannelState
from .errors import EmptyRegistry, IllegalTransition, PowerUnavailable, UnknownSession
from .metering import Meter, MeterReading, PriceSchedule, energy_for, price_at, record_tick
from .wallet import Address, Wallet, verify

DEPOSIT_HEADROOM = Fraction(5, 4)
DEFAULT_LAMBDA = 10
REFUSAL_GRACE = 2


def _fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


@dataclass(frozen=True)
class Battery:
    capacity_wh: int
    level_wh: int
    low_threshold: Fraction = Fraction(1, 5)
    target: Fraction = Fraction(9, 10)

    def __post_init__(self):
        object.__setattr__(self, "low_threshold", _fraction(self.low_threshold))
        object.__setattr__(self, "target", _fraction(self.target))
        if not 0 <= self.level_wh <= self.capacity_wh:
            raise ValueError("battery level must lie within [0, capacity]")
        if not 0 < self.low_threshold < self.target <= 1:
            raise ValueError("need 0 < low_threshold < target <= 1")

    def charged(self, wh: int) -> "Battery":
        return replace(self, level_wh=min(self.capacity_wh, self.level_wh + wh))


def needs_charge(battery: Battery) -> bool:
    return battery.level_wh < battery.low_threshold * battery.capacity_wh


def estimate_energy_needed(battery: Battery) -> int:
    gap = battery.target * battery.capacity_wh - battery.level_wh
    return max(0, math.ceil(gap))


def deposit_for(energy_wh: int, unit_price: int) -> int:
    """Per-party escrow: estimated session cost plus 25% headroom, rounded up; at least 1."""
    return max(1, math.ceil(DEPOSIT_HEADROOM * energy_wh * unit_price))


@dataclass(frozen=True)
class StationInfo:
    station_id: str
    position: tuple[int, int]
    tariff: PriceSchedule
    address: Address
    connector_limit_w: int


def manhattan(p: Sequence[int], q: Sequence[int]) -> int:
    return abs(p[0] - q[0]) + abs(p[1] - q[1])


def station_score(ev_position, station: StationInfo, needed_wh: int, tick: int,
                  lam: int = DEFAULT_LAMBDA) -> int:
    return needed_wh * price_at(station.tariff, tick) + lam * manhattan(ev_position, station.position)


def select_station(ev_position, registry: Sequence[StationInfo], needed_wh: int, tick: int,
                   lam: int = DEFAULT_LAMBDA) -> str:
    if not registry:
        raise EmptyRegistry("no charging station available")
    best = min(registry, key=lambda s: (station_score(ev_position, s, needed_wh, tick, lam), s.station_id))
    return best.station_id


# authentication: wallet-address exchange plus a signed challenge echo

def auth_challenge(session_id: str, tick: int, nonce: int) -> bytes:
    return hashlib.sha256(f"evpay/auth/{session_id}/{tick}/{nonce}".encode()).digest()


def answer_challenge(station_wallet: Wallet, challenge: bytes) -> tuple[Address, bytes]:
    return station_wallet.address, station_wallet.sign(challenge)


def check_answer(challenge: bytes, address: Address, signature: bytes) -> bool:
    return verify(address, challenge, signature)


# ---------------------------------------------------------------------------
# session state machine


class Phase(enum.Enum):
    IDLE = "Idle"
    DISCOVERING = "Discovering"
    AUTHENTICATING = "Authenticating"
    OPENING_CHANNEL = "OpeningChannel"
    CHARGING = "Charging"
    SETTLING = "Settling"
    INACTIVE = "Inactive"
    ABORTED = "Aborted"


TERMINAL = frozenset({Phase.INACTIVE, Phase.ABORTED})


# events

@dataclass(frozen=True)
class BmsLow:
    energy_needed_wh: int


@dataclass(frozen=True)
class StationSelected:
    station_id: str
    unit_price: int


@dataclass(frozen=True)
class AuthOk:
    address: Address


@dataclass(frozen=True)
class ChannelOpened:
    channel_id: bytes
    deposit: int


@dataclass(frozen=True)
class MeterReadingEvent:
    reading: MeterReading


@dataclass(frozen=True)
class TargetReached:
    pass


@dataclass(frozen=True)
class CounterpartyRefusal:
    by: str = "station"


@dataclass(frozen=True)
class Settled:
    tx_id: bytes = b""


@dataclass(frozen=True)
class FatalError:
    reason: str = ""


SessionEvent = Union[BmsLow, StationSelected, AuthOk, ChannelOpened, MeterReadingEvent,
                     TargetReached, CounterpartyRefusal, Settled, FatalError]


# actions

@dataclass(frozen=True)
class QueryRegistry:
    pass


@dataclass(frozen=True)
class RequestWallet:
    station_id: str


@dataclass(frozen=True)
class OpenChannel:
    counterparty: Address
    deposit: int


@dataclass(frozen=True)
class Subscribe:
    topic_filter: str


@dataclass(frozen=True)
class PublishChargeRequest:
    energy_wh: int


@dataclass(frozen=True)
class PayUpdate:
    amount: int


@dataclass(frozen=True)
class CloseChannel:
    pass


@dataclass(frozen=True)
class ForceClose:
    pass


def readings_topic(session_id: str) -> str:
    return f"meter/readings/{session_id}"


def requests_topic(station_id: str) -> str:
    return f"charge/requests/{station_id}"


@dataclass(frozen=True)
class SessionState:
    session_id: str
    phase: Phase = Phase.IDLE
    station_id: str | None = None
    station_address: Address | None = None
    energy_needed_wh: int = 0
    unit_price: int = 0
    deposit: int = 0
    channel_id: bytes | None = None
    billed: int = 0
    readings: int = 0


def step_session(state: SessionState, event) -> tuple[SessionState, list]:
    phase = state.phase
    if phase in TERMINAL:
        raise IllegalTransition(f"{phase.value} is terminal")

    if isinstance(event, FatalError):
        actions = [ForceClose()] if phase in (Phase.CHARGING, Phase.SETTLING) else []
        return replace(state, phase=Phase.ABORTED), actions

    if phase is Phase.IDLE and isinstance(event, BmsLow):
        return (replace(state, phase=Phase.DISCOVERING, energy_needed_wh=event.energy_needed_wh),
                [QueryRegistry()])
    if phase is Phase.DISCOVERING and isinstance(event, StationSelected):
        return (replace(state, phase=Phase.AUTHENTICATING, station_id=event.station_id,
                        unit_price=event.unit_price),
                [RequestWallet(event.station_id)])
    if phase is Phase.AUTHENTICATING and isinstance(event, AuthOk):
        deposit = deposit_for(state.energy_needed_wh, state.unit_price)
        return (replace(state, phase=Phase.OPENING_CHANNEL, station_address=event.address,
                        deposit=deposit),
                [OpenChannel(event.address, deposit)])
    if phase is Phase.OPENING_CHANNEL and isinstance(event, ChannelOpened):
        return (replace(state, phase=Phase.CHARGING, channel_id=event.channel_id, deposit=event.deposit),
                [Subscribe(readings_topic(state.session_id)),
                 PublishChargeRequest(state.energy_needed_wh)])
    if phase is Phase.CHARGING:
        if isinstance(event, MeterReadingEvent):
            return (replace(state, billed=state.billed + event.reading.cost, readings=state.readings + 1),
                    [PayUpdate(event.reading.cost)])
        if isinstance(event, TargetReached):
            return replace(state, phase=Phase.SETTLING), [CloseChannel()]
        if isinstance(event, CounterpartyRefusal):
            return replace(state, phase=Phase.SETTLING), [ForceClose()]
    if phase is Phase.SETTLING and isinstance(event, Settled):
        return replace(state, phase=Phase.INACTIVE), []
    raise IllegalTransition(f"{type(event).__name__} in phase {phase.value}")


# ---------------------------------------------------------------------------
# station machine


@dataclass(frozen=True)
class ChargeRequest:
    session_id: str
    energy_wh: int
    channel_id: bytes
    parties: tuple[Address, Address]
    deposit: int
    max_power_w: int | None = None


@dataclass(frozen=True)
class Tick:
    tick: int
    granted_w: int


@dataclass(frozen=True)
class PaymentUpdate:
    session_id: str
    state: ChannelState


@dataclass(frozen=True)
class StopRequest:
    session_id: str


# station actions

@dataclass(frozen=True)
class RequestPower:
    station_id: str
    demand_w: int


@dataclass(frozen=True)
class PublishReading:
    reading: MeterReading


@dataclass(frozen=True)
class EmitTargetReached:
    session_id: str


@dataclass(frozen=True)
class EmitCounterpartyRefusal:
    session_id: str


@dataclass
class StationSession:
    session_id: str
    requested_wh: int
    channel_id: bytes
    parties: tuple[Address, Address]
    deposit: int
    max_power_w: int | None
    meter: Meter
    paid: int = 0
    short_ticks: int = 0
    starved_ticks: int = 0
    metering: bool = True
    carry: Fraction = Fraction(0)

    @property
    def billed(self) -> int:
        return sum(r.cost for r in self.meter.readings)


@dataclass
class StationState:
    info: StationInfo
    tick_duration_h: Fraction = Fraction(1, 10)
    patience: int = 3
    grace: int = REFUSAL_GRACE
    session: StationSession | None = None

    def demand_w(self) -> int:
        s = self.session
        if s is None or not s.metering:
            return 0
        remaining = max(0, s.requested_wh - s.meter.cumulative_wh)
        need = math.ceil(Fraction(remaining) / self.tick_duration_h)
        if s.max_power_w is not None:
            need = min(need, s.max_power_w)
        return need

    def release(self) -> None:
        self.session = None


def _own(state: StationState, session_id: str) -> StationSession:
    if state.session is None or state.session.session_id != session_id:
        raise UnknownSession(session_id)
    return state.session


def run_station(state: StationState, event) -> tuple[StationState, list]:
    """Advance the station. Mutates and returns ``state``."""
    if isinstance(event, ChargeRequest):
        if state.session is not None:
            raise IllegalTransition(f"{state.info.station_id} already serves {state.session.session_id}")
        state.session = StationSession(event.session_id, event.energy_wh, event.channel_id,
                                       event.parties, event.deposit, event.max_power_w,
                                       Meter(event.session_id))
        return state, [RequestPower(state.info.station_id, state.demand_w())]

    if isinstance(event, PaymentUpdate):
        s = _own(state, event.session_id)
        st = event.state
        if st.channel_id == s.channel_id and st.parties == s.parties and st.is_cosigned():
            cs_index = s.parties.index(state.info.address)
            s.paid = max(s.paid, st.balances[cs_index] - s.deposit)
        return state, []

    if isinstance(event, StopRequest):
        s = _own(state, event.session_id)
        s.metering = False
        return state, [EmitTargetReached(s.session_id)]

    if isinstance(event, Tick):
        s = state.session
        if s is None or not s.metering:
            return state, []
        s.short_ticks = s.short_ticks + 1 if s.paid < s.billed else 0
        if s.short_ticks >= state.grace:
            s.metering = False
            return state, [EmitCounterpartyRefusal(s.session_id)]
        if event.granted_w == 0:
            s.starved_ticks += 1
            if s.starved_ticks > state.patience:
                s.metering = False
                raise PowerUnavailable(f"{state.info.station_id}: no power for {s.starved_ticks} ticks")
        else:
            s.starved_ticks = 0
        delta, s.carry = energy_for(event.granted_w, state.tick_duration_h, s.carry)
        remaining = s.requested_wh - s.meter.cumulative_wh
        if delta >= remaining:
            delta, s.carry = remaining, Fraction(0)
        # never meter more than the vehicle's side of the channel can pay for
        price = price_at(state.info.tariff, event.tick)
        budget = s.deposit - s.billed
        if price and delta * price > budget:
            delta, s.carry = budget // price, Fraction(0)
        reading = record_tick(s.meter, delta, event.tick, state.info.tariff)
        actions = [PublishReading(reading)]
        exhausted = price > 0 and s.deposit - s.billed < price
        if s.meter.cumulative_wh >= s.requested_wh or exhausted:
            s.metering = False
            actions.append(EmitTargetReached(s.session_id))
        else:
            actions.append(RequestPower(state.info.station_id, state.demand_w()))
        return state, actions

    raise IllegalTransition(f"station cannot handle {type(event).__name__}")
