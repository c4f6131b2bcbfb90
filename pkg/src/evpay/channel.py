"""Bidirectional payment channel with a two-party escrow.

Only two ledger transactions per channel: the ChannelOpen that moves an
equal deposit from each party into an escrow address, and the
ChannelClose that pays the escrow out according to a co-signed state.
Every update in between is an off-ledger state signed by both parties.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace

from .errors import (
    BadSignature,
    ChannelClosed,
    InsufficientBalance,
    NotCosigned,
    Overdraw,
    SeqGap,
    SumMismatch,
    UnknownParty,
    ZeroDeposit,
)
from .ledger import (
    Kind,
    Ledger,
    Transfer,
    attach_transaction,
    balance_of,
    build_transaction,
    channel_state_message,
    escrow_address,
    select_tips,
)
from .rng import Xoshiro256
from .wallet import Address, Wallet, verify


class ChannelStatus(enum.Enum):
    OPEN = "Open"
    CLOSED = "Closed"


@dataclass(frozen=True)
class ChannelState:
    channel_id: bytes
    parties: tuple[Address, Address]
    seq: int
    balances: tuple[int, int]
    sig_a: bytes = b""
    sig_b: bytes = b""

    def message(self) -> bytes:
        return channel_state_message(self.channel_id, self.seq, *self.balances)

    def is_cosigned(self) -> bool:
        msg = self.message()
        return verify(self.parties[0], msg, self.sig_a) and verify(self.parties[1], msg, self.sig_b)

    def signed(self, sig_a: bytes, sig_b: bytes) -> "ChannelState":
        return replace(self, sig_a=sig_a, sig_b=sig_b)

    def to_record(self) -> dict:
        """Audit-log form: one co-signed state per line."""
        return {
            "channel_id": self.channel_id.hex(),
            "seq": self.seq,
            "balance_a": self.balances[0],
            "balance_b": self.balances[1],
            "sig_a": self.sig_a.hex(),
            "sig_b": self.sig_b.hex(),
        }

    @classmethod
    def from_record(cls, record: dict, parties: tuple[Address, Address]) -> "ChannelState":
        return cls(
            channel_id=bytes.fromhex(record["channel_id"]),
            parties=parties,
            seq=int(record["seq"]),
            balances=(int(record["balance_a"]), int(record["balance_b"])),
            sig_a=bytes.fromhex(record["sig_a"]),
            sig_b=bytes.fromhex(record["sig_b"]),
        )


def sign_state(wallet: Wallet, state: ChannelState) -> bytes:
    return wallet.sign(state.message())


def cosign(state: ChannelState, wallet_a: Wallet, wallet_b: Wallet) -> tuple[bytes, bytes]:
    return sign_state(wallet_a, state), sign_state(wallet_b, state)


@dataclass
class Channel:
    open_tx: bytes
    deposit: int
    escrow: Address
    current: ChannelState
    history: list[ChannelState] = field(default_factory=list)
    status: ChannelStatus = ChannelStatus.OPEN
    close_tx: bytes | None = None

    @property
    def channel_id(self) -> bytes:
        return self.open_tx

    @property
    def parties(self) -> tuple[Address, Address]:
        return self.current.parties

    @property
    def total(self) -> int:
        return 2 * self.deposit

    def index_of(self, party: Address) -> int:
        try:
            return self.parties.index(party)
        except ValueError:
            raise UnknownParty(party.hex) from None


def open_channel(ledger: Ledger, wallet_a: Wallet, wallet_b: Wallet, deposit: int,
                 rng: Xoshiro256, tick: int = 0) -> Channel:
    if deposit <= 0:
        raise ZeroDeposit("each party must deposit a positive amount")
    for w in (wallet_a, wallet_b):
        if balance_of(ledger, w.address) < deposit:
            raise InsufficientBalance(f"{w.address.hex} cannot cover a deposit of {deposit}")
    a, b = wallet_a.address, wallet_b.address
    escrow = escrow_address(a, b, rng.next_u64())
    approves = select_tips(ledger, rng)

    def sign_both(body: bytes) -> bytes:
        return wallet_a.sign(body) + wallet_b.sign(body)

    tx = build_transaction(Kind.CHANNEL_OPEN, a, approves,
                           [Transfer(a, escrow, deposit), Transfer(b, escrow, deposit)],
                           tick, ledger.difficulty, sign_both)
    attach_transaction(ledger, tx)
    state0 = ChannelState(tx.id, (a, b), 0, (deposit, deposit))
    state0 = state0.signed(*cosign(state0, wallet_a, wallet_b))
    return Channel(open_tx=tx.id, deposit=deposit, escrow=escrow, current=state0, history=[state0])


def propose_update(channel: Channel, payer: Address, amount: int) -> ChannelState:
    """Next state with ``amount`` moved from ``payer`` to the other party; unsigned."""
    if channel.status is ChannelStatus.CLOSED:
        raise ChannelClosed(channel.channel_id.hex())
    i = channel.index_of(payer)
    if amount < 0:
        raise ValueError("payment amount must be non-negative")
    bal = list(channel.current.balances)
    if amount > bal[i]:
        raise Overdraw(f"payer holds {bal[i]}, asked to pay {amount}")
    bal[i] -= amount
    bal[1 - i] += amount
    return ChannelState(channel.channel_id, channel.parties, channel.current.seq + 1, tuple(bal))


def apply_update(channel: Channel, state: ChannelState, sig_a: bytes, sig_b: bytes) -> Channel:
    if channel.status is ChannelStatus.CLOSED:
        raise ChannelClosed(channel.channel_id.hex())
    if state.seq != channel.current.seq + 1:
        raise SeqGap(f"expected seq {channel.current.seq + 1}, got {state.seq}")
    if sum(state.balances) != channel.total:
        raise SumMismatch(f"balances sum to {sum(state.balances)}, escrow holds {channel.total}")
    if min(state.balances) < 0:
        raise Overdraw("negative channel balance")
    if state.channel_id != channel.channel_id or state.parties != channel.parties:
        raise BadSignature("state belongs to another channel")
    signed = state.signed(sig_a, sig_b)
    if not signed.is_cosigned():
        raise BadSignature("state is not signed by both parties")
    channel.history.append(signed)
    channel.current = signed
    return channel


def _settle(channel: Channel, ledger: Ledger, state: ChannelState, rng: Xoshiro256,
            issuer: Wallet, tick: int) -> bytes:
    a, b = channel.parties
    if issuer.address not in (a, b):
        raise UnknownParty(issuer.address.hex)
    approves = select_tips(ledger, rng)
    blob_tail = struct.pack(">Q", state.seq) + state.sig_a + state.sig_b
    tx = build_transaction(Kind.CHANNEL_CLOSE, issuer.address, approves,
                           [Transfer(channel.escrow, a, state.balances[0]),
                            Transfer(channel.escrow, b, state.balances[1])],
                           tick, ledger.difficulty, lambda body: issuer.sign(body) + blob_tail)
    attach_transaction(ledger, tx)
    channel.status = ChannelStatus.CLOSED
    channel.close_tx = tx.id
    return tx.id


def close_channel(channel: Channel, ledger: Ledger, rng: Xoshiro256, issuer: Wallet,
                  tick: int = 0) -> bytes:
    """Cooperative close at the current co-signed state."""
    if channel.status is ChannelStatus.CLOSED:
        raise ChannelClosed(channel.channel_id.hex())
    if not channel.current.is_cosigned():
        raise NotCosigned("current state lacks a signature")
    return _settle(channel, ledger, channel.current, rng, issuer, tick)


def force_close(channel: Channel, ledger: Ledger, rng: Xoshiro256, issuer: Wallet,
                tick: int = 0) -> bytes:
    """Unilateral close at the highest co-signed state in the history."""
    if channel.status is ChannelStatus.CLOSED:
        raise ChannelClosed(channel.channel_id.hex())
    for state in reversed(channel.history):
        if state.is_cosigned():
            return _settle(channel, ledger, state, rng, issuer, tick)
    raise NotCosigned("no co-signed state in history")
