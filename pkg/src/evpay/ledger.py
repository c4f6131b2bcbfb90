"""Tangle-style DAG ledger.

Every transaction approves two earlier transactions and carries a SHA-256
proof of work. A transaction counts as confirmed once two distinct later
transactions reference it directly. Value is kept in an account model:
balances are folded from transfers, never stored on wallets.

Canonical encoding (all integers big-endian)::

    body   = kind:u8 | issuer:32 | n_approves:u32 | ids:32*n
             | n_transfers:u32 | (from:32 | to:32 | amount:u64)*n | timestamp:u64
    digest = SHA-256(body | nonce:u64)

The transaction id is the digest. Signatures cover ``body`` only, so mining
and signing are independent.

Signature layouts by kind:

* Genesis: empty, the genesis is self-authenticating through its id.
* Plain: issuer signature; every transfer must debit the issuer.
* ChannelOpen: issuer signature then counterparty signature over ``body``.
  Exactly two equal deposits into one fresh escrow address.
* ChannelClose: issuer signature, then ``seq:u64``, then both parties'
  signatures over the channel state message for the settled split.
"""

from __future__ import annotations

import enum
import hashlib
import json
import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .errors import (
    BadPoW,
    BadSignature,
    DifficultyTooHigh,
    DuplicateAddress,
    DuplicateId,
    InsufficientBalance,
    InvalidTransaction,
    NegativeAmount,
    UnknownId,
    UnknownReference,
)
from .rng import Xoshiro256
from .wallet import MINT, SIGNATURE_SIZE, Address, Wallet, verify

MAX_DIFFICULTY = 24
DEFAULT_DIFFICULTY = 8
U64_MAX = (1 << 64) - 1


class Kind(enum.Enum):
    GENESIS = "Genesis"
    PLAIN = "Plain"
    CHANNEL_OPEN = "ChannelOpen"
    CHANNEL_CLOSE = "ChannelClose"


_KIND_CODE = {Kind.GENESIS: 0, Kind.PLAIN: 1, Kind.CHANNEL_OPEN: 2, Kind.CHANNEL_CLOSE: 3}


class View(enum.Enum):
    CONFIRMED = "Confirmed"
    PENDING = "Pending"


# confirmation_status returns one of these two
Status = View


@dataclass(frozen=True)
class Transfer:
    sender: Address
    recipient: Address
    amount: int

    def __post_init__(self):
        if not isinstance(self.amount, int) or self.amount < 0:
            raise NegativeAmount(f"transfer amount must be a non-negative integer: {self.amount!r}")
        if self.amount > U64_MAX:
            raise InvalidTransaction("transfer amount exceeds 64 bits")
        if self.sender == self.recipient:
            raise InvalidTransaction("transfer sender and recipient must differ")


def encode_body(kind: Kind, issuer: Address, approves: Sequence[bytes],
                transfers: Sequence[Transfer], timestamp: int) -> bytes:
    parts = [struct.pack(">B", _KIND_CODE[kind]), issuer.raw, struct.pack(">I", len(approves))]
    parts.extend(approves)
    parts.append(struct.pack(">I", len(transfers)))
    for t in transfers:
        parts.append(t.sender.raw + t.recipient.raw + struct.pack(">Q", t.amount))
    parts.append(struct.pack(">Q", timestamp))
    return b"".join(parts)


def pow_digest(body: bytes, nonce: int) -> bytes:
    return hashlib.sha256(body + struct.pack(">Q", nonce)).digest()


def leading_zero_bits_ok(digest: bytes, difficulty: int) -> bool:
    if difficulty == 0:
        return True
    return int.from_bytes(digest, "big") >> (256 - difficulty) == 0


@dataclass(frozen=True)
class Transaction:
    id: bytes
    kind: Kind
    issuer: Address
    approves: tuple[bytes, ...]
    transfers: tuple[Transfer, ...]
    timestamp: int
    nonce: int
    signature: bytes = b""

    def body(self) -> bytes:
        return encode_body(self.kind, self.issuer, self.approves, self.transfers, self.timestamp)

    def digest(self) -> bytes:
        return pow_digest(self.body(), self.nonce)

    @property
    def hex(self) -> str:
        return self.id.hex()

    def to_dict(self) -> dict:
        return {
            "id": self.id.hex(),
            "kind": self.kind.value,
            "issuer": self.issuer.hex,
            "approves": [a.hex() for a in self.approves],
            "transfers": [
                {"from": t.sender.hex, "to": t.recipient.hex, "amount": t.amount}
                for t in self.transfers
            ],
            "timestamp": self.timestamp,
            "nonce": self.nonce,
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transaction":
        return cls(
            id=bytes.fromhex(d["id"]),
            kind=Kind(d["kind"]),
            issuer=Address.from_hex(d["issuer"]),
            approves=tuple(bytes.fromhex(a) for a in d["approves"]),
            transfers=tuple(
                Transfer(Address.from_hex(t["from"]), Address.from_hex(t["to"]), int(t["amount"]))
                for t in d["transfers"]
            ),
            timestamp=int(d["timestamp"]),
            nonce=int(d["nonce"]),
            signature=bytes.fromhex(d["signature"]),
        )


def channel_state_message(channel_id: bytes, seq: int, amount_a: int, amount_b: int) -> bytes:
    """Bytes both channel parties sign to agree on a balance split."""
    return b"evpay/channel-state" + channel_id + struct.pack(">QQQ", seq, amount_a, amount_b)


def escrow_address(party_a: Address, party_b: Address, open_nonce: int) -> Address:
    return Address(hashlib.sha256(party_a.raw + party_b.raw + struct.pack(">Q", open_nonce)).digest())


@dataclass
class Ledger:
    difficulty: int = DEFAULT_DIFFICULTY
    transactions: dict[bytes, Transaction] = field(default_factory=dict)
    approvers: dict[bytes, set[bytes]] = field(default_factory=dict)
    genesis_id: bytes | None = None
    # escrow address -> id of the ChannelOpen that funded it
    escrows: dict[Address, bytes] = field(default_factory=dict)
    _tips: set[bytes] = field(default_factory=set, repr=False)
    _pending: dict[Address, int] = field(default_factory=lambda: defaultdict(int), repr=False)

    @property
    def tips(self) -> frozenset[bytes]:
        return frozenset(self._tips)

    def __len__(self) -> int:
        return len(self.transactions)

    def __contains__(self, tx_id: bytes) -> bool:
        return tx_id in self.transactions

    def __getitem__(self, tx_id: bytes) -> Transaction:
        return self.transactions[tx_id]

    def genesis_total(self) -> int:
        if self.genesis_id is None or self.genesis_id not in self.transactions:
            return 0
        return sum(t.amount for t in self.transactions[self.genesis_id].transfers)

    def _insert(self, tx: Transaction) -> None:
        """Index ``tx`` without validation. Used by attach and by loaders."""
        self.transactions[tx.id] = tx
        self.approvers.setdefault(tx.id, set())
        self._tips.add(tx.id)
        for ref in set(tx.approves):
            if ref in self.transactions:
                self.approvers[ref].add(tx.id)
                self._tips.discard(ref)
        if tx.kind is Kind.GENESIS and self.genesis_id is None:
            self.genesis_id = tx.id
        if tx.kind is Kind.CHANNEL_OPEN and tx.transfers:
            self.escrows.setdefault(tx.transfers[0].recipient, tx.id)
        _apply(self._pending, tx)

    # serialization ------------------------------------------------------

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(tx.to_dict(), separators=(",", ":")) + "\n"
            for tx in self.transactions.values()
        )

    @classmethod
    def from_transactions(cls, txs: Iterable[Transaction], difficulty: int) -> "Ledger":
        """Rebuild a ledger as-is, for auditing. Nothing is validated here."""
        ledger = cls(difficulty=difficulty)
        txs = list(txs)
        for tx in txs:
            if tx.id not in ledger.transactions:
                ledger._insert(tx)
        # forward references in a reordered file only resolve on a second pass
        for tx in txs:
            for ref in set(tx.approves):
                if ref in ledger.transactions and tx.id not in ledger.approvers[ref]:
                    ledger.approvers[ref].add(tx.id)
                    ledger._tips.discard(ref)
        return ledger

    @classmethod
    def from_jsonl(cls, text: str, difficulty: int = DEFAULT_DIFFICULTY) -> "Ledger":
        txs = [Transaction.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
        return cls.from_transactions(txs, difficulty)


def _apply(balances: dict[Address, int], tx: Transaction) -> None:
    for t in tx.transfers:
        if tx.kind is not Kind.GENESIS:
            balances[t.sender] -= t.amount
        balances[t.recipient] += t.amount


# ---------------------------------------------------------------------------
# operations


def mine_pow(draft: Transaction | bytes, difficulty: int) -> int:
    """Smallest nonce, counting up from 0, whose digest meets ``difficulty``."""
    if difficulty > MAX_DIFFICULTY:
        raise DifficultyTooHigh(f"difficulty {difficulty} exceeds cap {MAX_DIFFICULTY}")
    if difficulty < 0:
        raise ValueError("difficulty must be non-negative")
    body = draft if isinstance(draft, bytes) else draft.body()
    prefix = hashlib.sha256(body)
    shift = 256 - difficulty
    nonce = 0
    while True:
        h = prefix.copy()
        h.update(struct.pack(">Q", nonce))
        if difficulty == 0 or int.from_bytes(h.digest(), "big") >> shift == 0:
            return nonce
        nonce += 1


def build_transaction(kind: Kind, issuer: Address, approves: Sequence[bytes],
                      transfers: Sequence[Transfer], timestamp: int, difficulty: int,
                      sign: Callable[[bytes], bytes] | None = None) -> Transaction:
    """Assemble, sign and mine a transaction. ``sign`` maps body -> signature blob."""
    approves = tuple(approves)
    transfers = tuple(transfers)
    body = encode_body(kind, issuer, approves, transfers, timestamp)
    signature = sign(body) if sign is not None else b""
    nonce = mine_pow(body, difficulty)
    return Transaction(pow_digest(body, nonce), kind, issuer, approves, transfers,
                       timestamp, nonce, signature)


def create_genesis(allocations: Iterable[tuple[Address, int]], difficulty: int = DEFAULT_DIFFICULTY) -> Ledger:
    allocations = list(allocations)
    seen = set()
    for addr, amount in allocations:
        if amount < 0:
            raise NegativeAmount(f"negative allocation for {addr.hex}")
        if addr in seen:
            raise DuplicateAddress(addr.hex)
        seen.add(addr)
    transfers = [Transfer(MINT, addr, amount) for addr, amount in allocations]
    tx = build_transaction(Kind.GENESIS, MINT, (), transfers, 0, difficulty)
    ledger = Ledger(difficulty=difficulty)
    ledger._insert(tx)
    return ledger


def select_tips(ledger: Ledger, rng: Xoshiro256) -> tuple[bytes, bytes]:
    """Two tips drawn uniformly (tips ordered by id bytes before drawing)."""
    tips = sorted(ledger._tips)
    if not tips:
        raise UnknownReference("ledger has no transactions")
    if len(tips) == 1:
        return tips[0], tips[0]
    i = rng.below(len(tips))
    j = rng.below(len(tips) - 1)
    if j >= i:
        j += 1
    return tips[i], tips[j]


def check_signature(ledger: Ledger, tx: Transaction) -> str | None:
    """Return None if ``tx`` is properly authorized, else the reason it is not."""
    body = tx.body()
    sig = tx.signature
    if tx.kind is Kind.GENESIS:
        return None if sig == b"" else "genesis carries a signature"

    if tx.kind is Kind.PLAIN:
        if any(t.sender != tx.issuer for t in tx.transfers):
            return "plain transfer debits an address other than the issuer"
        return None if verify(tx.issuer, body, sig) else "issuer signature invalid"

    if tx.kind is Kind.CHANNEL_OPEN:
        if len(tx.transfers) != 2:
            return "channel open needs exactly two deposits"
        da, db = tx.transfers
        if da.sender != tx.issuer or db.sender == tx.issuer:
            return "channel open deposits must come from the issuer then the counterparty"
        if len(sig) != 2 * SIGNATURE_SIZE:
            return "channel open needs two signatures"
        if not verify(da.sender, body, sig[:SIGNATURE_SIZE]):
            return "issuer signature invalid"
        if not verify(db.sender, body, sig[SIGNATURE_SIZE:]):
            return "counterparty signature invalid"
        return None

    # ChannelClose
    if len(tx.transfers) != 2:
        return "channel close needs exactly two payouts"
    pa, pb = tx.transfers
    escrow = pa.sender
    if pb.sender != escrow:
        return "channel close payouts must come from one escrow"
    open_id = ledger.escrows.get(escrow)
    if open_id is None or open_id not in ledger.transactions:
        return "channel close spends an unknown escrow"
    opening = ledger.transactions[open_id]
    party_a, party_b = opening.transfers[0].sender, opening.transfers[1].sender
    if (pa.recipient, pb.recipient) != (party_a, party_b):
        return "channel close pays someone other than the channel parties"
    if tx.issuer not in (party_a, party_b):
        return "channel close issued by a non-party"
    if len(sig) != 3 * SIGNATURE_SIZE + 8:
        return "channel close signature blob has the wrong size"
    if not verify(tx.issuer, body, sig[:SIGNATURE_SIZE]):
        return "issuer signature invalid"
    seq = struct.unpack(">Q", sig[SIGNATURE_SIZE:SIGNATURE_SIZE + 8])[0]
    msg = channel_state_message(open_id, seq, pa.amount, pb.amount)
    sa = sig[SIGNATURE_SIZE + 8:2 * SIGNATURE_SIZE + 8]
    sb = sig[2 * SIGNATURE_SIZE + 8:]
    if not (verify(party_a, msg, sa) and verify(party_b, msg, sb)):
        return "settled state is not co-signed by both parties"
    return None


def attach_transaction(ledger: Ledger, tx: Transaction) -> dict:
    """Validate ``tx`` against the ledger and insert it.

    Raises on the first failed check; the ledger is untouched in that case.
    Returns a small report: the id, the tips it approved and the new tip set.
    """
    if tx.id in ledger.transactions:
        raise DuplicateId(tx.hex)
    if tx.kind is Kind.GENESIS:
        raise InvalidTransaction("a ledger holds exactly one genesis")
    if len(tx.approves) != 2:
        raise InvalidTransaction("a transaction approves exactly two transactions")
    for ref in tx.approves:
        if ref not in ledger.transactions:
            raise UnknownReference(ref.hex())
    trunk, branch = tx.approves
    if trunk == branch and len(ledger._tips) != 1:
        raise InvalidTransaction("approving one transaction twice needs a single-tip ledger")
    if tx.timestamp < 0 or tx.timestamp > U64_MAX:
        raise InvalidTransaction("timestamp out of range")
    if any(t.sender == MINT for t in tx.transfers):
        raise BadSignature("only the genesis may mint")

    digest = tx.digest()
    if digest != tx.id:
        raise BadPoW("id does not match the digest of the transaction")
    if not leading_zero_bits_ok(digest, ledger.difficulty):
        raise BadPoW(f"digest lacks {ledger.difficulty} leading zero bits")

    if tx.kind is Kind.CHANNEL_OPEN:
        da, db = (tx.transfers + (None, None))[:2]
        if da is not None and db is not None:
            if da.recipient != db.recipient or da.amount != db.amount or da.amount <= 0:
                raise InvalidTransaction("channel open needs two equal positive deposits into one escrow")
            if da.recipient in ledger.escrows or ledger._pending.get(da.recipient, 0) != 0:
                raise InvalidTransaction("escrow address already in use")
    reason = check_signature(ledger, tx)
    if reason is not None:
        raise BadSignature(reason)
    if tx.kind is Kind.CHANNEL_CLOSE:
        escrow = tx.transfers[0].sender
        total = sum(t.amount for t in tx.transfers)
        if total != ledger._pending.get(escrow, 0):
            raise InsufficientBalance("channel close must pay out exactly the escrowed amount")

    after = dict()
    for t in tx.transfers:
        after[t.sender] = after.get(t.sender, ledger._pending.get(t.sender, 0)) - t.amount
        after[t.recipient] = after.get(t.recipient, ledger._pending.get(t.recipient, 0)) + t.amount
    short = sorted(a.hex for a, v in after.items() if v < 0)
    if short:
        raise InsufficientBalance(f"pending balance would go negative for {', '.join(short)}")

    previous_tips = frozenset(ledger._tips)
    ledger._insert(tx)
    return {
        "id": tx.id,
        "approved": tx.approves,
        "tips_before": previous_tips,
        "tips": ledger.tips,
    }


def confirmation_status(ledger: Ledger, tx_id: bytes) -> View:
    if tx_id not in ledger.transactions:
        raise UnknownId(tx_id.hex())
    if tx_id == ledger.genesis_id:
        return View.CONFIRMED
    return View.CONFIRMED if len(ledger.approvers.get(tx_id, ())) >= 2 else View.PENDING


def balances(ledger: Ledger, view: View = View.PENDING) -> dict[Address, int]:
    if view is View.PENDING:
        return {a: v for a, v in ledger._pending.items()}
    out: dict[Address, int] = defaultdict(int)
    for tx in ledger.transactions.values():
        if confirmation_status(ledger, tx.id) is View.CONFIRMED:
            _apply(out, tx)
    return dict(out)


def balance_of(ledger: Ledger, address: Address, view: View = View.PENDING) -> int:
    if view is View.PENDING:
        return ledger._pending.get(address, 0)
    return balances(ledger, view).get(address, 0)


def issue(ledger: Ledger, wallet: Wallet, transfers: Sequence[Transfer], rng: Xoshiro256,
          tick: int = 0, approves: Sequence[bytes] | None = None) -> Transaction:
    """Build, sign, mine and attach a Plain transaction from ``wallet``."""
    if approves is None:
        approves = select_tips(ledger, rng)
    tx = build_transaction(Kind.PLAIN, wallet.address, approves, transfers, tick,
                           ledger.difficulty, wallet.sign)
    attach_transaction(ledger, tx)
    return tx


# ---------------------------------------------------------------------------
# audit


@dataclass(frozen=True)
class Finding:
    kind: str
    tx: str | None
    detail: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "tx": self.tx, "detail": self.detail}


def validate_dag(ledger: Ledger) -> list[Finding]:
    """Audit every transaction. An empty list means the ledger is valid."""
    findings: list[Finding] = []
    txs = ledger.transactions
    genesis = [tx for tx in txs.values() if tx.kind is Kind.GENESIS]
    if len(genesis) != 1:
        findings.append(Finding("GenesisCount", None, f"expected 1 genesis, found {len(genesis)}"))

    for tx in txs.values():
        h = tx.hex
        if tx.kind is Kind.GENESIS:
            if tx.approves:
                findings.append(Finding("BadApprovals", h, "genesis approves nothing"))
        elif len(tx.approves) != 2:
            findings.append(Finding("BadApprovals", h, f"{len(tx.approves)} approvals instead of 2"))
        for ref in dict.fromkeys(tx.approves):
            if ref not in txs:
                findings.append(Finding("UnknownReference", h, f"approves missing {ref.hex()}"))

        digest = tx.digest()
        if tx.kind is Kind.GENESIS:
            if digest != tx.id:
                findings.append(Finding("IdMismatch", h, "recomputed digest differs from id"))
            elif not leading_zero_bits_ok(digest, ledger.difficulty):
                findings.append(Finding("BadPoW", h, f"fewer than {ledger.difficulty} leading zero bits"))
            continue
        reason = check_signature(ledger, tx)
        if reason is not None:
            # the signed body changed, so the id cannot match either
            findings.append(Finding("BadSignature", h, reason))
            if digest != tx.id:
                findings.append(Finding("IdMismatch", h, "recomputed digest differs from id"))
        elif digest != tx.id or not leading_zero_bits_ok(digest, ledger.difficulty):
            # body is authentic: the nonce is the only thing that can be wrong
            findings.append(Finding("BadPoW", h, "nonce does not reproduce a valid proof of work"))

    cycle = _cycle_members(ledger)
    if cycle:
        findings.append(Finding("Cycle", None, "unsortable: " + ",".join(c.hex()[:16] for c in cycle)))

    folded: dict[Address, int] = defaultdict(int)
    for tx in txs.values():
        _apply(folded, tx)
    for addr in sorted(a for a, v in folded.items() if v < 0):
        findings.append(Finding("NegativeBalance", None, f"{addr.hex} at {folded[addr]}"))
    minted = sum(t.amount for tx in genesis for t in tx.transfers)
    if sum(folded.values()) != minted:
        findings.append(Finding("ConservationViolation", None,
                                f"balances sum to {sum(folded.values())}, genesis minted {minted}"))
    return findings


def _cycle_members(ledger: Ledger) -> list[bytes]:
    txs = ledger.transactions
    indeg = {i: 0 for i in txs}
    children: dict[bytes, list[bytes]] = defaultdict(list)
    for tx in txs.values():
        for ref in set(tx.approves):
            if ref in txs:
                indeg[tx.id] += 1
                children[ref].append(tx.id)
    queue = deque(i for i, d in indeg.items() if d == 0)
    seen = 0
    while queue:
        node = queue.popleft()
        seen += 1
        for child in children[node]:
            indeg[child] -= 1
            if indeg[child] == 0:
                queue.append(child)
    if seen == len(txs):
        return []
    return sorted(i for i, d in indeg.items() if d > 0)


def topological_order(ledger: Ledger) -> list[bytes]:
    """Parents before children; raises ValueError on a cycle."""
    if _cycle_members(ledger):
        raise ValueError("ledger contains a cycle")
    txs = ledger.transactions
    indeg = {i: len({r for r in txs[i].approves if r in txs}) for i in txs}
    children: dict[bytes, list[bytes]] = defaultdict(list)
    for tx in txs.values():
        for ref in set(tx.approves):
            if ref in txs:
                children[ref].append(tx.id)
    queue = deque(sorted(i for i, d in indeg.items() if d == 0))
    order = []
    while queue:
        node = queue.popleft()
        order.append(node)
        for child in children[node]:
            indeg[child] -= 1
            if indeg[child] == 0:
                queue.append(child)
    return order


def verify_pow(tx: Transaction, difficulty: int) -> bool:
    """True iff the nonce reproduces the id and the id meets ``difficulty``."""
    digest = tx.digest()
    return digest == tx.id and leading_zero_bits_ok(digest, difficulty)
