"""Addresses and signing wallets (Ed25519, 32-byte public keys)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

SIGNATURE_SIZE = 64


@dataclass(frozen=True, order=True)
class Address:
    raw: bytes

    def __post_init__(self):
        if not isinstance(self.raw, bytes) or len(self.raw) != 32:
            raise ValueError("an address is exactly 32 bytes")

    @property
    def hex(self) -> str:
        return self.raw.hex()

    @classmethod
    def from_hex(cls, text: str) -> "Address":
        return cls(bytes.fromhex(text))

    def __str__(self) -> str:
        return self.hex

    def __repr__(self) -> str:
        return f"Address({self.hex[:12]}…)"


# Genesis mints from this address; nobody holds a key for it.
MINT = Address(bytes(32))


def verify(address: Address, message: bytes, signature: bytes) -> bool:
    if len(signature) != SIGNATURE_SIZE:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(address.raw).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class Wallet:
    """Key pair of an agent. The balance lives on the ledger, never here."""

    address: Address
    secret: Ed25519PrivateKey = field(repr=False, compare=False)

    @classmethod
    def from_seed(cls, seed: bytes) -> "Wallet":
        if len(seed) != 32:
            seed = hashlib.sha256(seed).digest()
        key = Ed25519PrivateKey.from_private_bytes(seed)
        raw = key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return cls(Address(raw), key)

    @classmethod
    def derive(cls, seed: int, name: str) -> "Wallet":
        """Deterministic wallet for agent ``name`` in a run seeded with ``seed``."""
        material = b"evpay-wallet" + (seed & ((1 << 64) - 1)).to_bytes(8, "big") + name.encode()
        return cls.from_seed(hashlib.sha256(material).digest())

    def sign(self, message: bytes) -> bytes:
        return self.secret.sign(message)
