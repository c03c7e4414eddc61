"""Digests, canonical encoding and the pluggable signature scheme.

Canonical encoding: little-endian fixed-width integers, byte fields
prefixed by a u32 length, lists prefixed by a u32 count, fields written
in declaration order.  Every digest in the package is SHA-256 over this
encoding, so hashes are bit-exact across runs and platforms.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Iterable, Protocol

DIGEST_SIZE = 32

# unspendable destination for burns; no secret maps to it
BURN_KEY = bytes(DIGEST_SIZE)


def digest(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.digest()


class Encoder:
    """Append-only canonical byte writer."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def u8(self, v: int) -> "Encoder":
        self._buf += struct.pack("<B", v)
        return self

    def u32(self, v: int) -> "Encoder":
        self._buf += struct.pack("<I", v)
        return self

    def u64(self, v: int) -> "Encoder":
        self._buf += struct.pack("<Q", v)
        return self

    def raw(self, b: bytes) -> "Encoder":
        self._buf += b
        return self

    def bytes(self, b: bytes) -> "Encoder":
        self.u32(len(b))
        self._buf += b
        return self

    def str(self, s: str) -> "Encoder":
        return self.bytes(s.encode("utf-8"))

    def seq(self, items: Iterable, write) -> "Encoder":
        items = list(items)
        self.u32(len(items))
        for it in items:
            write(self, it)
        return self

    def getvalue(self) -> bytes:
        return bytes(self._buf)


class SignatureScheme(Protocol):
    def sign(self, secret_key: bytes, message: bytes) -> bytes: ...

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool: ...


class KeyedDigestScheme:
    """Simulation default: ``sign = H(secret || message)``.

    Verification needs the secret behind a public key, so the scheme keeps a
    registry filled by :meth:`keypair`.  Keys never registered never verify.
    """

    def __init__(self) -> None:
        self._secrets: dict[bytes, bytes] = {}

    def keypair(self, seed: bytes) -> "KeyPair":
        secret = digest(b"tdchain/sk", seed)
        public = digest(b"tdchain/pk", secret)
        self._secrets[public] = secret
        return KeyPair(public, secret)

    def sign(self, secret_key: bytes, message: bytes) -> bytes:
        return digest(secret_key, message)

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        secret = self._secrets.get(public_key)
        if secret is None:
            return False
        return digest(secret, message) == signature


class Ed25519Scheme:
    """Real asymmetric signatures behind the same contract."""

    def keypair(self, seed: bytes) -> "KeyPair":
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
        from cryptography.hazmat.primitives.serialization import (
            Encoding,
            PublicFormat,
        )

        secret = digest(b"tdchain/sk", seed)
        sk = Ed25519PrivateKey.from_private_bytes(secret)
        public = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return KeyPair(public, secret)

    def sign(self, secret_key: bytes, message: bytes) -> bytes:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        return Ed25519PrivateKey.from_private_bytes(secret_key).sign(message)

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

        try:
            Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        except (InvalidSignature, ValueError):
            return False
        return True


DEFAULT_SCHEME = KeyedDigestScheme()
_scheme: SignatureScheme = DEFAULT_SCHEME


def use_scheme(scheme: SignatureScheme) -> SignatureScheme:
    """Swap the process-wide signature scheme; returns the previous one."""
    global _scheme
    prev, _scheme = _scheme, scheme
    return prev


def current_scheme() -> SignatureScheme:
    return _scheme


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    secret_key: bytes

    @classmethod
    def from_seed(cls, seed: bytes | str) -> "KeyPair":
        if isinstance(seed, str):
            seed = seed.encode("utf-8")
        return _scheme.keypair(seed)

    def sign(self, message: bytes) -> bytes:
        return _scheme.sign(self.secret_key, message)

    def __repr__(self) -> str:
        return f"KeyPair({self.public_key.hex()[:12]}...)"


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    return _scheme.verify(public_key, message, signature)


def short(key: bytes) -> str:
    return key.hex()[:12]
