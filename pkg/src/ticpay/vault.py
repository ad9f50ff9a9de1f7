"""Sealed-at-rest store for the client's issued TIC codes.

Codes arrive from the bank in a batch and sit on the device encrypted
under a password-derived key until the moment one is spent. A picked
code is removed from the stored list, the vault reseals after every
mutation, and serialization is a stable byte format so a saved vault
reloads bit-exactly.

The clear header carries only KDF inputs and a seal counter; code
values, even the remaining count, live inside the sealed blob.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import List, Optional, Sequence

from .crypto import KEY_LEN, CryptoSuite, NonceSequence
from .errors import IntegrityFailure, VaultEmpty, VaultLocked, WireError
from .tic_registry import ALPHABETS, TicCode
from .wire import Ciphertext, KeyRole, Reader, str16, u16, u32, u64

VAULT_MAGIC = b"TV"
VAULT_VERSION = 1
SALT_LEN = 16
KDF_ITERATIONS = 2048  # simulation-grade work factor, not a production setting


def _vault_key(password: str, salt: bytes, iterations: int) -> bytes:
    return hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), salt, iterations, KEY_LEN)


@dataclass
class _Contents:
    values: List[str]  # unused codes only; a picked code is gone from here


class TicVault:
    """Password-sealed, in-order, consume-once store of TIC codes."""

    def __init__(
        self,
        salt: bytes,
        iterations: int,
        alphabet: str,
        sealed: Ciphertext,
        seal_count: int,
        cipher: str = "aes-gcm",
    ):
        if len(salt) != SALT_LEN:
            raise ValueError(f"salt must be {SALT_LEN} bytes")
        if alphabet not in ALPHABETS:
            raise ValueError(f"alphabet must be one of {sorted(ALPHABETS)}")
        self.salt = salt
        self.iterations = iterations
        self.alphabet = alphabet
        self._sealed = sealed
        self._seal_count = seal_count
        self._cipher_name = cipher
        self._suite = CryptoSuite(cipher, nonces=NonceSequence(start=seal_count + 1))
        self._key: Optional[bytes] = None
        self._contents: Optional[_Contents] = None

    # -- construction -------------------------------------------------------

    @classmethod
    def provision(
        cls,
        codes: Sequence,
        password: str,
        salt: bytes,
        alphabet: str = "alphanumeric-upper",
        iterations: int = KDF_ITERATIONS,
        cipher: str = "aes-gcm",
    ) -> "TicVault":
        """Build an unlocked vault around a fresh batch (may be empty)."""
        if len(salt) != SALT_LEN:
            raise ValueError(f"salt must be {SALT_LEN} bytes")
        values = [getattr(c, "value", c) for c in codes]
        for v in values:
            TicCode(value=v, alphabet=alphabet)  # validates symbols and length
        vault = cls.__new__(cls)
        vault.salt = bytes(salt)
        vault.iterations = iterations
        vault.alphabet = alphabet
        vault._seal_count = 0
        vault._cipher_name = cipher
        vault._suite = CryptoSuite(cipher, nonces=NonceSequence(start=1))
        vault._key = _vault_key(password, vault.salt, iterations)
        vault._contents = _Contents(values=values)
        vault._sealed = None  # set by _reseal
        vault._reseal()
        return vault

    # -- lock state ---------------------------------------------------------

    @property
    def locked(self) -> bool:
        return self._key is None

    def unlock(self, password: str) -> None:
        """Derive the key and open the blob; wrong password fails closed."""
        key = _vault_key(password, self.salt, self.iterations)
        try:
            plaintext = self._suite.open_blob(self._sealed, KeyRole.VAULT_KEYED, key, "vault")
        except IntegrityFailure as exc:
            raise IntegrityFailure("vault password rejected") from exc
        reader = Reader(plaintext)
        count = reader.u16()
        values = [reader.str16() for _ in range(count)]
        reader.expect_end()
        self._key = key
        self._contents = _Contents(values=values)

    def lock(self) -> None:
        self._key = None
        self._contents = None

    def _require_unlocked(self) -> _Contents:
        if self._key is None or self._contents is None:
            raise VaultLocked("vault is locked")
        return self._contents

    def _reseal(self) -> None:
        contents = self._require_unlocked()
        payload = u16(len(contents.values))
        for value in contents.values:
            payload += str16(value)
        self._seal_count += 1
        self._sealed = self._suite.seal_blob(KeyRole.VAULT_KEYED, self._key, payload, "vault")

    # -- use ----------------------------------------------------------------

    def remaining(self) -> int:
        return len(self._require_unlocked().values)

    def codes(self) -> List[TicCode]:
        contents = self._require_unlocked()
        return [TicCode(value=v, alphabet=self.alphabet) for v in contents.values]

    def pick(self, index: int = 0) -> TicCode:
        """Remove and return the code at `index` (0 = first issued).

        First-issued order is the default policy; an index drawn uniformly
        gives the anything-goes pick the protocol also permits.
        """
        contents = self._require_unlocked()
        if not contents.values:
            raise VaultEmpty("no unused codes remain in the vault")
        if not 0 <= index < len(contents.values):
            raise IndexError(f"pick index {index} out of range")
        value = contents.values.pop(index)
        self._reseal()
        return TicCode(value=value, alphabet=self.alphabet)

    def pick_next(self) -> TicCode:
        """Return the oldest unused code and retire it locally."""
        return self.pick(0)

    def change_password(self, old_password: str, new_password: str,
                        new_salt: Optional[bytes] = None) -> None:
        """Re-key the vault; the default new salt is derived so runs replay."""
        if self.locked:
            self.unlock(old_password)
        elif self._key != _vault_key(old_password, self.salt, self.iterations):
            raise IntegrityFailure("vault password rejected")
        if new_salt is None:
            new_salt = hashlib.sha256(b"vault-rotate|" + self.salt).digest()[:SALT_LEN]
        if len(new_salt) != SALT_LEN:
            raise ValueError(f"salt must be {SALT_LEN} bytes")
        self.salt = bytes(new_salt)
        self._key = _vault_key(new_password, self.salt, self.iterations)
        self._reseal()

    # -- persistence --------------------------------------------------------

    def to_bytes(self) -> bytes:
        out = bytearray()
        out += VAULT_MAGIC
        out.append(VAULT_VERSION)
        out += u64(self._seal_count)
        out += self.salt
        out += u32(self.iterations)
        out += str16(self.alphabet)
        out += str16(self._cipher_name)
        blob = self._sealed.to_bytes()
        out += u32(len(blob))
        out += blob
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "TicVault":
        reader = Reader(data)
        if reader.take(2) != VAULT_MAGIC:
            raise WireError("bad vault magic")
        if reader.u8() != VAULT_VERSION:
            raise WireError("unsupported vault version")
        seal_count = reader.u64()
        salt = reader.take(SALT_LEN)
        iterations = reader.u32()
        alphabet = reader.str16()
        cipher = reader.str16()
        blob_len = reader.u32()
        sealed = Ciphertext.from_bytes(reader.take(blob_len))
        reader.expect_end()
        return cls(
            salt=salt,
            iterations=iterations,
            alphabet=alphabet,
            sealed=sealed,
            seal_count=seal_count,
            cipher=cipher,
        )
