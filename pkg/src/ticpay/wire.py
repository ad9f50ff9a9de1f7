"""Canonical wire formats: envelopes, body field maps, ciphertext containers.

Everything that crosses a simulated channel serializes through this
module. The encoding is canonical — field tags strictly ascending,
exact length prefixes, no trailing bytes — so byte comparison is
meaningful and any single-bit change either fails to parse or parses
to a different value. Parsers reject non-canonical input outright.

Layouts:
  envelope   := magic(2) version(1) channel(1) str16(sender)
                str16(receiver) str16(msg_type) str16(cookie)
                str16(request_id) u32(body_len) body
  body       := repeat( u16(tag) u32(len) value ), tags strictly ascending
  ciphertext := key_role(1) nonce(12) u32(body_len) body tag(16)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Dict, Optional

from .errors import WireError

MAGIC = b"WP"
VERSION = 1

NONCE_LEN = 12
TAG_LEN = 16


class Channel(IntEnum):
    WEB = 1
    SMS = 2
    INTERBANK = 3


#: The SMS bearer is treated as encrypted by the carrier; adversary rules
#: are still allowed on it so that assumption can be tested explicitly.
ASSUMED_ENCRYPTED_CHANNELS = frozenset({Channel.SMS})


class KeyRole(IntEnum):
    """Which key family a ciphertext was produced under."""

    TIC_KEYED = 1
    SESSION_KEYED = 2
    PIN_WRAPPED = 3
    VAULT_KEYED = 4
    BANK_NET_KEYED = 5


class F(IntEnum):
    """Body field tags. Wire order is numeric order."""

    STATUS = 0x0001
    REASON = 0x0002
    USERNAME = 0x0003
    PASSWORD = 0x0004
    COOKIE = 0x0005
    WRAPPED_KEY = 0x0006
    WELCOME = 0x0007
    MODE = 0x0008
    ENC_TIC = 0x0009
    ENC_ORDER = 0x000A
    TXN_ID = 0x000B
    AMOUNT = 0x000C
    DECISION = 0x000D
    RESULT = 0x000E
    VAULT = 0x000F
    ACCOUNT_REF = 0x0010
    INVOICE_NUMBER = 0x0011
    MERCHANT_ID = 0x0012
    MERCHANT_BANK_ID = 0x0013
    CERT = 0x0014
    ENC_MERCHANT_INFO = 0x0015
    VERDICT = 0x0016
    CUSTOMER_REF = 0x0017
    NOTICE_ID = 0x0018
    CART_TOTAL = 0x0019
    CELL = 0x001A


#: Tags whose values are non-secret and may appear verbatim in trace exports.
EXPORTABLE_TAGS = frozenset(
    {
        F.STATUS,
        F.REASON,
        F.USERNAME,
        F.WELCOME,
        F.MODE,
        F.TXN_ID,
        F.AMOUNT,
        F.DECISION,
        F.RESULT,
        F.ACCOUNT_REF,
        F.INVOICE_NUMBER,
        F.MERCHANT_ID,
        F.MERCHANT_BANK_ID,
        F.VERDICT,
        F.CUSTOMER_REF,
        F.NOTICE_ID,
        F.CART_TOTAL,
        F.CELL,
        F.COOKIE,
    }
)


class Reader:
    """Bounds-checked cursor over immutable bytes."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise WireError(f"truncated input: wanted {n} bytes at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def str16(self) -> str:
        raw = self.take(self.u16())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WireError("invalid utf-8 in string field") from exc

    def expect_end(self) -> None:
        if self.pos != len(self.data):
            raise WireError(f"{len(self.data) - self.pos} trailing bytes")


def u16(value: int) -> bytes:
    return struct.pack(">H", value)


def u32(value: int) -> bytes:
    return struct.pack(">I", value)


def u64(value: int) -> bytes:
    return struct.pack(">Q", value)


def str16(value: str) -> bytes:
    raw = value.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise WireError("string field exceeds 65535 bytes")
    return u16(len(raw)) + raw


def encode_fields(fields: Dict[int, bytes]) -> bytes:
    """Canonical body: (tag, len, value) triples sorted by tag."""
    out = bytearray()
    for tag in sorted(fields):
        value = fields[tag]
        if not 0 <= tag <= 0xFFFF:
            raise WireError(f"field tag {tag} out of range")
        out += u16(tag) + u32(len(value)) + value
    return bytes(out)


def decode_fields(data: bytes) -> Dict[int, bytes]:
    """Strict inverse of encode_fields; rejects unordered or duplicate tags."""
    reader = Reader(data)
    fields: Dict[int, bytes] = {}
    last_tag = -1
    while reader.pos < len(data):
        tag = reader.u16()
        if tag <= last_tag:
            raise WireError(f"field tag {tag} out of canonical order")
        last_tag = tag
        fields[tag] = reader.take(reader.u32())
    return fields


@dataclass(frozen=True)
class Ciphertext:
    """Authenticated ciphertext with its key-role discriminator."""

    role: KeyRole
    nonce: bytes
    body: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        if len(self.nonce) != NONCE_LEN or len(self.tag) != TAG_LEN:
            raise WireError("ciphertext nonce/tag length wrong")
        return (
            bytes([self.role]) + self.nonce + u32(len(self.body)) + self.body + self.tag
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ciphertext":
        reader = Reader(data)
        role_byte = reader.u8()
        try:
            role = KeyRole(role_byte)
        except ValueError as exc:
            raise WireError(f"unknown key role {role_byte}") from exc
        nonce = reader.take(NONCE_LEN)
        body = reader.take(reader.u32())
        tag = reader.take(TAG_LEN)
        reader.expect_end()
        return cls(role=role, nonce=nonce, body=body, tag=tag)


@dataclass
class Envelope:
    """One message on a simulated channel.

    `seq` and `delivered_at` are assigned by the bus at delivery time and
    are trace metadata, not part of the sender's wire bytes.
    """

    sender: str
    receiver: str
    channel: Channel
    msg_type: str
    body: Dict[int, bytes] = field(default_factory=dict)
    cookie: str = ""
    request_id: str = ""
    seq: Optional[int] = None
    delivered_at: Optional[int] = None

    def to_bytes(self) -> bytes:
        body = encode_fields(self.body)
        return (
            MAGIC
            + bytes([VERSION, self.channel])
            + str16(self.sender)
            + str16(self.receiver)
            + str16(self.msg_type)
            + str16(self.cookie)
            + str16(self.request_id)
            + u32(len(body))
            + body
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Envelope":
        reader = Reader(data)
        if reader.take(2) != MAGIC:
            raise WireError("bad envelope magic")
        version = reader.u8()
        if version != VERSION:
            raise WireError(f"unsupported envelope version {version}")
        channel_byte = reader.u8()
        try:
            channel = Channel(channel_byte)
        except ValueError as exc:
            raise WireError(f"unknown channel {channel_byte}") from exc
        sender = reader.str16()
        receiver = reader.str16()
        msg_type = reader.str16()
        cookie = reader.str16()
        request_id = reader.str16()
        body = decode_fields(reader.take(reader.u32()))
        reader.expect_end()
        return cls(
            sender=sender,
            receiver=receiver,
            channel=channel,
            msg_type=msg_type,
            body=body,
            cookie=cookie,
            request_id=request_id,
        )

    def body_offset(self) -> int:
        """Offset of the first body byte within to_bytes() output."""
        return (
            2  # magic
            + 2  # version + channel
            + 2 + len(self.sender.encode("utf-8"))
            + 2 + len(self.receiver.encode("utf-8"))
            + 2 + len(self.msg_type.encode("utf-8"))
            + 2 + len(self.cookie.encode("utf-8"))
            + 2 + len(self.request_id.encode("utf-8"))
            + 4  # body length prefix
        )

    def with_body(self, body: Dict[int, bytes]) -> "Envelope":
        return replace(self, body=dict(body))


@dataclass(frozen=True)
class Header:
    """Routing view of an envelope: header fields plus undecoded body bytes.

    The bus routes on this so a message with a corrupted body still reaches
    its receiver, where the strict decoder gets to reject it.
    """

    sender: str
    receiver: str
    channel: Channel
    msg_type: str
    cookie: str
    request_id: str
    raw_body: bytes


def peek_header(data: bytes) -> Header:
    reader = Reader(data)
    if reader.take(2) != MAGIC:
        raise WireError("bad envelope magic")
    version = reader.u8()
    if version != VERSION:
        raise WireError(f"unsupported envelope version {version}")
    channel_byte = reader.u8()
    try:
        channel = Channel(channel_byte)
    except ValueError as exc:
        raise WireError(f"unknown channel {channel_byte}") from exc
    sender = reader.str16()
    receiver = reader.str16()
    msg_type = reader.str16()
    cookie = reader.str16()
    request_id = reader.str16()
    raw_body = reader.take(reader.u32())
    reader.expect_end()
    return Header(
        sender=sender,
        receiver=receiver,
        channel=channel,
        msg_type=msg_type,
        cookie=cookie,
        request_id=request_id,
        raw_body=raw_body,
    )
