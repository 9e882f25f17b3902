"""Binary codec for flakes: the atomic labeled datum of the relay protocol.

A flake is one scoped, labeled, typed value published by a node.  On the
wire each flake travels as a single framed packet:

    magic 0x4D 0x42 | version 0x01 | body_len u32 BE | body | crc32 u32 BE

The CRC-32 (IEEE polynomial, as in zlib) covers the body only.  Body field
order: scope, label, origin, class byte, seq u32, payload tag byte,
count u32, data.  Strings are u16-length-prefixed UTF-8.  All integers are
big-endian; vector and float payloads are IEEE-754 binary32.  The full bit
layout lives in docs/wire.md; the TypeScript client implements the same
format byte for byte.
"""

from __future__ import annotations

import struct
import zlib
from array import array
from dataclasses import dataclass, field
from enum import IntEnum

MAGIC = b"\x4d\x42"
VERSION = 0x01
HEADER_LEN = 7  # magic + version + body_len
FRAME_OVERHEAD = 11  # header + trailing crc32
MAX_STRING_BYTES = 0xFFFF


class WireError(Exception):
    """Base class for encode/decode failures."""


class OversizeString(WireError):
    """A scope/label/origin string exceeds 65535 encoded bytes."""


class InvalidText(WireError):
    """A TEXT payload or header string is not encodable as UTF-8."""


class DecodeError(WireError):
    """Base class for decode-side failures; subclasses are distinguishable."""


class BadMagic(DecodeError):
    pass


class UnsupportedVersion(DecodeError):
    pass


class LengthMismatch(DecodeError):
    pass


class CrcMismatch(DecodeError):
    pass


class MalformedPayload(DecodeError):
    pass


class PayloadTag(IntEnum):
    VEC3 = 0x01
    VEC4 = 0x02
    BYTES = 0x03
    FLOATS = 0x04
    INTS = 0x05
    TEXT = 0x06


class DeliveryClass(IntEnum):
    STATE = 0x00
    EVENT = 0x01


def f32(x: float) -> float:
    """Quantize a float to the nearest IEEE-754 binary32 value."""
    return struct.unpack(">f", struct.pack(">f", x))[0]


def _quantize_flat(values, width: int) -> tuple:
    flat = array("f")
    for v in values:
        if len(v) != width:
            raise ValueError(f"expected {width}-tuples, got {v!r}")
        flat.extend(v)
    if flat.itemsize != 4:  # pragma: no cover - array('f') is 4 bytes on CPython
        return tuple(tuple(f32(c) for c in v) for v in values)
    q = [f32(c) for c in flat]
    return tuple(tuple(q[i * width : (i + 1) * width]) for i in range(len(values)))


@dataclass(frozen=True)
class Payload:
    """Typed homogeneous payload.  Float data is quantized to binary32 at
    construction so that any constructible payload round-trips bit-exactly."""

    tag: PayloadTag
    data: tuple | bytes | str

    def __post_init__(self) -> None:
        tag = PayloadTag(self.tag)
        object.__setattr__(self, "tag", tag)
        data = self.data
        if tag in (PayloadTag.VEC3, PayloadTag.VEC4):
            width = 3 if tag is PayloadTag.VEC3 else 4
            data = _quantize_flat(tuple(tuple(v) for v in data), width)
        elif tag is PayloadTag.FLOATS:
            data = tuple(f32(v) for v in data)
        elif tag is PayloadTag.INTS:
            data = tuple(int(v) for v in data)
            for v in data:
                if not -(2**31) <= v < 2**31:
                    raise ValueError(f"INTS element out of signed 32-bit range: {v}")
        elif tag is PayloadTag.BYTES:
            if not isinstance(data, (bytes, bytearray)):
                raise ValueError("BYTES payload requires bytes data")
            data = bytes(data)
        elif tag is PayloadTag.TEXT:
            if not isinstance(data, str):
                raise ValueError("TEXT payload requires str data")
        object.__setattr__(self, "data", data)

    @property
    def count(self) -> int:
        """Element count as carried on the wire (octet count for BYTES/TEXT)."""
        if self.tag is PayloadTag.BYTES:
            return len(self.data)
        if self.tag is PayloadTag.TEXT:
            return len(self.data.encode("utf-8"))
        return len(self.data)

    @classmethod
    def vec3s(cls, vecs) -> "Payload":
        return cls(PayloadTag.VEC3, tuple(tuple(v) for v in vecs))

    @classmethod
    def vec4s(cls, vecs) -> "Payload":
        return cls(PayloadTag.VEC4, tuple(tuple(v) for v in vecs))

    @classmethod
    def floats(cls, vals) -> "Payload":
        return cls(PayloadTag.FLOATS, tuple(vals))

    @classmethod
    def ints(cls, vals) -> "Payload":
        return cls(PayloadTag.INTS, tuple(vals))

    @classmethod
    def raw(cls, data: bytes) -> "Payload":
        return cls(PayloadTag.BYTES, bytes(data))

    @classmethod
    def text(cls, s: str) -> "Payload":
        return cls(PayloadTag.TEXT, s)


@dataclass(frozen=True)
class Flake:
    """One labeled datum: scope + label + origin + delivery class + payload.

    ``seq`` is a per-origin monotone u32 maintained by the emitter; the relay
    uses it for stale-state and duplicate detection.
    """

    scope: str
    label: str
    origin: str
    delivery: DeliveryClass
    seq: int
    payload: Payload = field(default_factory=lambda: Payload.raw(b""))

    def __post_init__(self) -> None:
        object.__setattr__(self, "delivery", DeliveryClass(self.delivery))
        for name in ("scope", "label", "origin"):
            v = getattr(self, name)
            if not isinstance(v, str) or not v:
                raise ValueError(f"{name} must be a nonempty string")
        if not 0 <= self.seq < 2**32:
            raise ValueError("seq must fit an unsigned 32-bit integer")


def _encode_str(s: str, what: str) -> bytes:
    try:
        raw = s.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise InvalidText(f"{what} is not valid UTF-8: {exc}") from exc
    if len(raw) > MAX_STRING_BYTES:
        raise OversizeString(f"{what} exceeds {MAX_STRING_BYTES} encoded bytes")
    return struct.pack(">H", len(raw)) + raw


def _encode_payload(p: Payload) -> bytes:
    tag = p.tag
    if tag in (PayloadTag.VEC3, PayloadTag.VEC4):
        width = 3 if tag is PayloadTag.VEC3 else 4
        flat = [c for v in p.data for c in v]
        body = struct.pack(f">{len(flat)}f", *flat) if flat else b""
    elif tag is PayloadTag.FLOATS:
        body = struct.pack(f">{len(p.data)}f", *p.data) if p.data else b""
    elif tag is PayloadTag.INTS:
        body = struct.pack(f">{len(p.data)}i", *p.data) if p.data else b""
    elif tag is PayloadTag.BYTES:
        body = p.data
    else:  # TEXT
        try:
            body = p.data.encode("utf-8")
        except UnicodeEncodeError as exc:
            raise InvalidText(f"TEXT payload is not valid UTF-8: {exc}") from exc
    return struct.pack(">BI", tag, p.count) + body


def encode_flake(f: Flake) -> bytes:
    """Encode a flake as one framed packet.  Deterministic: identical flakes
    produce identical bytes."""
    body = (
        _encode_str(f.scope, "scope")
        + _encode_str(f.label, "label")
        + _encode_str(f.origin, "origin")
        + struct.pack(">BI", f.delivery, f.seq)
        + _encode_payload(f.payload)
    )
    crc = zlib.crc32(body) & 0xFFFFFFFF
    return MAGIC + struct.pack(">BI", VERSION, len(body)) + body + struct.pack(">I", crc)


def _read_str(body: bytes, off: int, what: str) -> tuple[str, int]:
    if off + 2 > len(body):
        raise MalformedPayload(f"truncated {what} length")
    (n,) = struct.unpack_from(">H", body, off)
    off += 2
    if off + n > len(body):
        raise MalformedPayload(f"truncated {what}")
    try:
        s = body[off : off + n].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedPayload(f"{what} is not valid UTF-8") from exc
    if not s:
        raise MalformedPayload(f"empty {what}")
    return s, off + n


_ELEM_SIZE = {
    PayloadTag.VEC3: 12,
    PayloadTag.VEC4: 16,
    PayloadTag.BYTES: 1,
    PayloadTag.FLOATS: 4,
    PayloadTag.INTS: 4,
    PayloadTag.TEXT: 1,
}


def _decode_payload(body: bytes, off: int) -> Payload:
    if off + 5 > len(body):
        raise MalformedPayload("truncated payload header")
    tag_byte, count = struct.unpack_from(">BI", body, off)
    off += 5
    try:
        tag = PayloadTag(tag_byte)
    except ValueError:
        raise MalformedPayload(f"unknown payload tag 0x{tag_byte:02x}") from None
    expected = _ELEM_SIZE[tag] * count
    data = body[off:]
    if len(data) != expected:
        raise MalformedPayload(
            f"payload data length {len(data)} != {expected} for tag {tag.name} count {count}"
        )
    if tag is PayloadTag.VEC3:
        flat = struct.unpack(f">{count * 3}f", data) if count else ()
        return Payload(tag, tuple(flat[i * 3 : i * 3 + 3] for i in range(count)))
    if tag is PayloadTag.VEC4:
        flat = struct.unpack(f">{count * 4}f", data) if count else ()
        return Payload(tag, tuple(flat[i * 4 : i * 4 + 4] for i in range(count)))
    if tag is PayloadTag.FLOATS:
        return Payload(tag, struct.unpack(f">{count}f", data) if count else ())
    if tag is PayloadTag.INTS:
        return Payload(tag, struct.unpack(f">{count}i", data) if count else ())
    if tag is PayloadTag.BYTES:
        return Payload(tag, data)
    try:
        return Payload(tag, data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise MalformedPayload("TEXT payload is not valid UTF-8") from exc


def decode_flake(packet: bytes) -> Flake:
    """Decode exactly one framed packet.  Total over arbitrary byte input:
    never raises anything but a DecodeError subclass."""
    packet = bytes(packet)
    if packet[: len(MAGIC)] != MAGIC[: min(len(packet), len(MAGIC))]:
        raise BadMagic(f"bad magic {packet[:2]!r}")
    if len(packet) < 3:
        raise LengthMismatch("packet shorter than fixed header")
    if packet[2] != VERSION:
        raise UnsupportedVersion(f"unsupported version 0x{packet[2]:02x}")
    if len(packet) < FRAME_OVERHEAD:
        raise LengthMismatch("packet shorter than framing overhead")
    (body_len,) = struct.unpack_from(">I", packet, 3)
    if len(packet) != FRAME_OVERHEAD + body_len:
        raise LengthMismatch(
            f"packet length {len(packet)} != {FRAME_OVERHEAD + body_len} implied by header"
        )
    body = packet[HEADER_LEN : HEADER_LEN + body_len]
    (crc,) = struct.unpack_from(">I", packet, HEADER_LEN + body_len)
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CrcMismatch("crc32 mismatch over body")
    scope, off = _read_str(body, 0, "scope")
    label, off = _read_str(body, off, "label")
    origin, off = _read_str(body, off, "origin")
    if off + 5 > len(body):
        raise MalformedPayload("truncated class/seq")
    cls_byte, seq = struct.unpack_from(">BI", body, off)
    off += 5
    try:
        delivery = DeliveryClass(cls_byte)
    except ValueError:
        raise MalformedPayload(f"unknown delivery class 0x{cls_byte:02x}") from None
    payload = _decode_payload(body, off)
    return Flake(scope, label, origin, delivery, seq, payload)


def split_stream(buffer: bytes) -> tuple[list[bytes], bytes]:
    """Split a byte stream into complete packets plus the unconsumed suffix.

    Concatenating the returned packets with the remainder reproduces the
    input.  Raises BadMagic if the bytes at a packet boundary cannot be the
    start of a packet (stream desync; the connection must be dropped).
    """
    buffer = bytes(buffer)
    packets: list[bytes] = []
    off = 0
    n = len(buffer)
    while True:
        avail = n - off
        if avail == 0:
            break
        head = buffer[off : off + len(MAGIC)]
        if head != MAGIC[: len(head)]:
            raise BadMagic(f"stream desync at offset {off}: {head!r}")
        if avail < HEADER_LEN:
            break
        (body_len,) = struct.unpack_from(">I", buffer, off + 3)
        total = FRAME_OVERHEAD + body_len
        if avail < total:
            break
        packets.append(buffer[off : off + total])
        off += total
    return packets, buffer[off:]


class StreamDecoder:
    """Incremental wrapper over split_stream for connection read loops."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._buf.extend(data)
        packets, rest = split_stream(bytes(self._buf))
        self._buf = bytearray(rest)
        return packets

    @property
    def pending(self) -> int:
        return len(self._buf)
