"""Fast-message framing: an open stand-in for vendor unsolicited register writes.

Wire layout (big-endian)::

    A5 46 | count:u8 | count x (address:u16, type:u8, value:4 bytes) | checksum:u16

type 0 is int32, type 1 is float32. The checksum is the 16-bit sum of all
preceding bytes.
"""

from __future__ import annotations

from struct import unpack_from
from typing import Optional

from .crc import additive16
from .records import Addr, FlowMeta, MalformedRecord, ParsedRecord, ProtocolId, Space

MAGIC = b"\xA5\x46"
DEFAULT_PORT = 5010
TYPE_INT32 = 0
TYPE_FLOAT32 = 1

_REG = Space.FMSG_REGISTER


def frame_length(buf) -> Optional[int]:
    if len(buf) < 3:
        return None
    if buf[0] != 0xA5 or buf[1] != 0x46:
        raise MalformedRecord("bad FMSG magic")
    return 5 + 7 * buf[2]


class FmsgParser:
    protocol = ProtocolId.FMSG

    def parse(self, payload: bytes, meta: FlowMeta) -> ParsedRecord:
        if len(payload) < 5 or payload[:2] != MAGIC:
            raise MalformedRecord("bad FMSG magic")
        count = payload[2]
        if len(payload) != 5 + 7 * count:
            raise MalformedRecord("FMSG length mismatch")
        if additive16(payload[:-2]) != unpack_from(">H", payload, len(payload) - 2)[0]:
            raise MalformedRecord("FMSG checksum failure")
        values = {}
        pos = 3
        for _ in range(count):
            addr, typ = unpack_from(">HB", payload, pos)
            if typ == TYPE_INT32:
                v = unpack_from(">i", payload, pos + 3)[0]
            elif typ == TYPE_FLOAT32:
                v = unpack_from(">f", payload, pos + 3)[0]
            else:
                raise MalformedRecord(f"FMSG value type {typ}")
            key = Addr(_REG, addr)
            if key in values:
                raise MalformedRecord("duplicate FMSG register")
            values[key] = v
            pos += 7
        return ParsedRecord(meta.timestamp, meta.src, meta.dst, ProtocolId.FMSG,
                            "UnsolicitedWrite", values, meta.raw_ref)
