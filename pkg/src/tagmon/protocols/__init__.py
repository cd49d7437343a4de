"""Application-layer parsers producing uniform :class:`ParsedRecord` values."""

from __future__ import annotations

from typing import Callable, Dict, Iterator, Optional, Tuple

from . import c37118, dnp3, fmsg, modbus
from .c37118 import C37118Parser
from .dnp3 import Dnp3Parser
from .fmsg import FmsgParser
from .goose import GooseParser
from .modbus import ModbusParser
from .records import (Addr, FlowMeta, MalformedRecord, ParsedRecord, ProtocolId, Space,
                      valid_message_type)

__all__ = [
    "Addr", "FlowMeta", "MalformedRecord", "ParsedRecord", "ProtocolId", "Space",
    "ModbusParser", "Dnp3Parser", "C37118Parser", "GooseParser", "FmsgParser",
    "StreamFramer", "FRAMERS", "make_parsers", "valid_message_type",
]

FRAMERS: Dict[ProtocolId, Callable] = {
    ProtocolId.MODBUS_TCP: modbus.frame_length,
    ProtocolId.DNP3: dnp3.frame_length,
    ProtocolId.C37118: c37118.frame_length,
    ProtocolId.FMSG: fmsg.frame_length,
}


def make_parsers(modbus_ports=(modbus.MODBUS_PORT,)) -> Dict[ProtocolId, object]:
    return {
        ProtocolId.MODBUS_TCP: ModbusParser(modbus_ports),
        ProtocolId.DNP3: Dnp3Parser(),
        ProtocolId.C37118: C37118Parser(),
        ProtocolId.GOOSE: GooseParser(),
        ProtocolId.FMSG: FmsgParser(),
    }


class StreamFramer:
    """Cuts one direction of a reassembled TCP byte stream into messages."""

    __slots__ = ("length_of", "buf", "malformed")

    def __init__(self, length_of: Callable):
        self.length_of = length_of
        self.buf = b""
        self.malformed = 0

    def reset(self) -> None:
        self.buf = b""

    def feed(self, data: bytes) -> Iterator[bytes]:
        buf = self.buf + data if self.buf else data
        pos = 0
        n = len(buf)
        length_of = self.length_of
        while pos < n:
            try:
                size = length_of(buf[pos:pos + 6])
            except MalformedRecord:
                # No resync marker in these framings: drop the rest of the buffer.
                self.malformed += 1
                pos = n
                break
            if size is None or pos + size > n:
                break
            yield buf[pos:pos + size]
            pos += size
        self.buf = buf[pos:] if pos < n else b""
