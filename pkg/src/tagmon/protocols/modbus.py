"""Modbus/TCP decoder for the register functions used by the substation."""

from __future__ import annotations

from collections import OrderedDict
from struct import unpack_from
from typing import Optional

from .records import Addr, FlowMeta, MalformedRecord, ParsedRecord, ProtocolId, Space

MODBUS_PORT = 502
_PENDING_LIMIT = 4096

_HOLD = Space.MODBUS_HOLDING


def frame_length(buf) -> Optional[int]:
    """Size of the MBAP-framed message at the start of ``buf``, None if short."""
    if len(buf) < 6:
        return None
    proto, length = unpack_from(">HH", buf, 2)
    if proto != 0 or length < 2 or length > 254:
        raise MalformedRecord("bad MBAP header")
    return 6 + length


class ModbusParser:
    """Stateful only in remembering read requests to place response registers."""

    protocol = ProtocolId.MODBUS_TCP

    def __init__(self, server_ports=(MODBUS_PORT,)):
        self.server_ports = frozenset(server_ports)
        self._pending: "OrderedDict[tuple, int]" = OrderedDict()
        self.unmatched_responses = 0

    def parse(self, payload: bytes, meta: FlowMeta) -> ParsedRecord:
        if len(payload) < 8:
            raise MalformedRecord("short Modbus frame")
        txn, proto, length, unit, fc = unpack_from(">HHHBB", payload, 0)
        if proto != 0:
            raise MalformedRecord(f"MBAP protocol id {proto}")
        if len(payload) != 6 + length:
            raise MalformedRecord(f"MBAP length {length} vs {len(payload) - 6} present")
        is_request = meta.dst_port in self.server_ports or (
            meta.src_port not in self.server_ports and meta.dst_port is None
        )
        values = {}
        pdu_len = length - 2  # bytes after function code
        if fc & 0x80:
            if pdu_len != 1:
                raise MalformedRecord("bad exception PDU")
            msg = "ExceptionResponse"
            self._pending.pop((meta.dst, meta.src, txn, unit), None)
        elif fc == 0x03:
            if is_request:
                if pdu_len != 4:
                    raise MalformedRecord("bad read request PDU")
                start, qty = unpack_from(">HH", payload, 8)
                if not 1 <= qty <= 125:
                    raise MalformedRecord(f"register quantity {qty}")
                values[Addr(_HOLD, start)] = qty
                key = (meta.src, meta.dst, txn, unit)
                self._pending[key] = start
                if len(self._pending) > _PENDING_LIMIT:
                    self._pending.popitem(last=False)
                msg = "ReadHoldingRegistersRequest"
            else:
                if pdu_len < 1:
                    raise MalformedRecord("bad read response PDU")
                count = payload[8]
                if count != pdu_len - 1 or count % 2:
                    raise MalformedRecord("read response byte count mismatch")
                start = self._pending.pop((meta.dst, meta.src, txn, unit), None)
                if start is None:
                    self.unmatched_responses += 1
                    start = 0
                regs = unpack_from(f">{count // 2}H", payload, 9)
                for i, reg in enumerate(regs):
                    values[Addr(_HOLD, start + i)] = reg
                msg = "ReadHoldingRegistersResponse"
        elif fc == 0x06:
            if pdu_len != 4:
                raise MalformedRecord("bad write single register PDU")
            addr, value = unpack_from(">HH", payload, 8)
            values[Addr(_HOLD, addr)] = value
            msg = "WriteSingleRegisterRequest" if is_request else "WriteSingleRegisterResponse"
        else:
            msg = f"Unsupported({fc})"
        return ParsedRecord(meta.timestamp, meta.src, meta.dst, ProtocolId.MODBUS_TCP,
                            msg, values, meta.raw_ref)
