"""DNP3 decoder: data link + single-fragment transport + a small application subset.

Supported application functions are Read (0x01), Operate (0x04) and
Response (0x81). Objects decoded: group 30 (analog input), group 41
(analog output block) in every variation, and group 60 class polls.
"""

from __future__ import annotations

from struct import unpack_from
from typing import Optional

from .crc import crc_dnp3
from .records import Addr, FlowMeta, MalformedRecord, ParsedRecord, ProtocolId, Space

DNP3_PORT = 20000

FC_READ = 0x01
FC_OPERATE = 0x04
FC_RESPONSE = 0x81

# (group, variation) -> (size, struct format, value position)
OBJECT_LAYOUTS = {
    (30, 1): (5, "<Bi", 1),
    (30, 2): (3, "<Bh", 1),
    (30, 3): (4, "<i", 0),
    (30, 4): (2, "<h", 0),
    (30, 5): (5, "<Bf", 1),
    (30, 6): (9, "<Bd", 1),
    (41, 1): (5, "<iB", 0),
    (41, 2): (3, "<hB", 0),
    (41, 3): (5, "<fB", 0),
    (41, 4): (9, "<dB", 0),
}
NO_DATA_GROUPS = frozenset({60})

_DNP = Space.DNP3_GROUP_VAR


def frame_length(buf) -> Optional[int]:
    if len(buf) < 3:
        return None
    if buf[0] != 0x05 or buf[1] != 0x64:
        raise MalformedRecord("missing DNP3 start bytes")
    ln = buf[2]
    if ln < 5:
        raise MalformedRecord("DNP3 length below minimum")
    user = ln - 5
    return 10 + user + 2 * ((user + 15) // 16)


def unwrap_link(payload: bytes) -> bytes:
    """Validate link-layer CRCs and return the concatenated user data."""
    if len(payload) < 10 or payload[0] != 0x05 or payload[1] != 0x64:
        raise MalformedRecord("bad DNP3 link header")
    expected = frame_length(payload)
    if len(payload) != expected:
        raise MalformedRecord("DNP3 frame length mismatch")
    if crc_dnp3(payload[:8]) != unpack_from("<H", payload, 8)[0]:
        raise MalformedRecord("DNP3 header CRC failure")
    user = bytearray()
    pos = 10
    remaining = payload[2] - 5
    block = 0
    while remaining > 0:
        n = 16 if remaining > 16 else remaining
        chunk = payload[pos:pos + n]
        if crc_dnp3(chunk) != unpack_from("<H", payload, pos + n)[0]:
            raise MalformedRecord(f"DNP3 CRC failure in block {block}")
        user += chunk
        pos += n + 2
        remaining -= n
        block += 1
    return bytes(user)


def _read_range(data: bytes, pos: int, qualifier: int):
    """Decode an object header's range. Returns (indices or None, count, new pos, prefix size)."""
    prefix_code = (qualifier >> 4) & 0x07
    range_code = qualifier & 0x0F
    prefix = {0: 0, 1: 1, 2: 2, 3: 4}.get(prefix_code)
    if prefix is None:
        raise MalformedRecord(f"unsupported qualifier {qualifier:#x}")
    if range_code in (0, 1, 2):
        width = (1, 2, 4)[range_code]
        fmt = "<" + "BHI"[range_code] * 2
        if pos + 2 * width > len(data):
            raise MalformedRecord("truncated object range")
        start, stop = unpack_from(fmt, data, pos)
        if stop < start:
            raise MalformedRecord("object range stop < start")
        # range stays lazy: a fuzzed header can claim billions of points
        return range(start, stop + 1), stop - start + 1, pos + 2 * width, prefix
    if range_code == 6:
        return None, 0, pos, prefix
    if range_code in (7, 8, 9):
        width = (1, 2, 4)[range_code - 7]
        if pos + width > len(data):
            raise MalformedRecord("truncated object count")
        count = int.from_bytes(data[pos:pos + width], "little")
        return None, count, pos + width, prefix
    raise MalformedRecord(f"unsupported range code {range_code}")


class Dnp3Parser:
    protocol = ProtocolId.DNP3

    def __init__(self):
        self.unsupported = 0

    def parse(self, payload: bytes, meta: FlowMeta) -> ParsedRecord:
        user = unwrap_link(payload)
        if len(user) < 3:
            raise MalformedRecord("DNP3 fragment too short")
        th = user[0]
        if th & 0xC0 != 0xC0:
            raise MalformedRecord("multi-segment transport not supported")
        fc = user[2]
        pos = 3
        if fc in (0x81, 0x82):
            if len(user) < 5:
                raise MalformedRecord("response without IIN")
            pos = 5
        values = {}
        carries_data = fc in (FC_OPERATE, FC_RESPONSE)
        groups = set()
        if fc in (FC_READ, FC_OPERATE, FC_RESPONSE):
            self._objects(user, pos, carries_data, values, groups)
        if fc == FC_READ:
            msg = "ReadRequest"
        elif fc == FC_OPERATE:
            msg = "OperateRequest"
        elif fc == FC_RESPONSE:
            msg = "OperateResponse" if 41 in groups else "ReadResponse"
        else:
            msg = f"Unsupported({fc})"
        return ParsedRecord(meta.timestamp, meta.src, meta.dst, ProtocolId.DNP3,
                            msg, values, meta.raw_ref)

    def _objects(self, data, pos, carries_data, values, groups):
        end = len(data)
        while pos < end:
            if pos + 3 > end:
                raise MalformedRecord("truncated object header")
            group, var, qual = data[pos], data[pos + 1], data[pos + 2]
            indices, count, pos, prefix = _read_range(data, pos + 3, qual)
            groups.add(group)
            if not carries_data or group in NO_DATA_GROUPS:
                if prefix:
                    n = len(indices) if indices is not None else count
                    pos += n * prefix
                    if pos > end:
                        raise MalformedRecord("truncated index prefix")
                continue
            layout = OBJECT_LAYOUTS.get((group, var))
            if layout is None:
                # Size unknown: nothing after this header can be located.
                self.unsupported += 1
                return
            size, fmt, vpos = layout
            n = len(indices) if indices is not None else count
            if indices is None and prefix == 0:
                indices = range(n)
            for k in range(n):
                if prefix:
                    if pos + prefix > end:
                        raise MalformedRecord("truncated index prefix")
                    idx = int.from_bytes(data[pos:pos + prefix], "little")
                    pos += prefix
                else:
                    idx = indices[k]
                if pos + size > end:
                    raise MalformedRecord("truncated object data")
                addr = Addr(_DNP, group, idx)
                if addr in values:
                    raise MalformedRecord("duplicate DNP3 point in fragment")
                values[addr] = unpack_from(fmt, data, pos)[vpos]
                pos += size
