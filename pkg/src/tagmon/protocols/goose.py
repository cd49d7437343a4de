"""IEC 61850 GOOSE decoder for a flat dataset subset (boolean, float32, int32)."""

from __future__ import annotations

from struct import unpack_from

from .records import (GOOSE_SQNUM, GOOSE_STNUM, Addr, FlowMeta, MalformedRecord,
                      ParsedRecord, ProtocolId, Space)

GOOSE_ETHERTYPE = 0x88B8

TAG_PDU = 0x61
TAG_GOCBREF = 0x80
TAG_STNUM = 0x85
TAG_SQNUM = 0x86
TAG_ALLDATA = 0xAB
# Header fields that are accepted and skipped.
_SKIPPED = frozenset({0x81, 0x82, 0x83, 0x84, 0x87, 0x88, 0x89, 0x8A})

DATA_BOOLEAN = 0x83
DATA_INTEGER = 0x85
DATA_FLOAT = 0x87

_GDS = Space.GOOSE_DATASET


def read_tlv(buf, pos: int, end: int):
    """Return (tag, value_start, value_end). Only definite lengths up to 2 bytes."""
    if pos + 2 > end:
        raise MalformedRecord("truncated BER element")
    tag = buf[pos]
    if tag & 0x1F == 0x1F:
        raise MalformedRecord("multi-byte BER tags not supported")
    ln = buf[pos + 1]
    pos += 2
    if ln & 0x80:
        nb = ln & 0x7F
        if nb == 0 or nb > 2 or pos + nb > end:
            raise MalformedRecord("unsupported BER length form")
        ln = int.from_bytes(buf[pos:pos + nb], "big")
        pos += nb
    if pos + ln > end:
        raise MalformedRecord("BER element overruns container")
    return tag, pos, pos + ln


def _unsigned(buf, start, end):
    if end - start < 1 or end - start > 5:
        raise MalformedRecord("bad integer width")
    return int.from_bytes(buf[start:end], "big", signed=False)


def decode_data(buf, start: int, end: int, values: dict) -> None:
    pos = start
    i = 0
    while pos < end:
        tag, vs, ve = read_tlv(buf, pos, end)
        n = ve - vs
        if tag == DATA_BOOLEAN:
            if n != 1:
                raise MalformedRecord("bad boolean")
            v = buf[vs] != 0
        elif tag == DATA_INTEGER:
            if not 1 <= n <= 4:
                raise MalformedRecord("integer wider than 32 bits")
            v = int.from_bytes(buf[vs:ve], "big", signed=True)
        elif tag == DATA_FLOAT:
            if n != 5 or buf[vs] != 0x08:
                raise MalformedRecord("only 32-bit floats supported")
            v = unpack_from(">f", buf, vs + 1)[0]
        else:
            raise MalformedRecord(f"data element {tag:#x} outside supported subset")
        values[Addr(_GDS, i)] = v
        i += 1
        pos = ve


class GooseParser:
    protocol = ProtocolId.GOOSE

    def parse(self, payload: bytes, meta: FlowMeta) -> ParsedRecord:
        """``payload`` starts at the APPID field (after the ethertype)."""
        if len(payload) < 10:
            raise MalformedRecord("short GOOSE frame")
        length = unpack_from(">H", payload, 2)[0]
        if length < 10 or length > len(payload):
            raise MalformedRecord("GOOSE length field mismatch")
        tag, ps, pe = read_tlv(payload, 8, length)
        if tag != TAG_PDU:
            raise MalformedRecord("missing goosePdu")
        values = {}
        seen = set()
        pos = ps
        while pos < pe:
            tag, vs, ve = read_tlv(payload, pos, pe)
            if tag in seen:
                raise MalformedRecord(f"repeated goosePdu field {tag:#x}")
            seen.add(tag)
            if tag == TAG_STNUM:
                values[Addr(_GDS, GOOSE_STNUM)] = _unsigned(payload, vs, ve)
            elif tag == TAG_SQNUM:
                values[Addr(_GDS, GOOSE_SQNUM)] = _unsigned(payload, vs, ve)
            elif tag == TAG_ALLDATA:
                decode_data(payload, vs, ve, values)
            elif tag != TAG_GOCBREF and tag not in _SKIPPED:
                raise MalformedRecord(f"goosePdu field {tag:#x} outside supported subset")
            pos = ve
        if not {TAG_GOCBREF, TAG_STNUM, TAG_SQNUM, TAG_ALLDATA} <= seen:
            raise MalformedRecord("goosePdu missing required fields")
        return ParsedRecord(meta.timestamp, meta.src, meta.dst, ProtocolId.GOOSE,
                            "GooseMulticast", values, meta.raw_ref)
