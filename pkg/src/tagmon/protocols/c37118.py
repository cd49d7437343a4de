"""IEEE C37.118.2 data and configuration-2 frame decoder."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from struct import unpack_from
from typing import Dict, List, Optional, Tuple

from .crc import crc_ccitt
from .records import (C37_DFREQ, C37_FREQ, C37_STAT, Addr, FlowMeta, MalformedRecord,
                      ParsedRecord, ProtocolId, Space)

C37_PORTS = (4712, 4713)

FRAME_DATA = 0
FRAME_CFG2 = 3

FMT_POLAR = 0x1
FMT_PH_FLOAT = 0x2
FMT_AN_FLOAT = 0x4
FMT_FREQ_FLOAT = 0x8


def frame_length(buf) -> Optional[int]:
    if len(buf) < 4:
        return None
    if buf[0] != 0xAA:
        raise MalformedRecord("missing C37.118 sync byte")
    size = unpack_from(">H", buf, 2)[0]
    if size < 16:
        raise MalformedRecord("C37.118 frame size below minimum")
    return size


@dataclass
class PmuLayout:
    station: str
    idcode: int
    fmt: int
    phnmr: int
    annmr: int
    dgnmr: int
    phunit: Tuple[float, ...]
    fnom: float
    codec: struct.Struct = None

    def __post_init__(self):
        ph = ("ff" if self.fmt & FMT_PH_FLOAT else ("Hh" if self.fmt & FMT_POLAR else "hh"))
        fr = "ff" if self.fmt & FMT_FREQ_FLOAT else "hh"
        an = "f" if self.fmt & FMT_AN_FLOAT else "h"
        self.codec = struct.Struct(">H" + ph * self.phnmr + fr + an * self.annmr + "H" * self.dgnmr)
        self._keys = {}

    def keys(self, sub):
        """Value addresses of one data block, built once per sub-index."""
        k = self._keys.get(sub)
        if k is None:
            k = self._keys[sub] = (
                Addr(Space.C37118_DIGITAL, C37_STAT, sub),
                tuple(Addr(Space.C37118_PHASOR, p, sub) for p in range(self.phnmr)),
                Addr(Space.C37118_ANALOG, C37_FREQ, sub),
                Addr(Space.C37118_ANALOG, C37_DFREQ, sub),
                tuple(Addr(Space.C37118_ANALOG, a, sub) for a in range(self.annmr)),
                tuple(Addr(Space.C37118_DIGITAL, d, sub) for d in range(self.dgnmr)),
            )
        return k


@dataclass
class StreamConfig:
    time_base: int
    pmus: List[PmuLayout]
    data_rate: int

    @property
    def data_size(self) -> int:
        return 16 + sum(p.codec.size for p in self.pmus)


def parse_config2(body: bytes) -> StreamConfig:
    """Decode the payload of a CFG-2 frame (after the 14-byte common header)."""
    try:
        time_base, num_pmu = unpack_from(">IH", body, 0)
        pos = 6
        pmus = []
        for _ in range(num_pmu):
            station = body[pos:pos + 16].decode("ascii", "replace").rstrip()
            idcode, fmt, phnmr, annmr, dgnmr = unpack_from(">HHHHH", body, pos + 16)
            pos += 26
            pos += 16 * (phnmr + annmr + 16 * dgnmr)
            units = unpack_from(f">{phnmr}I", body, pos)
            pos += 4 * phnmr + 4 * annmr + 4 * dgnmr
            fnom_code, _cfgcnt = unpack_from(">HH", body, pos)
            pos += 4
            phunit = tuple((u & 0xFFFFFF) * 1e-5 for u in units)
            pmus.append(PmuLayout(station, idcode, fmt & 0xF, phnmr, annmr, dgnmr,
                                  phunit, 50.0 if fnom_code & 1 else 60.0))
        (data_rate,) = unpack_from(">h", body, pos)
        pos += 2
    except struct.error as exc:
        raise MalformedRecord(f"truncated CFG-2: {exc}") from None
    if pos != len(body):
        raise MalformedRecord("CFG-2 trailing bytes")
    if num_pmu == 0:
        raise MalformedRecord("CFG-2 with no PMU blocks")
    return StreamConfig(time_base & 0xFFFFFF, pmus, data_rate)


class C37118Parser:
    protocol = ProtocolId.C37118

    def __init__(self):
        self.streams: Dict[Tuple[str, int], StreamConfig] = {}

    def parse(self, payload: bytes, meta: FlowMeta) -> ParsedRecord:
        n = len(payload)
        if n < 16 or payload[0] != 0xAA:
            raise MalformedRecord("not a C37.118 frame")
        size, idcode = unpack_from(">HH", payload, 2)
        if size != n:
            raise MalformedRecord("C37.118 frame size mismatch")
        if crc_ccitt(payload[:-2]) != unpack_from(">H", payload, n - 2)[0]:
            raise MalformedRecord("C37.118 CRC failure")
        ftype = (payload[1] >> 4) & 0x7
        key = (meta.src, idcode)
        if ftype == FRAME_CFG2:
            self.streams[key] = parse_config2(payload[14:-2])
            return ParsedRecord(meta.timestamp, meta.src, meta.dst, ProtocolId.C37118,
                                "ConfigFrame2", {}, meta.raw_ref)
        if ftype != FRAME_DATA:
            raise MalformedRecord(f"unsupported C37.118 frame type {ftype}")
        cfg = self.streams.get(key)
        if cfg is None:
            return ParsedRecord(meta.timestamp, meta.src, meta.dst, ProtocolId.C37118,
                                "UndecodableData", {}, meta.raw_ref)
        if cfg.data_size != n:
            raise MalformedRecord("data frame size disagrees with configuration")
        values = {}
        pos = 14
        multi = len(cfg.pmus) > 1
        for k, pmu in enumerate(cfg.pmus):
            sub = k if multi else None
            fields = pmu.codec.unpack_from(payload, pos)
            pos += pmu.codec.size
            self._decode_block(pmu, fields, sub, values)
        return ParsedRecord(meta.timestamp, meta.src, meta.dst, ProtocolId.C37118,
                            "DataFrame", values, meta.raw_ref)

    @staticmethod
    def _decode_block(pmu: PmuLayout, f, sub, values):
        stat_key, ph_keys, freq_key, dfreq_key, an_keys, dg_keys = pmu.keys(sub)
        values[stat_key] = f[0]
        i = 1
        fmt = pmu.fmt
        for p, key in enumerate(ph_keys):
            a, b = f[i], f[i + 1]
            i += 2
            if not fmt & FMT_PH_FLOAT:
                if fmt & FMT_POLAR:
                    a, b = a * pmu.phunit[p], b * 1e-4
                else:
                    a, b = a * pmu.phunit[p], b * pmu.phunit[p]
            values[key] = (a, b)
        freq, dfreq = f[i], f[i + 1]
        i += 2
        if not fmt & FMT_FREQ_FLOAT:
            freq = pmu.fnom + freq / 1000.0
            dfreq = dfreq / 100.0
        values[freq_key] = freq
        values[dfreq_key] = dfreq
        for key in an_keys:
            values[key] = f[i]
            i += 1
        for key in dg_keys:
            values[key] = f[i]
            i += 1
