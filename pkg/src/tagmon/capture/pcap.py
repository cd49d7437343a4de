"""Classic libpcap file reading and writing (no pcapng)."""

from __future__ import annotations

import struct
from typing import BinaryIO, Iterable, Iterator, Tuple

LINKTYPE_ETHERNET = 1
MAGIC_US = 0xA1B2C3D4
MAGIC_NS = 0xA1B23C4D
MAX_RECORD = 262144


class PcapError(Exception):
    """The file is not a readable capture."""


class PcapReader:
    """Iterate ``(timestamp, frame_bytes)`` pairs; ``dropped`` counts bad records."""

    def __init__(self, fh: BinaryIO):
        self.fh = fh
        self.dropped = 0
        head = fh.read(24)
        if len(head) < 24:
            raise PcapError("file shorter than pcap global header")
        for endian in "<>":
            magic = struct.unpack(endian + "I", head[:4])[0]
            if magic in (MAGIC_US, MAGIC_NS):
                break
        else:
            raise PcapError(f"bad pcap magic {head[:4].hex()}")
        self.endian = endian
        self.scale = 1e-6 if magic == MAGIC_US else 1e-9
        _, _, _, _, self.snaplen, self.linktype = struct.unpack(endian + "HHiIII", head[4:])
        self._rec = struct.Struct(endian + "IIII")

    def __iter__(self) -> Iterator[Tuple[float, bytes]]:
        read = self.fh.read
        rec = self._rec
        scale = self.scale
        while True:
            head = read(16)
            if not head:
                return
            if len(head) < 16:
                self.dropped += 1
                return
            sec, frac, incl, _orig = rec.unpack(head)
            if incl > MAX_RECORD:
                # Length is garbage; the rest of the file cannot be framed.
                self.dropped += 1
                return
            data = read(incl)
            if len(data) < incl:
                self.dropped += 1
                return
            yield sec + frac * scale, data


def read_pcap(path) -> Iterator[Tuple[float, bytes]]:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise PcapError(str(exc)) from None
    with fh:
        yield from PcapReader(fh)


class PcapWriter:
    def __init__(self, fh: BinaryIO, snaplen: int = 65535, nanosecond: bool = False):
        self.fh = fh
        self.nanosecond = nanosecond
        magic = MAGIC_NS if nanosecond else MAGIC_US
        fh.write(struct.pack("<IHHiIII", magic, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))

    def write(self, ts: float, data: bytes) -> None:
        sec = int(ts)
        if self.nanosecond:
            frac = round((ts - sec) * 1e9)
            if frac >= 1_000_000_000:
                sec, frac = sec + 1, frac - 1_000_000_000
        else:
            frac = round((ts - sec) * 1e6)
            if frac >= 1_000_000:
                sec, frac = sec + 1, frac - 1_000_000
        self.fh.write(struct.pack("<IIII", sec, frac, len(data), len(data)))
        self.fh.write(data)


def write_pcap(path, frames: Iterable[Tuple[float, bytes]], nanosecond: bool = False) -> int:
    n = 0
    with open(path, "wb") as fh:
        w = PcapWriter(fh, nanosecond=nanosecond)
        for ts, data in frames:
            w.write(ts, data)
            n += 1
    return n
