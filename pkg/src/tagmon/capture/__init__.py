"""Packet ingest: capture sources, header decoding, reassembly and dispatch."""

from __future__ import annotations

import socket
import time
from dataclasses import dataclass
from typing import Iterator, Optional, Union

from .dispatch import Dispatcher, default_port_table, detect_protocol
from .frames import FrameDecodeError, RawFrame, Transport, decode_frame
from .pcap import PcapError, PcapReader, PcapWriter, read_pcap, write_pcap
from .reassembly import GAP, TcpReassembler

__all__ = [
    "CaptureSource", "Dispatcher", "FrameDecodeError", "PcapError", "PcapReader",
    "PcapWriter", "RawFrame", "TcpReassembler", "Transport", "GAP", "decode_frame",
    "default_port_table", "detect_protocol", "open_source", "read_pcap", "write_pcap",
]


@dataclass
class CaptureSpec:
    pcap: Optional[str] = None
    iface: Optional[str] = None


class CaptureSource:
    """Yields decoded :class:`RawFrame` objects in capture order.

    ``dropped`` counts unreadable pcap records and frames whose headers do
    not decode; a dispatcher passed in gets those charged to its accounting.
    """

    def __init__(self, spec: Union[CaptureSpec, str], dispatcher: Optional[Dispatcher] = None):
        if isinstance(spec, str):
            spec = CaptureSpec(pcap=spec)
        if bool(spec.pcap) == bool(spec.iface):
            raise ValueError("capture source needs exactly one of pcap / iface")
        self.spec = spec
        self.dispatcher = dispatcher
        self.dropped = 0
        self._reader = None
        if spec.pcap:
            try:
                fh = open(spec.pcap, "rb")
            except OSError as exc:
                raise PcapError(f"cannot open capture {spec.pcap}: {exc}") from None
            try:
                self._reader = PcapReader(fh)
            except PcapError:
                fh.close()
                raise
            self._fh = fh

    def _raw(self) -> Iterator:
        if self._reader is not None:
            with self._fh:
                yield from self._reader
            return
        yield from _live_frames(self.spec.iface)

    def __iter__(self) -> Iterator[RawFrame]:
        seq = 0
        last = 0.0
        for ts, data in self._raw():
            seq += 1
            if ts < last:
                ts = last  # keep the stream non-decreasing for downstream clocks
            last = ts
            try:
                frame = decode_frame(ts, data, seq)
            except FrameDecodeError:
                self._drop("decode_error")
                continue
            yield frame
        if self._reader is not None and self._reader.dropped:
            for _ in range(self._reader.dropped):
                self._drop("pcap_record")

    def _drop(self, reason):
        self.dropped += 1
        if self.dispatcher is not None:
            self.dispatcher.drop(reason)


def open_source(spec, dispatcher: Optional[Dispatcher] = None) -> CaptureSource:
    return CaptureSource(spec, dispatcher)


def _live_frames(iface: str) -> Iterator:
    """Raw Ethernet frames from a Linux AF_PACKET socket (needs CAP_NET_RAW)."""
    ETH_P_ALL = 0x0003
    sock = socket.socket(socket.AF_PACKET, socket.SOCK_RAW, socket.htons(ETH_P_ALL))
    sock.bind((iface, 0))
    try:
        while True:
            data = sock.recv(65535)
            yield time.time(), data
    finally:
        sock.close()
