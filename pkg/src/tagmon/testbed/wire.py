"""Packet writers for every protocol the simulator emits.

These mirror the parsers in :mod:`tagmon.protocols` but are written from
the wire formats, so round-trips between the two catch mistakes on
either side.
"""

from __future__ import annotations

import struct
from array import array
from sys import byteorder
from typing import Iterable, List, Optional, Sequence, Tuple

from ..protocols.crc import additive16, crc_ccitt, crc_dnp3

ETH_IPV4 = 0x0800
ETH_GOOSE = 0x88B8
TCP_ACK = 0x10
TCP_PSH = 0x08

# ---------------------------------------------------------------- link / IP


def mac_bytes(mac: str) -> bytes:
    return bytes.fromhex(mac.replace(":", ""))


def ip_bytes(ip: str) -> bytes:
    return bytes(int(p) for p in ip.split("."))


def ethernet(dst: bytes, src: bytes, ethertype: int, payload: bytes) -> bytes:
    frame = dst + src + struct.pack(">H", ethertype) + payload
    if len(frame) < 60:
        frame += b"\x00" * (60 - len(frame))
    return frame


def inet_checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    words = array("H", data)
    if byteorder == "little":
        words.byteswap()
    s = sum(words)
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def ipv4(src: bytes, dst: bytes, proto: int, payload: bytes, ident: int = 0, ttl: int = 64) -> bytes:
    head = struct.pack(">BBHHHBBH4s4s", 0x45, 0, 20 + len(payload), ident & 0xFFFF, 0x4000,
                       ttl, proto, 0, src, dst)
    csum = inet_checksum(head)
    return head[:10] + struct.pack(">H", csum) + head[12:] + payload


def tcp(src: bytes, dst: bytes, sport: int, dport: int, seq: int, ack: int,
        flags: int, payload: bytes, window: int = 8192) -> bytes:
    head = struct.pack(">HHIIBBHHH", sport, dport, seq & 0xFFFFFFFF, ack & 0xFFFFFFFF,
                       5 << 4, flags, window, 0, 0)
    pseudo = src + dst + struct.pack(">BBH", 0, 6, len(head) + len(payload))
    csum = inet_checksum(pseudo + head + payload)
    return head[:16] + struct.pack(">H", csum) + head[18:] + payload


def udp(src: bytes, dst: bytes, sport: int, dport: int, payload: bytes) -> bytes:
    length = 8 + len(payload)
    pseudo = src + dst + struct.pack(">BBH", 0, 17, length)
    head = struct.pack(">HHHH", sport, dport, length, 0)
    csum = inet_checksum(pseudo + head + payload) or 0xFFFF
    return struct.pack(">HHHH", sport, dport, length, csum) + payload


# ---------------------------------------------------------------- Modbus/TCP


def _mbap(txn: int, unit: int, pdu: bytes) -> bytes:
    return struct.pack(">HHHB", txn & 0xFFFF, 0, len(pdu) + 1, unit) + pdu


def modbus_read_request(txn: int, unit: int, start: int, qty: int) -> bytes:
    return _mbap(txn, unit, struct.pack(">BHH", 0x03, start, qty))


def modbus_read_response(txn: int, unit: int, regs: Sequence[int]) -> bytes:
    body = struct.pack(f">BB{len(regs)}H", 0x03, 2 * len(regs), *regs)
    return _mbap(txn, unit, body)


def modbus_write_request(txn: int, unit: int, addr: int, value: int) -> bytes:
    return _mbap(txn, unit, struct.pack(">BHH", 0x06, addr, value & 0xFFFF))


modbus_write_response = modbus_write_request  # the normal response is an echo


def modbus_exception(txn: int, unit: int, fc: int, code: int) -> bytes:
    return _mbap(txn, unit, struct.pack(">BB", fc | 0x80, code))


def float_regs(value: float) -> Tuple[int, int]:
    """Two 16-bit registers holding an IEEE-754 single, high word first."""
    hi, lo = struct.unpack(">HH", struct.pack(">f", value))
    return hi, lo


# ---------------------------------------------------------------- DNP3

DNP3_MASTER_CTRL = 0xC4    # DIR=1 PRM=1, unconfirmed user data
DNP3_OUTSTATION_CTRL = 0x44


def dnp3_link(dst: int, src: int, control: int, user: bytes) -> bytes:
    if len(user) > 250:
        raise ValueError("DNP3 link frame carries at most 250 user bytes")
    head = struct.pack("<BBBBHH", 0x05, 0x64, 5 + len(user), control, dst, src)
    out = bytearray(head)
    out += struct.pack("<H", crc_dnp3(head))
    for i in range(0, len(user), 16):
        block = user[i:i + 16]
        out += block
        out += struct.pack("<H", crc_dnp3(block))
    return bytes(out)


def dnp3_apdu(seq: int, fc: int, objects: bytes, iin: Optional[int] = None,
              transport_seq: Optional[int] = None) -> bytes:
    tseq = seq if transport_seq is None else transport_seq
    th = 0xC0 | (tseq & 0x3F)
    ac = 0xC0 | (seq & 0x0F)
    head = bytes((th, ac, fc))
    if iin is not None:
        head += struct.pack(">H", iin)
    return head + objects


DNP3_VALUE_FORMATS = {
    (30, 1): "<Bi", (30, 2): "<Bh", (30, 3): "<i", (30, 4): "<h",
    (30, 5): "<Bf", (30, 6): "<Bd",
    (41, 1): "<iB", (41, 2): "<hB", (41, 3): "<fB", (41, 4): "<dB",
}
_HAS_FLAG = {(30, 1), (30, 2), (30, 5), (30, 6)}


def _dnp3_point(group: int, var: int, value) -> bytes:
    fmt = DNP3_VALUE_FORMATS[(group, var)]
    if group == 30:
        if (group, var) in _HAS_FLAG:
            return struct.pack(fmt, 0x01, value)  # ONLINE flag
        return struct.pack(fmt, value)
    return struct.pack(fmt, value, 0)  # control status 0 = success


def dnp3_objects_range(group: int, var: int, start: int, values: Sequence) -> bytes:
    """Object header with 8- or 16-bit start/stop range (qualifier 0x00 / 0x01)."""
    stop = start + len(values) - 1
    if stop <= 0xFF:
        head = struct.pack("<BBBBB", group, var, 0x00, start, stop)
    else:
        head = struct.pack("<BBBHH", group, var, 0x01, start, stop)
    return head + b"".join(_dnp3_point(group, var, v) for v in values)


def dnp3_objects_indexed(group: int, var: int, points: Sequence[Tuple[int, object]]) -> bytes:
    """Object header with 8-bit count and 8-bit index prefixes (qualifier 0x17)."""
    out = bytearray(struct.pack("<BBBB", group, var, 0x17, len(points)))
    for idx, v in points:
        out.append(idx)
        out += _dnp3_point(group, var, v)
    return bytes(out)


def dnp3_class_poll(classes: Iterable[int] = (0,)) -> bytes:
    return b"".join(struct.pack("<BBB", 60, c + 1, 0x06) for c in classes)


# ---------------------------------------------------------------- C37.118

C37_FMT_POLAR = 0x1
C37_FMT_PH_FLOAT = 0x2
C37_FMT_AN_FLOAT = 0x4
C37_FMT_FREQ_FLOAT = 0x8


def _c37_frame(ftype: int, idcode: int, soc: int, fracsec: int, body: bytes) -> bytes:
    size = 14 + len(body) + 2
    head = struct.pack(">BBHHII", 0xAA, (ftype << 4) | 0x2, size, idcode, soc, fracsec)
    frame = head + body
    return frame + struct.pack(">H", crc_ccitt(frame))


class C37Pmu:
    """Layout of one PMU block, shared by the CFG-2 and data writers."""

    def __init__(self, station: str, idcode: int, fmt: int, phasor_names: Sequence[str],
                 analog_names: Sequence[str] = (), digital_words: int = 0,
                 phunit: Sequence[int] = (), fnom_50hz: bool = False):
        self.station = station
        self.idcode = idcode
        self.fmt = fmt
        self.phasor_names = list(phasor_names)
        self.analog_names = list(analog_names)
        self.digital_words = digital_words
        self.phunit = list(phunit) or [100000] * len(self.phasor_names)  # 1.0 per count x 1e-5
        self.fnom_50hz = fnom_50hz

    def config_block(self) -> bytes:
        out = bytearray(self.station.encode("ascii")[:16].ljust(16))
        out += struct.pack(">HHHHH", self.idcode, self.fmt, len(self.phasor_names),
                           len(self.analog_names), self.digital_words)
        for name in self.phasor_names + self.analog_names:
            out += name.encode("ascii")[:16].ljust(16)
        for w in range(self.digital_words):
            for b in range(16):
                out += f"D{w}_{b}".encode("ascii").ljust(16)
        for u in self.phunit:
            out += struct.pack(">I", u & 0xFFFFFF)
        out += b"\x00\x00\x00\x01" * len(self.analog_names)
        out += b"\x00\x00\xff\xff" * self.digital_words
        out += struct.pack(">HH", 1 if self.fnom_50hz else 0, 1)
        return bytes(out)

    def data_block(self, stat: int, phasors: Sequence[Tuple[float, float]], freq: float,
                   dfreq: float, analogs: Sequence[float] = (), digitals: Sequence[int] = ()) -> bytes:
        out = bytearray(struct.pack(">H", stat))
        fmt = self.fmt
        for k, (a, b) in enumerate(phasors):
            if fmt & C37_FMT_PH_FLOAT:
                out += struct.pack(">ff", a, b)
            elif fmt & C37_FMT_POLAR:
                unit = self.phunit[k] * 1e-5
                out += struct.pack(">Hh", round(a / unit), round(b * 1e4))
            else:
                unit = self.phunit[k] * 1e-5
                out += struct.pack(">hh", round(a / unit), round(b / unit))
        if fmt & C37_FMT_FREQ_FLOAT:
            out += struct.pack(">ff", freq, dfreq)
        else:
            fnom = 50.0 if self.fnom_50hz else 60.0
            out += struct.pack(">hh", round((freq - fnom) * 1000), round(dfreq * 100))
        for v in analogs:
            out += struct.pack(">f", v) if fmt & C37_FMT_AN_FLOAT else struct.pack(">h", int(v))
        for d in digitals:
            out += struct.pack(">H", d)
        return bytes(out)


def c37_config2(idcode: int, soc: int, fracsec: int, pmus: Sequence[C37Pmu],
                time_base: int = 1_000_000, data_rate: int = 10) -> bytes:
    body = struct.pack(">IH", time_base, len(pmus))
    body += b"".join(p.config_block() for p in pmus)
    body += struct.pack(">h", data_rate)
    return _c37_frame(3, idcode, soc, fracsec, body)


def c37_data(idcode: int, soc: int, fracsec: int, blocks: Sequence[bytes]) -> bytes:
    return _c37_frame(0, idcode, soc, fracsec, b"".join(blocks))


# ---------------------------------------------------------------- GOOSE


def ber(tag: int, value: bytes) -> bytes:
    n = len(value)
    if n < 0x80:
        return bytes((tag, n)) + value
    if n <= 0xFF:
        return bytes((tag, 0x81, n)) + value
    return bytes((tag, 0x82)) + struct.pack(">H", n) + value


def _ber_uint(n: int) -> bytes:
    """Minimal big-endian encoding with a leading zero when the top bit is set."""
    raw = n.to_bytes(max(1, (n.bit_length() + 7) // 8), "big")
    return b"\x00" + raw if raw[0] & 0x80 else raw


def goose_value(v) -> bytes:
    if isinstance(v, bool):
        return ber(0x83, b"\xff" if v else b"\x00")
    if isinstance(v, int):
        size = max(1, (v.bit_length() + 8) // 8)
        if size > 4:
            raise ValueError("GOOSE integers are limited to 32 bits")
        return ber(0x85, v.to_bytes(size, "big", signed=True))
    return ber(0x87, b"\x08" + struct.pack(">f", v))


def goose_pdu(appid: int, gocb_ref: str, dataset: str, go_id: str, st_num: int, sq_num: int,
              values: Sequence, t_utc: float = 0.0, ttl_ms: int = 2000, conf_rev: int = 1) -> bytes:
    """GOOSE payload starting at APPID (what follows the ethertype)."""
    secs = int(t_utc)
    frac = int((t_utc - secs) * (1 << 24)) & 0xFFFFFF
    all_data = b"".join(goose_value(v) for v in values)
    pdu = b"".join((
        ber(0x80, gocb_ref.encode("ascii")),
        ber(0x81, _ber_uint(ttl_ms)),
        ber(0x82, dataset.encode("ascii")),
        ber(0x83, go_id.encode("ascii")),
        ber(0x84, struct.pack(">I", secs) + frac.to_bytes(3, "big") + b"\x0a"),
        ber(0x85, _ber_uint(st_num)),
        ber(0x86, _ber_uint(sq_num)),
        ber(0x87, b"\x00"),
        ber(0x88, _ber_uint(conf_rev)),
        ber(0x89, b"\x00"),
        ber(0x8A, _ber_uint(len(values))),
        ber(0xAB, all_data),
    ))
    apdu = ber(0x61, pdu)
    return struct.pack(">HHHH", appid, 8 + len(apdu), 0, 0) + apdu


# ---------------------------------------------------------------- FMSG

FMSG_INT32 = 0
FMSG_FLOAT32 = 1


def fmsg(registers: Sequence[Tuple[int, int, object]]) -> bytes:
    """``registers`` are (address, type, value) triples."""
    if len(registers) > 255:
        raise ValueError("at most 255 registers per message")
    out = bytearray(b"\xA5\x46")
    out.append(len(registers))
    for addr, typ, value in registers:
        if typ == FMSG_INT32:
            out += struct.pack(">HBi", addr, typ, value)
        elif typ == FMSG_FLOAT32:
            out += struct.pack(">HBf", addr, typ, value)
        else:
            raise ValueError(f"unknown register type {typ}")
    out += struct.pack(">H", additive16(bytes(out)))
    return bytes(out)


def f32_round(v: float) -> float:
    """Value after a trip through an IEEE-754 single."""
    return struct.unpack(">f", struct.pack(">f", v))[0]


# ---------------------------------------------------------------- flows


class Endpoint:
    __slots__ = ("name", "ip", "mac", "ip_b", "mac_b")

    def __init__(self, name: str, ip: str, mac: str):
        self.name = name
        self.ip = ip
        self.mac = mac
        self.ip_b = ip_bytes(ip)
        self.mac_b = mac_bytes(mac)


class TcpFlow:
    """A long-lived TCP connection; every message becomes one PSH/ACK segment.

    No handshake or bare ACKs are emitted. ``skew`` lets an in-path
    device shift the sequence space of one direction (replay injection).
    """

    def __init__(self, client: Endpoint, server: Endpoint, cport: int, sport: int,
                 isn_c: int, isn_s: int):
        self.ends = (client, server)
        self.ports = (cport, sport)
        self.seq = [isn_c & 0xFFFFFFFF, isn_s & 0xFFFFFFFF]
        self.ident = [isn_c & 0xFFFF, isn_s & 0xFFFF]

    def segment(self, from_client: bool, payload: bytes) -> bytes:
        d = 0 if from_client else 1
        src, dst = self.ends[d], self.ends[1 - d]
        sport, dport = self.ports[d], self.ports[1 - d]
        seq = self.seq[d]
        ack = self.seq[1 - d]
        self.seq[d] = (seq + len(payload)) & 0xFFFFFFFF
        self.ident[d] = (self.ident[d] + 1) & 0xFFFF
        seg = tcp(src.ip_b, dst.ip_b, sport, dport, seq, ack, TCP_PSH | TCP_ACK, payload)
        return ethernet(dst.mac_b, src.mac_b, ETH_IPV4, ipv4(src.ip_b, dst.ip_b, 6, seg, self.ident[d]))


def udp_frame(src: Endpoint, dst: Endpoint, sport: int, dport: int, payload: bytes, ident: int = 0) -> bytes:
    seg = udp(src.ip_b, dst.ip_b, sport, dport, payload)
    return ethernet(dst.mac_b, src.mac_b, ETH_IPV4, ipv4(src.ip_b, dst.ip_b, 17, seg, ident))


def goose_frame(src: Endpoint, dst_mac: str, payload: bytes) -> bytes:
    return ethernet(mac_bytes(dst_mac), src.mac_b, ETH_GOOSE, payload)
