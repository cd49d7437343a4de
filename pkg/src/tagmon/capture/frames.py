"""Link/network/transport decoding of captured Ethernet frames."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from struct import unpack_from
from typing import Optional

ETH_IPV4 = 0x0800
ETH_VLAN = 0x8100
IPPROTO_TCP = 6
IPPROTO_UDP = 17

TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04


class Transport(str, enum.Enum):
    TCP = "TCP"
    UDP = "UDP"
    ETHERNET_ONLY = "ETHERNET_ONLY"


class FrameDecodeError(ValueError):
    pass


@lru_cache(maxsize=4096)
def mac_str(b: bytes) -> str:
    return b.hex(":")


@lru_cache(maxsize=4096)
def ip_str(b: bytes) -> str:
    return f"{b[0]}.{b[1]}.{b[2]}.{b[3]}"


@dataclass(slots=True)
class RawFrame:
    capture_timestamp: float
    link_payload: bytes
    seq: int
    src_mac: str
    dst_mac: str
    ethertype: int
    transport: Transport
    payload: bytes
    src_ip: Optional[str] = None
    dst_ip: Optional[str] = None
    src_port: Optional[int] = None
    dst_port: Optional[int] = None
    tcp_seq: int = 0
    tcp_flags: int = 0

    @property
    def flow(self):
        return (self.src_ip, self.src_port, self.dst_ip, self.dst_port)


def decode_frame(ts: float, data: bytes, seq: int = 0) -> RawFrame:
    """Decode Ethernet II (optionally 802.1Q tagged), IPv4, TCP and UDP headers.

    Non-IPv4 ethertypes become ``ETHERNET_ONLY`` frames whose payload is
    everything after the ethertype. IP fragments other than the first are
    rejected since fragment reassembly is not done.
    """
    n = len(data)
    if n < 14:
        raise FrameDecodeError("runt Ethernet frame")
    etype = (data[12] << 8) | data[13]
    off = 14
    if etype == ETH_VLAN:
        if n < 18:
            raise FrameDecodeError("truncated VLAN tag")
        etype = (data[16] << 8) | data[17]
        off = 18
    dst_mac = mac_str(data[0:6])
    src_mac = mac_str(data[6:12])
    if etype != ETH_IPV4:
        return RawFrame(ts, data, seq, src_mac, dst_mac, etype, Transport.ETHERNET_ONLY,
                        data[off:])
    if n < off + 20:
        raise FrameDecodeError("truncated IPv4 header")
    vihl = data[off]
    ihl = (vihl & 0x0F) * 4
    if vihl >> 4 != 4 or ihl < 20:
        raise FrameDecodeError("bad IPv4 header")
    total_len, frag, proto = unpack_from(">H2xH1xB", data, off + 2)
    if frag & 0x3FFF:
        raise FrameDecodeError("IP fragment")
    end = off + total_len
    if total_len < ihl or end > n:
        raise FrameDecodeError("IPv4 length exceeds frame")
    src_ip = ip_str(data[off + 12:off + 16])
    dst_ip = ip_str(data[off + 16:off + 20])
    t = off + ihl
    if proto == IPPROTO_TCP:
        if end < t + 20:
            raise FrameDecodeError("truncated TCP header")
        sport, dport, tseq, doff, flags = unpack_from(">HHI4xBB", data, t)
        hl = (doff >> 4) * 4
        if hl < 20 or t + hl > end:
            raise FrameDecodeError("bad TCP data offset")
        return RawFrame(ts, data, seq, src_mac, dst_mac, etype, Transport.TCP,
                        data[t + hl:end], src_ip, dst_ip, sport, dport, tseq, flags)
    if proto == IPPROTO_UDP:
        if end < t + 8:
            raise FrameDecodeError("truncated UDP header")
        sport, dport, ulen = unpack_from(">HHH", data, t)
        if ulen < 8 or t + ulen > end:
            raise FrameDecodeError("bad UDP length")
        return RawFrame(ts, data, seq, src_mac, dst_mac, etype, Transport.UDP,
                        data[t + 8:t + ulen], src_ip, dst_ip, sport, dport)
    # Other IP protocols carry nothing we parse; classify them as unknown.
    return RawFrame(ts, data, seq, src_mac, dst_mac, etype, Transport.ETHERNET_ONLY, b"")
