import itertools

from hypothesis import given, settings, strategies as st

from tagmon.capture import GAP, Dispatcher, TcpReassembler, decode_frame
from tagmon.testbed import wire

A = wire.Endpoint("A", "10.0.0.1", "02:00:00:00:00:01")
B = wire.Endpoint("B", "10.0.0.2", "02:00:00:00:00:02")
MSG = bytes.fromhex("00 01 00 00 00 06 01 06 00 0A 00 01")


def _seg(seq, payload):
    s = wire.tcp(A.ip_b, B.ip_b, 40000, 502, seq, 0, wire.TCP_PSH | wire.TCP_ACK, payload)
    return wire.ethernet(B.mac_b, A.mac_b, wire.ETH_IPV4, wire.ipv4(A.ip_b, B.ip_b, 6, s))


def _bytes(chunks):
    return b"".join(c for c, _ in chunks if c is not GAP)


def test_split_8_4_gives_one_message():
    assert len(MSG) == 12
    d = Dispatcher()
    assert d.dispatch(decode_frame(1.0, _seg(100, MSG[:8]), 1)) == []
    recs = d.dispatch(decode_frame(1.01, _seg(108, MSG[8:]), 2))
    assert len(recs) == 1
    assert recs[0].msg_type == "WriteSingleRegisterRequest"
    assert recs[0].raw_ref == 2


def test_retransmission_delivered_once():
    r = TcpReassembler()
    out = r.push(100, b"abcd", 0.0) + r.push(100, b"abcd", 0.1) + r.push(104, b"ef", 0.2)
    assert _bytes(out) == b"abcdef"
    assert r.duplicates == 1


def test_partial_overlap_trimmed():
    r = TcpReassembler()
    out = r.push(100, b"abcd", 0.0) + r.push(102, b"cdef", 0.1)
    assert _bytes(out) == b"abcdef"


def test_swapped_segments():
    r = TcpReassembler()
    out = r.push(100, b"ab", 0.0)
    out += r.push(104, b"ef", 0.1)
    out += r.push(102, b"cd", 0.2)
    assert _bytes(out) == b"abcdef"


@settings(max_examples=200, deadline=None)
@given(st.lists(st.binary(min_size=1, max_size=9), min_size=1, max_size=7), st.randoms(),
       st.integers(0, 2**32 - 1))
def test_permutations_match_in_order_delivery(pieces, rnd, isn):
    # The first segment fixes the stream start; the rest may arrive in any order.
    segs = []
    seq = isn
    for p in pieces:
        segs.append((seq, p))
        seq = (seq + len(p)) & 0xFFFFFFFF
    rest = segs[1:]
    rnd.shuffle(rest)
    r = TcpReassembler()
    out = r.push(*segs[0], 0.0)
    for s, p in rest:
        out += r.push(s, p, 0.0)
    assert _bytes(out) == b"".join(pieces)
    assert GAP not in [c for c, _ in out]
    assert not r.pending


def test_gap_flushed_after_wait():
    r = TcpReassembler(max_wait=1.0)
    r.push(100, b"ab", 0.0)
    assert r.push(110, b"zz", 0.5) == []
    assert r.expire(1.0) == []
    out = r.expire(1.6)
    assert [c for c, _ in out] == [GAP, b"zz"]
    assert r.losses == 1


def test_gap_flushed_when_buffer_full():
    r = TcpReassembler(max_segments=3)
    r.push(0, b"a", 0.0)
    out = []
    for k in range(4):
        out += r.push(10 + k, bytes([65 + k]), 0.0)
    assert out[0][0] is GAP
    assert _bytes(out) == b"ABCD"


def test_dispatcher_expires_gap_and_resyncs():
    d = Dispatcher()
    flow = wire.TcpFlow(A, B, 40000, 502, 1000, 1)
    frames = [flow.segment(True, wire.modbus_write_request(i, 1, i, i)) for i in range(4)]
    got = []
    got += d.dispatch(decode_frame(1.0, frames[0], 1))
    # frames[1] is lost
    got += d.dispatch(decode_frame(1.1, frames[2], 3))
    got += d.dispatch(decode_frame(3.0, frames[3], 4))
    assert [list(r.values.values()) for r in got] == [[0], [2], [3]]
    assert d.counters()["tcp_losses"] == 1


def test_sequence_wraparound():
    r = TcpReassembler()
    out = r.push(0xFFFFFFFE, b"ab", 0.0) + r.push(0, b"cd", 0.0)
    assert _bytes(out) == b"abcd"
