"""Random message generators for round-trip and fuzz tests.

Each generator returns the wire payload together with the record the
parser is expected to produce from it, computed from the generator's
inputs rather than from the parser.
"""

from __future__ import annotations

import random
import struct
from typing import Callable, Dict, List, Tuple

from tagmon.protocols import Addr, ProtocolId, Space
from tagmon.protocols.records import C37_DFREQ, C37_FREQ, C37_STAT, GOOSE_SQNUM, GOOSE_STNUM
from tagmon.protocols.crc import crc_ccitt
from tagmon.testbed import wire


def f32(rng: random.Random, scale: float = 1000.0) -> float:
    return wire.f32_round(rng.uniform(-scale, scale))


# ---------------------------------------------------------------- Modbus


def modbus_exchange(rng: random.Random) -> List[Tuple[bool, bytes, str, dict]]:
    """One request (and maybe its response) as (from_client, payload, msg_type, values)."""
    txn = rng.randrange(65536)
    unit = rng.randrange(256)
    H = Space.MODBUS_HOLDING
    kind = rng.randrange(4)
    if kind == 0:
        start = rng.randrange(65536 - 125)
        qty = rng.randint(1, 125)
        regs = [rng.randrange(65536) for _ in range(qty)]
        return [
            (True, wire.modbus_read_request(txn, unit, start, qty), "ReadHoldingRegistersRequest",
             {Addr(H, start): qty}),
            (False, wire.modbus_read_response(txn, unit, regs), "ReadHoldingRegistersResponse",
             {Addr(H, start + i): r for i, r in enumerate(regs)}),
        ]
    if kind == 1:
        addr, value = rng.randrange(65536), rng.randrange(65536)
        req = wire.modbus_write_request(txn, unit, addr, value)
        out = [(True, req, "WriteSingleRegisterRequest", {Addr(H, addr): value})]
        if rng.random() < 0.5:
            out.append((False, wire.modbus_write_response(txn, unit, addr, value),
                        "WriteSingleRegisterResponse", {Addr(H, addr): value}))
        return out
    if kind == 2:
        fc = rng.choice((1, 2, 3, 4, 5, 6, 15, 16))
        return [(False, wire.modbus_exception(txn, unit, fc, rng.randint(1, 4)), "ExceptionResponse", {})]
    fc = rng.choice((1, 2, 4, 5, 15, 16, 23, 43))
    pdu = bytes([fc]) + rng.randbytes(rng.randint(0, 20))
    payload = struct.pack(">HHHB", txn, 0, len(pdu) + 1, unit) + pdu
    return [(True, payload, f"Unsupported({fc})", {})]


# ---------------------------------------------------------------- DNP3

_G30 = {1: lambda r: r.randint(-2**31, 2**31 - 1), 2: lambda r: r.randint(-32768, 32767),
        3: lambda r: r.randint(-2**31, 2**31 - 1), 4: lambda r: r.randint(-32768, 32767),
        5: lambda r: f32(r), 6: lambda r: r.uniform(-1e9, 1e9)}
_G41 = {1: _G30[1], 2: _G30[2], 3: lambda r: f32(r), 4: lambda r: r.uniform(-1e9, 1e9)}


def dnp3_message(rng: random.Random) -> Tuple[bytes, str, dict]:
    seq = rng.randrange(16)
    kind = rng.randrange(3)
    G = Space.DNP3_GROUP_VAR
    if kind == 0:
        classes = rng.sample(range(4), rng.randint(1, 4))
        user = wire.dnp3_apdu(seq, 0x01, wire.dnp3_class_poll(classes))
        return wire.dnp3_link(10, 1, wire.DNP3_MASTER_CTRL, user), "ReadRequest", {}
    if kind == 1:
        var = rng.randint(1, 4)
        idx = rng.sample(range(256), rng.randint(1, 6))
        points = [(i, _G41[var](rng)) for i in idx]
        user = wire.dnp3_apdu(seq, 0x04, wire.dnp3_objects_indexed(41, var, points))
        return (wire.dnp3_link(10, 1, wire.DNP3_MASTER_CTRL, user), "OperateRequest",
                {Addr(G, 41, i): v for i, v in points})
    var = rng.randint(1, 6)
    start = rng.randrange(300)
    values = [_G30[var](rng) for _ in range(rng.randint(1, 8))]
    objs = wire.dnp3_objects_range(30, var, start, values)
    user = wire.dnp3_apdu(seq, 0x81, objs, iin=rng.randrange(65536))
    return (wire.dnp3_link(1, 10, wire.DNP3_OUTSTATION_CTRL, user), "ReadResponse",
            {Addr(G, 30, start + i): v for i, v in enumerate(values)})


# ---------------------------------------------------------------- C37.118


def c37_message(rng: random.Random, idcode: int = 1) -> Tuple[bytes, bytes, dict]:
    """(config frame, data frame, expected data values)."""
    npmu = rng.randint(1, 3)
    pmus, blocks, values = [], [], {}
    for k in range(npmu):
        fmt = rng.randrange(16)
        nph, nan, ndg = rng.randint(0, 4), rng.randint(0, 3), rng.randint(0, 2)
        units = [rng.randint(1, 2**23) for _ in range(nph)]
        fnom50 = rng.random() < 0.5
        pmu = wire.C37Pmu(f"S{k}", 100 + k, fmt, [f"P{i}" for i in range(nph)],
                          [f"A{i}" for i in range(nan)], ndg, units, fnom50)
        pmus.append(pmu)
        sub = k if npmu > 1 else None
        stat = rng.randrange(65536)
        phasors = []
        for i in range(nph):
            unit = units[i] * 1e-5
            if fmt & wire.C37_FMT_PH_FLOAT:
                a, b = f32(rng), f32(rng)
                exp = (a, b)
            elif fmt & wire.C37_FMT_POLAR:
                ra, rb = rng.randrange(65536), rng.randint(-31415, 31415)
                a, b = ra * unit, rb * 1e-4
                exp = (ra * unit, rb * 1e-4)
            else:
                ra, rb = rng.randint(-32768, 32767), rng.randint(-32768, 32767)
                a, b = ra * unit, rb * unit
                exp = (ra * unit, rb * unit)
            phasors.append((a, b))
            values[Addr(Space.C37118_PHASOR, i, sub)] = exp
        fnom = 50.0 if fnom50 else 60.0
        if fmt & wire.C37_FMT_FREQ_FLOAT:
            freq, dfreq = f32(rng, 70), f32(rng, 10)
            efreq, edfreq = freq, dfreq
        else:
            rf, rd = rng.randint(-5000, 5000), rng.randint(-3000, 3000)
            freq, dfreq = fnom + rf / 1000.0, rd / 100.0
            efreq, edfreq = fnom + rf / 1000.0, rd / 100.0
        analogs = [f32(rng) if fmt & wire.C37_FMT_AN_FLOAT else rng.randint(-32768, 32767)
                   for _ in range(nan)]
        digitals = [rng.randrange(65536) for _ in range(ndg)]
        blocks.append(pmu.data_block(stat, phasors, freq, dfreq, analogs, digitals))
        values[Addr(Space.C37118_DIGITAL, C37_STAT, sub)] = stat
        values[Addr(Space.C37118_ANALOG, C37_FREQ, sub)] = efreq
        values[Addr(Space.C37118_ANALOG, C37_DFREQ, sub)] = edfreq
        for i, v in enumerate(analogs):
            values[Addr(Space.C37118_ANALOG, i, sub)] = v
        for i, v in enumerate(digitals):
            values[Addr(Space.C37118_DIGITAL, i, sub)] = v
    soc = rng.randrange(2**31)
    cfg = wire.c37_config2(idcode, soc, 0, pmus)
    data = wire.c37_data(idcode, soc, rng.randrange(2**24), blocks)
    return cfg, data, values


# ---------------------------------------------------------------- GOOSE


def goose_message(rng: random.Random) -> Tuple[bytes, dict]:
    D = Space.GOOSE_DATASET
    vals = []
    for _ in range(rng.randint(0, 12)):
        k = rng.randrange(3)
        if k == 0:
            vals.append(rng.random() < 0.5)
        elif k == 1:
            vals.append(rng.randint(-2**31, 2**31 - 1))
        else:
            vals.append(f32(rng))
    st, sq = rng.randrange(2**32), rng.randrange(2**32)
    payload = wire.goose_pdu(rng.randrange(65536), "IED%d/LLN0$GO$gcb" % rng.randrange(99),
                             "IED/LLN0$DS", "go", st, sq, vals, t_utc=rng.uniform(0, 2e9))
    exp = {Addr(D, i): v for i, v in enumerate(vals)}
    exp[Addr(D, GOOSE_STNUM)] = st
    exp[Addr(D, GOOSE_SQNUM)] = sq
    return payload, exp


# ---------------------------------------------------------------- FMSG


def fmsg_message(rng: random.Random) -> Tuple[bytes, dict]:
    regs = []
    for addr in rng.sample(range(65536), rng.randint(0, 20)):
        if rng.random() < 0.5:
            regs.append((addr, wire.FMSG_INT32, rng.randint(-2**31, 2**31 - 1)))
        else:
            regs.append((addr, wire.FMSG_FLOAT32, f32(rng)))
    return wire.fmsg(regs), {Addr(Space.FMSG_REGISTER, a): v for a, _, v in regs}


# ---------------------------------------------------------------- fuzzing


def _fix_dnp3(rng, payload: bytes) -> bytes:
    """Mutate the user data of a DNP3 frame and re-frame it with valid CRCs."""
    user = bytearray(payload[10:])
    # strip block CRCs
    plain = bytearray()
    i = 0
    while i < len(user):
        plain += user[i:i + 16]
        i += 18
    plain = _mutate(rng, bytes(plain))[:250]
    return wire.dnp3_link(10, 1, 0xC4, bytes(plain))


def _fix_c37(rng, payload: bytes) -> bytes:
    body = bytearray(_mutate(rng, payload[:-2]))
    if len(body) >= 4 and rng.random() < 0.8:
        struct.pack_into(">H", body, 2, (len(body) + 2) & 0xFFFF)
    return bytes(body) + struct.pack(">H", crc_ccitt(bytes(body)))


def _fix_fmsg(rng, payload: bytes) -> bytes:
    body = _mutate(rng, payload[:-2])
    return body + struct.pack(">H", sum(body) & 0xFFFF)


def _fix_mbap(rng, payload: bytes) -> bytes:
    body = bytearray(_mutate(rng, payload))
    if len(body) >= 6 and rng.random() < 0.8:
        struct.pack_into(">H", body, 4, (len(body) - 6) & 0xFFFF)
    return bytes(body)


def _mutate(rng: random.Random, data: bytes) -> bytes:
    op = rng.randrange(6)
    b = bytearray(data)
    if op == 0 and b:
        for _ in range(rng.randint(1, 4)):
            b[rng.randrange(len(b))] = rng.randrange(256)
    elif op == 1 and b:
        del b[rng.randrange(len(b)):]
    elif op == 2:
        pos = rng.randint(0, len(b))
        b[pos:pos] = rng.randbytes(rng.randint(1, 8))
    elif op == 3 and b:
        pos = rng.randrange(len(b))
        del b[pos:pos + rng.randint(1, 8)]
    elif op == 4 and b:
        pos = rng.randrange(len(b))
        b[pos] ^= 1 << rng.randrange(8)
    else:
        b = bytearray(rng.randbytes(rng.randint(0, 64)))
    return bytes(b)


FIXERS: Dict[ProtocolId, Callable] = {
    ProtocolId.DNP3: _fix_dnp3,
    ProtocolId.C37118: _fix_c37,
    ProtocolId.FMSG: _fix_fmsg,
    ProtocolId.MODBUS_TCP: _fix_mbap,
}


def corpus(proto: ProtocolId, rng: random.Random, n: int = 200) -> List[bytes]:
    out: List[bytes] = []
    while len(out) < n:
        if proto is ProtocolId.MODBUS_TCP:
            out.extend(p for _, p, _, _ in modbus_exchange(rng))
        elif proto is ProtocolId.DNP3:
            out.append(dnp3_message(rng)[0])
        elif proto is ProtocolId.C37118:
            cfg, data, _ = c37_message(rng)
            out.extend((cfg, data))
        elif proto is ProtocolId.GOOSE:
            out.append(goose_message(rng)[0])
        else:
            out.append(fmsg_message(rng)[0])
    return out


def fuzz_inputs(proto: ProtocolId, rng: random.Random, seeds: List[bytes], n: int):
    """``n`` mutated inputs; about half keep their checksums/length fields valid."""
    fixer = FIXERS.get(proto)
    for _ in range(n):
        seed = seeds[rng.randrange(len(seeds))]
        if fixer is not None and rng.random() < 0.5:
            yield fixer(rng, seed)
        else:
            yield _mutate(rng, seed)


# ---------------------------------------------------------------- round trips

CLIENT = wire.Endpoint("client", "10.1.0.1", "02:00:00:00:01:01")
SERVER = wire.Endpoint("server", "10.1.0.2", "02:00:00:00:01:02")


def roundtrip(proto: ProtocolId, n: int, seed: int = 0):
    """Push ``n`` generated messages through frame decoding, dispatch and parsing.

    Returns (messages checked, list of mismatch descriptions).
    """
    from tagmon.capture import Dispatcher, decode_frame

    rng = random.Random(seed)
    d = Dispatcher(dedup_window=0)
    port = {ProtocolId.MODBUS_TCP: 502, ProtocolId.DNP3: 20000, ProtocolId.FMSG: 5010}.get(proto)
    flow = wire.TcpFlow(CLIENT, SERVER, 40000, port, rng.randrange(2**32), rng.randrange(2**32)) if port else None
    bad: List[str] = []
    checked = 0
    seq = 0
    ts = 1000.0

    def push(frame, msg_type, values, src, dst):
        nonlocal seq, ts, checked
        seq += 1
        ts += 0.001
        recs = d.dispatch(decode_frame(ts, frame, seq))
        if msg_type is None:
            return
        checked += 1
        if len(recs) != 1:
            bad.append(f"#{seq}: {len(recs)} records")
            return
        r = recs[0]
        got = (r.protocol, r.msg_type, r.values, r.source, r.destination, r.timestamp, r.raw_ref)
        want = (proto, msg_type, values, src, dst, ts, seq)
        if got != want:
            bad.append(f"#{seq}: got {got!r}, want {want!r}")

    while checked < n:
        if proto is ProtocolId.MODBUS_TCP:
            for from_client, payload, mt, vals in modbus_exchange(rng):
                src, dst = (CLIENT, SERVER) if from_client else (SERVER, CLIENT)
                push(flow.segment(from_client, payload), mt, vals, src.ip, dst.ip)
        elif proto is ProtocolId.DNP3:
            payload, mt, vals = dnp3_message(rng)
            from_client = mt != "ReadResponse"
            src, dst = (CLIENT, SERVER) if from_client else (SERVER, CLIENT)
            push(flow.segment(from_client, payload), mt, vals, src.ip, dst.ip)
        elif proto is ProtocolId.FMSG:
            payload, vals = fmsg_message(rng)
            push(flow.segment(True, payload), "UnsolicitedWrite", vals, CLIENT.ip, SERVER.ip)
        elif proto is ProtocolId.C37118:
            cfg, data, vals = c37_message(rng)
            push(wire.udp_frame(CLIENT, SERVER, 4713, 4713, cfg), "ConfigFrame2", {}, CLIENT.ip, SERVER.ip)
            push(wire.udp_frame(CLIENT, SERVER, 4713, 4713, data), "DataFrame", vals, CLIENT.ip, SERVER.ip)
        else:
            payload, vals = goose_message(rng)
            dst = "01:0c:cd:01:00:%02x" % rng.randrange(256)
            push(wire.goose_frame(CLIENT, dst, payload), "GooseMulticast", vals, CLIENT.mac, dst)
    return checked, bad
