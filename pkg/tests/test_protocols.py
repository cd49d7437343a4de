import struct

import pytest

from tagmon.protocols import (Addr, C37118Parser, Dnp3Parser, FlowMeta, FmsgParser, GooseParser,
                              MalformedRecord, ModbusParser, Space, valid_message_type)
from tagmon.protocols.records import C37_FREQ, C37_STAT, GOOSE_SQNUM, GOOSE_STNUM, ProtocolId
from tagmon.testbed import wire

from oracles import crc16_ccitt_false, crc16_dnp

REQ = FlowMeta(1.0, "10.0.0.1", "10.0.0.2", 40000, 502, 7)
RSP = FlowMeta(1.1, "10.0.0.2", "10.0.0.1", 502, 40000, 8)
H = Space.MODBUS_HOLDING


class TestModbus:
    def test_write_single_register_bytes(self):
        rec = ModbusParser().parse(bytes.fromhex("00 01 00 00 00 06 01 06 00 0A 00 01"), REQ)
        assert rec.msg_type == "WriteSingleRegisterRequest"
        assert rec.values == {Addr(H, 10): 1}
        assert (rec.timestamp, rec.raw_ref, rec.protocol) == (1.0, 7, ProtocolId.MODBUS_TCP)

    def test_write_echo_is_response(self):
        p = ModbusParser()
        msg = bytes.fromhex("00 01 00 00 00 06 01 06 00 0A 00 01")
        a = p.parse(msg, REQ)
        b = p.parse(msg, RSP)
        assert b.msg_type == "WriteSingleRegisterResponse"
        assert a.values == b.values

    def test_read_response_placed_by_request(self):
        p = ModbusParser()
        req = p.parse(wire.modbus_read_request(5, 1, 100, 3), REQ)
        assert req.msg_type == "ReadHoldingRegistersRequest"
        rsp = p.parse(wire.modbus_read_response(5, 1, [7, 8, 9]), RSP)
        assert rsp.values == {Addr(H, 100): 7, Addr(H, 101): 8, Addr(H, 102): 9}

    def test_unmatched_response_still_emitted(self):
        p = ModbusParser()
        rsp = p.parse(wire.modbus_read_response(5, 1, [7]), RSP)
        assert rsp.msg_type == "ReadHoldingRegistersResponse"
        assert rsp.values == {Addr(H, 0): 7}
        assert p.unmatched_responses == 1

    def test_length_violation(self):
        bad = bytes.fromhex("00 01 00 00 00 64 01 06 00 0A 00 01")
        with pytest.raises(MalformedRecord):
            ModbusParser().parse(bad, REQ)

    def test_protocol_id_nonzero(self):
        with pytest.raises(MalformedRecord):
            ModbusParser().parse(bytes.fromhex("00 01 00 01 00 06 01 06 00 0A 00 01"), REQ)

    def test_unsupported_and_exception(self):
        p = ModbusParser()
        rec = p.parse(bytes.fromhex("00 01 00 00 00 06 01 10 00 0A 00 01"), REQ)
        assert rec.msg_type == "Unsupported(16)" and rec.values == {}
        assert valid_message_type(ProtocolId.MODBUS_TCP, rec.msg_type)
        rec = p.parse(wire.modbus_exception(1, 1, 3, 2), RSP)
        assert rec.msg_type == "ExceptionResponse"

    def test_matches_reference_dissector(self):
        contrib = pytest.importorskip("scapy.contrib.modbus")
        pkt = contrib.ModbusADURequest(transId=9, unitId=3) / contrib.ModbusPDU06WriteSingleRegisterRequest(
            registerAddr=0x1234, registerValue=0xBEEF)
        rec = ModbusParser().parse(bytes(pkt), REQ)
        assert rec.msg_type == "WriteSingleRegisterRequest"
        assert rec.values == {Addr(H, 0x1234): 0xBEEF}
        pkt = contrib.ModbusADURequest(transId=4, unitId=1) / contrib.ModbusPDU03ReadHoldingRegistersRequest(
            startAddr=20, quantity=2)
        assert bytes(pkt) == wire.modbus_read_request(4, 1, 20, 2)
        rsp = contrib.ModbusADUResponse(transId=4, unitId=1) / contrib.ModbusPDU03ReadHoldingRegistersResponse(
            registerVal=[11, 12])
        assert bytes(rsp) == wire.modbus_read_response(4, 1, [11, 12])


def _dnp3_hand(user: bytes, dst=10, src=1, ctrl=0xC4) -> bytes:
    """Link framing written out longhand with the bitwise CRC oracle."""
    head = bytes([0x05, 0x64, 5 + len(user), ctrl]) + struct.pack("<HH", dst, src)
    out = head + struct.pack("<H", crc16_dnp(head))
    for i in range(0, len(user), 16):
        blk = user[i:i + 16]
        out += blk + struct.pack("<H", crc16_dnp(blk))
    return out


DNP = FlowMeta(2.0, "10.0.0.3", "10.0.0.4", 40001, 20000, 3)
G = Space.DNP3_GROUP_VAR


class TestDnp3:
    def test_operate_g41v2(self):
        # transport FIR|FIN seq 0, app control FIR|FIN seq 0, FC 4,
        # g41v2 qualifier 0x17 count 1, index 0, value 1, status 0
        user = bytes.fromhex("C0 C0 04 29 02 17 01 00 01 00 00")
        payload = _dnp3_hand(user)
        assert payload == wire.dnp3_link(10, 1, 0xC4, wire.dnp3_apdu(0, 4, wire.dnp3_objects_indexed(41, 2, [(0, 1)])))
        rec = Dnp3Parser().parse(payload, DNP)
        assert rec.msg_type == "OperateRequest"
        assert rec.values == {Addr(G, 41, 0): 1}

    def test_class_poll_read(self):
        user = bytes.fromhex("C1 C1 01 3C 01 06")
        rec = Dnp3Parser().parse(_dnp3_hand(user), DNP)
        assert rec.msg_type == "ReadRequest" and rec.values == {}

    def test_response_with_analog_inputs(self):
        objs = wire.dnp3_objects_range(30, 5, 2, [1.5, -2.25])
        rec = Dnp3Parser().parse(wire.dnp3_link(1, 10, 0x44, wire.dnp3_apdu(1, 0x81, objs, iin=0)), DNP)
        assert rec.msg_type == "ReadResponse"
        assert rec.values == {Addr(G, 30, 2): 1.5, Addr(G, 30, 3): -2.25}

    def test_crc_corruption_in_block_1(self):
        user = bytes(range(0xC0, 0xC3)) + bytes(30)
        frame = bytearray(_dnp3_hand(user))
        frame[10 + 18 + 2] ^= 0xFF  # a data byte of the second user-data block
        with pytest.raises(MalformedRecord, match="block 1"):
            Dnp3Parser().parse(bytes(frame), DNP)

    def test_header_crc(self):
        frame = bytearray(_dnp3_hand(bytes.fromhex("C0 C0 01")))
        frame[8] ^= 1
        with pytest.raises(MalformedRecord):
            Dnp3Parser().parse(bytes(frame), DNP)

    def test_unsupported_group_counted(self):
        p = Dnp3Parser()
        user = bytes.fromhex("C0 C0 81 00 00") + bytes([20, 1, 0x00, 0, 0]) + bytes(5)
        rec = p.parse(_dnp3_hand(user), DNP)
        assert rec.msg_type == "ReadResponse" and rec.values == {}
        assert p.unsupported == 1

    def test_multi_fragment_rejected(self):
        with pytest.raises(MalformedRecord):
            Dnp3Parser().parse(_dnp3_hand(bytes.fromhex("40 C0 01 3C 01 06")), DNP)


C37 = FlowMeta(3.0, "10.0.0.11", "10.0.0.10", 4713, 4713, 11)


def _pmu(fmt):
    return wire.C37Pmu("PMU1", 7, fmt, ["VA"], ["P"], 1)


class TestC37118:
    def _cfg(self, parser, pmu):
        rec = parser.parse(wire.c37_config2(7, 100, 0, [pmu]), C37)
        assert rec.msg_type == "ConfigFrame2"

    def test_float_polar_phasor(self):
        pmu = _pmu(wire.C37_FMT_POLAR | wire.C37_FMT_PH_FLOAT | wire.C37_FMT_AN_FLOAT | wire.C37_FMT_FREQ_FLOAT)
        p = C37118Parser()
        self._cfg(p, pmu)
        frame = wire.c37_data(7, 100, 0, [pmu.data_block(0, [(1.0, 0.0)], 60.0, 0.0, [2.5], [5])])
        assert struct.unpack(">H", frame[-2:])[0] == crc16_ccitt_false(frame[:-2])
        rec = p.parse(frame, C37)
        assert rec.msg_type == "DataFrame"
        assert rec.values[Addr(Space.C37118_PHASOR, 0)] == (1.0, 0.0)
        assert rec.values[Addr(Space.C37118_ANALOG, 0)] == 2.5
        assert rec.values[Addr(Space.C37118_ANALOG, C37_FREQ)] == 60.0
        assert rec.values[Addr(Space.C37118_DIGITAL, 0)] == 5
        assert rec.values[Addr(Space.C37118_DIGITAL, C37_STAT)] == 0

    def test_integer_rectangular(self):
        pmu = _pmu(0)
        p = C37118Parser()
        self._cfg(p, pmu)
        rec = p.parse(wire.c37_data(7, 100, 0, [pmu.data_block(0, [(3.0, -4.0)], 60.01, 0.5, [9], [0])]), C37)
        assert rec.values[Addr(Space.C37118_PHASOR, 0)] == (3.0, -4.0)
        assert rec.values[Addr(Space.C37118_ANALOG, C37_FREQ)] == pytest.approx(60.01)

    def test_data_before_config(self):
        pmu = _pmu(0)
        rec = C37118Parser().parse(wire.c37_data(7, 1, 0, [pmu.data_block(0, [(1, 0)], 60, 0, [0])]), C37)
        assert rec.msg_type == "UndecodableData" and rec.values == {}

    def test_corrupted_crc(self):
        frame = bytearray(wire.c37_config2(7, 100, 0, [_pmu(0)]))
        frame[-1] ^= 0x55
        with pytest.raises(MalformedRecord, match="CRC"):
            C37118Parser().parse(bytes(frame), C37)

    def test_config_change_reconfigures(self):
        p = C37118Parser()
        a, b = _pmu(0), _pmu(wire.C37_FMT_PH_FLOAT)
        self._cfg(p, a)
        self._cfg(p, b)
        rec = p.parse(wire.c37_data(7, 1, 0, [b.data_block(0, [(0.5, 0.25)], 60, 0, [0], [0])]), C37)
        assert rec.values[Addr(Space.C37118_PHASOR, 0)] == (0.5, 0.25)
        with pytest.raises(MalformedRecord):
            p.parse(wire.c37_data(7, 1, 0, [a.data_block(0, [(1, 0)], 60, 0, [0])]), C37)


GOOSE = FlowMeta(4.0, "02:00:00:00:00:05", "01:0c:cd:01:00:01", None, None, 12)
D = Space.GOOSE_DATASET


class TestGoose:
    def test_float_dataset(self):
        payload = wire.goose_pdu(1, "IED/LLN0$GO$g", "IED/LLN0$ds", "g", 3, 0, [0.98])
        rec = GooseParser().parse(payload, GOOSE)
        assert rec.msg_type == "GooseMulticast"
        assert rec.values[Addr(D, 0)] == wire.f32_round(0.98)
        assert rec.values[Addr(D, GOOSE_STNUM)] == 3 and rec.values[Addr(D, GOOSE_SQNUM)] == 0

    def test_hand_encoded_pdu(self):
        pdu = (b"\x80\x01g" + b"\x85\x01\x02" + b"\x86\x01\x05"
               + b"\xab\x07" + b"\x83\x01\x01" + b"\x85\x02\xff\x38")
        apdu = b"\x61" + bytes([len(pdu)]) + pdu
        payload = struct.pack(">HHHH", 1, 8 + len(apdu), 0, 0) + apdu
        rec = GooseParser().parse(payload, GOOSE)
        assert rec.values == {Addr(D, GOOSE_STNUM): 2, Addr(D, GOOSE_SQNUM): 5,
                              Addr(D, 0): True, Addr(D, 1): -200}

    def test_retransmission(self):
        p = GooseParser()
        a = p.parse(wire.goose_pdu(1, "r", "d", "g", 3, 0, [True, 1.0]), GOOSE)
        b = p.parse(wire.goose_pdu(1, "r", "d", "g", 3, 1, [True, 1.0]), GOOSE)
        strip = lambda v: {k: x for k, x in v.items() if k.index < GOOSE_SQNUM}
        assert strip(a.values) == strip(b.values)
        assert b.values[Addr(D, GOOSE_SQNUM)] == 1

    def test_nested_structure_rejected(self):
        payload = bytearray(wire.goose_pdu(1, "r", "d", "g", 1, 0, [True]))
        # turn the boolean element (tag 0x83) into a structure (0xA2)
        i = payload.rindex(b"\x83\x01\xff")
        payload[i] = 0xA2
        with pytest.raises(MalformedRecord):
            GooseParser().parse(bytes(payload), GOOSE)

    def test_double_float_rejected(self):
        payload = bytearray(wire.goose_pdu(1, "r", "d", "g", 1, 0, [True]))
        i = payload.rindex(b"\x83\x01\xff")
        payload[i:i + 3] = b"\x87\x01\x0b"
        with pytest.raises(MalformedRecord):
            GooseParser().parse(bytes(payload), GOOSE)


FM = FlowMeta(5.0, "10.0.0.5", "10.0.0.6", 40002, 5010, 13)


class TestFmsg:
    def test_float_register(self):
        rec = FmsgParser().parse(wire.fmsg([(40, wire.FMSG_FLOAT32, 0.98)]), FM)
        assert rec.msg_type == "UnsolicitedWrite"
        assert rec.values == {Addr(Space.FMSG_REGISTER, 40): wire.f32_round(0.98)}

    def test_bit_exact_layout(self):
        raw = bytes.fromhex("A5 46 01 00 0D 00 FF FF FF FE")
        raw += struct.pack(">H", sum(raw) & 0xFFFF)
        assert raw == wire.fmsg([(13, wire.FMSG_INT32, -2)])
        assert FmsgParser().parse(raw, FM).values == {Addr(Space.FMSG_REGISTER, 13): -2}

    def test_heartbeat(self):
        rec = FmsgParser().parse(wire.fmsg([]), FM)
        assert rec.values == {}

    def test_replay_gives_two_records(self):
        msg = wire.fmsg([(20, wire.FMSG_INT32, 1)])
        p = FmsgParser()
        a = p.parse(msg, FM)
        b = p.parse(msg, FlowMeta(5.01, FM.src, FM.dst, FM.src_port, FM.dst_port, 14))
        assert a.values == b.values and a.timestamp != b.timestamp

    @pytest.mark.parametrize("mutate", [
        lambda b: b"\xA5\x47" + b[2:],
        lambda b: b[:-1] + bytes([b[-1] ^ 1]),
        lambda b: b[:-3],
    ])
    def test_bad_frames(self, mutate):
        with pytest.raises(MalformedRecord):
            FmsgParser().parse(mutate(wire.fmsg([(1, 0, 5)])), FM)


def test_record_dict_is_json_ready():
    rec = ModbusParser().parse(bytes.fromhex("00 01 00 00 00 06 01 06 00 0A 00 01"), REQ)
    d = rec.to_dict()
    assert d["protocol"] == "MODBUS_TCP" and d["src"] == "10.0.0.1"


def test_addr_text_roundtrip():
    for a in (Addr(H, 3), Addr(G, 41, 2)):
        assert Addr.parse(str(a)) == a
    with pytest.raises(ValueError):
        Addr.parse("MODBUS_HOLDING")
