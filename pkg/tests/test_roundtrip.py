from __future__ import annotations

import pytest

from msggen import roundtrip
from tagmon.protocols import ProtocolId


@pytest.mark.parametrize("proto", [ProtocolId.MODBUS_TCP, ProtocolId.DNP3, ProtocolId.C37118,
                                   ProtocolId.GOOSE, ProtocolId.FMSG], ids=lambda p: p.value)
@pytest.mark.parametrize("seed", [1, 2])
def test_generated_messages_parse_back_exactly(proto, seed):
    checked, bad = roundtrip(proto, 300, seed)
    assert checked >= 300
    assert bad == [], bad[:3]
