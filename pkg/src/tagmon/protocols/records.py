"""Uniform record types shared by every protocol parser."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Dict, NamedTuple, Optional, Tuple


class ProtocolId(str, enum.Enum):
    MODBUS_TCP = "MODBUS_TCP"
    DNP3 = "DNP3"
    C37118 = "C37118"
    GOOSE = "GOOSE"
    FMSG = "FMSG"
    UNKNOWN = "UNKNOWN"


class Space(str, enum.Enum):
    MODBUS_HOLDING = "MODBUS_HOLDING"
    MODBUS_COIL = "MODBUS_COIL"
    DNP3_GROUP_VAR = "DNP3_GROUP_VAR"
    C37118_PHASOR = "C37118_PHASOR"
    C37118_ANALOG = "C37118_ANALOG"
    C37118_DIGITAL = "C37118_DIGITAL"
    GOOSE_DATASET = "GOOSE_DATASET"
    FMSG_REGISTER = "FMSG_REGISTER"


class Addr(NamedTuple):
    """Attribute address: (space, index, subindex)."""

    space: Space
    index: int
    subindex: Optional[int] = None

    def __str__(self) -> str:
        if self.subindex is None:
            return f"{self.space.value}:{self.index}"
        return f"{self.space.value}:{self.index}:{self.subindex}"

    @classmethod
    def parse(cls, text: str) -> "Addr":
        parts = text.split(":")
        if len(parts) not in (2, 3):
            raise ValueError(f"bad attribute address {text!r}")
        space = Space(parts[0])
        index = int(parts[1])
        sub = int(parts[2]) if len(parts) == 3 else None
        if index < 0:
            raise ValueError(f"negative index in {text!r}")
        return cls(space, index, sub)


# Reserved indices for header fields surfaced as values.
C37_FREQ = 0xFFFF
C37_DFREQ = 0xFFFE
C37_STAT = 0xFFFF
GOOSE_STNUM = 0xFFFF
GOOSE_SQNUM = 0xFFFE


MESSAGE_TYPES: Dict[ProtocolId, frozenset] = {
    ProtocolId.MODBUS_TCP: frozenset({
        "ReadHoldingRegistersRequest", "ReadHoldingRegistersResponse",
        "WriteSingleRegisterRequest", "WriteSingleRegisterResponse",
        "ExceptionResponse",
    }),
    ProtocolId.DNP3: frozenset({
        "ReadRequest", "OperateRequest", "ReadResponse", "OperateResponse",
    }),
    ProtocolId.C37118: frozenset({"DataFrame", "ConfigFrame2", "UndecodableData"}),
    ProtocolId.GOOSE: frozenset({"GooseMulticast"}),
    ProtocolId.FMSG: frozenset({"UnsolicitedWrite"}),
}


def valid_message_type(proto: ProtocolId, msg_type: str) -> bool:
    if msg_type.startswith("Unsupported("):
        return proto in (ProtocolId.MODBUS_TCP, ProtocolId.DNP3)
    return msg_type in MESSAGE_TYPES.get(proto, ())


class MalformedRecord(ValueError):
    """Payload could not be decoded; counted by the caller, never fatal."""


@dataclass(slots=True)
class FlowMeta:
    """Where a payload came from. ``src``/``dst`` are IP strings or MACs."""

    timestamp: float
    src: str
    dst: str
    src_port: Optional[int] = None
    dst_port: Optional[int] = None
    raw_ref: int = 0


@dataclass(slots=True)
class ParsedRecord:
    timestamp: float
    source: str
    destination: str
    protocol: ProtocolId
    msg_type: str
    values: Dict[Addr, Any] = field(default_factory=dict)
    raw_ref: int = 0

    @property
    def proto_msg(self) -> Tuple[ProtocolId, str]:
        return (self.protocol, self.msg_type)

    def to_dict(self) -> dict:
        return {
            "t": self.timestamp,
            "src": self.source,
            "dst": self.destination,
            "protocol": self.protocol.value,
            "msg_type": self.msg_type,
            "values": {str(k): _jsonable(v) for k, v in self.values.items()},
            "raw_ref": self.raw_ref,
        }


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    return v
