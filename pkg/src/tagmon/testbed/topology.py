"""Substation devices and the monitoring configuration that matches them.

:func:`default_config` produces the engine configuration shipped as
``configs/testbed.yaml``: the device directory, one raw rule per tag
source (device-range rows expanded per device), the computed tags that
unpack vector registers, and the condition set instantiated per device.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from .wire import Endpoint

FMSG_PORT = 5010
MODBUS_PORT = 502
DNP3_PORT = 20000
C37_PORT = 4713
DNP3_MASTER = 1
DNP3_OUTSTATION = 10

# Multicast destinations: the GOOSE stream published by SEL-2240 is
# subscribed by SEL-751 and vice versa.
GOOSE_2240_DST = "01:0c:cd:01:00:01"
GOOSE_751_DST = "01:0c:cd:01:00:02"

PMUS = ("PMU1", "PMU2", "PMU3", "PMU4")
RELAYS_2240 = ("Relay1", "Relay2")
RELAYS_3530 = ("Relay3", "Relay4", "Relay5")
RELAYS = RELAYS_2240 + RELAYS_3530

# Register maps
RELAY_STATUS_REG = 0          # H0: breaker status (1 closed), also the command register
RELAY_CURRENT_REG = 1         # H1-H2: load current, float32 high word first
PDC_FIRST_REG = 0             # H0..H3: PMU magnitudes x PDC_SCALE
PDC_SCALE = 10000
FMSG_PMU_BASE = 40            # SEL-3505 -> SEL-3555 float registers 40..43
FMSG_CMD_BASE = 13            # SEL-3555 -> SEL-3530 int registers 13..15 (Relay3..5)
FMSG_STATUS_BASE = 20         # SEL-3530 -> SEL-3555 int registers 20..22
FMSG_CURRENT_BASE = 30        # SEL-3530 -> SEL-3555 float registers 30..32

ATTACKER = "Intruder"


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    ip: str
    mac: str
    role: str
    extra: Tuple[str, ...] = ()  # additional addresses attributed to the device

    def endpoint(self) -> Endpoint:
        return Endpoint(self.name, self.ip, self.mac)


def _mac(n: int) -> str:
    return f"02:00:00:00:00:{n:02x}"


DEVICES: Tuple[DeviceSpec, ...] = (
    DeviceSpec("SEL-3555", "10.10.0.1", _mac(1), "HMI"),
    DeviceSpec("SEL-2240", "10.10.0.2", _mac(2), "relay control logic (Relay1-2)",
               (GOOSE_751_DST,)),
    DeviceSpec("SEL-3530", "10.10.0.3", _mac(3), "relay control logic (Relay3-5)"),
    DeviceSpec("SEL-3505", "10.10.0.4", _mac(4), "data concentrator"),
    DeviceSpec("SEL-751", "10.10.0.5", _mac(5), "feeder relay", (GOOSE_2240_DST,)),
    DeviceSpec("PDC", "10.10.0.10", _mac(0x10), "phasor data concentrator"),
) + tuple(
    DeviceSpec(p, f"10.10.0.{11 + i}", _mac(0x11 + i), f"PMU bus {i + 1}") for i, p in enumerate(PMUS)
) + tuple(
    DeviceSpec(r, f"10.10.0.{21 + i}", _mac(0x21 + i), "relay") for i, r in enumerate(RELAYS)
)

INTRUDER = DeviceSpec(ATTACKER, "10.10.0.66", _mac(0x66), "intruder")


def device(name: str) -> DeviceSpec:
    for d in DEVICES:
        if d.name == name:
            return d
    if name == ATTACKER:
        return INTRUDER
    raise KeyError(name)


def directory() -> Dict[str, List[str]]:
    """Device name -> addresses, as used by the engine configuration."""
    return {d.name: [d.ip, d.mac, *d.extra] for d in DEVICES}


# ------------------------------------------------------------- configuration


def _raw(tag, src, dst, protocol, msg_type, addresses, description):
    return {"id": tag, "src": src, "dst": dst, "protocol": protocol, "msg_type": msg_type,
            "addresses": list(addresses), "description": description}


def raw_tags() -> List[dict]:
    out = []
    for p in PMUS:
        out.append(_raw(f"1.{p}", p, "PDC", "C37118", "DataFrame", ["C37118_PHASOR:0#0"],
                        f"voltage magnitude measured by {p}"))
    out.append(_raw("2", "PDC", "SEL-3505", "MODBUS_TCP", "ReadHoldingRegistersResponse",
                    [f"MODBUS_HOLDING:{PDC_FIRST_REG + i}" for i in range(len(PMUS))],
                    "PMU magnitudes served by the PDC (scaled integers)"))
    out.append(_raw("3", "SEL-3505", "SEL-3555", "FMSG", "UnsolicitedWrite",
                    [f"FMSG_REGISTER:{FMSG_PMU_BASE + i}" for i in range(len(PMUS))],
                    "PMU magnitudes forwarded by SEL-3505"))
    for ctl, relays, base in (("SEL-2240", RELAYS_2240, 4), ("SEL-3530", RELAYS_3530, 8)):
        for r in relays:
            out.append(_raw(f"{base}.{r}", ctl, r, "MODBUS_TCP", "WriteSingleRegisterRequest",
                            [f"MODBUS_HOLDING:{RELAY_STATUS_REG}"], f"{ctl} command to {r}"))
            out.append(_raw(f"{base + 1}.{r}", ctl, r, "MODBUS_TCP", "ReadHoldingRegistersRequest",
                            [f"MODBUS_HOLDING:{RELAY_STATUS_REG}"], f"{ctl} status poll of {r}"))
            out.append(_raw(f"{base + 2}.{r}", r, ctl, "MODBUS_TCP", "WriteSingleRegisterResponse",
                            [f"MODBUS_HOLDING:{RELAY_STATUS_REG}"], f"{r} command acknowledgement"))
            out.append(_raw(f"{base + 3}.{r}", r, ctl, "MODBUS_TCP", "ReadHoldingRegistersResponse",
                            [f"MODBUS_HOLDING:{RELAY_STATUS_REG + i}" for i in range(3)],
                            f"{r} status and current registers"))
    for i, r in enumerate(RELAYS_2240):
        out.append(_raw(f"12.{r}", "SEL-3555", "SEL-2240", "DNP3", "OperateRequest",
                        [f"DNP3_GROUP_VAR:41:{i}"], f"HMI command for {r}"))
    out.append(_raw("13", "SEL-3555", "SEL-2240", "DNP3", "ReadRequest", ["DNP3_GROUP_VAR:60:0"],
                    "HMI integrity poll (class polls carry no point values)"))
    for i, r in enumerate(RELAYS_2240):
        out.append(_raw(f"14.{r}", "SEL-2240", "SEL-3555", "DNP3", "OperateResponse",
                        [f"DNP3_GROUP_VAR:41:{i}"], f"SEL-2240 operate echo for {r}"))
    out.append(_raw("15", "SEL-2240", "SEL-3555", "DNP3", "ReadResponse",
                    [f"DNP3_GROUP_VAR:30:{i}" for i in range(5)],
                    "SEL-2240 report: Relay1-2 status, Relay1-2 current, SEL-751 value"))
    for i, r in enumerate(RELAYS_3530):
        out.append(_raw(f"16.{r}", "SEL-3555", "SEL-3530", "FMSG", "UnsolicitedWrite",
                        [f"FMSG_REGISTER:{FMSG_CMD_BASE + i}"], f"HMI command for {r}"))
    out.append(_raw("17", "SEL-3530", "SEL-3555", "FMSG", "UnsolicitedWrite",
                    [f"FMSG_REGISTER:{FMSG_STATUS_BASE + i}" for i in range(3)]
                    + [f"FMSG_REGISTER:{FMSG_CURRENT_BASE + i}" for i in range(3)],
                    "SEL-3530 report: Relay3-5 status then current"))
    for tag, relays in (("18", RELAYS_2240), ("19", RELAYS_3530)):
        for r in relays:
            out.append(_raw(f"{tag}.{r}", "*", r, "MODBUS_TCP", "WriteSingleRegisterRequest",
                            [f"MODBUS_HOLDING:{RELAY_STATUS_REG}"], f"any write to {r}"))
    for i, r in enumerate(RELAYS_2240):
        out.append(_raw(f"20.{r}", "SEL-2240", "SEL-751", "GOOSE", "GooseMulticast",
                        [f"GOOSE_DATASET:{i}"], f"SEL-2240 published status of {r}"))
    out.append(_raw("22", "SEL-751", "SEL-2240", "GOOSE", "GooseMulticast", ["GOOSE_DATASET:0"],
                    "SEL-751 published feeder current"))
    return out


def computed_tags() -> List[dict]:
    out = []
    for i, p in enumerate(PMUS):
        out.append({"id": f"2.{p}", "deps": ["2"], "func": f"x0[{i}] / {PDC_SCALE}"})
        out.append({"id": f"3.{p}", "deps": ["3"], "func": f"x0[{i}]"})
    for base, relays in ((7, RELAYS_2240), (11, RELAYS_3530)):
        for r in relays:
            out.append({"id": f"{base}s.{r}", "deps": [f"{base}.{r}"], "func": "x0[0]"})
            out.append({"id": f"{base}c.{r}", "deps": [f"{base}.{r}"], "func": "f32(x0[1], x0[2])"})
    for i, r in enumerate(RELAYS_2240):
        out.append({"id": f"15s.{r}", "deps": ["15"], "func": f"x0[{i}]"})
        out.append({"id": f"15c.{r}", "deps": ["15"], "func": f"x0[{2 + i}]"})
    out.append({"id": "15m", "deps": ["15"], "func": "x0[4]"})
    for i, r in enumerate(RELAYS_3530):
        out.append({"id": f"17s.{r}", "deps": ["17"], "func": f"x0[{i}]"})
        out.append({"id": f"17c.{r}", "deps": ["17"], "func": f"x0[{3 + i}]"})
    return out


def _cond(cid, group, kind, a, b=(), **kw):
    d = {"id": cid, "group": group, "kind": kind, "tags_a": list(a)}
    if b:
        d["tags_b"] = list(b)
    d.update(kw)
    return d


def conditions() -> List[dict]:
    pct = {"v_th": "1%"}
    out = []
    for p in PMUS:
        out.append(_cond(f"1.{p}", "1", "THRESHOLD_VALUE", [f"1.{p}"], nominal=1.0, **pct))
    for p in PMUS:
        out.append(_cond(f"2.{p}", "2", "THRESHOLD_TIME", [f"1.{p}"], t_lo=0.05, t_hi=0.15))
    for p in PMUS:
        out.append(_cond(f"3.{p}", "3", "MATCH", [f"1.{p}"], [f"2.{p}"], nominal=1.0, **pct))
    for p in PMUS:
        out.append(_cond(f"4.{p}", "4", "MATCH", [f"2.{p}"], [f"3.{p}"], nominal=1.0, **pct))
    for r in RELAYS_2240:
        out.append(_cond(f"5.{r}", "5", "POST", [f"4.{r}"], [f"7s.{r}"], window=1.1, nominal=1.0, **pct))
    for r in RELAYS_3530:
        out.append(_cond(f"5.{r}", "5", "POST", [f"8.{r}"], [f"11s.{r}"], window=1.1, nominal=1.0, **pct))
    for r in RELAYS_2240:
        out.append(_cond(f"6.{r}", "6", "MATCH", [f"7c.{r}"], [f"15c.{r}"], nominal=100.0, **pct))
    for r in RELAYS_2240:
        out.append(_cond(f"7.{r}", "7", "POST", [f"12.{r}"], [f"15s.{r}"], window=6.0, nominal=1.0, **pct))
    for r in RELAYS_2240:
        out.append(_cond(f"8.{r}", "8", "POST", [f"12.{r}"], [f"4.{r}"], window=0.3, nominal=1.0, **pct))
    for r in RELAYS_3530:
        out.append(_cond(f"9.{r}", "9", "MATCH", [f"11c.{r}"], [f"17c.{r}"], nominal=100.0, **pct))
    for r in RELAYS_3530:
        out.append(_cond(f"10.{r}", "10", "POST", [f"16.{r}"], [f"17s.{r}"], window=1.1, nominal=1.0, **pct))
    for r in RELAYS_3530:
        out.append(_cond(f"11.{r}", "11", "POST", [f"16.{r}"], [f"8.{r}"], window=0.3, nominal=1.0, **pct))
    for r in RELAYS_3530:
        out.append(_cond(f"12.{r}", "12", "THRESHOLD_TIME", [f"9.{r}"], t_lo=0.98, t_hi=1.02))
    out.append(_cond("13", "13", "THRESHOLD_TIME", ["17"], t_lo=0.95, t_hi=1.05))
    for r in RELAYS_2240:
        out.append(_cond(f"14.{r}", "14", "PRE", [f"18.{r}"], [f"12.{r}"], window=0.3, nominal=1.0, **pct))
    for r in RELAYS_3530:
        out.append(_cond(f"15.{r}", "15", "PRE", [f"19.{r}"], [f"16.{r}"], window=0.3, nominal=1.0, **pct))
    out.append(_cond("16", "16", "MATCH", ["22"], ["15m"], nominal=100.0, **pct))
    for r in RELAYS_2240:
        out.append(_cond(f"17.{r}", "17", "POST", [f"12.{r}"], [f"20.{r}"], window=1.0, nominal=1.0, **pct))
    return out


def default_config() -> dict:
    return {
        "version": 1,
        "fmsg_port": FMSG_PORT,
        "devices": directory(),
        "retention": {"max_obs": 10000, "max_age": 600.0},
        "tags": {"raw": raw_tags(), "computed": computed_tags()},
        "conditions": conditions(),
        "suppress_window": 0.0,
        "localization": {"half_life": None},
        "api": {"host": "127.0.0.1", "port": 8080},
        "stream": {"host": "127.0.0.1", "port": 8765, "buffer": 10000, "mqtt": None},
    }
