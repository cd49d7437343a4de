"""Discrete-event simulation of the substation network.

Every frame is built when its delivery event fires, so the frame list is
already in capture order and TCP sequence numbers follow the wire order
even when an in-path device delays a segment. Normal behaviour draws from
one RNG; attack decisions draw from a second one, so a scenario run shares
its pre-attack traffic with the normal run of the same seed.
"""

from __future__ import annotations

import heapq
import json
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from ..capture.pcap import write_pcap
from . import wire
from .scenarios import Manifest, ScenarioSpec, attack_window, manifest_for, scenario as get_scenario
from .topology import (C37_PORT, DEVICES, DNP3_MASTER, DNP3_OUTSTATION, DNP3_PORT, FMSG_CMD_BASE,
                       FMSG_CURRENT_BASE, FMSG_PMU_BASE, FMSG_PORT, FMSG_STATUS_BASE, GOOSE_2240_DST,
                       GOOSE_751_DST, INTRUDER, MODBUS_PORT, PDC_SCALE, PMUS, RELAYS, RELAYS_2240,
                       RELAYS_3530, DeviceSpec)

EPOCH = 1_700_000_000.0
PMU_BASE = (1.00, 0.99, 0.98, 0.985)
RELAY_CURRENT = (100.0, 80.0, 60.0, 40.0, 30.0)
FEEDER_CURRENT = 50.0
NOISE = 0.002          # relative, uniform +-; well below half of every 1% threshold
JITTER = 0.015         # periodic sends land in [nominal, nominal + JITTER)
COMMAND_PERIOD = 5.0
COMMAND_PHASE = 0.10


class TopologyError(ValueError):
    """The device list cannot be simulated."""


@dataclass
class SimConfig:
    duration: float = 300.0
    seed: int = 0
    epoch: float = EPOCH
    devices: Tuple[DeviceSpec, ...] = DEVICES


@dataclass
class SimResult:
    frames: List[Tuple[float, bytes]]
    manifest: Manifest
    trace: List[Tuple[float, str, str, str, str]] = field(default_factory=list)

    def write(self, out_dir, stem: Optional[str] = None) -> Tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if stem is None:
            tag = "normal" if self.manifest.scenario is None else f"scenario{self.manifest.scenario:02d}"
            stem = f"{tag}_seed{self.manifest.seed}"
        pcap = out / f"{stem}.pcap"
        man = out / f"{stem}.manifest.json"
        write_pcap(pcap, self.frames)
        man.write_text(json.dumps(self.manifest.to_dict(), indent=2, sort_keys=True) + "\n")
        return pcap, man


def validate_topology(devices: Sequence[DeviceSpec]) -> None:
    names = [d.name for d in devices]
    if len(set(names)) != len(names):
        raise TopologyError("duplicate device names")
    addrs = [a.lower() for d in devices for a in (d.ip, d.mac, *d.extra)]
    if len(set(addrs)) != len(addrs):
        raise TopologyError("duplicate device addresses")
    required = {"SEL-3555", "SEL-2240", "SEL-3530", "SEL-3505", "SEL-751", "PDC", *PMUS, *RELAYS}
    missing = required - set(names)
    if missing:
        raise TopologyError(f"missing devices: {', '.join(sorted(missing))}")


class _Relay:
    def __init__(self, name: str, base: float):
        self.name = name
        self.base = base
        self.closed = 1


class Simulator:
    def __init__(self, cfg: SimConfig, spec: Optional[ScenarioSpec] = None):
        if not cfg.duration > 0:
            raise ValueError("duration must be positive")
        validate_topology(cfg.devices)
        self.cfg = cfg
        self.duration = cfg.duration
        self.spec = spec
        self.rng = random.Random(cfg.seed)
        self.arng = random.Random(cfg.seed * 7919 + (spec.scenario_id if spec else 0))
        self.window = attack_window(cfg.duration)
        self.ep = {d.name: d.endpoint() for d in cfg.devices}
        self.ep[INTRUDER.name] = INTRUDER.endpoint()
        self.frames: List[Tuple[float, bytes]] = []
        self.trace: List[Tuple[float, str, str, str, str]] = []
        self._heap: list = []
        self._seq = 0
        self.relays = {r: _Relay(r, RELAY_CURRENT[i]) for i, r in enumerate(RELAYS)}
        self.pdc_latest: Dict[int, float] = {}
        self.cache_2240: Dict[str, Tuple[int, float]] = {}
        self.cache_3530: Dict[str, Tuple[int, float]] = {}
        self.feeder_latest = FEEDER_CURRENT
        self.goose_state = {r: 1.0 for r in RELAYS_2240}
        self.hmi_desired = {r: 1 for r in RELAYS}
        self.frozen: Dict[str, float] = {}
        self.txn: Dict[str, int] = {}
        self.dnp3_seq = [0, 0]
        self.goose_num = {"SEL-2240": [1, 0], "SEL-751": [1, 0]}
        self._flows: Dict[Tuple[str, str, int], wire.TcpFlow] = {}
        self._ident: Dict[str, int] = {}
        self.injected = 0

    # -- event machinery ---------------------------------------------------

    def at(self, t: float, fn: Callable, *args) -> None:
        if t >= self.duration:
            return
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, fn, args))

    def run(self) -> None:
        self._schedule()
        heap = self._heap
        while heap:
            t, _, fn, args = heapq.heappop(heap)
            fn(t, *args)

    def active(self, t: float) -> bool:
        return self.spec is not None and self.window[0] <= t < self.window[1]

    def attack(self, t: float, mode: str, target: Optional[str] = None) -> bool:
        s = self.spec
        if s is None or s.mode != mode or not self.active(t):
            return False
        return target is None or target in s.targets

    def noisy(self, v: float) -> float:
        return v * (1.0 + self.rng.uniform(-NOISE, NOISE))

    def jitter(self) -> float:
        return self.rng.uniform(0.0, JITTER)

    # -- transmission ------------------------------------------------------

    def flow(self, client: str, server: str, port: int) -> wire.TcpFlow:
        key = (client, server, port)
        f = self._flows.get(key)
        if f is None:
            cport = 40000 + len(self._flows)
            f = wire.TcpFlow(self.ep[client], self.ep[server], cport, port,
                             self.rng.getrandbits(32), self.rng.getrandbits(32))
            self._flows[key] = f
        return f

    def _record(self, t, frame, proto, msg, src, dst):
        self.frames.append((self.cfg.epoch + t, frame))
        self.trace.append((self.cfg.epoch + t, proto, msg, src, dst))

    def tcp(self, t: float, client: str, server: str, port: int, from_client: bool,
            payload: bytes, proto: str, msg: str, then: Optional[Callable] = None) -> None:
        self.at(t, self._tx_tcp, client, server, port, from_client, payload, proto, msg, then)

    def _tx_tcp(self, t, client, server, port, from_client, payload, proto, msg, then):
        frame = self.flow(client, server, port).segment(from_client, payload)
        src, dst = (client, server) if from_client else (server, client)
        self._record(t, frame, proto, msg, src, dst)
        if then is not None:
            then(t)

    def udp(self, t, src, dst, sport, dport, payload, proto, msg):
        self.at(t, self._tx_udp, src, dst, sport, dport, payload, proto, msg)

    def _tx_udp(self, t, src, dst, sport, dport, payload, proto, msg):
        ident = self._ident.get(src, 0) + 1
        self._ident[src] = ident
        frame = wire.udp_frame(self.ep[src], self.ep[dst], sport, dport, payload, ident)
        self._record(t, frame, proto, msg, src, dst)

    def next_txn(self, client: str) -> int:
        n = (self.txn.get(client, 0) + 1) & 0xFFFF
        self.txn[client] = n
        return n

    # -- schedules ---------------------------------------------------------

    def _schedule(self) -> None:
        for k, p in enumerate(PMUS):
            self.at(0.001 * (k + 1), self.pmu_config, k)
            self.at(0.1 + 0.002 * k + self.jitter(), self.pmu_data, k, 1)
        self.at(0.30 + self.jitter(), self.poll_pdc, 0)
        for i, r in enumerate(RELAYS_2240):
            self.at(0.30 + 0.02 * i + self.jitter(), self.poll_relay, "SEL-2240", r, 0)
        for i, r in enumerate(RELAYS_3530):
            self.at(0.40 + 0.02 * i + self.jitter(), self.poll_relay, "SEL-3530", r, 0)
        self.at(0.45 + self.jitter(), self.goose_751, 0)
        self.at(0.47 + self.jitter(), self.goose_2240, 0, False)
        self.at(0.50 + self.jitter(), self.hmi_poll, 0)
        self.at(0.60 + self.jitter(), self.report_3530, 0)
        self.at(COMMAND_PERIOD + COMMAND_PHASE, self.hmi_command, 1)
        if self.spec is not None and self.spec.mode == "forge":
            start, end = self.window
            t = start
            n = 0
            while t < end:
                self.at(t, self.forge, n)
                n += 1
                t = start + n * self.spec.forge_period

    # -- PMUs and the measurement chain -----------------------------------

    def _pmu_layout(self, k: int) -> wire.C37Pmu:
        fmt = wire.C37_FMT_POLAR | wire.C37_FMT_PH_FLOAT | wire.C37_FMT_FREQ_FLOAT
        return wire.C37Pmu(PMUS[k], k + 1, fmt, ["VA"])

    def _soc(self, t: float) -> Tuple[int, int]:
        ts = self.cfg.epoch + t
        soc = int(ts)
        return soc, int(round((ts - soc) * 1e6)) % 1_000_000

    def pmu_config(self, t, k):
        soc, frac = self._soc(t)
        payload = wire.c37_config2(k + 1, soc, frac, [self._pmu_layout(k)])
        self._tx_udp(t, PMUS[k], "PDC", C37_PORT, C37_PORT, payload, "C37118", "ConfigFrame2")

    def pmu_data(self, t, k, n):
        self.at(0.1 * (n + 1) + 0.002 * k + self.jitter(), self.pmu_data, k, n + 1)
        mag = self.noisy(PMU_BASE[k])
        ang = -0.05 * k + self.rng.uniform(-0.001, 0.001)
        freq = 60.0 + self.rng.uniform(-0.005, 0.005)
        name = PMUS[k]
        if self.attack(t, "scale", name):
            mag *= self.spec.scale
        if self.attack(t, "drop", name) and self.arng.random() < self.spec.drop_probability:
            return
        self.pdc_latest[k] = wire.f32_round(mag)
        soc, frac = self._soc(t)
        block = self._pmu_layout(k).data_block(0, [(mag, ang)], freq, 0.0)
        payload = wire.c37_data(k + 1, soc, frac, [block])
        self._tx_udp(t, name, "PDC", C37_PORT, C37_PORT, payload, "C37118", "DataFrame")

    def poll_pdc(self, t, n):
        self.at(0.30 + 0.5 * (n + 1) + self.jitter(), self.poll_pdc, n + 1)
        txn = self.next_txn("SEL-3505")
        req = wire.modbus_read_request(txn, 1, 0, len(PMUS))
        self.tcp(t, "SEL-3505", "PDC", MODBUS_PORT, True, req, "MODBUS_TCP",
                 "ReadHoldingRegistersRequest", lambda tt: self.pdc_reply(tt, txn))

    def pdc_reply(self, t, txn):
        regs = []
        for k in range(len(PMUS)):
            v = self.pdc_latest.get(k, 0.0)
            if self.attack(t, "scale", "PDC") and k == 0:
                v *= self.spec.scale
            regs.append(int(round(v * PDC_SCALE)))
        resp = wire.modbus_read_response(txn, 1, regs)
        t_resp = t + self.rng.uniform(0.001, 0.005)
        self.tcp(t_resp, "SEL-3505", "PDC", MODBUS_PORT, False, resp, "MODBUS_TCP",
                 "ReadHoldingRegistersResponse", lambda tt: self.forward_3505(tt, regs))

    def forward_3505(self, t, regs):
        values = [r / PDC_SCALE for r in regs]
        if self.attack(t, "scale", "SEL-3505"):
            values[0] *= self.spec.scale
        payload = wire.fmsg([(FMSG_PMU_BASE + i, wire.FMSG_FLOAT32, v) for i, v in enumerate(values)])
        self.tcp(t + self.rng.uniform(0.001, 0.005), "SEL-3505", "SEL-3555", FMSG_PORT, True,
                 payload, "FMSG", "UnsolicitedWrite")

    # -- relays ------------------------------------------------------------

    def relay_regs(self, relay: str) -> Tuple[int, int, int]:
        r = self.relays[relay]
        current = self.noisy(r.base) if r.closed else 0.0
        hi, lo = wire.float_regs(current)
        return r.closed, hi, lo

    def poll_relay(self, t, ctl, relay, n):
        i = (RELAYS_2240 if ctl == "SEL-2240" else RELAYS_3530).index(relay)
        phase = (0.30 if ctl == "SEL-2240" else 0.40) + 0.02 * i
        self.at(phase + (n + 1) + self.jitter(), self.poll_relay, ctl, relay, n + 1)
        txn = self.next_txn(ctl)
        req = wire.modbus_read_request(txn, 1, 0, 3)
        send_t = t
        if ctl == "SEL-3530" and self.attack(t, "mitm-delay"):
            send_t = t + self.arng.uniform(*self.spec.delay)
            self.injected += 1
        self.tcp(send_t, ctl, relay, MODBUS_PORT, True, req, "MODBUS_TCP",
                 "ReadHoldingRegistersRequest", lambda tt: self.relay_reply(tt, ctl, relay, txn))

    def relay_reply(self, t, ctl, relay, txn):
        regs = self.relay_regs(relay)
        resp = wire.modbus_read_response(txn, 1, regs)
        self.tcp(t + self.rng.uniform(0.001, 0.005), ctl, relay, MODBUS_PORT, False, resp,
                 "MODBUS_TCP", "ReadHoldingRegistersResponse",
                 lambda tt: self._cache(ctl, relay, regs))

    def _cache(self, ctl, relay, regs):
        status, hi, lo = regs
        current = wire.f32_round(_regs_float(hi, lo))
        (self.cache_2240 if ctl == "SEL-2240" else self.cache_3530)[relay] = (status, current)

    def relay_write(self, t, client, relay, value, port=MODBUS_PORT):
        """Client writes the breaker register; the relay acknowledges and acts."""
        txn = self.next_txn(client)
        req = wire.modbus_write_request(txn, 1, 0, value)

        def on_request(tt):
            resp = wire.modbus_write_response(txn, 1, 0, value)
            self.tcp(tt + self.rng.uniform(0.001, 0.005), client, relay, port, False, resp,
                     "MODBUS_TCP", "WriteSingleRegisterResponse")
            if self.attack(tt, "ignore", relay):
                self.injected += 1
                return
            if self.attack(tt, "delay", relay):
                self.injected += 1
                self.at(tt + self.spec.delay[0], self._set_relay, relay, value)
                return
            self._set_relay(tt, relay, value)

        self.tcp(t, client, relay, port, True, req, "MODBUS_TCP", "WriteSingleRegisterRequest",
                 on_request)

    def _set_relay(self, t, relay, value):
        self.relays[relay].closed = 1 if value else 0

    # -- SEL-2240 / SEL-751 GOOSE ------------------------------------------

    def _goose(self, t, pub, dst_mac, appid, values, new_state):
        st_sq = self.goose_num[pub]
        if new_state:
            st_sq[0] += 1
            st_sq[1] = 0
        else:
            st_sq[1] += 1
        ref = f"{pub.replace('-', '')}/LLN0$GO$gcb01"
        payload = wire.goose_pdu(appid, ref, f"{pub.replace('-', '')}/LLN0$DS1", pub,
                                 st_sq[0], st_sq[1], values, self.cfg.epoch + t)
        frame = wire.goose_frame(self.ep[pub], dst_mac, payload)
        sub = "SEL-751" if pub == "SEL-2240" else "SEL-2240"
        self._record(t, frame, "GOOSE", "GooseMulticast", pub, sub)

    def goose_751(self, t, n):
        self.at(0.45 + (n + 1) + self.jitter(), self.goose_751, n + 1)
        value = wire.f32_round(self.noisy(FEEDER_CURRENT))
        self.feeder_latest = value
        self._goose(t, "SEL-751", GOOSE_751_DST, 2, [value], False)

    def goose_2240(self, t, n, event):
        if not event:
            self.at(0.47 + (n + 1) + self.jitter(), self.goose_2240, n + 1, False)
        values = [self.goose_state[r] for r in RELAYS_2240]
        self._goose(t, "SEL-2240", GOOSE_2240_DST, 1, values, event)

    # -- HMI and the DNP3 / FMSG command paths ----------------------------

    def _dnp3(self, t, from_master, fc, objects, msg, then=None):
        d = 0 if from_master else 1
        seq = self.dnp3_seq[d]
        self.dnp3_seq[d] = (seq + 1) & 0x3F
        iin = None if from_master else 0
        apdu = wire.dnp3_apdu(seq, fc, objects, iin)
        if from_master:
            frame = wire.dnp3_link(DNP3_OUTSTATION, DNP3_MASTER, wire.DNP3_MASTER_CTRL, apdu)
        else:
            frame = wire.dnp3_link(DNP3_MASTER, DNP3_OUTSTATION, wire.DNP3_OUTSTATION_CTRL, apdu)
        self.tcp(t, "SEL-3555", "SEL-2240", DNP3_PORT, from_master, frame, "DNP3", msg, then)

    def hmi_poll(self, t, n):
        self.at(0.50 + (n + 1) + self.jitter(), self.hmi_poll, n + 1)
        self._dnp3(t, True, 0x01, wire.dnp3_class_poll((0,)), "ReadRequest",
                   lambda tt: self._dnp3(tt + self.rng.uniform(0.002, 0.008), False, 0x81,
                                         self._report_2240(tt), "ReadResponse"))

    def _report_2240(self, t) -> bytes:
        status = [float(self.cache_2240.get(r, (1, 0.0))[0]) for r in RELAYS_2240]
        currents = [self.cache_2240.get(r, (1, 0.0))[1] for r in RELAYS_2240]
        feeder = self.feeder_latest
        if self.attack(t, "scale", "SEL-2240"):
            currents = [c * self.spec.scale for c in currents]
            feeder *= self.spec.scale
        if self.attack(t, "freeze", "SEL-2240"):
            for i, r in enumerate(RELAYS_2240):
                status[i] = self.frozen.setdefault(r, status[i])
        return wire.dnp3_objects_range(30, 5, 0, status + currents + [feeder])

    def report_3530(self, t, n):
        self.at(0.60 + (n + 1) + self.jitter(), self.report_3530, n + 1)
        status = [self.cache_3530.get(r, (1, 0.0))[0] for r in RELAYS_3530]
        currents = [self.cache_3530.get(r, (1, 0.0))[1] for r in RELAYS_3530]
        if self.attack(t, "scale", "SEL-3530"):
            currents = [c * self.spec.scale for c in currents]
        if self.attack(t, "freeze", "SEL-3530"):
            for i, r in enumerate(RELAYS_3530):
                status[i] = int(self.frozen.setdefault(r, status[i]))
        regs = [(FMSG_STATUS_BASE + i, wire.FMSG_INT32, s) for i, s in enumerate(status)]
        regs += [(FMSG_CURRENT_BASE + i, wire.FMSG_FLOAT32, c) for i, c in enumerate(currents)]
        payload = wire.fmsg(regs)
        self.tcp(t, "SEL-3530", "SEL-3555", FMSG_PORT, True, payload, "FMSG", "UnsolicitedWrite")
        if self.attack(t, "mitm-replay") and self.arng.random() < self.spec.replay_probability:
            self.injected += 1
            self.tcp(t + self.arng.uniform(*self.spec.replay_offset), "SEL-3530", "SEL-3555",
                     FMSG_PORT, True, payload, "FMSG", "UnsolicitedWrite")

    def hmi_command(self, t, k):
        self.at(COMMAND_PERIOD * (k + 1) + COMMAND_PHASE, self.hmi_command, k + 1)
        relay = RELAYS[(k - 1) % len(RELAYS)]
        value = 1 - self.hmi_desired[relay]
        self.hmi_desired[relay] = value
        if relay in RELAYS_2240:
            idx = RELAYS_2240.index(relay)
            objects = wire.dnp3_objects_indexed(41, 2, [(idx, value)])
            self._dnp3(t, True, 0x04, objects, "OperateRequest",
                       lambda tt: self.operate_2240(tt, relay, idx, value, objects))
        else:
            idx = RELAYS_3530.index(relay)
            payload = wire.fmsg([(FMSG_CMD_BASE + idx, wire.FMSG_INT32, value)])
            self.tcp(t, "SEL-3555", "SEL-3530", FMSG_PORT, True, payload, "FMSG",
                     "UnsolicitedWrite", lambda tt: self.command_3530(tt, relay, value))

    def operate_2240(self, t, relay, idx, value, objects):
        self._dnp3(t + self.rng.uniform(0.002, 0.008), False, 0x81, objects, "OperateResponse")
        t_write = t + self.rng.uniform(0.010, 0.030)
        t_goose = t + self.rng.uniform(0.010, 0.040)
        if self.attack(t, "drop", "SEL-2240"):
            self.injected += 1
            return
        self.relay_write(t_write, "SEL-2240", relay, value)
        self.at(t_goose, self._goose_command, relay, float(value))

    def _goose_command(self, t, relay, value):
        self.goose_state[relay] = value
        self.goose_2240(t, 0, True)

    def command_3530(self, t, relay, value):
        if self.attack(t, "drop", "SEL-3530"):
            self.injected += 1
            return
        self.relay_write(t + self.rng.uniform(0.010, 0.030), "SEL-3530", relay, value)

    # -- intruder ----------------------------------------------------------

    def forge(self, t, n):
        targets = self.spec.targets
        relay = targets[n % len(targets)]
        # Each target alternates open/close on its own.
        value = (n // len(targets)) % 2 == 1
        self.injected += 1
        self.relay_write(t, INTRUDER.name, relay, int(value))


def _regs_float(hi: int, lo: int) -> float:
    return struct.unpack(">f", struct.pack(">HH", hi, lo))[0]


def simulate(duration: float = 300.0, seed: int = 0, scenario: Optional[int] = None,
             cfg: Optional[SimConfig] = None) -> SimResult:
    """Generate one capture: normal traffic, or traffic under ``scenario`` (1-15)."""
    if cfg is None:
        cfg = SimConfig(duration=duration, seed=seed)
    if scenario is not None:
        return inject_scenario(cfg, get_scenario(scenario))
    return _run(cfg, None)


def inject_scenario(base: SimConfig, spec: ScenarioSpec) -> SimResult:
    """Re-run ``base`` with the manipulation of ``spec`` applied during its window."""
    start, end = attack_window(base.duration)
    if not 0 <= start < end <= base.duration:
        raise ValueError("scenario window outside the simulated duration")
    return _run(base, spec)


def _run(cfg: SimConfig, spec: Optional[ScenarioSpec]) -> SimResult:
    sim = Simulator(cfg, spec)
    sim.run()
    manifest = manifest_for(spec.scenario_id if spec else None, cfg.seed, cfg.duration, cfg.epoch)
    manifest.frames = len(sim.frames)
    manifest.notes = {"injected": sim.injected}
    return SimResult(sim.frames, manifest, sim.trace)
