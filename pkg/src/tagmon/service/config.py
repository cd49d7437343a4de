"""Engine configuration: YAML loading and full validation before start-up.

Every diagnostic carries the file name and line of the offending entry.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from ..capture import CaptureSpec
from ..capture.dispatch import default_port_table
from ..conditions import Condition, ConditionError, Kind
from ..localization.graph import REF_MEMORY
from ..protocols import ProtocolId, valid_message_type
from ..tagstore import (ComputedTagSpec, DagError, EndpointSel, RawTagRule, RuleError, AddrSel,
                        topo_order)
from ..tagstore.expr import ExprError
from ..tagstore.rules import looks_like_address
from ..tagstore.store import DEFAULT_MAX_AGE, DEFAULT_MAX_OBS

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """The configuration cannot be used; the message names file and line."""


# ------------------------------------------------------------------ loading


class _LineDict(dict):
    line = 0
    key_lines: Dict[str, int]


class _LineList(list):
    line = 0


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    d = _LineDict()
    d.line = node.start_mark.line + 1
    d.key_lines = {}
    for k_node, v_node in node.value:
        key = loader.construct_object(k_node, deep=True)
        if not isinstance(key, (str, int, float, bool)) or key is None:
            raise ConfigError(f"line {k_node.start_mark.line + 1}: unsupported key {key!r}")
        key = str(key)
        if key in d:
            raise ConfigError(f"line {k_node.start_mark.line + 1}: duplicate key {key!r}")
        d[key] = loader.construct_object(v_node, deep=True)
        d.key_lines[key] = k_node.start_mark.line + 1
    return d


def _construct_sequence(loader, node):
    out = _LineList(loader.construct_object(n, deep=True) for n in node.value)
    out.line = node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_sequence)


def parse_yaml(text: str, name: str = "<config>"):
    try:
        return yaml.load(text, Loader=_Loader)
    except ConfigError as exc:
        raise ConfigError(f"{name}:{str(exc)[5:]}") from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 0
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{name}:{line}: YAML syntax error: {problem}") from None


# ------------------------------------------------------------------ model


@dataclass
class StreamSettings:
    host: str = "127.0.0.1"
    port: int = 8765
    buffer: int = 10000
    mqtt_host: Optional[str] = None
    mqtt_port: int = 1883
    mqtt_prefix: str = ""


@dataclass
class EngineConfig:
    source_name: str = "<config>"
    capture: Optional[CaptureSpec] = None
    port_table: Dict[Tuple[str, int], ProtocolId] = field(default_factory=default_port_table)
    modbus_ports: Tuple[int, ...] = (502,)
    directory: Dict[str, List[str]] = field(default_factory=dict)
    rules: List[RawTagRule] = field(default_factory=list)
    computed: List[ComputedTagSpec] = field(default_factory=list)
    conditions: List[Condition] = field(default_factory=list)
    max_obs: int = DEFAULT_MAX_OBS
    max_age: float = DEFAULT_MAX_AGE
    max_segments: int = 64
    max_wait: float = 1.0
    dedup_window: float = 0.001
    suppress_window: float = 0.0
    half_life: Optional[float] = None
    ref_memory: int = REF_MEMORY
    record_log: int = 100000
    api_host: str = "127.0.0.1"
    api_port: int = 8080
    stream: StreamSettings = field(default_factory=StreamSettings)
    descriptions: Dict[str, str] = field(default_factory=dict)

    @property
    def tag_ids(self) -> List[str]:
        return [r.tag_id for r in self.rules] + [c.tag_id for c in self.computed]


# ------------------------------------------------------------------ validation

_TOP_KEYS = {"version", "capture", "ports", "fmsg_port", "modbus_ports", "devices", "retention",
             "reassembly", "dedup_window", "tags", "conditions", "suppress_window",
             "localization", "api", "stream", "record_log"}
_RAW_KEYS = {"id", "rule", "src", "dst", "protocol", "msg_type", "addresses", "scale",
             "description"}
_COMPUTED_KEYS = {"id", "deps", "func", "history_window", "aliases", "description"}
_COND_KEYS = {"id", "group", "kind", "tags_a", "tags_b", "v_th", "nominal", "t_lo", "t_hi",
              "window", "match_window", "func", "trigger", "description"}
_PERCENT = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*%\s*$")


class _Ctx:
    def __init__(self, name: str):
        self.name = name

    def fail(self, node, msg: str, key: Optional[str] = None):
        line = 0
        if isinstance(node, _LineDict) and key is not None:
            line = node.key_lines.get(key, node.line)
        elif isinstance(node, (_LineDict, _LineList)):
            line = node.line
        raise ConfigError(f"{self.name}:{line}: {msg}")

    def mapping(self, node, what: str, parent=None, key=None) -> dict:
        if not isinstance(node, dict):
            self.fail(parent if parent is not None else node, f"{what} must be a mapping", key)
        return node

    def keys(self, node: dict, allowed, what: str):
        for k in node:
            if k not in allowed:
                self.fail(node, f"unknown key {k!r} in {what}", k)

    def number(self, node, key, what, default=None, positive=False, nonneg=False, integer=False):
        if key not in node or node[key] is None:
            return default
        v = node[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(node, f"{what}.{key} must be a number, got {v!r}", key)
        if integer and not isinstance(v, int):
            self.fail(node, f"{what}.{key} must be an integer", key)
        if isinstance(v, float) and not math.isfinite(v):
            self.fail(node, f"{what}.{key} must be finite", key)
        if positive and v <= 0:
            self.fail(node, f"{what}.{key} must be positive", key)
        if nonneg and v < 0:
            self.fail(node, f"{what}.{key} must not be negative", key)
        return v

    def string(self, node, key, what, required=True, default=None):
        if key not in node or node[key] is None:
            if required:
                self.fail(node, f"{what} is missing {key!r}")
            return default
        v = node[key]
        if isinstance(v, bool) or not isinstance(v, (str, int, float)):
            self.fail(node, f"{what}.{key} must be a string", key)
        return str(v)

    def str_list(self, node, key, what, required=True) -> List[str]:
        if key not in node or node[key] is None:
            if required:
                self.fail(node, f"{what} is missing {key!r}")
            return []
        v = node[key]
        if isinstance(v, (str, int, float)) and not isinstance(v, bool):
            return [str(v)]
        if not isinstance(v, list) or not all(isinstance(x, (str, int, float)) and not isinstance(x, bool)
                                              for x in v):
            self.fail(node, f"{what}.{key} must be a string or a list of strings", key)
        return [str(x) for x in v]


def _port(ctx, node, key, what, value):
    if isinstance(value, bool) or not isinstance(value, int) or not 0 < value < 65536:
        ctx.fail(node, f"{what} must be a port number 1-65535, got {value!r}", key)
    return value


def build_config(doc: Any, name: str = "<config>") -> EngineConfig:
    ctx = _Ctx(name)
    if doc is None:
        raise ConfigError(f"{name}:1: configuration is empty")
    ctx.mapping(doc, "configuration")
    ctx.keys(doc, _TOP_KEYS, "configuration")
    cfg = EngineConfig(source_name=name)
    version = doc.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        ctx.fail(doc, f"unsupported config version {version!r}", "version")

    if doc.get("capture") is not None:
        cap = ctx.mapping(doc["capture"], "capture", doc, "capture")
        ctx.keys(cap, {"pcap", "iface"}, "capture")
        pcap = ctx.string(cap, "pcap", "capture", required=False)
        iface = ctx.string(cap, "iface", "capture", required=False)
        if pcap and iface:
            ctx.fail(cap, "capture takes either pcap or iface, not both")
        if pcap or iface:
            cfg.capture = CaptureSpec(pcap=pcap, iface=iface)

    fmsg_port = doc.get("fmsg_port", 5010)
    _port(ctx, doc, "fmsg_port", "fmsg_port", fmsg_port)
    cfg.port_table = default_port_table(fmsg_port)
    if doc.get("modbus_ports") is not None:
        mp = doc["modbus_ports"]
        if not isinstance(mp, list) or not mp:
            ctx.fail(doc, "modbus_ports must be a non-empty list", "modbus_ports")
        cfg.modbus_ports = tuple(_port(ctx, doc, "modbus_ports", "modbus_ports entry", p) for p in mp)
        for p in cfg.modbus_ports:
            cfg.port_table[("TCP", p)] = ProtocolId.MODBUS_TCP
    for entry in doc.get("ports") or []:
        e = ctx.mapping(entry, "ports entry", doc, "ports")
        ctx.keys(e, {"transport", "port", "protocol"}, "ports entry")
        transport = ctx.string(e, "transport", "ports entry").upper()
        if transport not in ("TCP", "UDP"):
            ctx.fail(e, f"transport must be TCP or UDP, got {transport!r}", "transport")
        port = _port(ctx, e, "port", "ports entry port", e.get("port"))
        proto = _protocol(ctx, e, "protocol", allow_unknown=True)
        cfg.port_table[(transport, port)] = proto

    devices = doc.get("devices") or {}
    ctx.mapping(devices, "devices", doc, "devices")
    seen_addr: Dict[str, str] = {}
    for dev, addrs in devices.items():
        if dev == "*":
            ctx.fail(devices, "'*' is not a valid device name", dev)
        if isinstance(addrs, str):
            addrs = [addrs]
        if not isinstance(addrs, list) or not addrs or not all(isinstance(a, str) for a in addrs):
            ctx.fail(devices, f"device {dev!r} needs a non-empty list of addresses", dev)
        for a in addrs:
            if not looks_like_address(a):
                ctx.fail(devices, f"device {dev!r}: {a!r} is not an IPv4 or MAC address", dev)
            other = seen_addr.get(a.lower())
            if other is not None and other != dev:
                ctx.fail(devices, f"address {a} assigned to both {other} and {dev}", dev)
            seen_addr[a.lower()] = dev
        cfg.directory[dev] = list(addrs)

    ret = doc.get("retention") or {}
    ctx.mapping(ret, "retention", doc, "retention")
    ctx.keys(ret, {"max_obs", "max_age"}, "retention")
    cfg.max_obs = ctx.number(ret, "max_obs", "retention", DEFAULT_MAX_OBS, positive=True, integer=True)
    cfg.max_age = ctx.number(ret, "max_age", "retention", DEFAULT_MAX_AGE, positive=True)

    rs = doc.get("reassembly") or {}
    ctx.mapping(rs, "reassembly", doc, "reassembly")
    ctx.keys(rs, {"max_segments", "max_wait"}, "reassembly")
    cfg.max_segments = ctx.number(rs, "max_segments", "reassembly", 64, positive=True, integer=True)
    cfg.max_wait = ctx.number(rs, "max_wait", "reassembly", 1.0, positive=True)
    cfg.dedup_window = ctx.number(doc, "dedup_window", "configuration", 0.001, nonneg=True)
    cfg.suppress_window = ctx.number(doc, "suppress_window", "configuration", 0.0, nonneg=True)
    cfg.record_log = ctx.number(doc, "record_log", "configuration", 100000, nonneg=True, integer=True)

    loc = doc.get("localization") or {}
    ctx.mapping(loc, "localization", doc, "localization")
    ctx.keys(loc, {"half_life", "ref_memory"}, "localization")
    cfg.half_life = ctx.number(loc, "half_life", "localization", None, positive=True)
    cfg.ref_memory = ctx.number(loc, "ref_memory", "localization", REF_MEMORY, positive=True, integer=True)

    api = doc.get("api") or {}
    ctx.mapping(api, "api", doc, "api")
    ctx.keys(api, {"host", "port"}, "api")
    cfg.api_host = ctx.string(api, "host", "api", required=False, default="127.0.0.1")
    cfg.api_port = _port(ctx, api, "port", "api.port", api.get("port", 8080))

    st = doc.get("stream") or {}
    ctx.mapping(st, "stream", doc, "stream")
    ctx.keys(st, {"host", "port", "buffer", "mqtt"}, "stream")
    ss = StreamSettings()
    ss.host = ctx.string(st, "host", "stream", required=False, default=ss.host)
    ss.port = _port(ctx, st, "port", "stream.port", st.get("port", ss.port))
    ss.buffer = ctx.number(st, "buffer", "stream", ss.buffer, positive=True, integer=True)
    if st.get("mqtt") is not None:
        mq = ctx.mapping(st["mqtt"], "stream.mqtt", st, "mqtt")
        ctx.keys(mq, {"host", "port", "prefix"}, "stream.mqtt")
        ss.mqtt_host = ctx.string(mq, "host", "stream.mqtt")
        ss.mqtt_port = _port(ctx, mq, "port", "stream.mqtt.port", mq.get("port", 1883))
        ss.mqtt_prefix = ctx.string(mq, "prefix", "stream.mqtt", required=False, default="")
    cfg.stream = ss

    tags = doc.get("tags")
    if tags is None:
        ctx.fail(doc, "configuration defines no tags")
    ctx.mapping(tags, "tags", doc, "tags")
    ctx.keys(tags, {"raw", "computed"}, "tags")
    raw = tags.get("raw") or []
    if not isinstance(raw, list) or not raw:
        ctx.fail(tags, "tags.raw must be a non-empty list", "raw")
    raw_nodes = {}
    for item in raw:
        rule = _raw_rule(ctx, item, cfg.directory, tags)
        if rule.tag_id in raw_nodes:
            ctx.fail(item, f"tag {rule.tag_id!r} defined more than once", "id")
        raw_nodes[rule.tag_id] = item
        cfg.rules.append(rule)
        if item.get("description"):
            cfg.descriptions[rule.tag_id] = str(item["description"])

    computed = tags.get("computed") or []
    if not isinstance(computed, list):
        ctx.fail(tags, "tags.computed must be a list", "computed")
    comp_nodes = {}
    for item in computed:
        c = ctx.mapping(item, "computed tag", tags, "computed")
        ctx.keys(c, _COMPUTED_KEYS, "computed tag")
        tag_id = ctx.string(c, "id", "computed tag")
        if tag_id in raw_nodes or tag_id in comp_nodes:
            ctx.fail(c, f"tag {tag_id!r} defined more than once", "id")
        deps = ctx.str_list(c, "deps", f"computed tag {tag_id}")
        func = ctx.string(c, "func", f"computed tag {tag_id}")
        hw = ctx.number(c, "history_window", f"computed tag {tag_id}", 0.0, nonneg=True)
        aliases = ctx.str_list(c, "aliases", f"computed tag {tag_id}", required=False)
        try:
            spec = ComputedTagSpec.build(tag_id, deps, func, hw, aliases)
        except (DagError, ExprError) as exc:
            ctx.fail(c, str(exc))
        comp_nodes[tag_id] = c
        cfg.computed.append(spec)
        if c.get("description"):
            cfg.descriptions[tag_id] = str(c["description"])
    try:
        topo_order(cfg.computed, list(raw_nodes))
    except DagError as exc:
        # Anchor on the first computed tag named in the message.
        node = next((n for t, n in comp_nodes.items() if repr(t) in str(exc) or f" {t} " in f" {exc} "),
                    tags)
        ctx.fail(node, str(exc))

    known = set(raw_nodes) | set(comp_nodes)
    conds = doc.get("conditions") or []
    if not isinstance(conds, list):
        ctx.fail(doc, "conditions must be a list", "conditions")
    ids = set()
    for item in conds:
        cond = _condition(ctx, item, known, doc)
        if cond.cond_id in ids:
            ctx.fail(item, f"condition id {cond.cond_id!r} used twice", "id")
        ids.add(cond.cond_id)
        cfg.conditions.append(cond)
    return cfg


def _protocol(ctx, node, key, allow_unknown=False) -> ProtocolId:
    name = ctx.string(node, key, "entry")
    try:
        p = ProtocolId(name.upper())
    except ValueError:
        ctx.fail(node, f"unknown protocol {name!r}", key)
    if p is ProtocolId.UNKNOWN and not allow_unknown:
        ctx.fail(node, "rules cannot match protocol UNKNOWN", key)
    return p


def _raw_rule(ctx, item, directory, parent) -> RawTagRule:
    r = ctx.mapping(item, "raw tag", parent, "raw")
    ctx.keys(r, _RAW_KEYS, "raw tag")
    tag_id = ctx.string(r, "id", "raw tag")
    what = f"raw tag {tag_id}"
    proto = _protocol(ctx, r, "protocol")
    msg_types = None
    if r.get("msg_type") not in (None, "*"):
        names = ctx.str_list(r, "msg_type", what)
        for m in names:
            if not valid_message_type(proto, m):
                ctx.fail(r, f"{what}: {m!r} is not a {proto.value} message type", "msg_type")
        msg_types = frozenset(names)
    addr_texts = ctx.str_list(r, "addresses", what)
    if not addr_texts:
        ctx.fail(r, f"{what}: addresses must not be empty", "addresses")
    try:
        addrs = tuple(AddrSel.parse(a) for a in addr_texts)
    except RuleError as exc:
        ctx.fail(r, f"{what}: {exc}", "addresses")
    for key in ("src", "dst"):
        if key not in r:
            ctx.fail(r, f"{what} is missing {key!r}")
    sels = []
    for key in ("src", "dst"):
        try:
            sels.append(EndpointSel.build(r[key], directory))
        except (RuleError, TypeError) as exc:
            ctx.fail(r, f"{what}: {key}: {exc}", key)
    scale = ctx.number(r, "scale", what, 1.0)
    if scale == 0:
        ctx.fail(r, f"{what}: scale must be non-zero", "scale")
    rule_id = ctx.string(r, "rule", what, required=False, default=f"R{tag_id}")
    return RawTagRule(rule_id, tag_id, sels[0], sels[1], proto, msg_types, addrs, float(scale))


def _condition(ctx, item, known, parent) -> Condition:
    c = ctx.mapping(item, "condition", parent, "conditions")
    ctx.keys(c, _COND_KEYS, "condition")
    cid = ctx.string(c, "id", "condition")
    what = f"condition {cid}"
    kind_name = ctx.string(c, "kind", what).upper()
    try:
        kind = Kind(kind_name)
    except ValueError:
        ctx.fail(c, f"{what}: unknown kind {kind_name!r}", "kind")
    tags_a = ctx.str_list(c, "tags_a", what)
    tags_b = ctx.str_list(c, "tags_b", what, required=False)
    for key, tags in (("tags_a", tags_a), ("tags_b", tags_b)):
        for t in tags:
            if t not in known:
                ctx.fail(c, f"{what} references undefined tag {t!r}", key)
    v_th, percent = 0.0, False
    if c.get("v_th") is not None:
        raw = c["v_th"]
        m = _PERCENT.match(raw) if isinstance(raw, str) else None
        if m:
            v_th, percent = float(m.group(1)) / 100.0, True
        else:
            v_th = ctx.number(c, "v_th", what, 0.0, nonneg=True)
    elif kind in (Kind.THRESHOLD_VALUE, Kind.MATCH):
        ctx.fail(c, f"{what}: {kind.value} needs v_th")
    if kind is Kind.THRESHOLD_TIME and ("t_lo" not in c or "t_hi" not in c):
        ctx.fail(c, f"{what}: THRESHOLD_TIME needs t_lo and t_hi")
    if kind in (Kind.PRE, Kind.POST) and "window" not in c:
        ctx.fail(c, f"{what}: {kind.value} needs window")
    kwargs = dict(
        v_th=v_th, percent=percent,
        nominal=ctx.number(c, "nominal", what, None),
        t_lo=ctx.number(c, "t_lo", what, 0.0),
        t_hi=ctx.number(c, "t_hi", what, 0.0),
        window=ctx.number(c, "window", what, 0.0),
        match_window=ctx.number(c, "match_window", what, 0.5),
        func=ctx.string(c, "func", what, required=False),
        trigger=ctx.string(c, "trigger", what, required=False),
        group=ctx.string(c, "group", what, required=False, default=""),
        description=ctx.string(c, "description", what, required=False, default=""),
    )
    try:
        return Condition(cid, kind, tuple(tags_a), tuple(tags_b), **kwargs)
    except ConditionError as exc:
        ctx.fail(c, str(exc))


def load_config(path) -> EngineConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{p}:0: cannot read configuration: {exc.strerror}") from None
    return build_config(parse_yaml(text, str(p)), str(p))


def loads_config(text: str, name: str = "<config>") -> EngineConfig:
    return build_config(parse_yaml(text, name), name)


def dump_yaml(doc: dict) -> str:
    """Serialize a plain configuration dict (as built by the testbed) to YAML."""
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, width=100)
