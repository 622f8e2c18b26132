"""Scenario files: schema, parsing, validation, serialization.

A scenario is a JSON document with sections meta, radio, topology,
slices, core, ric, traffic, events, and measure. validate() returns the
full list of invariant violations (empty list means runnable); parse
errors carry the line/column from the JSON decoder.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .radio import InvalidConfig, TddConfig
from .topology import E2Quirk, NodeKind, PROFILE_PRESETS

FLOW_KINDS = ("udp_cbr", "tcp_fullbuffer", "ping")
EVENT_ACTIONS = (
    "create_slice", "attach", "detach", "inject_fault", "set_shares",
    "node_online", "node_offline",
)
FAULT_KINDS = ("radio_drop", "throughput_degradation", "e2_control_blackhole")


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


@dataclass
class NodeDef:
    id: str
    kind: str
    profile: str = "default"
    start_offline: bool = False


@dataclass
class LinkDef:
    a: str
    b: str
    latency_us: int | None = None
    jitter_us: int | None = None


@dataclass
class ProfileDef:
    dl_cap_mbps: float | None = None
    ul_cap_mbps: float | None = None
    proc_delay_us: int | None = None
    e2_quirk: str = "Normal"


@dataclass
class SliceDef:
    name: str
    sst: int = 1
    sd: int = 1
    radio_share: float = 1.0
    min_share: float = 0.0
    qos_label: str = ""


@dataclass
class SubscriberDef:
    ue: str
    allowed_slices: list[str] = field(default_factory=list)
    du: str | None = None


@dataclass
class FlowDef:
    id: str
    kind: str
    src: str
    dst: str
    rate_mbps: float = 0.0
    start_s: float = 0.0
    stop_s: float | None = None
    interval_ms: float = 10.0
    count: int = 0
    size_bytes: int = 64


@dataclass
class EventDef:
    at_s: float
    action: str
    ue: str | None = None
    slice: str | None = None
    node: str | None = None
    kind: str | None = None
    duration_s: float = 0.0
    factor: float = 1.0
    shares: dict[str, float] = field(default_factory=dict)


@dataclass
class MeasureDef:
    name: str
    entity: str
    metric: str
    from_s: float
    to_s: float


@dataclass
class Scenario:
    name: str
    seed: int
    duration_s: float
    bandwidth_mhz: float = 40.0
    tdd: dict = field(default_factory=lambda: {
        "dl_slots": 7, "ul_slots": 2, "special_dl_symbols": 6,
        "special_ul_symbols": 4, "period_slots": 10,
    })
    calibration: dict = field(default_factory=dict)
    nodes: list[NodeDef] = field(default_factory=list)
    profiles: dict[str, ProfileDef] = field(default_factory=dict)
    links: list[LinkDef] = field(default_factory=list)
    link_roles: dict[str, dict] = field(default_factory=dict)
    slices: list[SliceDef] = field(default_factory=list)
    subscribers: list[SubscriberDef] = field(default_factory=list)
    sliced_amf: bool = False
    xapps: list[str] = field(default_factory=lambda: ["slice_manager"])
    report_period_ms: float = 100.0
    e2_start_s: float = 0.1
    twin_transport_factor: float | None = None
    traffic: list[FlowDef] = field(default_factory=list)
    events: list[EventDef] = field(default_factory=list)
    measure: list[MeasureDef] = field(default_factory=list)

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "meta": {"name": self.name, "seed": self.seed, "duration_s": self.duration_s},
            "radio": {
                "bandwidth_mhz": self.bandwidth_mhz,
                "tdd": dict(self.tdd),
                "calibration": dict(self.calibration),
            },
            "topology": {
                "nodes": [asdict(n) for n in self.nodes],
                "profiles": {k: asdict(v) for k, v in self.profiles.items()},
                "links": [asdict(l) for l in self.links],
                "link_roles": {k: dict(v) for k, v in self.link_roles.items()},
            },
            "slices": [asdict(s) for s in self.slices],
            "core": {
                "subscribers": [asdict(s) for s in self.subscribers],
                "sliced_amf": self.sliced_amf,
            },
            "ric": {
                "xapps": list(self.xapps),
                "report_period_ms": self.report_period_ms,
                "e2_start_s": self.e2_start_s,
                "twin_transport_factor": self.twin_transport_factor,
            },
            "traffic": [asdict(f) for f in self.traffic],
            "events": [asdict(e) for e in self.events],
            "measure": [asdict(w) for w in self.measure],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Scenario":
        meta = raw.get("meta", {})
        radio = raw.get("radio", {})
        topo = raw.get("topology", {})
        core = raw.get("core", {})
        ric = raw.get("ric", {})
        sc = cls(
            name=meta.get("name", ""),
            seed=meta.get("seed") if isinstance(meta.get("seed"), int) else -1,
            duration_s=meta.get("duration_s", 0.0),
            bandwidth_mhz=radio.get("bandwidth_mhz", 40.0),
        )
        if "tdd" in radio:
            sc.tdd = {**sc.tdd, **radio["tdd"]}
        sc.calibration = dict(radio.get("calibration", {}))
        sc.nodes = [NodeDef(**n) for n in topo.get("nodes", [])]
        sc.profiles = {k: ProfileDef(**v) for k, v in topo.get("profiles", {}).items()}
        sc.links = [LinkDef(**l) for l in topo.get("links", [])]
        sc.link_roles = {k: dict(v) for k, v in topo.get("link_roles", {}).items()}
        sc.slices = [SliceDef(**s) for s in raw.get("slices", [])]
        sc.subscribers = [SubscriberDef(**s) for s in core.get("subscribers", [])]
        sc.sliced_amf = bool(core.get("sliced_amf", False))
        sc.xapps = list(ric.get("xapps", ["slice_manager"]))
        sc.report_period_ms = ric.get("report_period_ms", 100.0)
        sc.e2_start_s = ric.get("e2_start_s", 0.1)
        sc.twin_transport_factor = ric.get("twin_transport_factor")
        sc.traffic = [FlowDef(**f) for f in raw.get("traffic", [])]
        sc.events = [EventDef(**e) for e in raw.get("events", [])]
        sc.measure = [MeasureDef(**w) for w in raw.get("measure", [])]
        return sc

    # -- time helpers -----------------------------------------------------------

    @property
    def duration_us(self) -> int:
        return round(self.duration_s * 1_000_000)

    @property
    def report_period_us(self) -> int:
        return round(self.report_period_ms * 1000)


def parse_file(path: str | Path) -> Scenario:
    text = Path(path).read_text()
    return parse_text(text)


def parse_text(text: str) -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from exc
    if not isinstance(raw, dict):
        raise ParseError("scenario document must be a JSON object")
    try:
        return Scenario.from_dict(raw)
    except TypeError as exc:
        raise ParseError(f"schema mismatch: {exc}") from exc


DEFAULT_NODES = [
    NodeDef("ru1", "RU"),
    NodeDef("du1", "DU"),
    NodeDef("cucp1", "CU_CP"),
    NodeDef("amf1", "AMF"),
    NodeDef("server", "SERVER"),
]


def effective_nodes(sc: Scenario) -> list[NodeDef]:
    return sc.nodes if sc.nodes else list(DEFAULT_NODES)


def validate(sc: Scenario) -> list[str]:
    """Every invariant violation in the scenario, as human-readable strings."""
    problems: list[str] = []
    if not sc.name:
        problems.append("meta.name: missing scenario name")
    if sc.seed is None or sc.seed < 0:
        problems.append("meta.seed: a non-negative integer seed is required")
    if sc.duration_s <= 0:
        problems.append("meta.duration_s: must be positive")
    if sc.bandwidth_mhz <= 0:
        problems.append("radio.bandwidth_mhz: must be positive")
    try:
        TddConfig(**sc.tdd).validate()
    except (InvalidConfig, TypeError) as exc:
        problems.append(f"radio.tdd: {exc}")
    for key, value in sc.calibration.items():
        if key not in ("dl_spectral_eff", "ul_spectral_eff", "udp_over_tcp_factor"):
            problems.append(f"radio.calibration.{key}: unknown field")
        elif not isinstance(value, (int, float)) or value <= 0:
            problems.append(f"radio.calibration.{key}: must be positive")

    nodes = effective_nodes(sc)
    node_ids = set()
    kinds = {}
    for n in nodes:
        if n.id in node_ids:
            problems.append(f"topology.nodes: duplicate id {n.id!r}")
        node_ids.add(n.id)
        if n.kind not in NodeKind.__members__:
            problems.append(f"topology.nodes[{n.id}]: unknown kind {n.kind!r}")
        else:
            kinds[n.id] = n.kind
        if n.profile not in PROFILE_PRESETS and n.profile not in sc.profiles:
            problems.append(f"topology.nodes[{n.id}]: unknown profile {n.profile!r}")
    for name, p in sc.profiles.items():
        if p.e2_quirk not in (q.value for q in E2Quirk):
            problems.append(f"topology.profiles[{name}]: unknown e2_quirk {p.e2_quirk!r}")
        if p.dl_cap_mbps is not None and p.dl_cap_mbps <= 0:
            problems.append(f"topology.profiles[{name}]: dl_cap_mbps must be positive")
        if p.ul_cap_mbps is not None and p.ul_cap_mbps <= 0:
            problems.append(f"topology.profiles[{name}]: ul_cap_mbps must be positive")
    for l in sc.links:
        for end in (l.a, l.b):
            if end not in node_ids:
                problems.append(f"topology.links[{l.a}-{l.b}]: unknown node {end!r}")

    slice_names = set()
    snssais = set()
    for s in sc.slices:
        if s.name in slice_names:
            problems.append(f"slices[{s.name}]: duplicate name")
        slice_names.add(s.name)
        key = (s.sst, s.sd)
        if key in snssais:
            problems.append(f"slices[{s.name}]: duplicate snssai {s.sst}-{s.sd}")
        snssais.add(key)
        if not (0.0 < s.radio_share <= 1.0):
            problems.append(f"slices[{s.name}]: radio_share must be in (0,1]")
        if not (0.0 <= s.min_share <= s.radio_share):
            problems.append(f"slices[{s.name}]: min_share must be in [0, radio_share]")

    ue_ids = set()
    for sub in sc.subscribers:
        if sub.ue in ue_ids or sub.ue in node_ids:
            problems.append(f"core.subscribers[{sub.ue}]: duplicate id")
        ue_ids.add(sub.ue)
        for sl in sub.allowed_slices:
            if sl not in slice_names:
                problems.append(f"core.subscribers[{sub.ue}]: unknown slice {sl!r}")
        if sub.du is not None and kinds.get(sub.du) != "DU":
            problems.append(f"core.subscribers[{sub.ue}]: du {sub.du!r} is not a DU")

    if sc.report_period_ms * 1000 < 10_000:
        problems.append("ric.report_period_ms: below the 10 ms near-RT floor")
    for x in sc.xapps:
        if x not in ("slice_manager", "digital_twin"):
            problems.append(f"ric.xapps: unknown xapp {x!r}")

    flow_ids = set()
    for f in sc.traffic:
        if f.id in flow_ids:
            problems.append(f"traffic[{f.id}]: duplicate id")
        flow_ids.add(f.id)
        if f.kind not in FLOW_KINDS:
            problems.append(f"traffic[{f.id}]: unknown kind {f.kind!r}")
        endpoints = (f.src, f.dst)
        ue_ends = [e for e in endpoints if e in ue_ids]
        other = [e for e in endpoints if e not in ue_ids]
        if len(ue_ends) != 1:
            problems.append(f"traffic[{f.id}]: exactly one endpoint must be a UE")
        for e in other:
            if e != "server" and e not in node_ids:
                problems.append(f"traffic[{f.id}]: unknown endpoint {e!r}")
        if f.kind == "udp_cbr" and f.rate_mbps <= 0:
            problems.append(f"traffic[{f.id}]: udp_cbr needs rate_mbps > 0")
        if f.kind == "ping" and (f.interval_ms <= 0 or f.count <= 0):
            problems.append(f"traffic[{f.id}]: ping needs interval_ms and count")
        if f.start_s < 0 or f.start_s > sc.duration_s:
            problems.append(f"traffic[{f.id}]: start_s outside run duration")
        if f.stop_s is not None and f.stop_s <= f.start_s:
            problems.append(f"traffic[{f.id}]: stop_s must be after start_s")
        if f.stop_s is not None and f.stop_s > sc.duration_s:
            problems.append(f"traffic[{f.id}]: stop_s beyond run duration")

    for i, e in enumerate(sc.events):
        where = f"events[{i}:{e.action}]"
        if e.action not in EVENT_ACTIONS:
            problems.append(f"{where}: unknown action")
            continue
        if e.at_s < 0 or e.at_s > sc.duration_s:
            problems.append(f"{where}: at_s outside run duration")
        if e.action in ("attach",) and (e.ue not in ue_ids or e.slice not in slice_names):
            problems.append(f"{where}: needs a known ue and slice")
        if e.action == "detach" and e.ue not in ue_ids:
            problems.append(f"{where}: unknown ue")
        if e.action == "create_slice" and e.slice not in slice_names:
            problems.append(f"{where}: unknown slice")
        if e.action == "inject_fault":
            if e.kind not in FAULT_KINDS:
                problems.append(f"{where}: unknown fault kind {e.kind!r}")
            if e.kind in ("radio_drop", "throughput_degradation"):
                if e.ue not in ue_ids:
                    problems.append(f"{where}: unknown ue")
                if e.duration_s <= 0:
                    problems.append(f"{where}: duration_s must be positive")
            if e.kind == "e2_control_blackhole" and e.node not in node_ids:
                problems.append(f"{where}: unknown node")
            if e.kind == "throughput_degradation" and not (0.0 <= e.factor < 1.0):
                problems.append(f"{where}: factor must be in [0,1)")
        if e.action == "set_shares":
            for name in e.shares:
                if name not in slice_names:
                    problems.append(f"{where}: unknown slice {name!r}")
        if e.action in ("node_online", "node_offline") and e.node not in node_ids:
            problems.append(f"{where}: unknown node")

    for w in sc.measure:
        if not w.name:
            problems.append("measure: window without a name")
        if w.from_s >= w.to_s:
            problems.append(f"measure[{w.name}]: from_s must precede to_s")
        if w.to_s > sc.duration_s:
            problems.append(f"measure[{w.name}]: to_s beyond run duration")
    return problems
