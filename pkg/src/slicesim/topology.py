"""Node kinds, vendor stack profiles, and the link/latency fabric.

One-way delay model: originating a packet charges the originator's
processing delay; each hop then charges link latency (plus any jitter on
that link) and the receiving node's processing delay. The default budget
reproduces the measured ~10 ms end-to-end RTT.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .engine import RngStream


class NodeKind(Enum):
    RU = "RU"
    DU = "DU"
    CU_CP = "CU_CP"
    CU_UP = "CU_UP"
    AMF = "AMF"
    SMF = "SMF"
    UPF = "UPF"
    SERVER = "SERVER"
    UE = "UE"
    RIC = "RIC"


class E2Quirk(Enum):
    NORMAL = "Normal"
    EMPTY_IES = "EmptyIEs"
    NO_DECODE = "NoDecode"


# per-kind one-way processing delay defaults (us); together with the link
# defaults below these sum to 5.0 ms one-way on the UE-server data path
KIND_PROC_US = {
    NodeKind.RU: 100,
    NodeKind.DU: 700,
    NodeKind.CU_CP: 100,
    NodeKind.CU_UP: 400,
    NodeKind.AMF: 100,
    NodeKind.SMF: 100,
    NodeKind.UPF: 500,
    NodeKind.SERVER: 1000,
    NodeKind.UE: 0,
    NodeKind.RIC: 0,
}


@dataclass(frozen=True)
class StackProfile:
    """Per-vendor node characteristics."""

    name: str = "default"
    dl_cap_mbps: float | None = None
    ul_cap_mbps: float | None = None
    proc_delay_us: int | None = None  # None: use the node-kind default
    e2_quirk: E2Quirk = E2Quirk.NORMAL

    def validate(self) -> None:
        if self.dl_cap_mbps is not None and self.dl_cap_mbps <= 0:
            raise ValueError(f"profile {self.name}: dl cap must be positive")
        if self.ul_cap_mbps is not None and self.ul_cap_mbps <= 0:
            raise ValueError(f"profile {self.name}: ul cap must be positive")
        if self.proc_delay_us is not None and self.proc_delay_us < 0:
            raise ValueError(f"profile {self.name}: delay must be >= 0")


# Table-derived presets: the split stack adds 16.675 ms one-way on the
# DU-CU path (43.35 ms RTT) and caps at the top of its iperf ranges; the
# monolithic stack lands mid-range at 16.5 ms RTT.
PROFILE_PRESETS = {
    "default": StackProfile(name="default"),
    "vendor-du": StackProfile(name="vendor-du"),
    "oai-split": StackProfile(name="oai-split", dl_cap_mbps=10.0, ul_cap_mbps=6.0),
    "oai-mono": StackProfile(
        name="oai-mono", dl_cap_mbps=120.0, ul_cap_mbps=2.0, proc_delay_us=3950
    ),
    "empty-ies": StackProfile(name="empty-ies", e2_quirk=E2Quirk.EMPTY_IES),
    "no-decode": StackProfile(name="no-decode", e2_quirk=E2Quirk.NO_DECODE),
}

# one-way link latency defaults by role (us), with jitter envelopes
LINK_ROLE_DEFAULTS = {
    "radio": (2000, 1500),  # UE air interface; jitter models alignment spread
    "fronthaul": (100, 0),  # RU-DU
    "midhaul": (200, 0),    # DU-CU
    "n2": (100, 0),         # CU_CP-AMF
    "core": (0, 0),         # intra-core and CU_UP-UPF
    "n6": (0, 0),           # UPF-server
    "e2": (500, 0),         # RIC-RAN
    "mgmt": (500, 0),       # RIC management push to core functions
}


def role_for(kind_a: NodeKind, kind_b: NodeKind) -> str:
    pair = {kind_a, kind_b}
    if NodeKind.UE in pair:
        return "radio"
    if NodeKind.RIC in pair:
        return "e2" if pair & {NodeKind.DU, NodeKind.CU_CP, NodeKind.CU_UP} else "mgmt"
    if pair == {NodeKind.RU, NodeKind.DU}:
        return "fronthaul"
    if NodeKind.DU in pair and pair & {NodeKind.CU_CP, NodeKind.CU_UP}:
        return "midhaul"
    if pair == {NodeKind.CU_CP, NodeKind.AMF}:
        return "n2"
    if NodeKind.SERVER in pair:
        return "n6"
    return "core"


@dataclass
class Link:
    latency_us: int
    jitter_us: int = 0


@dataclass
class NodeInfo:
    node_id: str
    kind: NodeKind
    profile: StackProfile = field(default_factory=StackProfile)

    @property
    def proc_us(self) -> int:
        if self.profile.proc_delay_us is not None:
            return self.profile.proc_delay_us
        return KIND_PROC_US[self.kind]


class Topology:
    """Static + dynamically-deployed nodes and the links between them."""

    def __init__(self, role_overrides: dict[str, tuple[int, int]] | None = None):
        self.nodes: dict[str, NodeInfo] = {}
        self.links: dict[frozenset, Link] = {}
        self.roles = dict(LINK_ROLE_DEFAULTS)
        if role_overrides:
            self.roles.update(role_overrides)

    def add_node(self, node_id: str, kind: NodeKind, profile: StackProfile | None = None) -> NodeInfo:
        info = NodeInfo(node_id, kind, profile or StackProfile())
        self.nodes[node_id] = info
        return info

    def remove_node(self, node_id: str) -> None:
        self.nodes.pop(node_id, None)
        for key in [k for k in self.links if node_id in k]:
            del self.links[key]

    def add_link(self, a: str, b: str, latency_us: int | None = None, jitter_us: int | None = None) -> Link:
        role = role_for(self.nodes[a].kind, self.nodes[b].kind)
        base_lat, base_jit = self.roles[role]
        link = Link(
            latency_us=base_lat if latency_us is None else latency_us,
            jitter_us=base_jit if jitter_us is None else jitter_us,
        )
        self.links[frozenset((a, b))] = link
        return link

    def link(self, a: str, b: str) -> Link:
        key = frozenset((a, b))
        if key not in self.links:
            raise KeyError(f"no link between {a} and {b}")
        return self.links[key]

    def has_link(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.links

    def proc_us(self, node_id: str) -> int:
        return self.nodes[node_id].proc_us

    def hop_delay_us(self, src: str, dst: str, rng: RngStream | None = None) -> int:
        """link latency + receiver processing, with any link jitter drawn."""
        link = self.link(src, dst)
        jitter = 0
        if link.jitter_us and rng is not None:
            jitter = rng.randint(-link.jitter_us, link.jitter_us)
        return max(0, link.latency_us + jitter) + self.proc_us(dst)

    def path_delay_us(self, path: list[str], rng: RngStream | None = None, charge_origin: bool = True) -> int:
        """one-way delay along a node path (origination charge included)."""
        total = self.proc_us(path[0]) if charge_origin else 0
        for src, dst in zip(path, path[1:]):
            total += self.hop_delay_us(src, dst, rng)
        return total


@dataclass
class Packet:
    """A per-packet message walked hop-by-hop along a fixed path."""

    flow_id: str
    kind: str  # ping_req | ping_resp
    seq: int
    path: tuple[str, ...]
    hop: int
    sent_at: int
    size_bytes: int
    ue: str
    slice_name: str
    tunnel_id: int
    meta: dict[str, Any] = field(default_factory=dict)

    def at_destination(self) -> bool:
        return self.hop == len(self.path) - 1

    def next_hop(self) -> str:
        return self.path[self.hop + 1]
