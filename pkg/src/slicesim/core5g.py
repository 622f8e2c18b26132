"""Minimal slice-aware 5G core: AMF registration, per-slice SMF session
management, per-slice UPF forwarding with its latency contribution."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import messages as m
from .context import SimContext
from .engine import Entity
from .ran import RanNode, RanNodeState
from .topology import NodeKind, Packet


class RegistrationRejected(Exception):
    pass


class SliceNotAllowed(Exception):
    pass


class UpfUnavailable(Exception):
    pass


class NoTunnel(Exception):
    pass


@dataclass(frozen=True)
class SliceSpec:
    """Slice identity and its dedicated function set."""

    name: str
    sst: int
    sd: int
    radio_share: float
    min_share: float = 0.0
    qos_label: str = ""
    dedicated_functions: tuple[str, ...] = ("CU_UP", "SMF", "UPF")

    def validate(self) -> None:
        if not (0.0 < self.radio_share <= 1.0):
            raise ValueError(f"slice {self.name}: radio_share must be in (0,1]")
        if not (0 <= self.sst <= 255):
            raise ValueError(f"slice {self.name}: sst out of range")
        if not (0 <= self.sd < (1 << 24)):
            raise ValueError(f"slice {self.name}: sd out of 24-bit range")

    @property
    def snssai(self) -> str:
        return f"{self.sst}-{self.sd:06x}"


@dataclass
class SessionContext:
    ue_id: str
    slice_name: str
    upf: str
    tunnel_id: int
    established_at: int


def _find_by_kind(ctx: SimContext, kind: NodeKind, linked_to: str | None = None) -> str | None:
    for node_id, info in ctx.topology.nodes.items():
        if info.kind is kind and (linked_to is None or ctx.topology.has_link(node_id, linked_to)):
            return node_id
    return None


def downlink_signaling_path(ctx: SimContext, prefix: list[str], ue_name: str) -> list[str]:
    """Reverse (network-to-UE) signaling path used for rejects/accepts."""
    ue_rt = ctx.ues[ue_name]
    du = ue_rt.serving_du
    cu_cp = _find_by_kind(ctx, NodeKind.CU_CP)
    ru = _find_by_kind(ctx, NodeKind.RU, linked_to=du)
    return [*prefix, cu_cp, du, ru, ue_name]


class Amf(RanNode):
    """Access and mobility management: subscriber admission, slice registry."""

    kind = NodeKind.AMF

    def __init__(self, entity_id: str, ctx: SimContext, profile=None):
        super().__init__(entity_id, ctx, profile)
        self.subscribers: dict[str, list[str]] = {}
        self.known_slices: set[str] = set()

    def register_ue(self, ue: str) -> list[str]:
        """Admit a subscriber; returns its allowed slice list."""
        if ue not in self.subscribers:
            raise RegistrationRejected(f"{ue} is not a subscriber")
        return list(self.subscribers[ue])

    def on_message(self, msg) -> None:
        if isinstance(msg, m.RegistrationRequest):
            self._on_registration(msg)
        elif isinstance(msg, m.RegisterSlice):
            self.known_slices.add(msg.slice_name)
            delay = self.ctx.topology.hop_delay_us(self.entity_id, msg.reply_to)
            self.engine.send(
                msg.reply_to,
                m.DeployAck(msg.slice_name, "register_slice_amf", self.entity_id, True),
                delay=delay,
            )
            self.ctx.log(self.entity_id, "slice_registered", msg.slice_name)
        elif isinstance(msg, m.DeployCoreFunction):
            self._deploy_core_function(msg)
        elif isinstance(msg, m.TeardownFunction):
            self._teardown(msg)
        else:
            super().on_message(msg)

    def _deploy_core_function(self, msg: m.DeployCoreFunction) -> None:
        """Instantiate a per-slice SMF/UPF/AMF and wire it into the fabric."""
        ctx = self.ctx
        topo = ctx.topology
        kind = msg.kind.upper()
        node_id = f"{kind.lower()}-{msg.slice_name}"
        step = f"deploy_{kind.lower()}"
        if node_id in self.engine.entities:
            self._ack(msg, step, None, False, f"{node_id} already deployed")
            return
        if kind == "SMF":
            entity = Smf(node_id, ctx, slice_name=msg.slice_name)
            topo.add_node(node_id, NodeKind.SMF)
            topo.add_link(node_id, self.entity_id)
            slice_amf = ctx.slices[msg.slice_name].amf
            if slice_amf and slice_amf != self.entity_id:
                topo.add_link(node_id, slice_amf)
        elif kind == "UPF":
            entity = Upf(node_id, ctx, slice_name=msg.slice_name)
            topo.add_node(node_id, NodeKind.UPF)
            slice_rt = ctx.slices[msg.slice_name]
            if slice_rt.cu_up:
                topo.add_link(node_id, slice_rt.cu_up)
            if slice_rt.smf:
                topo.add_link(node_id, slice_rt.smf)
            server = _find_by_kind(ctx, NodeKind.SERVER)
            if server:
                topo.add_link(node_id, server)
        elif kind == "AMF":
            entity = Amf(node_id, ctx)
            entity.subscribers = self.subscribers
            topo.add_node(node_id, NodeKind.AMF)
            cu_cp = _find_by_kind(ctx, NodeKind.CU_CP)
            if cu_cp:
                topo.add_link(node_id, cu_cp)
            topo.add_link(node_id, self.entity_id)
        else:
            self._ack(msg, step, None, False, f"unknown function kind {kind}")
            return
        self.engine.register(entity)
        entity.state = RanNodeState.OPERATIONAL
        self.ctx.log(self.entity_id, "core_function_deployed", f"{node_id} slice={msg.slice_name}")
        self._ack(msg, step, node_id, True)

    def _ack(self, msg: m.DeployCoreFunction, step: str, node_id, ok: bool, detail: str = "") -> None:
        delay = self.ctx.config.deploy_delay_us + self.ctx.topology.hop_delay_us(
            self.entity_id, msg.reply_to
        )
        self.engine.send(msg.reply_to, m.DeployAck(msg.slice_name, step, node_id, ok, detail), delay=delay)

    def _teardown(self, msg: m.TeardownFunction) -> None:
        self.engine.unregister(msg.node_id)
        self.ctx.topology.remove_node(msg.node_id)
        slice_rt = self.ctx.slices.get(msg.slice_name)
        if slice_rt is not None:
            for attr in ("smf", "upf", "amf"):
                if getattr(slice_rt, attr) == msg.node_id:
                    setattr(slice_rt, attr, None)
        self.ctx.log(self.entity_id, "core_function_removed", msg.node_id)

    def _on_registration(self, msg: m.RegistrationRequest) -> None:
        ue_rt = self.ctx.ues[msg.ue]
        scale = self.ctx.config.attach_signaling_messages / 6.0
        try:
            allowed = self.register_ue(msg.ue)
        except RegistrationRejected:
            self._reject(msg, "RegistrationRejected", scale)
            return
        ue_rt.state = "Registered"
        ue_rt.allowed_slices = allowed
        slice_rt = self.ctx.slices.get(msg.slice_name)
        if slice_rt is None or slice_rt.smf is None:
            self._reject(msg, "SliceUnavailable", scale)
            return
        delay = round(self.ctx.topology.hop_delay_us(self.entity_id, slice_rt.smf) * scale)
        self.engine.send(
            slice_rt.smf,
            m.CreateSessionRequest(msg.ue, msg.slice_name, msg.requested_at),
            delay=delay,
        )

    def _reject(self, msg: m.RegistrationRequest, cause: str, scale: float) -> None:
        path = downlink_signaling_path(self.ctx, [self.entity_id], msg.ue)
        delay = round(self.ctx.topology.path_delay_us(path) * scale)
        self.engine.send(
            msg.ue, m.AttachReject(msg.ue, msg.slice_name, cause, msg.requested_at), delay=delay
        )


class Smf(RanNode):
    """Per-slice session management function."""

    kind = NodeKind.SMF

    def __init__(self, entity_id: str, ctx: SimContext, slice_name: str, profile=None):
        super().__init__(entity_id, ctx, profile)
        self.slice_name = slice_name
        self.sessions: dict[str, SessionContext] = {}

    def establish_pdu_session(self, ue: str, slice_name: str) -> SessionContext:
        """Validate and create the session context (tunnel id assigned at UPF)."""
        ue_rt = self.ctx.ues[ue]
        if slice_name not in ue_rt.allowed_slices:
            raise SliceNotAllowed(f"{ue} not allowed on {slice_name}")
        slice_rt = self.ctx.slices.get(slice_name)
        if slice_rt is None or slice_rt.upf is None:
            raise UpfUnavailable(f"slice {slice_name} has no UPF")
        session = SessionContext(
            ue_id=ue,
            slice_name=slice_name,
            upf=slice_rt.upf,
            tunnel_id=0,
            established_at=self.engine.clock,
        )
        self.sessions[ue] = session
        return session

    def on_message(self, msg) -> None:
        if isinstance(msg, m.CreateSessionRequest):
            scale = self.ctx.config.attach_signaling_messages / 6.0
            try:
                session = self.establish_pdu_session(msg.ue, msg.slice_name)
            except (SliceNotAllowed, UpfUnavailable) as exc:
                cause = type(exc).__name__
                slice_rt = self.ctx.slices.get(msg.slice_name)
                amf = (slice_rt.amf if slice_rt and slice_rt.amf else None) or _find_by_kind(
                    self.ctx, NodeKind.AMF
                )
                path = downlink_signaling_path(self.ctx, [self.entity_id, amf], msg.ue)
                delay = round(self.ctx.topology.path_delay_us(path) * scale)
                self.engine.send(
                    msg.ue,
                    m.AttachReject(msg.ue, msg.slice_name, cause, msg.requested_at),
                    delay=delay,
                )
                self.ctx.log(self.entity_id, "session_rejected", f"{msg.ue} {cause}")
                return
            delay = round(
                self.ctx.topology.hop_delay_us(self.entity_id, session.upf) * scale
            )
            self.engine.send(
                session.upf,
                m.EstablishTunnel(msg.ue, msg.slice_name, msg.requested_at),
                delay=delay,
            )
        else:
            super().on_message(msg)


class Upf(RanNode):
    """Per-slice user-plane function: tunnels, forwarding, byte accounting."""

    kind = NodeKind.UPF

    def __init__(self, entity_id: str, ctx: SimContext, slice_name: str, profile=None):
        super().__init__(entity_id, ctx, profile)
        self.slice_name = slice_name
        self.tunnels: dict[int, str] = {}  # tunnel_id -> ue
        self._tunnel_seq = 0
        self.slice_bytes: dict[str, float] = {}
        self.drops_no_tunnel = 0

    def install_tunnel(self, ue: str) -> int:
        self._tunnel_seq += 1
        self.tunnels[self._tunnel_seq] = ue
        return self._tunnel_seq

    def remove_tunnel(self, tunnel_id: int) -> None:
        self.tunnels.pop(tunnel_id, None)

    def forward(self, pkt: Packet) -> None:
        """Deliver one packet through the user plane (NoTunnel drops counted)."""
        if pkt.tunnel_id not in self.tunnels:
            self.drops_no_tunnel += 1
            self.ctx.counters["upf_no_tunnel_drops"] += 1
            raise NoTunnel(f"tunnel {pkt.tunnel_id} not installed at {self.entity_id}")
        self.slice_bytes[pkt.slice_name] = (
            self.slice_bytes.get(pkt.slice_name, 0.0) + pkt.size_bytes
        )
        self.forward_packet(pkt)

    def on_packet(self, pkt: Packet) -> None:
        try:
            self.forward(pkt)
        except NoTunnel:
            self.ctx.log(self.entity_id, "no_tunnel_drop", f"{pkt.flow_id} seq={pkt.seq}")

    def on_message(self, msg) -> None:
        if isinstance(msg, m.EstablishTunnel):
            tunnel_id = self.install_tunnel(msg.ue)
            ue_rt = self.ctx.ues[msg.ue]
            slice_rt = self.ctx.slices[msg.slice_name]
            smf = self.engine.entities.get(slice_rt.smf) if slice_rt.smf else None
            if smf is not None and msg.ue in smf.sessions:
                smf.sessions[msg.ue].tunnel_id = tunnel_id
            scale = self.ctx.config.attach_signaling_messages / 6.0
            ru = _find_by_kind(self.ctx, NodeKind.RU, linked_to=ue_rt.serving_du)
            path = [self.entity_id, slice_rt.cu_up, ue_rt.serving_du, ru, msg.ue]
            delay = round(self.ctx.topology.path_delay_us(path) * scale)
            self.engine.send(
                msg.ue,
                m.AttachAccept(msg.ue, msg.slice_name, tunnel_id, msg.requested_at),
                delay=delay,
            )
        elif isinstance(msg, m.SessionRelease):
            if msg.tunnel_id is not None:
                self.remove_tunnel(msg.tunnel_id)
            self.ctx.log(self.entity_id, "tunnel_removed", f"{msg.ue}")
        else:
            super().on_message(msg)


class ServerHost(RanNode):
    """The N6-side traffic endpoint: answers pings."""

    kind = NodeKind.SERVER

    def on_packet(self, pkt: Packet) -> None:
        if pkt.kind != "ping_req":
            return
        reply_path = tuple(reversed(pkt.path))
        reply = Packet(
            pkt.flow_id, "ping_resp", pkt.seq, reply_path, 0, pkt.sent_at,
            pkt.size_bytes, pkt.ue, pkt.slice_name, pkt.tunnel_id,
        )
        nxt = reply.next_hop()
        delay = self.ctx.topology.proc_us(self.entity_id) + self.ctx.topology.hop_delay_us(
            self.entity_id, nxt, self._link_rng(self.entity_id, nxt)
        )
        self.engine.send(nxt, Packet(
            reply.flow_id, reply.kind, reply.seq, reply.path, 1, reply.sent_at,
            reply.size_bytes, reply.ue, reply.slice_name, reply.tunnel_id,
        ), delay=delay)
