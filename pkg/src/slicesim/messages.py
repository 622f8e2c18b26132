"""Message payloads exchanged between simulated entities.

Only message *types* live here; the sending/receiving behavior is in the
entity modules. Keeping them together avoids import cycles between the
RAN, core, and RIC modules.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class NodeBoot:
    pass


@dataclass(frozen=True)
class NodeOnline:
    pass


@dataclass(frozen=True)
class NodeOffline:
    pass


# --- F1 (DU <-> CU-CP) ------------------------------------------------------

@dataclass(frozen=True)
class F1SetupRequest:
    du: str
    txn: int


@dataclass(frozen=True)
class F1SetupResponse:
    cu_cp: str
    txn: int


@dataclass(frozen=True)
class F1Timeout:
    txn: int


# --- E2 transport -----------------------------------------------------------

@dataclass(frozen=True)
class E2Bytes:
    """Encoded E2 message in flight between a RAN node and the RIC."""

    src: str
    data: bytes


# --- attach signaling chain ---------------------------------------------------

@dataclass(frozen=True)
class AttachCommand:
    ue: str
    slice_name: str


@dataclass(frozen=True)
class DetachCommand:
    ue: str


@dataclass(frozen=True)
class RrcSetup:
    ue: str
    slice_name: str
    requested_at: int


@dataclass(frozen=True)
class InitialUeMessage:
    ue: str
    slice_name: str
    requested_at: int


@dataclass(frozen=True)
class RegistrationRequest:
    ue: str
    slice_name: str
    requested_at: int


@dataclass(frozen=True)
class CreateSessionRequest:
    ue: str
    slice_name: str
    requested_at: int


@dataclass(frozen=True)
class EstablishTunnel:
    ue: str
    slice_name: str
    requested_at: int


@dataclass(frozen=True)
class AttachAccept:
    ue: str
    slice_name: str
    tunnel_id: int
    requested_at: int


@dataclass(frozen=True)
class AttachReject:
    ue: str
    slice_name: str
    cause: str  # SliceUnavailable | RegistrationRejected | UpfUnavailable | SliceNotAllowed
    requested_at: int


@dataclass(frozen=True)
class SessionRelease:
    ue: str
    slice_name: str
    tunnel_id: int | None


@dataclass(frozen=True)
class SessionUp:
    ue: str


@dataclass(frozen=True)
class UeDetached:
    ue: str


# --- traffic and faults -------------------------------------------------------

@dataclass(frozen=True)
class FlowStart:
    flow_id: str


@dataclass(frozen=True)
class FlowStop:
    flow_id: str


@dataclass(frozen=True)
class PingTimer:
    flow_id: str


@dataclass(frozen=True)
class FaultStart:
    ue: str
    kind: str
    until_us: int
    factor: float


@dataclass(frozen=True)
class FaultEnd:
    ue: str
    kind: str


# --- DU internals ---------------------------------------------------------------

@dataclass(frozen=True)
class ReportTick:
    sub_id: int


@dataclass(frozen=True)
class ApplyShares:
    shares: tuple[tuple[str, float], ...]


# --- RIC internals ---------------------------------------------------------------

@dataclass(frozen=True)
class E2SetupTimer:
    node: str
    attempt: int


@dataclass(frozen=True)
class ControlTimeout:
    txn: int


@dataclass(frozen=True)
class RicBusMessage:
    """Cross-xApp information exchange on the RIC-internal bus."""

    topic: str
    body: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class OrchestrationStep:
    slice_name: str
    step: str


@dataclass(frozen=True)
class DeployCuUp:
    slice_name: str
    reply_to: str


@dataclass(frozen=True)
class DeployCoreFunction:
    slice_name: str
    kind: str  # SMF | UPF | AMF
    reply_to: str


@dataclass(frozen=True)
class DeployAck:
    slice_name: str
    step: str
    node_id: str | None
    ok: bool
    detail: str = ""


@dataclass(frozen=True)
class RegisterSlice:
    slice_name: str
    reply_to: str


@dataclass(frozen=True)
class TeardownFunction:
    slice_name: str
    node_id: str


@dataclass(frozen=True)
class XappTimer:
    xapp_id: str
