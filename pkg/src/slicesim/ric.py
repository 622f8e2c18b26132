"""Near-RT RIC: E2 client endpoint, xApp runtime, slice orchestration.

The RIC initiates E2 setup toward RAN nodes (matching the interworking
behavior this artifact reproduces), matches responses by transaction id,
hosts xApps, and relays decoded KPI samples to them. Cross-xApp exchange
happens over an explicit RIC bus, never via shared state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from . import e2 as wire
from . import messages as m
from .context import SimContext
from .engine import Entity
from .topology import NodeKind


class AssocState(Enum):
    IDLE = "Idle"
    SETUP_PENDING = "SetupPending"
    ESTABLISHED = "Established"
    DEGRADED = "Degraded"  # handshake done, RAN function list empty


@dataclass
class E2Association:
    node: str
    state: AssocState = AssocState.IDLE
    ran_functions: tuple[int, ...] = ()
    retries_left: int = 3
    attempt: int = 0


@dataclass
class SubscriptionState:
    sub_id: int
    node: str
    function_id: int
    report_period_us: int
    active: bool = False


@dataclass(frozen=True)
class KpiSample:
    node: str
    scope_kind: str  # cell | slice | ue
    scope: str       # entity name
    metric: str
    value: float
    at: int


METRIC_NAMES = {
    wire.MetricId.DL_THROUGHPUT: "dl_throughput_mbps",
    wire.MetricId.UL_THROUGHPUT: "ul_throughput_mbps",
    wire.MetricId.CONNECTED: "connected",
    wire.MetricId.PRB_USAGE: "prb_usage",
    wire.MetricId.SESSION_ACTIVE: "session_active",
}


class XApp:
    """Handler contract for applications hosted on the RIC."""

    xapp_id = "xapp"

    def __init__(self, ric: "Ric"):
        self.ric = ric
        self.ctx = ric.ctx

    def on_indication(self, sample: KpiSample) -> None:
        pass

    def on_indication_batch_end(self, node: str, at: int) -> None:
        pass

    def on_timer(self, now: int) -> None:
        pass

    def on_bus(self, msg: m.RicBusMessage) -> None:
        pass

    def on_control_outcome(self, token: str, ok: bool, detail: str) -> None:
        pass


class Ric(Entity):
    def __init__(self, entity_id: str, ctx: SimContext):
        super().__init__(entity_id)
        self.ctx = ctx
        self.associations: dict[str, E2Association] = {}
        self.subscriptions: dict[int, SubscriptionState] = {}
        self.subscription_failures: list[tuple[str, str]] = []  # (node, cause)
        self._txn = 0
        self._sub_seq = 0
        self._pending: dict[int, dict] = {}  # txn -> {kind, node, ...}
        self.xapps: dict[str, XApp] = {}
        self.auto_subscribe_nodes: set[str] = set()

    # -- wiring ---------------------------------------------------------------

    def add_xapp(self, xapp: XApp) -> XApp:
        self.xapps[xapp.xapp_id] = xapp
        return xapp

    def publish(self, topic: str, body: dict) -> None:
        self.engine.send(self.entity_id, m.RicBusMessage(topic, body))

    def _next_txn(self) -> int:
        self._txn += 1
        return self._txn

    def _send(self, node: str, msg: wire.E2Message) -> None:
        delay = self.ctx.topology.hop_delay_us(self.entity_id, node)
        self.engine.send(node, m.E2Bytes(src=self.entity_id, data=wire.encode(msg)), delay=delay)

    # -- E2 setup -------------------------------------------------------------

    def e2_setup(self, node: str) -> None:
        assoc = self.associations.setdefault(node, E2Association(node))
        assoc.state = AssocState.SETUP_PENDING
        assoc.retries_left = self.ctx.config.e2_retries
        assoc.attempt += 1
        self._send_setup(assoc)

    def _send_setup(self, assoc: E2Association) -> None:
        txn = self._next_txn()
        self._pending[txn] = {"kind": "setup", "node": assoc.node}
        self._send(assoc.node, wire.E2Message(
            wire.MsgType.SETUP_REQUEST, txn,
            ies=(wire.InformationElement(wire.IeTag.NODE_ID, assoc.node.encode()),),
        ))
        self.engine.schedule_in(
            self.ctx.config.e2_retry_interval_us,
            self.entity_id,
            m.E2SetupTimer(assoc.node, assoc.attempt),
        )
        self.ctx.log(self.entity_id, "e2_setup_request", f"node={assoc.node} txn={txn}")

    def _on_setup_timer(self, msg: m.E2SetupTimer) -> None:
        assoc = self.associations.get(msg.node)
        if assoc is None or assoc.state is not AssocState.SETUP_PENDING:
            return
        if msg.attempt != assoc.attempt:
            return
        if assoc.retries_left > 0:
            assoc.retries_left -= 1
            assoc.attempt += 1
            self.ctx.counters[f"e2_setup_retries:{msg.node}"] += 1
            self._send_setup(assoc)
            return
        assoc.state = AssocState.IDLE
        self.ctx.counters["e2_setup_timeouts"] += 1
        self.ctx.log(self.entity_id, "e2_setup_timeout", f"node={msg.node}")

    # -- subscription / control -------------------------------------------------

    def subscribe(self, node: str, function_id: int, report_period_us: int):
        """Start a periodic report subscription; local Failure on a
        degraded association (no function to subscribe to)."""
        assoc = self.associations.get(node)
        if assoc is None or assoc.state not in (AssocState.ESTABLISHED, AssocState.DEGRADED):
            self.subscription_failures.append((node, "not-established"))
            self.ctx.log(self.entity_id, "subscription_failure", f"node={node} cause=not-established")
            return None
        if assoc.state is AssocState.DEGRADED:
            self.subscription_failures.append((node, "no-ran-function"))
            self.ctx.counters["subscription_no_ran_function"] += 1
            self.ctx.log(self.entity_id, "subscription_failure", f"node={node} cause=no-ran-function")
            return None
        if function_id not in assoc.ran_functions:
            self.subscription_failures.append((node, "unknown-function"))
            self.ctx.log(self.entity_id, "subscription_failure", f"node={node} cause=unknown-function")
            return None
        if report_period_us < wire.REPORT_PERIOD_FLOOR_US:
            self.subscription_failures.append((node, "period-below-floor"))
            self.ctx.log(self.entity_id, "subscription_failure", f"node={node} cause=period-below-floor")
            return None
        self._sub_seq += 1
        sub = SubscriptionState(self._sub_seq, node, function_id, report_period_us)
        self.subscriptions[sub.sub_id] = sub
        txn = self._next_txn()
        self._pending[txn] = {"kind": "subscribe", "node": node, "sub_id": sub.sub_id}
        self._send(node, wire.E2Message(
            wire.MsgType.SUBSCRIPTION_REQUEST, txn,
            ies=(
                wire.InformationElement(
                    wire.IeTag.RAN_FUNCTION_LIST, wire.encode_ran_functions([function_id])
                ),
                wire.InformationElement(
                    wire.IeTag.REPORT_PERIOD, wire.encode_u64(report_period_us)
                ),
            ),
        ))
        return sub

    def control(self, node: str, action: wire.SetSliceShares, token: str,
                callback: Callable[[str, bool, str], None] | None = None) -> None:
        """Issue a control action; outcome reported via callback."""
        assoc = self.associations.get(node)
        if assoc is None or assoc.state is not AssocState.ESTABLISHED:
            cause = "no-ran-function" if assoc and assoc.state is AssocState.DEGRADED else "not-established"
            self.ctx.log(self.entity_id, "control_failure", f"node={node} cause={cause}")
            if callback:
                callback(token, False, cause)
            return
        txn = self._next_txn()
        self._pending[txn] = {
            "kind": "control", "node": node, "token": token, "callback": callback,
        }
        self._send(node, wire.E2Message(
            wire.MsgType.CONTROL_REQUEST, txn,
            ies=(
                wire.InformationElement(
                    wire.IeTag.CONTROL_ACTION, wire.encode_control_action(action)
                ),
            ),
        ))
        self.engine.schedule_in(
            self.ctx.config.control_timeout_us, self.entity_id, m.ControlTimeout(txn)
        )

    def _on_control_timeout(self, txn: int) -> None:
        pending = self._pending.pop(txn, None)
        if pending is None or pending["kind"] != "control":
            return
        self.ctx.log(self.entity_id, "control_timeout", f"node={pending['node']}")
        if pending.get("callback"):
            pending["callback"](pending["token"], False, "timeout")

    # -- inbound E2 ---------------------------------------------------------------

    def handle(self, msg) -> None:
        if isinstance(msg, m.E2Bytes):
            self._on_e2(msg)
        elif isinstance(msg, m.E2SetupTimer):
            self._on_setup_timer(msg)
        elif isinstance(msg, m.ControlTimeout):
            self._on_control_timeout(msg.txn)
        elif isinstance(msg, m.RicBusMessage):
            for xapp in self.xapps.values():
                xapp.on_bus(msg)
        elif isinstance(msg, m.XappTimer):
            xapp = self.xapps.get(msg.xapp_id)
            if xapp is not None:
                xapp.on_timer(self.engine.clock)
        elif isinstance(msg, (m.DeployAck,)):
            for xapp in self.xapps.values():
                if hasattr(xapp, "on_deploy_ack"):
                    xapp.on_deploy_ack(msg)
        elif isinstance(msg, m.NodeBoot):
            self._bootstrap()
        else:
            raise NotImplementedError(f"ric: unhandled {type(msg).__name__}")

    def _bootstrap(self) -> None:
        for node in self.auto_subscribe_nodes:
            self.e2_setup(node)

    def _on_e2(self, msg: m.E2Bytes) -> None:
        try:
            decoded = wire.decode(msg.data)
        except wire.DecodeError as exc:
            self.ctx.counters["ric_decode_errors"] += 1
            self.ctx.log(self.entity_id, "e2_decode_error", type(exc).__name__)
            return
        if decoded.msg_type == wire.MsgType.INDICATION:
            self._on_indication(msg.src, decoded)
            return
        pending = self._pending.pop(decoded.txn_id, None)
        if pending is None or pending["node"] != msg.src:
            self.ctx.counters["e2_unmatched_responses"] += 1
            return
        if decoded.msg_type == wire.MsgType.SETUP_RESPONSE:
            self._on_setup_response(msg.src, decoded)
        elif decoded.msg_type == wire.MsgType.SUBSCRIPTION_RESPONSE:
            sub = self.subscriptions.get(pending["sub_id"])
            if sub is not None:
                sub.active = True
                self.ctx.log(self.entity_id, "subscription_confirmed", f"node={msg.src}")
        elif decoded.msg_type == wire.MsgType.CONTROL_ACK:
            applied_raw = decoded.find(wire.IeTag.APPLIED_AT)
            applied_at = wire.decode_u64(applied_raw) if applied_raw else self.engine.clock
            if pending.get("callback"):
                pending["callback"](pending["token"], True, f"applied_at={applied_at}")
        elif decoded.msg_type == wire.MsgType.FAILURE:
            cause_raw = decoded.find(wire.IeTag.CAUSE)
            cause = wire.decode_cause(cause_raw) if cause_raw else "unspecified"
            if pending["kind"] == "subscribe":
                self.subscriptions.pop(pending.get("sub_id"), None)
                self.subscription_failures.append((msg.src, cause))
                self.ctx.log(self.entity_id, "subscription_failure", f"node={msg.src} cause={cause}")
            elif pending["kind"] == "control" and pending.get("callback"):
                pending["callback"](pending["token"], False, cause)

    def _on_setup_response(self, node: str, decoded: wire.E2Message) -> None:
        assoc = self.associations.setdefault(node, E2Association(node))
        raw = decoded.find(wire.IeTag.RAN_FUNCTION_LIST)
        functions = tuple(wire.decode_ran_functions(raw)) if raw else ()
        assoc.ran_functions = functions
        assoc.state = AssocState.ESTABLISHED if functions else AssocState.DEGRADED
        self.ctx.log(
            self.entity_id, "e2_association",
            f"node={node} state={assoc.state.value} functions={list(functions)}",
        )
        if node in self.auto_subscribe_nodes:
            self.subscribe(node, wire.FUNC_KPI_REPORT, self.ctx.config.report_period_us)

    def _on_indication(self, node: str, decoded: wire.E2Message) -> None:
        at_raw = decoded.find(wire.IeTag.SAMPLE_TIME)
        at = wire.decode_u64(at_raw) if at_raw else self.engine.clock
        kpi_raw = decoded.find(wire.IeTag.KPI_PAYLOAD)
        if kpi_raw is None:
            return
        try:
            entries = wire.decode_kpi_payload(kpi_raw)
        except wire.DecodeError:
            self.ctx.counters["ric_decode_errors"] += 1
            return
        self.ctx.counters[f"indications:{node}"] += 1
        for entry in entries:
            sample = self._to_sample(node, entry, at)
            if sample is None:
                continue
            self.ctx.metric(at, sample.scope, sample.metric, sample.value)
            for xapp in self.xapps.values():
                xapp.on_indication(sample)
        for xapp in self.xapps.values():
            xapp.on_indication_batch_end(node, at)

    def _to_sample(self, node: str, entry: wire.KpiEntry, at: int) -> KpiSample | None:
        metric = METRIC_NAMES.get(entry.metric_id)
        if metric is None:
            return None
        if entry.scope_kind == wire.ScopeKind.UE:
            ue = self.ctx.ue_by_index(entry.scope_index)
            if ue is None:
                return None
            return KpiSample(node, "ue", ue.name, metric, entry.value, at)
        if entry.scope_kind == wire.ScopeKind.SLICE:
            slice_rt = self.ctx.slice_by_index(entry.scope_index)
            if slice_rt is None:
                return None
            return KpiSample(node, "slice", slice_rt.name, metric, entry.value, at)
        return KpiSample(node, "cell", f"cell:{node}", metric, entry.value, at)


# --- slice manager -------------------------------------------------------------

@dataclass
class SliceJob:
    slice_name: str
    steps: list[str] = field(default_factory=list)
    current: int = 0


class SliceManagerXapp(XApp):
    """Slice lifecycle orchestration across the RAN and the core."""

    xapp_id = "slice_manager"

    def __init__(self, ric: Ric, cu_cp: str, amf: str, du: str):
        super().__init__(ric)
        self.cu_cp = cu_cp
        self.amf = amf
        self.du = du
        self.jobs: dict[str, SliceJob] = {}

    def on_bus(self, msg: m.RicBusMessage) -> None:
        if msg.topic == "cmd:create_slice":
            self.create_slice(msg.body["slice"])
        elif msg.topic == "cmd:set_shares":
            self.set_shares(msg.body["shares"])

    # admission counts slices being deployed as well as ready ones
    def _committed_share(self) -> float:
        total = 0.0
        for s in self.ctx.slices.values():
            if s.state in ("deploying", "ready"):
                total += s.share
        return total

    def create_slice(self, slice_name: str) -> None:
        slice_rt = self.ctx.slices[slice_name]
        if slice_rt.state in ("deploying", "ready"):
            return
        if self._committed_share() + slice_rt.share > 1.0 + 1e-9:
            slice_rt.state = "failed"
            self.ctx.counters["admission_rejected"] += 1
            self.ctx.log("ric", "admission_rejected",
                         f"{slice_name} share={slice_rt.share:g} committed={self._committed_share():g}")
            return
        slice_rt.state = "deploying"
        steps = ["deploy_cu_up"]
        if self.ctx.config.sliced_amf:
            steps.append("deploy_amf")
        steps += ["deploy_smf", "deploy_upf", "set_slice_shares", "register_slice_amf"]
        self.jobs[slice_name] = SliceJob(slice_name, steps)
        self.ctx.log("ric", "orchestration_start", f"{slice_name}")
        self._run_step(slice_name)

    def _run_step(self, slice_name: str) -> None:
        job = self.jobs[slice_name]
        if job.current >= len(job.steps):
            self._finish(slice_name)
            return
        step = job.steps[job.current]
        self.ctx.log("ric", "orchestration_step", f"{slice_name} {step}")
        ric = self.ric
        if step == "deploy_cu_up":
            delay = ric.ctx.topology.hop_delay_us(ric.entity_id, self.cu_cp)
            ric.engine.send(self.cu_cp, m.DeployCuUp(slice_name, ric.entity_id), delay=delay)
        elif step in ("deploy_smf", "deploy_upf", "deploy_amf"):
            kind = step.split("_")[1].upper()
            delay = ric.ctx.topology.hop_delay_us(ric.entity_id, self.amf)
            ric.engine.send(
                self.amf, m.DeployCoreFunction(slice_name, kind, ric.entity_id), delay=delay
            )
        elif step == "set_slice_shares":
            shares = {}
            for s in self.ctx.slices.values():
                if s.state in ("deploying", "ready"):
                    shares[s.index] = s.share
            ric.control(
                self.du, wire.SetSliceShares.of(shares),
                token=slice_name, callback=self._control_outcome,
            )
        elif step == "register_slice_amf":
            target = self.ctx.slices[slice_name].amf or self.amf
            delay = ric.ctx.topology.hop_delay_us(ric.entity_id, target)
            ric.engine.send(target, m.RegisterSlice(slice_name, ric.entity_id), delay=delay)

    def on_deploy_ack(self, ack: m.DeployAck) -> None:
        job = self.jobs.get(ack.slice_name)
        if job is None:
            return
        step = job.steps[job.current]
        if not ack.ok:
            self._fail(ack.slice_name, step, ack.detail)
            return
        slice_rt = self.ctx.slices[ack.slice_name]
        if step == "deploy_cu_up":
            slice_rt.cu_up = ack.node_id
        elif step == "deploy_smf":
            slice_rt.smf = ack.node_id
        elif step == "deploy_upf":
            slice_rt.upf = ack.node_id
        elif step == "deploy_amf":
            slice_rt.amf = ack.node_id
        job.current += 1
        self._run_step(ack.slice_name)

    def _control_outcome(self, slice_name: str, ok: bool, detail: str) -> None:
        job = self.jobs.get(slice_name)
        if job is None:
            return
        if not ok:
            self._fail(slice_name, "set_slice_shares", detail)
            return
        self.ric.publish("slice_shares", {
            "shares": {
                s.name: s.share
                for s in self.ctx.slices.values()
                if s.state in ("deploying", "ready")
            },
        })
        job.current += 1
        self._run_step(slice_name)

    def _finish(self, slice_name: str) -> None:
        slice_rt = self.ctx.slices[slice_name]
        slice_rt.state = "ready"
        self.jobs.pop(slice_name, None)
        self.ctx.log("ric", "slice_ready", slice_name)
        self.ric.publish("slice_ready", {"slice": slice_name})

    def _fail(self, slice_name: str, step: str, detail: str) -> None:
        slice_rt = self.ctx.slices[slice_name]
        self.ctx.log("ric", "orchestration_failed", f"{slice_name} step={step} {detail}")
        self.ctx.counters["orchestration_failed"] += 1
        ric = self.ric
        # partial rollback: tear down whatever was deployed
        if slice_rt.cu_up:
            delay = ric.ctx.topology.hop_delay_us(ric.entity_id, self.cu_cp)
            ric.engine.send(self.cu_cp, m.TeardownFunction(slice_name, slice_rt.cu_up), delay=delay)
        for node_id in (slice_rt.smf, slice_rt.upf, slice_rt.amf):
            if node_id:
                delay = ric.ctx.topology.hop_delay_us(ric.entity_id, self.amf)
                ric.engine.send(self.amf, m.TeardownFunction(slice_name, node_id), delay=delay)
        slice_rt.smf = None
        slice_rt.upf = None
        slice_rt.amf = None
        slice_rt.state = "failed"
        self.jobs.pop(slice_name, None)
        self.ric.publish("slice_failed", {"slice": slice_name, "step": step})

    def set_shares(self, shares: dict[str, float]) -> None:
        """Direct share update outside slice creation (scenario action)."""
        indexed = {}
        for name, share in shares.items():
            slice_rt = self.ctx.slices.get(name)
            if slice_rt is not None:
                indexed[slice_rt.index] = share
                slice_rt.share = share
        self.ric.control(
            self.du, wire.SetSliceShares.of(indexed),
            token="set_shares", callback=self._set_shares_outcome,
        )

    def _set_shares_outcome(self, token: str, ok: bool, detail: str) -> None:
        if ok:
            self.ric.publish("slice_shares", {
                "shares": {
                    s.name: s.share
                    for s in self.ctx.slices.values()
                    if s.state in ("deploying", "ready")
                },
            })
        else:
            self.ctx.log("ric", "set_shares_failed", detail)
