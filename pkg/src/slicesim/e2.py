"""Wire codec for the E2-style RIC interface.

Big-endian TLV framing: a 10-byte header (version, msg_type, txn_id,
payload_len) followed by tag/len/value information elements. The decoder
is total: any byte string yields either a message or a typed DecodeError.

Payload sub-codecs for the registered IE kinds (KPI report lists, RAN
function lists, slice-share control actions) live here as well.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

HEADER = struct.Struct(">BBII")
IE_HEADER = struct.Struct(">HH")
WIRE_VERSION = 1
MAX_IE_VALUE = 0xFFFF


class MsgType(IntEnum):
    SETUP_REQUEST = 1
    SETUP_RESPONSE = 2
    SUBSCRIPTION_REQUEST = 3
    SUBSCRIPTION_RESPONSE = 4
    INDICATION = 5
    CONTROL_REQUEST = 6
    CONTROL_ACK = 7
    FAILURE = 8


class IeTag(IntEnum):
    NODE_ID = 1
    RAN_FUNCTION_LIST = 2
    REPORT_PERIOD = 3
    KPI_PAYLOAD = 4
    CONTROL_ACTION = 5
    CAUSE = 6
    APPLIED_AT = 7
    SAMPLE_TIME = 8


class MetricId(IntEnum):
    DL_THROUGHPUT = 1
    UL_THROUGHPUT = 2
    CONNECTED = 3
    PRB_USAGE = 4
    SESSION_ACTIVE = 5


class ScopeKind(IntEnum):
    CELL = 0
    SLICE = 1
    UE = 2


# RAN functions advertised by a healthy node
FUNC_KPI_REPORT = 1
FUNC_SLICE_CONTROL = 2
DEFAULT_RAN_FUNCTIONS = (FUNC_KPI_REPORT, FUNC_SLICE_CONTROL)

REPORT_PERIOD_FLOOR_US = 10_000


class EncodeError(ValueError):
    pass


class IeTooLarge(EncodeError):
    pass


class DecodeError(ValueError):
    pass


class Truncated(DecodeError):
    pass


class LengthMismatch(DecodeError):
    pass


class UnknownMsgType(DecodeError):
    """Frame parsed but the msg_type byte is outside the known set."""

    def __init__(self, raw_type: int, message: "E2Message"):
        super().__init__(f"unknown msg_type {raw_type}")
        self.raw_type = raw_type
        self.message = message


@dataclass(frozen=True)
class InformationElement:
    tag: int
    value: bytes


@dataclass(frozen=True)
class E2Message:
    msg_type: int
    txn_id: int
    ies: tuple[InformationElement, ...] = ()
    version: int = WIRE_VERSION

    def find(self, tag: int) -> bytes | None:
        for ie in self.ies:
            if ie.tag == tag:
                return ie.value
        return None


def encode(msg: E2Message) -> bytes:
    if msg.version != WIRE_VERSION:
        raise EncodeError(f"unsupported wire version {msg.version}")
    if not (0 <= msg.msg_type <= 0xFF):
        raise EncodeError(f"msg_type {msg.msg_type} out of byte range")
    if not (0 <= msg.txn_id <= 0xFFFFFFFF):
        raise EncodeError(f"txn_id {msg.txn_id} out of u32 range")
    parts = []
    for ie in msg.ies:
        if len(ie.value) > MAX_IE_VALUE:
            raise IeTooLarge(f"IE tag {ie.tag} value is {len(ie.value)} bytes")
        if not (0 <= ie.tag <= 0xFFFF):
            raise EncodeError(f"IE tag {ie.tag} out of u16 range")
        parts.append(IE_HEADER.pack(ie.tag, len(ie.value)))
        parts.append(ie.value)
    payload = b"".join(parts)
    return HEADER.pack(msg.version, msg.msg_type, msg.txn_id, len(payload)) + payload


def decode(data: bytes) -> E2Message:
    if len(data) < HEADER.size:
        raise Truncated(f"{len(data)} bytes, header needs {HEADER.size}")
    version, raw_type, txn_id, payload_len = HEADER.unpack_from(data)
    if HEADER.size + payload_len > len(data):
        raise LengthMismatch(
            f"payload_len {payload_len} but only {len(data) - HEADER.size} bytes follow"
        )
    if HEADER.size + payload_len < len(data):
        raise LengthMismatch(f"{len(data) - HEADER.size - payload_len} trailing bytes")
    ies = []
    off = HEADER.size
    end = HEADER.size + payload_len
    while off < end:
        if off + IE_HEADER.size > end:
            raise LengthMismatch("partial IE header")
        tag, length = IE_HEADER.unpack_from(data, off)
        off += IE_HEADER.size
        if off + length > end:
            raise LengthMismatch(f"IE tag {tag} overruns payload")
        ies.append(InformationElement(tag, bytes(data[off : off + length])))
        off += length
    msg = E2Message(msg_type=raw_type, txn_id=txn_id, ies=tuple(ies), version=version)
    try:
        MsgType(raw_type)
    except ValueError:
        raise UnknownMsgType(raw_type, msg) from None
    return msg


# --- IE payload sub-codecs ------------------------------------------------

@dataclass(frozen=True)
class KpiEntry:
    """One KPI report entry: fixed-point milliunit value with a typed scope."""

    metric_id: int
    scope_kind: int
    scope_index: int
    value_milli: int

    @classmethod
    def of(cls, metric_id: int, scope_kind: int, scope_index: int, value: float) -> "KpiEntry":
        return cls(metric_id, scope_kind, scope_index, round(value * 1000))

    @property
    def value(self) -> float:
        return self.value_milli / 1000.0


_KPI_ENTRY = struct.Struct(">B B 3s q")


def encode_kpi_payload(entries: list[KpiEntry]) -> bytes:
    parts = [struct.pack(">H", len(entries))]
    for e in entries:
        if not (0 <= e.scope_index < (1 << 24)):
            raise EncodeError(f"scope index {e.scope_index} out of 24-bit range")
        parts.append(
            _KPI_ENTRY.pack(
                e.metric_id, e.scope_kind, e.scope_index.to_bytes(3, "big"), e.value_milli
            )
        )
    return b"".join(parts)


def decode_kpi_payload(value: bytes) -> list[KpiEntry]:
    if len(value) < 2:
        raise LengthMismatch("KPI payload shorter than its count prefix")
    (count,) = struct.unpack_from(">H", value)
    expected = 2 + count * _KPI_ENTRY.size
    if len(value) != expected:
        raise LengthMismatch(f"KPI payload {len(value)} bytes, {count} entries need {expected}")
    entries = []
    off = 2
    for _ in range(count):
        metric_id, scope_kind, idx_bytes, milli = _KPI_ENTRY.unpack_from(value, off)
        entries.append(KpiEntry(metric_id, scope_kind, int.from_bytes(idx_bytes, "big"), milli))
        off += _KPI_ENTRY.size
    return entries


def encode_ran_functions(function_ids) -> bytes:
    return b"".join(struct.pack(">H", f) for f in function_ids)


def decode_ran_functions(value: bytes) -> list[int]:
    if len(value) % 2 != 0:
        raise LengthMismatch("RAN function list not a multiple of 2 bytes")
    return [v[0] for v in struct.iter_unpack(">H", value)]


def encode_u64(value: int) -> bytes:
    return struct.pack(">Q", value)


def decode_u64(value: bytes) -> int:
    if len(value) != 8:
        raise LengthMismatch(f"expected 8-byte integer IE, got {len(value)}")
    return struct.unpack(">Q", value)[0]


ACTION_SET_SLICE_SHARES = 1


@dataclass(frozen=True)
class SetSliceShares:
    """Control action: per-slice radio share in milli-fraction units."""

    shares_milli: tuple[tuple[int, int], ...]  # (slice_index, milli_share)

    @classmethod
    def of(cls, shares: dict[int, float]) -> "SetSliceShares":
        return cls(tuple((idx, round(share * 1000)) for idx, share in shares.items()))

    def as_fractions(self) -> dict[int, float]:
        return {idx: milli / 1000.0 for idx, milli in self.shares_milli}


def encode_control_action(action: SetSliceShares) -> bytes:
    parts = [struct.pack(">BH", ACTION_SET_SLICE_SHARES, len(action.shares_milli))]
    for idx, milli in action.shares_milli:
        parts.append(struct.pack(">IH", idx, milli))
    return b"".join(parts)


def decode_control_action(value: bytes) -> SetSliceShares:
    if len(value) < 3:
        raise LengthMismatch("control action shorter than its header")
    kind, count = struct.unpack_from(">BH", value)
    if kind != ACTION_SET_SLICE_SHARES:
        raise DecodeError(f"unsupported control action kind {kind}")
    expected = 3 + count * 6
    if len(value) != expected:
        raise LengthMismatch(f"control action {len(value)} bytes, needs {expected}")
    shares = []
    off = 3
    for _ in range(count):
        idx, milli = struct.unpack_from(">IH", value, off)
        shares.append((idx, milli))
        off += 6
    return SetSliceShares(tuple(shares))


def encode_cause(cause: str) -> bytes:
    return cause.encode("utf-8")


def decode_cause(value: bytes) -> str:
    return value.decode("utf-8", errors="replace")


# --- pretty printer (e2dump) ----------------------------------------------

def _enum_name(enum_cls, value: int) -> str:
    try:
        return enum_cls(value).name
    except ValueError:
        return str(value)


def describe(msg: E2Message) -> str:
    try:
        type_name = MsgType(msg.msg_type).name
    except ValueError:
        type_name = f"UNKNOWN({msg.msg_type})"
    lines = [f"{type_name} txn={msg.txn_id} version={msg.version} ies={len(msg.ies)}"]
    for ie in msg.ies:
        try:
            tag_name = IeTag(ie.tag).name
        except ValueError:
            tag_name = f"TAG_{ie.tag}"
        detail = ie.value.hex()
        try:
            if ie.tag == IeTag.NODE_ID:
                detail = ie.value.decode("utf-8")
            elif ie.tag == IeTag.RAN_FUNCTION_LIST:
                detail = str(decode_ran_functions(ie.value))
            elif ie.tag in (IeTag.REPORT_PERIOD, IeTag.APPLIED_AT, IeTag.SAMPLE_TIME):
                detail = f"{decode_u64(ie.value)}us"
            elif ie.tag == IeTag.KPI_PAYLOAD:
                entries = decode_kpi_payload(ie.value)
                parts = []
                for e in entries:
                    metric = _enum_name(MetricId, e.metric_id)
                    scope = _enum_name(ScopeKind, e.scope_kind)
                    parts.append(f"{metric}[{scope}:{e.scope_index}]={e.value:g}")
                detail = ", ".join(parts) if parts else "(empty)"
            elif ie.tag == IeTag.CONTROL_ACTION:
                action = decode_control_action(ie.value)
                detail = "SetSliceShares " + ", ".join(
                    f"{idx}:{milli / 1000.0:g}" for idx, milli in action.shares_milli
                )
            elif ie.tag == IeTag.CAUSE:
                detail = decode_cause(ie.value)
        except (DecodeError, UnicodeDecodeError):
            detail = f"(malformed) {ie.value.hex()}"
        lines.append(f"  {tag_name} len={len(ie.value)}: {detail}")
    return "\n".join(lines)
