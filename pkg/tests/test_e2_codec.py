"""E2 TLV codec: exact wire bytes, round-trip identity, decode totality."""

import pytest
from hypothesis import given, settings, strategies as st

from slicesim.e2 import (
    E2Message,
    InformationElement,
    IeTooLarge,
    IeTag,
    KpiEntry,
    LengthMismatch,
    MsgType,
    SetSliceShares,
    Truncated,
    UnknownMsgType,
    DecodeError,
    decode,
    decode_control_action,
    decode_kpi_payload,
    decode_ran_functions,
    describe,
    encode,
    encode_control_action,
    encode_kpi_payload,
    encode_ran_functions,
)
from slicesim.engine import RngStream


def test_setup_request_empty_payload_exact_bytes():
    msg = E2Message(msg_type=MsgType.SETUP_REQUEST, txn_id=1)
    data = encode(msg)
    assert data == bytes.fromhex("0101" + "00000001" + "00000000")
    assert len(data) == 10


def test_indication_single_ie_length_arithmetic():
    # header 10 + IE header 4 + 4-byte value = 18 total, payload_len 8
    msg = E2Message(
        msg_type=MsgType.INDICATION,
        txn_id=7,
        ies=(InformationElement(IeTag.KPI_PAYLOAD, b"\x01\x02\x03\x04"),),
    )
    data = encode(msg)
    assert len(data) == 18
    assert data[6:10] == (8).to_bytes(4, "big")
    assert decode(data) == msg


def test_empty_ie_list_is_legal_on_the_wire():
    msg = E2Message(msg_type=MsgType.SETUP_RESPONSE, txn_id=3, ies=())
    decoded = decode(encode(msg))
    assert decoded.ies == ()


def test_truncated_header():
    with pytest.raises(Truncated):
        decode(b"\x01\x01\x00\x00\x00\x01\x00\x00\x00")  # 9 bytes


def test_payload_len_overrun():
    data = bytearray(encode(E2Message(MsgType.SETUP_REQUEST, 1)))
    data[9] = 5  # claims 5 payload bytes that are not there
    with pytest.raises(LengthMismatch):
        decode(bytes(data))


def test_trailing_garbage_rejected():
    data = encode(E2Message(MsgType.SETUP_REQUEST, 1)) + b"\x00"
    with pytest.raises(LengthMismatch):
        decode(data)


def test_ie_overrun_rejected():
    # IE claims 100 bytes inside an 8-byte payload
    bad_payload = (4).to_bytes(2, "big") + (100).to_bytes(2, "big") + b"\x00" * 4
    head = bytes([1, 5]) + (1).to_bytes(4, "big") + len(bad_payload).to_bytes(4, "big")
    with pytest.raises(LengthMismatch):
        decode(head + bad_payload)


def test_unknown_msg_type_flagged_but_decoded():
    raw = bytes([1, 99]) + (5).to_bytes(4, "big") + (0).to_bytes(4, "big")
    with pytest.raises(UnknownMsgType) as exc:
        decode(raw)
    assert exc.value.raw_type == 99
    assert exc.value.message.txn_id == 5


def test_oversized_ie_rejected_at_encode():
    msg = E2Message(
        MsgType.INDICATION, 1, ies=(InformationElement(4, b"\x00" * 65_536),)
    )
    with pytest.raises(IeTooLarge):
        encode(msg)


def _random_message(rng: RngStream) -> E2Message:
    n_ies = rng.randint(0, 8)
    ies = []
    for _ in range(n_ies):
        tag = rng.randint(0, 0xFFFF)
        length = rng.choice([0, 1, 2, 5, 16, 100, 1000])
        ies.append(InformationElement(tag, rng.bytes(length)))
    return E2Message(
        msg_type=rng.choice(list(MsgType)),
        txn_id=rng.randint(0, 0xFFFFFFFF),
        ies=tuple(ies),
    )


def test_round_trip_identity_bulk():
    # acceptance-scale sweep: >= 10k random valid messages
    rng = RngStream(2024, "codec-roundtrip")
    for _ in range(10_000):
        msg = _random_message(rng)
        assert decode(encode(msg)) == msg


def test_decode_total_on_random_bytes_bulk():
    # acceptance-scale fuzz: >= 100k arbitrary inputs, typed outcome only
    rng = RngStream(99, "codec-fuzz")
    outcomes = {"ok": 0, "error": 0}
    for i in range(60_000):
        length = rng.choice([0, 1, 5, 9, 10, 11, 14, 32, 64, 200])
        data = rng.bytes(length)
        try:
            decode(data)
            outcomes["ok"] += 1
        except DecodeError:
            outcomes["error"] += 1
    # structured corruption: flip bytes inside valid messages
    for i in range(40_000):
        msg = _random_message(rng)
        raw = bytearray(encode(msg))
        for _ in range(rng.randint(1, 3)):
            raw[rng.randint(0, len(raw) - 1)] = rng.randint(0, 255)
        try:
            decode(bytes(raw))
            outcomes["ok"] += 1
        except DecodeError:
            outcomes["error"] += 1
    assert outcomes["ok"] + outcomes["error"] == 100_000


@settings(max_examples=300, deadline=None)
@given(
    msg_type=st.sampled_from(list(MsgType)),
    txn=st.integers(0, 0xFFFFFFFF),
    ies=st.lists(
        st.tuples(st.integers(0, 0xFFFF), st.binary(max_size=300)), max_size=8
    ),
)
def test_round_trip_property(msg_type, txn, ies):
    msg = E2Message(
        msg_type=msg_type,
        txn_id=txn,
        ies=tuple(InformationElement(t, v) for t, v in ies),
    )
    assert decode(encode(msg)) == msg


@settings(max_examples=300, deadline=None)
@given(data=st.binary(max_size=2048))
def test_decode_never_crashes_property(data):
    try:
        decode(data)
    except DecodeError:
        pass


# --- payload sub-codecs -----------------------------------------------------


def test_kpi_payload_round_trip():
    entries = [
        KpiEntry.of(1, 2, 5, 244.9),
        KpiEntry.of(3, 2, 5, 1.0),
        KpiEntry.of(4, 1, 0, 85.0),
    ]
    decoded = decode_kpi_payload(encode_kpi_payload(entries))
    assert decoded == entries
    assert decoded[0].value == pytest.approx(244.9)


def test_kpi_payload_negative_and_large_values():
    entries = [KpiEntry(1, 0, 0, -5_000), KpiEntry(2, 0, 0, 2**40)]
    assert decode_kpi_payload(encode_kpi_payload(entries)) == entries


def test_kpi_payload_malformed():
    with pytest.raises(LengthMismatch):
        decode_kpi_payload(b"\x00")
    with pytest.raises(LengthMismatch):
        decode_kpi_payload(b"\x00\x02" + b"\x00" * 13)


def test_ran_function_list_round_trip():
    assert decode_ran_functions(encode_ran_functions([1, 2])) == [1, 2]
    assert decode_ran_functions(b"") == []
    with pytest.raises(LengthMismatch):
        decode_ran_functions(b"\x00")


def test_control_action_round_trip():
    action = SetSliceShares.of({0: 0.8, 1: 0.2})
    decoded = decode_control_action(encode_control_action(action))
    assert decoded.as_fractions() == {0: 0.8, 1: 0.2}


def test_control_action_malformed():
    with pytest.raises(DecodeError):
        decode_control_action(b"\x07\x00\x01" + b"\x00" * 6)  # unknown kind
    with pytest.raises(LengthMismatch):
        decode_control_action(b"\x01\x00\x02" + b"\x00" * 6)  # count mismatch


def test_describe_renders_known_ies():
    msg = E2Message(
        MsgType.INDICATION,
        9,
        ies=(
            InformationElement(IeTag.NODE_ID, b"du1"),
            InformationElement(IeTag.KPI_PAYLOAD, encode_kpi_payload([KpiEntry.of(1, 2, 0, 10.5)])),
        ),
    )
    text = describe(msg)
    assert "INDICATION" in text
    assert "du1" in text
    assert "DL_THROUGHPUT" in text
