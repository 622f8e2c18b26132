"""Radio model: duplex fractions, capacity calibration, PRB slicing.

DERIVED expectations are computed by independent oracles in this file
(direct arithmetic, a tiny-increment pouring allocator) rather than by
the implementation under test.
"""

import math

import pytest

from slicesim.engine import RngStream
from slicesim.radio import (
    DEFAULT_CALIBRATION,
    DL_CENTRIC,
    UL_CENTRIC,
    Direction,
    InvalidConfig,
    NoActiveSlices,
    PrbAllocation,
    SliceShare,
    TddConfig,
    allocate_prbs,
    calibrate,
    duplex_fractions,
    largest_remainder_round,
    link_capacity,
    slice_throughput,
    total_prb_count,
)


def test_duplex_fractions_dl_centric():
    # direct arithmetic: (7 + 6/14)/10 and (2 + 4/14)/10
    dl, ul = duplex_fractions(DL_CENTRIC)
    assert dl == pytest.approx((7 + 6 / 14) / 10, abs=1e-12)
    assert ul == pytest.approx((2 + 4 / 14) / 10, abs=1e-12)
    assert dl == pytest.approx(0.742857, abs=1e-6)
    assert ul == pytest.approx(0.228571, abs=1e-6)
    assert dl + ul <= 1.0


def test_duplex_fractions_ul_centric():
    dl, ul = duplex_fractions(UL_CENTRIC)
    assert dl == pytest.approx(0.542857, abs=1e-6)
    assert ul == pytest.approx(0.428571, abs=1e-6)


def test_duplex_fractions_all_downlink_limit():
    cfg = TddConfig(dl_slots=9, ul_slots=0, special_dl_symbols=14, special_ul_symbols=0)
    dl, ul = duplex_fractions(cfg)
    assert dl == pytest.approx(1.0)
    assert ul == pytest.approx(0.0)


@pytest.mark.parametrize(
    "cfg",
    [
        TddConfig(7, 3, 6, 4),          # slots don't sum to period
        TddConfig(7, 2, 15, 4),         # symbols out of range
        TddConfig(7, 2, 8, 7),          # special symbols exceed 14
        TddConfig(-1, 10, 0, 0),        # negative
    ],
)
def test_invalid_tdd_configs_rejected(cfg):
    with pytest.raises(InvalidConfig):
        duplex_fractions(cfg)


def test_dl_centric_capacity_matches_measured_point():
    # calibration anchored at the 40 MHz 7/2 measurement: 240 / 25 Mbps
    assert link_capacity(40, Direction.DL, DL_CENTRIC) == pytest.approx(240.0, rel=1e-9)
    assert link_capacity(40, Direction.UL, DL_CENTRIC) == pytest.approx(25.0, rel=1e-9)


def test_cross_config_prediction_within_5_percent():
    # calibrated on 7/2 only; 5/4 must predict the other measured pair
    dl = link_capacity(40, Direction.DL, UL_CENTRIC)
    ul = link_capacity(40, Direction.UL, UL_CENTRIC)
    assert abs(dl - 172.0) / 172.0 < 0.05
    assert abs(ul - 49.0) / 49.0 < 0.05


def test_100mhz_dl_exceeds_500mbps():
    assert link_capacity(100, Direction.DL, DL_CENTRIC) > 500.0


def test_scale_linearity():
    base = link_capacity(40, Direction.DL, DL_CENTRIC)
    for k in (0.25, 0.5, 2.0, 2.5, 7.0):
        assert link_capacity(40 * k, Direction.DL, DL_CENTRIC) == pytest.approx(
            k * base, rel=1e-12
        )


def test_calibration_asymmetry_invariant():
    assert DEFAULT_CALIBRATION.dl_spectral_eff >= DEFAULT_CALIBRATION.ul_spectral_eff
    assert DEFAULT_CALIBRATION.dl_spectral_eff == pytest.approx(8.077, abs=1e-3)
    assert DEFAULT_CALIBRATION.ul_spectral_eff == pytest.approx(2.734, abs=1e-3)


def test_prb_grid_values():
    assert total_prb_count(100) == 272
    assert total_prb_count(40) == 106
    assert total_prb_count(50) == 136


# --- PRB allocation ---------------------------------------------------------


def pouring_allocator(shares, demands_mbps, total_prbs, capacity, steps=200_000):
    """Independent oracle: pour PRB mass in tiny increments.

    Each increment goes to unmet slices proportionally to their share;
    a slice stops accepting once its demand is covered. Returns real
    quotas, rounded by the same stated largest-remainder rule.
    """
    value = capacity / total_prbs
    need = {s.slice_id: demands_mbps.get(s.slice_id, 0.0) / value for s in shares}
    got = {s.slice_id: 0.0 for s in shares}
    weight = {s.slice_id: s.share for s in shares}
    dz = total_prbs / steps
    poured = 0.0
    while poured < total_prbs - 1e-9:
        active = [k for k in got if got[k] < need[k] - 1e-12]
        if not active:
            break
        w = sum(weight[k] for k in active)
        for k in active:
            got[k] += dz * weight[k] / w
        poured += dz
    # clip tiny overshoot from the discrete pour
    for k in got:
        got[k] = min(got[k], need[k])
    total = sum(got.values())
    target = min(total_prbs, math.ceil(total - 1e-9))
    floors = {k: math.floor(v + 1e-9) for k, v in got.items()}
    leftover = target - sum(floors.values())
    order = sorted(got, key=lambda k: -(got[k] - math.floor(got[k] + 1e-9)))
    for k in order[:leftover]:
        floors[k] += 1
    return floors


def test_single_slice_gets_everything():
    alloc = allocate_prbs([SliceShare("s1", 1.0)], {"s1": 1e9}, 106, 244.9)
    assert alloc.counts == {"s1": 106}


def test_both_saturated_largest_remainder():
    # 0.8/0.2 of 272 -> 217.6/54.4; stated rule: floors then the spare PRB
    # to the largest fractional part (0.6) -> 218/54
    shares = [SliceShare("s1", 0.8), SliceShare("s2", 0.2)]
    alloc = allocate_prbs(shares, {"s1": 1e9, "s2": 1e9}, 272, 240.0)
    assert alloc.counts == {"s1": 218, "s2": 54}
    assert alloc.counts == pouring_allocator(shares, {"s1": 1e9, "s2": 1e9}, 272, 240.0)


def test_idle_slice_releases_everything():
    shares = [SliceShare("s1", 0.8), SliceShare("s2", 0.2)]
    alloc = allocate_prbs(shares, {"s1": 0.0, "s2": 1e9}, 272, 240.0)
    assert alloc.counts == {"s1": 0, "s2": 272}
    assert alloc.counts == pouring_allocator(shares, {"s1": 0.0, "s2": 1e9}, 272, 240.0)


def test_partial_demand_work_conserving_against_pouring_oracle():
    rng = RngStream(99, "prb-oracle")
    for trial in range(25):
        n = rng.randint(2, 4)
        raw = [rng.randint(1, 10) for _ in range(n)]
        total_share = sum(raw)
        shares = [SliceShare(f"s{i}", raw[i] / total_share) for i in range(n)]
        capacity = 200.0
        total_prbs = rng.choice([52, 106, 272])
        demands = {
            f"s{i}": rng.choice([0.0, 10.0, 30.0, 80.0, 500.0]) for i in range(n)
        }
        got = allocate_prbs(shares, demands, total_prbs, capacity).counts
        expected = pouring_allocator(shares, demands, total_prbs, capacity)
        assert got == expected, f"trial {trial}: {demands} {got} != {expected}"


def test_no_active_slices_rejected():
    with pytest.raises(NoActiveSlices):
        allocate_prbs([], {}, 106, 240.0)


def test_share_floor_invariant():
    rng = RngStream(5, "floor")
    for _ in range(50):
        shares = [SliceShare("a", 0.8), SliceShare("b", 0.2)]
        demands = {"a": 1e9, "b": rng.uniform(0, 500)}
        alloc = allocate_prbs(shares, demands, 106, 244.9)
        # slice a is always saturated: never below floor(share x grid)
        assert alloc.counts["a"] >= math.floor(0.8 * 106)
        assert alloc.allocated() <= 106


def test_work_conservation_when_overloaded():
    shares = [SliceShare("a", 0.5), SliceShare("b", 0.3), SliceShare("c", 0.2)]
    alloc = allocate_prbs(shares, {"a": 500, "b": 500, "c": 500}, 106, 244.9)
    assert alloc.allocated() == 106


def test_slice_throughput_proportionality_and_zero():
    alloc = PrbAllocation(counts={"a": 85, "b": 21, "c": 0}, total_prbs=106)
    thpt = slice_throughput(alloc, 244.9)
    assert thpt["a"] == pytest.approx(244.9 * 85 / 106)
    assert thpt["c"] == 0.0
    assert sum(thpt.values()) <= 244.9 + 1e-9


def test_80_20_ratio_within_3_points():
    shares = [SliceShare("s1", 0.8), SliceShare("s2", 0.2)]
    alloc = allocate_prbs(shares, {"s1": 1e9, "s2": 1e9}, 106, 244.9)
    thpt = slice_throughput(alloc, 244.9)
    ratio = 100 * thpt["s1"] / (thpt["s1"] + thpt["s2"])
    assert abs(ratio - 80.0) <= 3.0
    # the paper's measured split also sits inside this band
    assert abs(81.95 - 80.0) <= 3.0


def test_largest_remainder_round_basic():
    assert largest_remainder_round({"a": 217.6, "b": 54.4}, 272) == {"a": 218, "b": 54}
    assert largest_remainder_round({"a": 2.5, "b": 2.5}, 5) == {"a": 3, "b": 2}


def test_udp_factor_reproduces_single_slice_udp_point():
    cal = DEFAULT_CALIBRATION
    udp_dl = link_capacity(40, Direction.DL, DL_CENTRIC, cal) * cal.udp_over_tcp_factor
    assert udp_dl == pytest.approx(244.9, rel=1e-9)


def test_calibrate_round_trips_custom_point():
    cal = calibrate(dl_mbps=100.0, ul_mbps=10.0, bandwidth_mhz=20.0, cfg=DL_CENTRIC)
    assert link_capacity(20, Direction.DL, DL_CENTRIC, cal) == pytest.approx(100.0)
    assert link_capacity(20, Direction.UL, DL_CENTRIC, cal) == pytest.approx(10.0)
