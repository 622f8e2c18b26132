"""TDD capacity model and slice-aware PRB allocation for the DU.

Converts bandwidth + slot configuration + slice shares into per-slice,
per-direction throughput. Everything here is a pure function over value
types; the DU entity drives these from its scheduler tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

SYMBOLS_PER_SLOT = 14

# 30 kHz subcarrier spacing: two slots per millisecond
SLOT_US = 500

# PRB grid per bandwidth. Other bandwidths scale proportionally from the
# 100 MHz grid.
_PRB_GRID = {100: 272, 40: 106}


class Direction(Enum):
    DL = "DL"
    UL = "UL"


class InvalidConfig(ValueError):
    pass


class NoActiveSlices(ValueError):
    pass


@dataclass(frozen=True)
class TddConfig:
    """Slot pattern over one TDD period: full DL/UL slots plus the DL/UL
    symbol split of the single special slot."""

    dl_slots: int
    ul_slots: int
    special_dl_symbols: int
    special_ul_symbols: int
    period_slots: int = 10

    def validate(self) -> None:
        if self.dl_slots < 0 or self.ul_slots < 0:
            raise InvalidConfig("slot counts must be non-negative")
        if self.dl_slots + self.ul_slots + 1 != self.period_slots:
            raise InvalidConfig(
                f"dl_slots + ul_slots + 1 special must equal period "
                f"({self.dl_slots}+{self.ul_slots}+1 != {self.period_slots})"
            )
        if not (0 <= self.special_dl_symbols <= SYMBOLS_PER_SLOT):
            raise InvalidConfig("special_dl_symbols out of [0,14]")
        if not (0 <= self.special_ul_symbols <= SYMBOLS_PER_SLOT):
            raise InvalidConfig("special_ul_symbols out of [0,14]")
        if self.special_dl_symbols + self.special_ul_symbols > SYMBOLS_PER_SLOT:
            raise InvalidConfig("special slot symbols exceed 14")


# The two slot patterns the default DU stack supports.
DL_CENTRIC = TddConfig(dl_slots=7, ul_slots=2, special_dl_symbols=6, special_ul_symbols=4)
UL_CENTRIC = TddConfig(dl_slots=5, ul_slots=4, special_dl_symbols=6, special_ul_symbols=4)


@dataclass(frozen=True)
class RadioCalibration:
    """Spectral-efficiency constants fitted to measured throughput.

    dl/ul are full-duplex-equivalent efficiencies in bps/Hz; the asymmetry
    absorbs unmodeled MCS/MIMO differences. udp_over_tcp_factor reconciles
    UDP goodput with the TCP-style reference measurements.
    """

    dl_spectral_eff: float
    ul_spectral_eff: float
    udp_over_tcp_factor: float = 244.9 / 240.0

    def validate(self) -> None:
        if self.dl_spectral_eff <= 0 or self.ul_spectral_eff <= 0:
            raise InvalidConfig("spectral efficiencies must be positive")
        if self.udp_over_tcp_factor <= 0:
            raise InvalidConfig("udp_over_tcp_factor must be positive")

    def spectral_eff(self, direction: Direction) -> float:
        return self.dl_spectral_eff if direction is Direction.DL else self.ul_spectral_eff


def duplex_fractions(cfg: TddConfig) -> tuple[float, float]:
    """Fraction of airtime available to DL and to UL under a slot pattern."""
    cfg.validate()
    dl = (cfg.dl_slots + cfg.special_dl_symbols / SYMBOLS_PER_SLOT) / cfg.period_slots
    ul = (cfg.ul_slots + cfg.special_ul_symbols / SYMBOLS_PER_SLOT) / cfg.period_slots
    return dl, ul


def calibrate(
    dl_mbps: float = 240.0,
    ul_mbps: float = 25.0,
    bandwidth_mhz: float = 40.0,
    cfg: TddConfig = DL_CENTRIC,
    udp_over_tcp_factor: float = 244.9 / 240.0,
) -> RadioCalibration:
    """Fit the two spectral-efficiency constants from one measured
    (DL, UL) throughput point under a known slot configuration."""
    dl_frac, ul_frac = duplex_fractions(cfg)
    return RadioCalibration(
        dl_spectral_eff=dl_mbps / (bandwidth_mhz * dl_frac),
        ul_spectral_eff=ul_mbps / (bandwidth_mhz * ul_frac),
        udp_over_tcp_factor=udp_over_tcp_factor,
    )


DEFAULT_CALIBRATION = calibrate()


def link_capacity(
    bandwidth_mhz: float,
    direction: Direction,
    cfg: TddConfig,
    cal: RadioCalibration = DEFAULT_CALIBRATION,
) -> float:
    """Cell capacity in Mbps for one direction: eff x bandwidth x airtime."""
    if bandwidth_mhz <= 0:
        raise InvalidConfig("bandwidth must be positive")
    cal.validate()
    dl_frac, ul_frac = duplex_fractions(cfg)
    frac = dl_frac if direction is Direction.DL else ul_frac
    return cal.spectral_eff(direction) * bandwidth_mhz * frac


def total_prb_count(bandwidth_mhz: float) -> int:
    """Whole-PRB grid size for a carrier bandwidth."""
    if bandwidth_mhz <= 0:
        raise InvalidConfig("bandwidth must be positive")
    grid = _PRB_GRID.get(int(bandwidth_mhz)) if float(bandwidth_mhz).is_integer() else None
    if grid is not None:
        return grid
    return max(1, round(_PRB_GRID[100] * bandwidth_mhz / 100.0))


@dataclass(frozen=True)
class SliceShare:
    slice_id: str
    share: float

    def validate(self) -> None:
        if not (0.0 < self.share <= 1.0):
            raise InvalidConfig(f"share for {self.slice_id!r} must be in (0,1]")


@dataclass
class PrbAllocation:
    counts: dict[str, int]
    total_prbs: int

    def allocated(self) -> int:
        return sum(self.counts.values())


def largest_remainder_round(quotas: dict[str, float], total: int) -> dict[str, int]:
    """Round real quotas to integers summing to `total`.

    Floors first, then hands out the remaining units in order of largest
    fractional part; ties go to earlier insertion order.
    """
    floors = {k: int(math.floor(v + 1e-9)) for k, v in quotas.items()}
    leftover = total - sum(floors.values())
    if leftover < 0:
        raise InvalidConfig("quotas exceed total")
    order = sorted(
        quotas.keys(),
        key=lambda k: (-(quotas[k] - math.floor(quotas[k] + 1e-9)), list(quotas).index(k)),
    )
    for k in order[:leftover]:
        floors[k] += 1
    return floors


def water_fill(capacity: float, demands: dict[str, float], weights: dict[str, float]) -> dict[str, float]:
    """Split `capacity` across demands proportionally to weights.

    Spare from satisfied entries is re-offered to the still-unmet ones
    until either all demand is met or capacity is exhausted. Demands may
    be math.inf (greedy)."""
    alloc = {k: 0.0 for k in demands}
    remaining = capacity
    active = [k for k in demands if demands[k] > 0]
    while remaining > 1e-12 and active:
        total_w = sum(weights[k] for k in active)
        if total_w <= 0:
            break
        next_active = []
        consumed = 0.0
        for k in active:
            offer = remaining * weights[k] / total_w
            need = demands[k] - alloc[k]
            take = min(offer, need)
            alloc[k] += take
            consumed += take
            if alloc[k] < demands[k] - 1e-12:
                next_active.append(k)
        remaining -= consumed
        if len(next_active) == len(active):
            break
        active = next_active
    return alloc


def allocate_prb_quotas(
    shares: list[SliceShare],
    demand_prbs: dict[str, float],
    total_prbs: int,
) -> dict[str, float]:
    """Real-valued slice quota computation (work-conserving water-fill).

    Each slice's guaranteed quota is share x total_prbs. Slices demanding
    less keep only what they need; the spare is redistributed
    proportionally to the shares of the still-saturated slices.
    """
    if not shares:
        raise NoActiveSlices("no slice shares configured")
    total_share = 0.0
    for s in shares:
        s.validate()
        total_share += s.share
    if total_share > 1.0 + 1e-9:
        raise InvalidConfig(f"slice shares sum to {total_share}, budget is 1.0")
    demands = {}
    for s in shares:
        d = demand_prbs.get(s.slice_id, 0.0)
        if d < 0:
            raise InvalidConfig(f"negative demand for slice {s.slice_id!r}")
        demands[s.slice_id] = d
    weights = {s.slice_id: s.share for s in shares}
    return water_fill(float(total_prbs), demands, weights)


def allocate_prbs(
    shares: list[SliceShare],
    demands_mbps: dict[str, float],
    total_prbs: int,
    cell_capacity_mbps: float,
) -> PrbAllocation:
    """Whole-PRB allocation per slice for one direction.

    Guaranteed floor, work conservation, and largest-remainder rounding;
    the allocation sums to exactly total_prbs whenever aggregate demand
    reaches the cell capacity.
    """
    if cell_capacity_mbps <= 0:
        raise InvalidConfig("cell capacity must be positive")
    prb_value = cell_capacity_mbps / total_prbs
    demand_prbs = {k: v / prb_value for k, v in demands_mbps.items()}
    quotas = allocate_prb_quotas(shares, demand_prbs, total_prbs)
    total_quota = sum(quotas.values())
    target = min(total_prbs, int(math.ceil(total_quota - 1e-9)))
    counts = largest_remainder_round(quotas, target)
    return PrbAllocation(counts=counts, total_prbs=total_prbs)


def slice_throughput(alloc: PrbAllocation, cell_capacity_mbps: float) -> dict[str, float]:
    """Per-slice Mbps implied by a PRB allocation."""
    if alloc.allocated() > alloc.total_prbs:
        raise InvalidConfig("allocation exceeds PRB grid")
    return {
        sid: (n / alloc.total_prbs) * cell_capacity_mbps for sid, n in alloc.counts.items()
    }
