"""Offline anomaly recomputation over persisted run artifacts.

Re-derives every detector decision from metrics.csv alone: per-UE KPI
series, the twin's logged one-step-ahead predictions, consecutive-hit
runs and duplicate suppression. Used by `slicesim report` and the test
suite to confirm that each emitted anomaly is justified by the recorded
data. This is a deliberate re-implementation, independent of the twin
xApp's in-run code path.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

# duplicated detector constants: this module must not import the twin
WINDOW_SIZE = 50
CONSECUTIVE_HITS = 3
Z_THRESHOLD = 3.0
Z_STD_FLOOR = 1e-3
DIVERGENCE_THRESHOLD = 0.20
DIVERGENCE_EPS_MBPS = 1.0
ACTIVITY_FLOOR_MBPS = 1.0
SUPPRESS_US = 1_000_000


@dataclass(frozen=True)
class OracleAnomaly:
    detected_at: int
    ue: str
    kind: str
    score: float


def read_metrics(path: str | Path) -> list[tuple[int, str, str, float]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(
                (int(row["time_us"]), row["entity"], row["metric"], float(row["value"]))
            )
    return rows


def read_anomalies(path: str | Path) -> list[OracleAnomaly]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(OracleAnomaly(
                int(row["time_us"]), row["ue"], row["kind"], float(row["score"])
            ))
    return out


def _ue_series(rows) -> dict[str, dict[int, dict[str, float]]]:
    """UE -> sample time -> {metric: value}; UEs are the entities that
    report a `connected` metric."""
    ue_names = {e for (_, e, metric, _) in rows if metric == "connected"}
    series: dict[str, dict[int, dict[str, float]]] = {u: {} for u in sorted(ue_names)}
    for t, entity, metric, value in rows:
        if entity in series:
            series[entity].setdefault(t, {})[metric] = value
    return series


def recompute_anomalies(metrics_path: str | Path) -> list[OracleAnomaly]:
    rows = read_metrics(metrics_path)
    series = _ue_series(rows)
    found: list[OracleAnomaly] = []
    for ue, by_time in series.items():
        window: list[float] = []
        run_conn = run_out = run_div = 0
        predicted_prev: float | None = None
        last_fire: dict[str, int] = {}
        for at in sorted(by_time):
            sample = by_time[at]
            if "dl_throughput_mbps" not in sample:
                continue
            dl = sample["dl_throughput_mbps"]
            connected = sample.get("connected", 0.0) >= 0.5
            session = sample.get("session_active", 0.0) >= 0.5

            fired: list[tuple[str, float]] = []
            if session and not connected:
                run_conn += 1
            else:
                run_conn = 0
            if run_conn >= CONSECUTIVE_HITS:
                fired.append(("ConnectivityDrop", float(run_conn)))

            if window and _median(window) > ACTIVITY_FLOOR_MBPS:
                mean = sum(window) / len(window)
                var = sum((v - mean) ** 2 for v in window) / len(window)
                z = abs(dl - mean) / max(math.sqrt(var), Z_STD_FLOOR)
                if z > Z_THRESHOLD:
                    run_out += 1
                else:
                    run_out = 0
                if run_out >= CONSECUTIVE_HITS:
                    fired.append(("KpiOutlier", z))
            else:
                run_out = 0

            if predicted_prev is not None and connected and session:
                rel = abs(dl - predicted_prev) / max(predicted_prev, DIVERGENCE_EPS_MBPS)
                if rel > DIVERGENCE_THRESHOLD:
                    run_div += 1
                else:
                    run_div = 0
                if run_div >= CONSECUTIVE_HITS:
                    fired.append(("TwinDivergence", rel))
            else:
                run_div = 0

            for kind, score in fired:
                last = last_fire.get(kind)
                if last is not None and at - last < SUPPRESS_US:
                    continue
                last_fire[kind] = at
                found.append(OracleAnomaly(at, ue, kind, round(score * 1000) / 1000.0))

            window.append(dl)
            if len(window) > WINDOW_SIZE:
                window.pop(0)
            predicted_prev = sample.get("predicted_dl_mbps", predicted_prev)
    found.sort(key=lambda a: (a.detected_at, a.ue, a.kind))
    return found


def _median(values: list[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2 == 1:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def verify_anomalies(out_dir: str | Path) -> dict:
    """Cross-check anomalies.csv against the recomputation from metrics.csv."""
    out_dir = Path(out_dir)
    emitted = read_anomalies(out_dir / "anomalies.csv")
    recomputed = recompute_anomalies(out_dir / "metrics.csv")
    recomputed_keys = {(a.detected_at, a.ue, a.kind, a.score) for a in recomputed}
    unjustified = [
        a for a in emitted
        if (a.detected_at, a.ue, a.kind, a.score) not in recomputed_keys
    ]
    emitted_keys = {(a.detected_at, a.ue, a.kind, a.score) for a in emitted}
    missed = [
        a for a in recomputed
        if (a.detected_at, a.ue, a.kind, a.score) not in emitted_keys
    ]
    return {
        "emitted": len(emitted),
        "recomputed": len(recomputed),
        "unjustified": unjustified,
        "missed": missed,
        "ok": not unjustified,
    }
