"""Performance metrics over run logs, aggregation, and table emitters."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import kernels
from .engine import RunLog

METRIC_FIELDS = ("mdr", "lat", "bu", "tp", "rt", "ru", "fair", "co", "adc", "ft", "ac")
METRIC_LABELS = {
    "mdr": "MDR", "lat": "LAT", "bu": "BU", "tp": "TP", "rt": "RT", "ru": "RU",
    "fair": "FAIR", "co": "CO", "adc": "ADC", "ft": "FT", "ac": "AC",
}
POLICY_LABELS = {
    "rr": "Round Robin",
    "throttled": "Throttled Load Balancing",
    "priority": "Priority Based VDTN",
}


class EmptyLog(ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    """The eleven metrics. Times in ticks (1 tick = 1 ms), rates per tick."""

    mdr: float
    lat: float
    bu: float
    tp: float
    rt: float
    ru: float
    fair: float
    co: float
    adc: float
    ft: float
    ac: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class Aggregate:
    mean: MetricsReport
    std: MetricsReport
    runs: int


def _throughput(log: RunLog) -> float:
    elapsed = log.end["end_time"]
    delivered = sum(1 for _ in log.of_kind("ResultDownload"))
    return delivered / elapsed if elapsed > 0 else 0.0


def fairness(loads: Sequence[float]) -> float:
    """Max load over mean load; 1.0 when perfectly even (or when idle)."""
    loads = np.asarray(loads, dtype=np.float64)
    mean = loads.mean() if loads.size else 0.0
    if mean <= 0:
        return 1.0
    return float(loads.max() / mean)


def compute_metrics(log: RunLog, churn_log: Optional[RunLog] = None) -> MetricsReport:
    if not log.events:
        raise EmptyLog("run log has no events")
    elapsed = log.end["end_time"]
    if elapsed <= 0:
        raise EmptyLog("run log covers zero ticks")
    meta = log.meta
    num_vms = meta["num_vms"]
    stations = meta["base_stations"]

    upload_at: Dict[int, int] = {}
    lat, rt = [], []
    messages = 0
    tx_bs, tx_start, tx_end = [], [], []
    vm_slot, vm_start, vm_end = [], [], []
    failed_injection = 0
    recovered = 0
    for e in log.events:
        kind = e["kind"]
        messages += e.get("msg", 0)
        if kind == "Upload":
            upload_at[e["task"]] = e["t"]
        elif kind == "TwinReceive":
            tx_bs.append(e["bs"]); tx_start.append(e["tx"]); tx_end.append(e["t"])
        elif kind == "ResultDownload":
            up = upload_at[e["task"]]
            lat.append(e["t"] - up)
            rt.append(e["first"] - up)
            tx_bs.append(e["bs"]); tx_start.append(e["tx"]); tx_end.append(e["t"])
            if e.get("affected"):
                recovered += 1
        elif kind == "ExchangeDone":
            vm_slot.append(e["vm"]); vm_start.append(e["start"]); vm_end.append(e["t"])
        elif kind == "TaskFailed":
            failed_injection += 1

    delivered = len(lat)
    bs_index = {bs: i for i, bs in enumerate(stations)}
    # transmissions may run past the horizon; count only the covered part
    ch_busy = kernels.busy_per_slot(
        np.array([bs_index[b] for b in tx_bs], dtype=np.int64),
        np.minimum(tx_start, elapsed), np.minimum(tx_end, elapsed), len(stations),
    )
    vm_busy = kernels.busy_per_slot(np.array(vm_slot, dtype=np.int64), vm_start, vm_end, num_vms)

    mdr = delivered / elapsed
    tp = mdr
    if churn_log is None:
        adc = 1.0
    else:
        base = _throughput(log)
        adc = min(1.0, _throughput(churn_log) / base) if base > 0 else 0.0
    affected = failed_injection + recovered
    ft = recovered / affected if affected else 0.0
    decisions = log.end.get("decisions", 0)
    return MetricsReport(
        mdr=mdr,
        lat=float(np.mean(lat)) if lat else 0.0,
        bu=100.0 * float(np.mean(ch_busy)) / elapsed,
        tp=tp,
        rt=float(np.mean(rt)) if rt else 0.0,
        ru=100.0 * float(np.mean(vm_busy)) / elapsed,
        fair=fairness(vm_busy),
        co=messages / elapsed,
        adc=adc,
        ft=ft,
        ac=log.end.get("ops", 0) / decisions if decisions else 0.0,
    )


def aggregate(reports: Sequence[MetricsReport]) -> Aggregate:
    if not reports:
        raise ValueError("aggregate needs at least one report")
    mat = np.array([[getattr(r, f) for f in METRIC_FIELDS] for r in reports], dtype=np.float64)
    # fixed summation order keeps the mean independent of input order
    mat = mat[np.lexsort(mat.T[::-1])]
    mean = np.array([math.fsum(col) / len(col) for col in mat.T])
    std = mat.std(axis=0) if len(reports) > 1 else np.zeros(len(METRIC_FIELDS))
    return Aggregate(
        MetricsReport(*map(float, mean)), MetricsReport(*map(float, std)), len(reports)
    )


def channel_peak(log: RunLog) -> Dict[int, float]:
    """Most data each base-station channel served in any window of the channel horizon."""
    window = log.meta["channel_window"]
    per_bs: Dict[int, tuple] = {bs: ([], [], []) for bs in log.meta["base_stations"]}
    for e in log.of_kind("TwinReceive", "ResultDownload"):
        s, t, z = per_bs[e["bs"]]
        s.append(e["tx"]); t.append(e["t"]); z.append(e["size"])
    return {bs: kernels.max_window_served(s, t, z, window) for bs, (s, t, z) in per_bs.items()}


# --- emitters -------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def comparison_csv(rows: Dict[str, Aggregate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["algorithm", "runs"] + [METRIC_LABELS[f] for f in METRIC_FIELDS]
               + [METRIC_LABELS[f] + "_std" for f in METRIC_FIELDS])
    for policy, agg in rows.items():
        w.writerow([policy, agg.runs]
                   + [_fmt(getattr(agg.mean, f)) for f in METRIC_FIELDS]
                   + [_fmt(getattr(agg.std, f)) for f in METRIC_FIELDS])
    return buf.getvalue()


def sweep_csv(rows: Dict[tuple, Aggregate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["algorithm", "SV", "runs"] + [METRIC_LABELS[f] for f in METRIC_FIELDS])
    for (policy, size), agg in rows.items():
        w.writerow([policy, size, agg.runs] + [_fmt(getattr(agg.mean, f)) for f in METRIC_FIELDS])
    return buf.getvalue()


def long_format_csv(rows: Dict[str, Aggregate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "metric", "value"])
    for policy, agg in rows.items():
        for f in METRIC_FIELDS:
            w.writerow([policy, METRIC_LABELS[f], _fmt(getattr(agg.mean, f))])
    return buf.getvalue()


def report_json(rows: Dict[str, Aggregate]) -> str:
    doc = [
        {"policy": p, "label": POLICY_LABELS.get(p, p), "runs": a.runs,
         "mean": a.mean.as_dict(), "std": a.std.as_dict()}
        for p, a in rows.items()
    ]
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def render_table(rows: Dict[str, Aggregate]) -> str:
    head = f"{'Algorithm':<26}" + "".join(f"{METRIC_LABELS[f]:>10}" for f in METRIC_FIELDS)
    lines = [head, "-" * len(head)]
    for p, a in rows.items():
        lines.append(f"{POLICY_LABELS.get(p, p):<26}"
                     + "".join(f"{getattr(a.mean, f):>10.4f}" for f in METRIC_FIELDS))
    return "\n".join(lines)
