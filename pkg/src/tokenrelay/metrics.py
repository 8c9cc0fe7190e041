"""Per-UE and per-class metrics of a finished run, and their CSV form.

Ratios with a zero denominator are absent (NaN in memory, empty in CSV) and
are left out of aggregates.  Percentiles are taken across UEs of each UE's
lifetime metric.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

METRICS = ("lambda", "mu", "rre", "rack_rate", "lifetime", "gain", "utility")
UE_COLUMNS = ("id", "mobility", "budget") + METRICS
SUMMARY_COLUMNS = ("group", "metric", "n", "mean", "p25", "p75")
GROUPS = ("all", "mobility=high", "mobility=low", "budget=high", "budget=low")


def fmt(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.9g" % x


def quantize(x: float) -> float:
    """The value a float takes after a CSV round trip."""
    return float("nan") if np.isnan(x) else float("%.9g" % x)


def _ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.full(num.shape, np.nan)
    np.divide(num, den, out=out, where=den > 0)
    return out


@dataclass(eq=False)
class MetricsReport:
    ue: dict  # column -> array, one entry per UE
    token_hist: np.ndarray  # (slots, max_tokens + 1)
    transactions: int

    @property
    def n(self) -> int:
        return len(self.ue["id"])

    def mask(self, group: str) -> np.ndarray:
        if group == "all":
            return np.ones(self.n, dtype=bool)
        key, _, val = group.partition("=")
        return np.asarray(self.ue[key]) == val

    def values(self, metric: str, group: str = "all") -> np.ndarray:
        v = np.asarray(self.ue[metric], dtype=float)[self.mask(group)]
        return v[~np.isnan(v)]

    def mean(self, metric: str, group: str = "all") -> float:
        v = self.values(metric, group)
        return float(np.mean(v)) if v.size else float("nan")

    def negative_utility_fraction(self, group: str = "all") -> float:
        v = self.values("utility", group)
        return float(np.mean(v < 0)) if v.size else float("nan")

    def summary(self) -> list[dict]:
        rows = []
        for g in GROUPS:
            if not self.mask(g).any():
                continue
            for m in METRICS:
                v = self.values(m, g)
                rows.append(dict(
                    group=g, metric=m, n=int(v.size),
                    mean=float(np.mean(v)) if v.size else float("nan"),
                    p25=float(np.percentile(v, 25)) if v.size else float("nan"),
                    p75=float(np.percentile(v, 75)) if v.size else float("nan"),
                ))
            rows.append(dict(group=g, metric="negative_utility_fraction",
                             n=int(self.values("utility", g).size),
                             mean=self.negative_utility_fraction(g),
                             p25=float("nan"), p75=float("nan")))
        return rows

    def overall(self) -> dict:
        """One-line network-wide means, used by sweeps."""
        out = {f"{m}_mean": self.mean(m) for m in METRICS}
        out["negative_utility_fraction"] = self.negative_utility_fraction()
        out["transactions"] = self.transactions
        return out


def compute_metrics(w) -> MetricsReport:
    c = w.counters
    cfg = w.cfg
    received = c.racks_received
    ue = {
        "id": np.arange(w.n),
        "mobility": np.where(w.high_mobility, "high", "low"),
        "budget": np.where(w.high_budget, "high", "low"),
        "lambda": _ratio(c.outage, c.dl_slots),
        "mu": _ratio(c.inbound, c.lifetime),
        "rre": _ratio(c.racks_received, c.eligible),
        "rack_rate": _ratio(c.racks_sent, c.inbound),
        "lifetime": c.lifetime.astype(float),
        "gain": _ratio(c.actual_rate, c.direct_rate),
        "utility": _ratio(cfg.benefit * received - c.cost_spent, c.lifetime),
    }
    gain = ue["gain"]
    if np.any(gain[~np.isnan(gain)] < 1.0):
        from .sim import InvariantViolation

        raise InvariantViolation("per-UE throughput gain below 1", w.slot,
                                 int(np.flatnonzero(gain < 1.0)[0]))
    hist = np.array(w.token_hist) if w.token_hist else np.zeros((0, cfg.max_tokens + 1), int)
    return MetricsReport(ue=ue, token_hist=hist, transactions=int(c.racks_sent.sum()))


# --- CSV ----------------------------------------------------------------------------


def ue_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(UE_COLUMNS)
    for i in range(report.n):
        row = []
        for col in UE_COLUMNS:
            v = report.ue[col][i]
            row.append(str(v) if col in ("mobility", "budget") else fmt(
                int(v) if col == "id" else float(v)))
        wr.writerow(row)
    return buf.getvalue()


def summary_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(SUMMARY_COLUMNS)
    for r in report.summary():
        wr.writerow([r["group"], r["metric"], r["n"], fmt(r["mean"]), fmt(r["p25"]), fmt(r["p75"])])
    return buf.getvalue()


def _num(s: str) -> float:
    return float("nan") if s == "" else float(s)


def read_ue_csv(text: str) -> dict:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = {}
    for col in UE_COLUMNS:
        vals = [r[col] for r in rows]
        if col == "id":
            out[col] = np.array([int(v) for v in vals])
        elif col in ("mobility", "budget"):
            out[col] = np.array(vals)
        else:
            out[col] = np.array([_num(v) for v in vals])
    return out


def read_summary_csv(text: str) -> list[dict]:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append(dict(group=r["group"], metric=r["metric"], n=int(r["n"]),
                         mean=_num(r["mean"]), p25=_num(r["p25"]), p75=_num(r["p75"])))
    return rows
