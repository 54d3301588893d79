"""RTT samples, load specs, summary statistics and the report CSV."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

from .. import errors
from ..wire import CARRIERS

REPORT_COLUMNS = ["scenario", "qos", "load_fraction", "probe_carrier", "load_carrier",
                  "n", "mean_ns", "stddev_ns", "drops"]


@dataclass(frozen=True)
class RttSample:
    message_id: int
    send_ns: int
    ack_ns: int

    @property
    def rtt_ns(self) -> int:
        return self.ack_ns - self.send_ns


@dataclass(frozen=True)
class LoadSpec:
    fraction: float
    message_size_bytes: int = 32 * 1024
    carrier: str = "tcp"

    def __post_init__(self):
        if not 0 < self.fraction <= 1:
            raise errors.OutOfRange(f"load fraction {self.fraction} not in (0, 1]")
        if self.message_size_bytes < 1:
            raise errors.OutOfRange("load message size must be positive")
        if self.carrier not in CARRIERS:
            raise errors.CarrierUnsupported(self.carrier)

    def byte_rate(self, bandwidth_bytes_per_sec) -> float:
        return self.fraction * bandwidth_bytes_per_sec


@dataclass
class LoadReport:
    target_bytes_per_sec: float
    duration_ns: int
    messages: int = 0
    emitted_bytes: int = 0
    delivered_bytes: int = 0

    @property
    def achieved_bytes_per_sec(self) -> float:
        if self.duration_ns <= 0:
            return 0.0
        return self.delivered_bytes * 1e9 / self.duration_ns

    @property
    def emitted_bytes_per_sec(self) -> float:
        if self.duration_ns <= 0:
            return 0.0
        return self.emitted_bytes * 1e9 / self.duration_ns

    @property
    def achieved_fraction(self) -> float:
        if not self.target_bytes_per_sec:
            return 0.0
        return self.achieved_bytes_per_sec / self.target_bytes_per_sec

    @property
    def sustained(self) -> bool:
        return self.duration_ns <= 0 or self.achieved_fraction >= 0.9


@dataclass
class ProbeResult:
    samples: list[RttSample] = field(default_factory=list)
    drops: int = 0
    duplicates: int = 0


def summarize(samples) -> tuple[float, float, int]:
    """Mean and population standard deviation (divisor n) of the RTTs."""
    rtts = [s.rtt_ns if isinstance(s, RttSample) else s for s in samples]
    n = len(rtts)
    if n == 0:
        raise errors.EmptySampleSet()
    mean = math.fsum(rtts) / n
    var = math.fsum((r - mean) ** 2 for r in rtts) / n
    return mean, math.sqrt(var), n


@dataclass(frozen=True)
class BenchRow:
    scenario: str
    qos: str
    load_fraction: float
    probe_carrier: str
    load_carrier: str
    n: int
    mean_ns: float
    stddev_ns: float
    drops: int

    def values(self) -> list:
        return [self.scenario, self.qos, f"{self.load_fraction:g}", self.probe_carrier,
                self.load_carrier, self.n, f"{self.mean_ns:.1f}", f"{self.stddev_ns:.1f}",
                self.drops]


@dataclass
class BenchReport:
    scenario: str
    rows: list[BenchRow] = field(default_factory=list)
    stddev_estimator: str = "population"

    def row(self, qos, load_fraction, probe_carrier, load_carrier) -> BenchRow:
        for r in self.rows:
            if (r.qos, r.load_fraction, r.probe_carrier, r.load_carrier) == \
                    (qos, load_fraction, probe_carrier, load_carrier):
                return r
        raise KeyError((qos, load_fraction, probe_carrier, load_carrier))

    def to_csv(self, header=True) -> str:
        buf = io.StringIO()
        write_csv(self.rows, buf, header)
        return buf.getvalue()


def write_csv(rows, fh, header=True) -> None:
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow(r.values())


def read_csv(fh) -> list[BenchRow]:
    rows = []
    for rec in csv.DictReader(fh):
        rows.append(BenchRow(rec["scenario"], rec["qos"], float(rec["load_fraction"]),
                             rec["probe_carrier"], rec["load_carrier"], int(rec["n"]),
                             float(rec["mean_ns"]), float(rec["stddev_ns"]), int(rec["drops"])))
    return rows
