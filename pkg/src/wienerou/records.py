"""Result records and their CSV / JSON persistence."""

import csv
import hashlib
import io
import json
import math
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field

PROVENANCE = ("MC", "quadrature", "closed-form", "exact")
VERDICTS = ("pass", "fail", "info")
METRIC_COLUMNS = ("name", "value", "se", "reference", "verdict", "provenance")


@dataclass
class MetricRow:
    name: str
    value: float
    se: float | None = None
    reference: float | None = None
    verdict: str = "info"
    provenance: str = "MC"

    def __post_init__(self):
        if self.provenance not in PROVENANCE:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")


@dataclass
class Table:
    """A CSV table with a fixed header."""

    name: str
    columns: tuple
    rows: list = field(default_factory=list)

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"{self.name}: expected {len(self.columns)} values")
        self.rows.append(tuple(values))


@dataclass
class ResultRecord:
    experiment: str
    config_digest: str
    input_hash: str
    metrics: list = field(default_factory=list)
    tables: list = field(default_factory=list)

    def metric(self, name, value, se=None, reference=None, verdict="info", provenance="MC"):
        row = MetricRow(name, _num(value), _num(se), _num(reference), verdict, provenance)
        self.metrics.append(row)
        return row

    def check(self, name, ok, value, se=None, reference=None, provenance="MC"):
        """Record a metric whose verdict is ``ok``."""
        return self.metric(name, value, se, reference, "pass" if ok else "fail", provenance)

    def table(self, name, columns):
        t = Table(name, tuple(columns))
        self.tables.append(t)
        return t

    @property
    def passed(self):
        return all(m.verdict != "fail" for m in self.metrics)

    def get(self, name):
        for m in self.metrics:
            if m.name == name:
                return m
        raise KeyError(name)

    def summary(self):
        return {
            "experiment": self.experiment,
            "config_digest": self.config_digest,
            "input_hash": self.input_hash,
            "passed": self.passed,
            "verdicts": {m.name: m.verdict for m in self.metrics if m.verdict != "info"},
        }


def _num(x):
    if x is None:
        return None
    return float(x)


def format_value(v):
    """CSV cell text; floats use the shortest round-trip representation."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    if hasattr(v, "item"):
        return format_value(v.item())
    return str(v)


def parse_value(text):
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def to_csv(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(v) for v in r])
    return buf.getvalue()


def read_csv(path):
    """Header and parsed rows of a CSV file written by this module."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [tuple(parse_value(c) for c in row) for row in reader]


def metrics_csv(record):
    rows = [tuple(getattr(m, c) for c in METRIC_COLUMNS) for m in record.metrics]
    return to_csv(METRIC_COLUMNS, rows)


def git_blob_hash(data):
    """Git's object id of ``data`` (``sha1("blob <len>\\0" + data)``)."""
    if isinstance(data, str):
        data = data.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_record(record, out_dir):
    """Write metrics, tables and ``summary.json`` atomically into ``out_dir``.

    Files go to a temporary sibling directory that replaces ``out_dir`` only
    once everything is written, so a failure never leaves partial results.
    """
    out_dir = os.path.abspath(out_dir)
    parent = os.path.dirname(out_dir)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".partial-", dir=parent)
    try:
        files = {"metrics.csv": metrics_csv(record)}
        for t in record.tables:
            files[f"{t.name}.csv"] = to_csv(t.columns, t.rows)
        summary = record.summary()
        summary["files"] = {name: git_blob_hash(text) for name, text in sorted(files.items())}
        files["summary.json"] = json.dumps(summary, indent=2, sort_keys=True) + "\n"
        for name, text in files.items():
            with open(os.path.join(tmp, name), "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        if os.path.exists(out_dir):
            shutil.rmtree(out_dir)
        os.replace(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return out_dir


def read_metrics(path):
    header, rows = read_csv(path)
    if tuple(header) != METRIC_COLUMNS:
        raise ValueError(f"unexpected metrics header {header}")
    return [MetricRow(*row) for row in rows]


def record_dict(record):
    return asdict(record)
