"""Synthetic PMU phasor windows and their CSV / JSON-sidecar formats.

CSV layout: header row, then one row per sample::

    t, V<bus>_re, V<bus>_im  (every bus, case order),
       I<bus>_re, I<bus>_im  (every load bus, case order)

The sidecar (``pmu-sidecar-v1``) records ``dt``, ``seed`` and optionally the
ground truth: the load parameters at the start of the run and the list of
scenario events applied during it.
"""
from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ParseError, ValidationError
from ..ou import LoadBlockSpec

_COL = re.compile(r"^([VI])(\d+)_(re|im)$")


@dataclass(frozen=True)
class PhasorWindow:
    """Time-aligned voltage phasors (all buses) and load currents.

    ``voltage`` has shape ``(n, n_bus)`` and ``current`` ``(n, m)``.
    ``states``, when present, holds the simulator's ``[g, b]`` at each
    sample, shape ``(n, 2m)``.
    """

    dt: float
    voltage: np.ndarray
    current: np.ndarray
    bus_ids: tuple
    load_buses: tuple
    t0: float = 0.0
    truth: LoadBlockSpec | None = None
    states: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        V = np.asarray(self.voltage, dtype=complex)
        I = np.asarray(self.current, dtype=complex)
        if V.ndim != 2 or I.ndim != 2 or V.shape[0] != I.shape[0]:
            raise ValidationError("voltage and current series must share one length")
        if V.shape[0] < 2:
            raise ValidationError("a phasor window needs at least two samples")
        if V.shape[1] != len(self.bus_ids) or I.shape[1] != len(self.load_buses):
            raise ValidationError("column counts do not match bus lists")
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if not np.all(np.abs(V) > 0):
            raise ValidationError("voltage magnitudes must be strictly positive")
        object.__setattr__(self, "voltage", V)
        object.__setattr__(self, "current", I)
        object.__setattr__(self, "bus_ids", tuple(int(b) for b in self.bus_ids))
        object.__setattr__(self, "load_buses", tuple(int(b) for b in self.load_buses))

    @property
    def n(self):
        return self.voltage.shape[0]

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n)

    def load_voltage(self):
        idx = [self.bus_ids.index(b) for b in self.load_buses]
        return self.voltage[:, idx]

    def header(self):
        cols = ["t"]
        for b in self.bus_ids:
            cols += [f"V{b}_re", f"V{b}_im"]
        for b in self.load_buses:
            cols += [f"I{b}_re", f"I{b}_im"]
        return cols

    def to_array(self):
        n = self.n
        out = np.empty((n, 1 + 2 * len(self.bus_ids) + 2 * len(self.load_buses)))
        out[:, 0] = self.times
        nv = 2 * len(self.bus_ids)
        out[:, 1:1 + nv:2] = self.voltage.real
        out[:, 2:1 + nv:2] = self.voltage.imag
        out[:, 1 + nv::2] = self.current.real
        out[:, 2 + nv::2] = self.current.imag
        return out


def parse_header(cols):
    """Map a CSV header to ``(bus_ids, load_buses)``, validating the layout."""
    if not cols or cols[0].strip() != "t":
        raise ParseError("first column must be 't'")
    volt, cur = [], []
    for pos in range(1, len(cols), 2):
        a = _COL.match(cols[pos].strip())
        b = _COL.match(cols[pos + 1].strip()) if pos + 1 < len(cols) else None
        if not a or not b or a.group(3) != "re" or b.group(3) != "im" \
                or a.group(1, 2) != b.group(1, 2):
            raise ParseError(f"column {pos + 1}: expected a <V|I><bus>_re, _im pair")
        dest = volt if a.group(1) == "V" else cur
        if a.group(1) == "V" and cur:
            raise ParseError("voltage columns must precede current columns")
        dest.append(int(a.group(2)))
    if not volt or not cur:
        raise ParseError("need at least one voltage and one current column")
    return tuple(volt), tuple(cur)


def rows_to_phasors(data, bus_ids, load_buses):
    nv = 2 * len(bus_ids)
    V = data[:, 1:1 + nv:2] + 1j * data[:, 2:1 + nv:2]
    I = data[:, 1 + nv::2] + 1j * data[:, 2 + nv::2]
    return V, I


def write_pmu_csv(window: PhasorWindow, path):
    path = Path(path)
    buf = io.StringIO()
    np.savetxt(buf, window.to_array(), delimiter=",", fmt="%.17g",
               header=",".join(window.header()), comments="")
    path.write_text(buf.getvalue())


def read_pmu_csv(path, truth=None) -> PhasorWindow:
    path = Path(path)
    with path.open() as fh:
        header = next(csv.reader(fh))
        bus_ids, load_buses = parse_header(header)
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    if data.shape[1] != len(header):
        raise ParseError(f"{path}: expected {len(header)} columns, got {data.shape[1]}")
    if data.shape[0] < 2:
        raise ParseError(f"{path}: need at least two samples")
    dt = float(np.median(np.diff(data[:, 0])))
    V, I = rows_to_phasors(data, bus_ids, load_buses)
    return PhasorWindow(dt=dt, voltage=V, current=I, bus_ids=bus_ids,
                        load_buses=load_buses, t0=float(data[0, 0]), truth=truth)


def iter_csv_records(fh):
    """Yield ``(header, row)`` pairs from an open PMU CSV, one row at a time."""
    reader = csv.reader(fh)
    header = [c.strip() for c in next(reader)]
    parse_header(header)
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        yield header, np.array(row, dtype=float)


def iter_ndjson_records(fh):
    """Yield ``(header, row)`` pairs from line-delimited JSON records.

    Every record carries the same keys as the CSV columns; the key order of
    the first record fixes the header.
    """
    header = None
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: {exc.msg}") from exc
        if header is None:
            header = ["t"] + [k for k in rec if k != "t"]
            parse_header(header)
        try:
            row = np.array([float(rec[k]) for k in header])
        except KeyError as exc:
            raise ParseError(f"line {lineno}: missing field {exc.args[0]!r}") from exc
        yield header, row


def sidecar_dict(window: PhasorWindow, seed=None, events=(), case_name=None):
    d = {"schema": "pmu-sidecar-v1", "dt": window.dt, "t0": window.t0, "seed": seed,
         "bus_ids": list(window.bus_ids), "load_buses": list(window.load_buses)}
    if case_name is not None:
        d["case"] = case_name
    if window.truth is not None:
        d["truth"] = window.truth.to_dict()
    d["events"] = [e if isinstance(e, dict) else e.to_dict() for e in events]
    return d


def write_sidecar(path, window: PhasorWindow, seed=None, events=(), case_name=None):
    Path(path).write_text(json.dumps(sidecar_dict(window, seed, events, case_name), indent=2))


def read_sidecar(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if "truth" in d and d["truth"] is not None:
        d["truth_spec"] = LoadBlockSpec.from_dict(d["truth"])
    return d
