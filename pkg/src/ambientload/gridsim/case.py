"""Network case description and the ``gridcase-v1`` JSON schema.

A case document is a JSON object::

    {
      "schema": "gridcase-v1",              # optional
      "name": "three-bus",                  # optional
      "buses":      [{"id": 1, "type": "slack", "voltage": 1.02}, ...],
      "branches":   [{"from": 1, "to": 2, "r": 0.0, "x": 0.05, "b": 0.0}, ...],
      "generators": [{"bus": 1, "inertia": 0.1, "damping": 1.0,
                      "p_m": 0.0, "x_d": 0.05}, ...],
      "loads":      [{"bus": 3, "tau_g": 1.0, "tau_b": 2.0, "p_s": 0.8,
                      "q_s": -0.3, "sigma_p": 0.05, "sigma_q": 0.05}, ...]
    }

Bus ``type`` is one of ``slack``, ``generator``, ``load``, ``passive``.
``voltage`` is the magnitude setpoint for slack/generator buses and the
initial guess elsewhere.  Branch ``b`` is the total line charging.
Everything is per unit on the system base except time constants (s),
inertia ``M`` (s^2/rad) and damping ``D`` (p.u. per rad/s).

Loads are admittances ``y = g + j b`` with the metered current flowing into
the load, ``I = y V``.  With this convention ``q_s`` is the steady-state
value of ``b V^2``; an inductive load has ``q_s < 0``.  A slack bus without
a generator entry is an infinite bus (fixed voltage phasor) during
simulation.
"""
from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ParseError, ValidationError
from ..ou import LoadBlockSpec

BUS_TYPES = ("slack", "generator", "load", "passive")
LOAD_FIELDS = ("tau_g", "tau_b", "p_s", "q_s", "sigma_p", "sigma_q")
CASES_DIR = Path(__file__).with_name("cases")


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    voltage: float = 1.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0


@dataclass(frozen=True)
class Generator:
    bus: int
    inertia: float
    damping: float
    p_m: float
    x_d: float


@dataclass(frozen=True)
class Load:
    bus: int
    tau_g: float
    tau_b: float
    p_s: float
    q_s: float
    sigma_p: float = 0.0
    sigma_q: float = 0.0


@dataclass(frozen=True)
class GridCase:
    buses: tuple
    branches: tuple
    generators: tuple
    loads: tuple
    name: str = "case"
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "loads", tuple(self.loads))
        validate_case(self)
        object.__setattr__(self, "_index", {b.id: i for i, b in enumerate(self.buses)})

    @property
    def n_bus(self):
        return len(self.buses)

    def bus_index(self, bus_id):
        return self._index[bus_id]

    @property
    def slack_index(self):
        return next(i for i, b in enumerate(self.buses) if b.type == "slack")

    @property
    def load_buses(self):
        return [ld.bus for ld in self.loads]

    def load_block_spec(self, v_bar=None) -> LoadBlockSpec:
        m = len(self.loads)
        cols = {f: np.array([getattr(ld, f) for ld in self.loads]) for f in LOAD_FIELDS}
        return LoadBlockSpec(v_bar=np.ones(m) if v_bar is None else v_bar, **cols)

    def with_load_param(self, index, name, value) -> "GridCase":
        if name not in LOAD_FIELDS:
            raise ValidationError(f"unknown load parameter {name!r}")
        loads = list(self.loads)
        loads[index] = replace(loads[index], **{name: float(value)})
        return replace(self, loads=tuple(loads), _index=None)

    def scaled_noise(self, factor) -> "GridCase":
        loads = tuple(replace(ld, sigma_p=ld.sigma_p * factor, sigma_q=ld.sigma_q * factor)
                      for ld in self.loads)
        return replace(self, loads=loads, _index=None)

    def to_dict(self):
        return {
            "schema": "gridcase-v1",
            "name": self.name,
            "buses": [asdict(b) for b in self.buses],
            "branches": [{"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b": br.b}
                         for br in self.branches],
            "generators": [asdict(g) for g in self.generators],
            "loads": [asdict(ld) for ld in self.loads],
        }


def validate_case(case: GridCase):
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise ValidationError("bus ids must be unique")
    for b in case.buses:
        if b.type not in BUS_TYPES:
            raise ValidationError(f"bus {b.id}: type {b.type!r} not in {BUS_TYPES}")
        if not b.voltage > 0:
            raise ValidationError(f"bus {b.id}: voltage must be positive")
    n_slack = sum(b.type == "slack" for b in case.buses)
    if n_slack != 1:
        raise ValidationError(f"exactly one slack bus required, found {n_slack}")
    types = {b.id: b.type for b in case.buses}

    for k, br in enumerate(case.branches):
        for end in (br.from_bus, br.to_bus):
            if end not in types:
                raise ValidationError(f"branches[{k}] references missing bus {end}")
        if br.from_bus == br.to_bus:
            raise ValidationError(f"branches[{k}] connects bus {br.from_bus} to itself")
        if not abs(complex(br.r, br.x)) > 0:
            raise ValidationError(f"branches[{k}] has zero impedance")

    gen_buses = [g.bus for g in case.generators]
    if len(set(gen_buses)) != len(gen_buses):
        raise ValidationError("at most one generator per bus")
    for k, g in enumerate(case.generators):
        if g.bus not in types:
            raise ValidationError(f"generators[{k}] references missing bus {g.bus}")
        if types[g.bus] not in ("slack", "generator"):
            raise ValidationError(f"generators[{k}] sits on {types[g.bus]} bus {g.bus}")
        if not (g.inertia > 0 and g.x_d > 0 and g.damping >= 0):
            raise ValidationError(f"generators[{k}]: need inertia > 0, x_d > 0, damping >= 0")
    for b in case.buses:
        if b.type == "generator" and b.id not in gen_buses:
            raise ValidationError(f"generator bus {b.id} has no generator entry")

    load_buses = [ld.bus for ld in case.loads]
    if len(set(load_buses)) != len(load_buses):
        raise ValidationError("every dynamic load must sit on a distinct bus")
    for k, ld in enumerate(case.loads):
        if ld.bus not in types:
            raise ValidationError(f"loads[{k}] references missing bus {ld.bus}")
        if types[ld.bus] != "load":
            raise ValidationError(f"loads[{k}] sits on {types[ld.bus]} bus {ld.bus}")
        if not (ld.tau_g > 0 and ld.tau_b > 0):
            raise ValidationError(f"loads[{k}]: time constants must be positive")
        if ld.sigma_p < 0 or ld.sigma_q < 0:
            raise ValidationError(f"loads[{k}]: noise intensities must be nonnegative")


def _build(cls, rec, where, renames=None):
    if not isinstance(rec, dict):
        raise ParseError(f"{where}: expected an object, got {type(rec).__name__}")
    renames = renames or {}
    kwargs = {}
    names = [f.name for f in cls.__dataclass_fields__.values()]
    defaults = {f.name for f in cls.__dataclass_fields__.values() if f.default is not MISSING}
    inv = {v: k for k, v in renames.items()}
    for name in names:
        key = inv.get(name, name)
        if key in rec:
            val = rec[key]
            if name == "type":
                kwargs[name] = str(val)
                continue
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ParseError(f"{where}.{key}: expected a number, got {val!r}")
            kwargs[name] = int(val) if name in ("id", "bus", "from_bus", "to_bus") else float(val)
        elif name not in defaults:
            raise ParseError(f"{where}: missing field {key!r}")
    unknown = set(rec) - {inv.get(n, n) for n in names}
    if unknown:
        raise ParseError(f"{where}: unknown field(s) {sorted(unknown)}")
    return cls(**kwargs)


def load_case(text: str) -> GridCase:
    """Parse and validate a ``gridcase-v1`` JSON document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError("case document must be a JSON object")
    schema = doc.get("schema", "gridcase-v1")
    if schema != "gridcase-v1":
        raise ParseError(f"unsupported schema {schema!r}")
    for key in ("buses", "branches", "generators", "loads"):
        if not isinstance(doc.get(key), list):
            raise ParseError(f"top-level key {key!r} must be a list")
    buses = [_build(Bus, r, f"buses[{i}]") for i, r in enumerate(doc["buses"])]
    branches = [_build(Branch, r, f"branches[{i}]", {"from": "from_bus", "to": "to_bus"})
                for i, r in enumerate(doc["branches"])]
    gens = [_build(Generator, r, f"generators[{i}]") for i, r in enumerate(doc["generators"])]
    loads = [_build(Load, r, f"loads[{i}]") for i, r in enumerate(doc["loads"])]
    return GridCase(buses, branches, gens, loads, name=str(doc.get("name", "case")))


def load_case_file(path) -> GridCase:
    path = Path(path)
    if not path.exists() and (CASES_DIR / path).exists():
        path = CASES_DIR / path
    if not path.exists() and (CASES_DIR / f"{path}.json").exists():
        path = CASES_DIR / f"{path}.json"
    return load_case(path.read_text())


def shipped_case(name: str) -> GridCase:
    """Load one of the bundled cases (``three_bus`` or ``twelve_bus``)."""
    return load_case((CASES_DIR / f"{name}.json").read_text())
