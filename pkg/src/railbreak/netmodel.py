"""
Steady-state phasor model of an 8 km double-track section.

The section is a ladder of coupled four-conductor RLC segments. Conductors are
indexed in the order used by the joint feature vector::

    0: 1e   (track 1, external rail)
    1: 1i   (track 1, internal rail)
    2: 2i   (track 2, internal rail)
    3: 2e   (track 2, external rail)

Each segment is split into ``sections`` pi-sections: a coupled series
impedance block between two boundary nodes and half of the section's shunt
admittance at each end. A breakage splits the boundary node of one rail into
two unconnected nodes.

Node electronics
----------------
Every rail is tied to its node electronics through a measured lead:

* emitter leads run from earth to the rail through the source impedance and
  carry the injected EMF. Independent injection on track ``t`` drives the
  ``te`` lead with ``+V/2`` and the ``ti`` lead with ``-V/2`` (centre-tapped
  source, centre earthed); the other track's leads carry no EMF. Joint
  injection drives both track-1 leads with ``+V/2`` and both track-2 leads
  with ``-V/2``.
* receiver leads run from the rail to a floating tap through the receiver
  termination. Independent injection uses one tap per track; joint injection
  bonds the four receiver leads to a single tap.

The network is solved by modified nodal analysis: node voltages plus one
current unknown per lead, so zero-impedance sources and shorts are allowed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.linalg

from .features import InjectionMode

CONDUCTORS = ("1e", "1i", "2i", "2e")
TRACK_OF = (1, 1, 2, 2)
RAIL_OF = ("e", "i", "i", "e")

SECTION_LENGTH_KM = 8.0
N_SEGMENTS = 4
PIVOT_TOL = 1e-12


class NetworkError(ValueError):
    """Base class for topology and solve failures."""


class FloatingSubnetworkError(NetworkError):
    def __init__(self, nodes):
        self.nodes = sorted(nodes, key=str)
        super().__init__(f"floating subnetwork: nodes {self.nodes} have no path to earth")


class IllConditionedError(NetworkError):
    def __init__(self, message, condition=math.inf):
        self.condition = condition
        super().__init__(f"ill-conditioned network: {message} (condition estimate {condition:.3g})")


def conductor_index(track: int, rail: str) -> int:
    if track not in (1, 2) or rail not in ("e", "i"):
        raise ValueError(f"no conductor for track={track!r}, rail={rail!r}")
    return CONDUCTORS.index(f"{track}{rail}")


@dataclass(frozen=True)
class SegmentParams:
    """Per-km electrical parameters of one track segment.

    Defaults are placeholders for a well-insulated 800 Hz line in dry
    ballast; no measured values are available for the modelled section.
    Shunt conductances are deliberately low: with leakier ballast a
    breakage's imprint decays within about a kilometre and mid-section
    breakages stop being distinguishable at the section ends.
    """

    length_km: float = 2.0
    r_per_km: float = 1.0
    l_per_km: float = 1.4e-3
    m_intra_per_km: float = 0.6e-3
    m_inter_per_km: float = 0.1e-3
    c_rail_rail_per_km: float = 0.02e-6
    g_rail_rail_per_km: float = 5e-4
    c_rail_gnd_per_km: float = 0.01e-6
    g_rail_gnd_per_km: float = 1e-4

    def __post_init__(self):
        values = [getattr(self, f) for f in self.__dataclass_fields__]
        if not all(math.isfinite(v) for v in values):
            raise ValueError("segment parameters must be finite")
        if self.length_km <= 0:
            raise ValueError("length_km must be positive")
        for name in ("r_per_km", "l_per_km", "c_rail_rail_per_km", "g_rail_rail_per_km",
                     "c_rail_gnd_per_km", "g_rail_gnd_per_km"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.l_per_km > 0 and np.linalg.eigvalsh(self.inductance_matrix()).min() <= 0:
            raise ValueError("inductance matrix is not positive definite")

    def inductance_matrix(self) -> np.ndarray:
        """4x4 per-km inductance matrix in conductor order."""
        l, mi, mx = self.l_per_km, self.m_intra_per_km, self.m_inter_per_km
        return np.array([
            [l, mi, mx, mx],
            [mi, l, mx, mx],
            [mx, mx, l, mi],
            [mx, mx, mi, l],
        ])

    def series_impedance(self, omega: float, length_km: float) -> np.ndarray:
        return (self.r_per_km * np.eye(4) + 1j * omega * self.inductance_matrix()) * length_km


@dataclass(frozen=True)
class SoilPreset:
    name: str
    water_content_pct: float
    g_scale: float

    def __post_init__(self):
        if self.water_content_pct <= 0:
            raise ValueError("water_content_pct must be positive")
        if self.g_scale <= 0:
            raise ValueError("g_scale must be positive")


DRY = SoilPreset("dry", 0.1, 1.0)
WET = SoilPreset("wet", 1.0, 10.0)
SOIL_PRESETS = {"dry": DRY, "wet": WET}


@dataclass(frozen=True, order=True)
class BreakageSpec:
    """Open circuit on one rail at 2, 4 or 6 km from the emitter."""

    track: int
    rail: str
    position_quarter: int

    def __post_init__(self):
        if self.track not in (1, 2):
            raise ValueError(f"track must be 1 or 2, got {self.track!r}")
        if self.rail not in ("e", "i"):
            raise ValueError(f"rail must be 'e' or 'i', got {self.rail!r}")
        if self.position_quarter not in (1, 2, 3):
            raise ValueError(f"position_quarter must be 1, 2 or 3, got {self.position_quarter!r}")

    @property
    def conductor(self) -> int:
        return conductor_index(self.track, self.rail)

    @property
    def label(self) -> str:
        return f"R{self.track}{self.rail}{self.position_quarter}/4"

    @classmethod
    def from_label(cls, label: str) -> "BreakageSpec":
        s = label.replace(" ", "")
        if len(s) != 6 or s[0] != "R" or s[4:] != "/4":
            raise ValueError(f"bad breakage label {label!r}")
        return cls(int(s[1]), s[2], int(s[3]))

    def mirrored(self) -> "BreakageSpec":
        """Same breakage on the mirror-image rail of the other track."""
        return replace(self, track=3 - self.track)


@dataclass(frozen=True)
class SectionModel:
    """Electrical description of one emitter-receiver cell.

    ``receiver_termination`` may be ``math.inf`` to leave the receiver leads
    open.
    """

    segments: tuple[SegmentParams, ...] = field(
        default_factory=lambda: tuple(SegmentParams() for _ in range(N_SEGMENTS)))
    breakages: frozenset[BreakageSpec] = frozenset()
    frequency_hz: float = 800.0
    source_voltage: float = 1.0
    source_impedance: complex = 10.0
    receiver_termination: complex = 10.0
    sections: int = 1

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "breakages", frozenset(self.breakages))
        if len(self.segments) != N_SEGMENTS:
            raise ValueError(f"a section has {N_SEGMENTS} segments, got {len(self.segments)}")
        total = sum(s.length_km for s in self.segments)
        if not math.isclose(total, SECTION_LENGTH_KM, rel_tol=1e-9):
            raise ValueError(f"segments must total {SECTION_LENGTH_KM} km, got {total}")
        if not self.frequency_hz > 0:
            raise ValueError("frequency_hz must be positive")
        if self.sections < 1:
            raise ValueError("sections must be >= 1")
        seen = set()
        for b in self.breakages:
            key = (b.track, b.rail)
            if key in seen:
                raise ValueError(f"more than one breakage on rail {b.track}{b.rail}")
            seen.add(key)

    @property
    def omega(self) -> float:
        return 2 * math.pi * self.frequency_hz

    def with_breakages(self, breakages: Iterable[BreakageSpec]) -> "SectionModel":
        return replace(self, breakages=frozenset(breakages))

    def mirrored(self) -> "SectionModel":
        return replace(self, breakages=frozenset(b.mirrored() for b in self.breakages))


@dataclass(frozen=True)
class RailCurrents:
    """Lead currents in conductor order: emitter (into rail), receiver (out of rail)."""

    emitter: np.ndarray
    receiver: np.ndarray

    def magnitudes(self) -> dict[str, float]:
        out = {}
        for k, c in enumerate(CONDUCTORS):
            out[f"I{c}_e"] = float(abs(self.emitter[k]))
            out[f"I{c}_r"] = float(abs(self.receiver[k]))
        return out

    def __add__(self, other):
        return RailCurrents(self.emitter + other.emitter, self.receiver + other.receiver)


@dataclass
class AdmittanceSystem:
    """MNA system ``matrix @ [v; i_lead] = rhs``.

    ``node_index`` maps node keys to rows; keys are ``(boundary, conductor,
    side)`` for rail nodes and ``("tap", name)`` for receiver taps. Rows after
    the node block hold the lead currents, emitter leads first.
    """

    matrix: np.ndarray
    rhs: np.ndarray
    node_index: dict
    n_nodes: int
    emitter_leads: list[int]
    receiver_leads: list[int]


def _rail_node(boundary, conductor, side, broken_at):
    """Key of the node a segment end attaches to (side 'L' = left of boundary)."""
    if boundary in broken_at.get(conductor, ()):
        return (boundary, conductor, side)
    return (boundary, conductor, "")


def _emitter_emfs(model: SectionModel, injection: InjectionMode) -> np.ndarray:
    half = model.source_voltage / 2
    emf = np.zeros(4, dtype=complex)
    if injection.kind == "joint":
        emf[:] = [half, half, -half, -half]
    else:
        e = conductor_index(injection.track, "e")
        i = conductor_index(injection.track, "i")
        emf[e], emf[i] = half, -half
    return emf


def build_admittance(model: SectionModel, injection: InjectionMode | None = None,
                     emitter_emf: np.ndarray | None = None) -> AdmittanceSystem:
    """Assemble the MNA system of ``model`` driven by ``injection``.

    ``emitter_emf`` overrides the per-lead source EMFs; it is used to split a
    joint injection into single-source sub-problems.
    """
    if injection is None:
        injection = InjectionMode.joint()
    if emitter_emf is None:
        emitter_emf = _emitter_emfs(model, injection)
    per_seg = model.sections
    n_sections = N_SEGMENTS * per_seg
    n_boundaries = n_sections + 1

    broken_at: dict[int, set[int]] = {}
    for b in model.breakages:
        broken_at.setdefault(b.conductor, set()).add(b.position_quarter * per_seg)

    keys: list = []
    for bnd in range(n_boundaries):
        for c in range(4):
            if bnd in broken_at.get(c, ()):
                keys += [(bnd, c, "L"), (bnd, c, "R")]
            else:
                keys.append((bnd, c, ""))
    if injection.kind == "joint":
        taps = {c: ("tap", "r") for c in range(4)}
    else:
        taps = {c: ("tap", f"r{TRACK_OF[c]}") for c in range(4)}
    open_receiver = not np.isfinite(abs(model.receiver_termination))
    if not open_receiver:
        keys += list(dict.fromkeys(taps.values()))
    index = {k: i for i, k in enumerate(keys)}
    n = len(keys)

    n_leads = 4 if open_receiver else 8
    size = n + n_leads
    A = np.zeros((size, size), dtype=complex)
    rhs = np.zeros(size, dtype=complex)
    omega = model.omega
    edges: list[tuple] = []

    def stamp_shunt(a, b, y):
        if y == 0:
            return
        ia = index[a]
        A[ia, ia] += y
        if b is None:
            edges.append((a, "gnd"))
            return
        ib = index[b]
        A[ib, ib] += y
        A[ia, ib] -= y
        A[ib, ia] -= y
        edges.append((a, b))

    for s in range(n_sections):
        seg = model.segments[s // per_seg]
        length = seg.length_km / per_seg
        z = seg.series_impedance(omega, length)
        try:
            y = np.linalg.inv(z)
        except np.linalg.LinAlgError:
            raise IllConditionedError(f"series impedance of segment {s // per_seg} is singular")
        left = [_rail_node(s, c, "R", broken_at) for c in range(4)]
        right = [_rail_node(s + 1, c, "L", broken_at) for c in range(4)]
        li = [index[k] for k in left]
        ri = [index[k] for k in right]
        A[np.ix_(li, li)] += y
        A[np.ix_(ri, ri)] += y
        A[np.ix_(li, ri)] -= y
        A[np.ix_(ri, li)] -= y
        edges += list(zip(left, right))

        y_rr = (seg.g_rail_rail_per_km + 1j * omega * seg.c_rail_rail_per_km) * length / 2
        y_rg = (seg.g_rail_gnd_per_km + 1j * omega * seg.c_rail_gnd_per_km) * length / 2
        for ends in (left, right):
            stamp_shunt(ends[0], ends[1], y_rr)
            stamp_shunt(ends[2], ends[3], y_rr)
            for c in range(4):
                stamp_shunt(ends[c], None, y_rg)

    # lead rows: v_from - v_to - z * i = -emf, current flows from -> to
    emitter_rows, receiver_rows = [], []
    row = n
    for c in range(4):
        node = index[_rail_node(0, c, "R", broken_at)]
        A[node, row] -= 1.0      # lead current enters the rail node
        A[row, node] -= 1.0
        A[row, row] = -model.source_impedance
        rhs[row] = -emitter_emf[c]
        edges.append((_rail_node(0, c, "R", broken_at), "gnd"))
        emitter_rows.append(row)
        row += 1
    if not open_receiver:
        for c in range(4):
            key = _rail_node(n_sections, c, "L", broken_at)
            node, tap = index[key], index[taps[c]]
            A[node, row] += 1.0
            A[tap, row] -= 1.0
            A[row, node] += 1.0
            A[row, tap] -= 1.0
            A[row, row] = -model.receiver_termination
            edges.append((key, taps[c]))
            receiver_rows.append(row)
            row += 1

    floating = _floating_nodes(keys, edges)
    if floating:
        raise FloatingSubnetworkError(floating)
    return AdmittanceSystem(A, rhs, index, n, emitter_rows, receiver_rows)


def _floating_nodes(keys, edges) -> set:
    parent = {k: k for k in keys}
    parent["gnd"] = "gnd"

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    earth = find("gnd")
    return {k for k in keys if find(k) != earth}


def _solve(system: AdmittanceSystem) -> np.ndarray:
    A = system.matrix
    lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    pivots = np.abs(np.diag(lu))
    scale = np.abs(A).max()
    if pivots.min() <= PIVOT_TOL * scale:
        cond = np.inf if pivots.min() == 0 else float(np.linalg.cond(A))
        raise IllConditionedError("pivot below tolerance", cond)
    return scipy.linalg.lu_solve((lu, piv), system.rhs)


def solve_currents(model: SectionModel, injection: InjectionMode | None = None,
                   emitter_emf: np.ndarray | None = None) -> RailCurrents:
    """Emitter and receiver lead currents for the given injection.

    Emitter currents are positive flowing into the rail; receiver currents
    are positive flowing out of the rail into the receiver. Open receiver
    leads report zero current.
    """
    system = build_admittance(model, injection, emitter_emf)
    x = _solve(system)
    emitter = x[system.emitter_leads]
    if system.receiver_leads:
        receiver = x[system.receiver_leads]
    else:
        receiver = np.zeros(4, dtype=complex)
    return RailCurrents(emitter, receiver)


def source_power(model: SectionModel, injection: InjectionMode) -> complex:
    """Complex power delivered by the emitter sources."""
    emf = _emitter_emfs(model, injection)
    currents = solve_currents(model, injection)
    return complex(np.sum(emf * np.conj(currents.emitter)))


def apply_soil(model: SectionModel, preset: SoilPreset) -> SectionModel:
    """Scale every shunt conductance by the preset's factor."""
    segs = tuple(
        replace(s, g_rail_rail_per_km=s.g_rail_rail_per_km * preset.g_scale,
                g_rail_gnd_per_km=s.g_rail_gnd_per_km * preset.g_scale)
        for s in model.segments)
    return replace(model, segments=segs)


# scenario files ---------------------------------------------------------------

def _complex_from_json(v):
    if isinstance(v, (int, float)):
        return v
    if isinstance(v, str) and v.lower() in ("inf", "open"):
        return math.inf
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(v[0], v[1])
    raise ValueError(f"cannot read impedance {v!r}")


def _complex_to_json(v):
    if not np.isfinite(abs(v)):
        return "open"
    v = complex(v)
    return v.real if v.imag == 0 else [v.real, v.imag]


def model_from_dict(d: dict) -> SectionModel:
    """Build a model from a scenario dictionary (see ``docs/scenario_schema.json``)."""
    seg = d.get("segment", {})
    if "segments" in d:
        segments = tuple(SegmentParams(**s) for s in d["segments"])
    else:
        segments = tuple(SegmentParams(**seg) for _ in range(N_SEGMENTS))
    breakages = frozenset(
        BreakageSpec(int(b["track"]), str(b["rail"]), int(b["quarter"]))
        for b in d.get("breakages", []))
    model = SectionModel(
        segments=segments,
        breakages=breakages,
        frequency_hz=float(d.get("frequency_hz", 800.0)),
        source_voltage=float(d.get("source_voltage", 1.0)),
        source_impedance=_complex_from_json(d.get("source_impedance", 10.0)),
        receiver_termination=_complex_from_json(d.get("receiver_termination", 10.0)),
        sections=int(d.get("sections", 1)),
    )
    soil = d.get("soil")
    if soil is not None:
        model = apply_soil(model, SOIL_PRESETS[soil])
    return model


def model_to_dict(model: SectionModel) -> dict:
    return {
        "segments": [s.__dict__.copy() for s in model.segments],
        "breakages": [{"track": b.track, "rail": b.rail, "quarter": b.position_quarter}
                      for b in sorted(model.breakages)],
        "frequency_hz": model.frequency_hz,
        "source_voltage": model.source_voltage,
        "source_impedance": _complex_to_json(model.source_impedance),
        "receiver_termination": _complex_to_json(model.receiver_termination),
        "sections": model.sections,
    }


def load_scenario(path) -> SectionModel:
    return model_from_dict(json.loads(Path(path).read_text()))
