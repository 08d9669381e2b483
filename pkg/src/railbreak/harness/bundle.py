"""Training every class of a phase and persisting the resulting model set."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..detector import PHASE_CLASSES
from ..pca import RMSE_CAP, PcaClassModel, PcaError, TrainingSet, select_order, train
from .dataset import DatasetRow

FORMAT_VERSION = 1

# Retained order per phase. The joint-injection phases keep four components.
# Independent-injection vectors of a two-rail loop lie close to the plane of
# common-mode emitter and receiver levels, so any order-2 class subspace spans
# that plane and OK/BR stop being separable; phase 1 keeps one component even
# though that misses the RMSE cap. "auto" takes, over a phase's classes, the
# largest smallest-order-meeting-the-cap, limited to n - 1.
DEFAULT_ORDERS: dict[int, int | str] = {1: 1, 2: 4, 3: 4}


class BundleError(ValueError):
    pass


@dataclass
class ModelBundle:
    phases: dict[int, dict[str, PcaClassModel]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    provenance: list[tuple[str, float, int]] = field(default_factory=list)

    def models(self, phase: int) -> dict[str, PcaClassModel]:
        return self.phases[phase]

    def covers_all_phases(self) -> bool:
        return all(p in self.phases and set(self.phases[p]) >= {c.name for c in PHASE_CLASSES[p]}
                   for p in (1, 2, 3))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "meta": self.meta,
            "phases": {str(p): [self.phases[p][c.name].to_dict()
                                for c in PHASE_CLASSES[p] if c.name in self.phases[p]]
                       for p in sorted(self.phases)},
            "provenance": [[c, s, str(seed)] for c, s, seed in self.provenance],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        if not isinstance(d, dict) or d.get("format_version") != FORMAT_VERSION:
            found = d.get("format_version") if isinstance(d, dict) else None
            raise BundleError(f"bundle format_version {found!r} is not {FORMAT_VERSION}")
        try:
            phases = {}
            for p, models in d["phases"].items():
                phase = int(p)
                names = {c.name for c in PHASE_CLASSES[phase]}
                loaded = {}
                for md in models:
                    m = PcaClassModel.from_dict(md)
                    if m.class_label not in names:
                        raise BundleError(f"class {m.class_label!r} does not belong to phase {phase}")
                    loaded[m.class_label] = m
                phases[phase] = loaded
            prov = [(str(c), float(s), int(seed)) for c, s, seed in d.get("provenance", [])]
        except (KeyError, TypeError, ValueError, PcaError) as exc:
            if isinstance(exc, BundleError):
                raise
            raise BundleError(f"malformed bundle: {exc}") from exc
        return cls(phases, dict(d.get("meta", {})), prov)

    @classmethod
    def load(cls, path) -> "ModelBundle":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise BundleError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(d)

    def merged(self, other: "ModelBundle") -> "ModelBundle":
        if self.meta and other.meta and self.meta != other.meta:
            raise BundleError("cannot merge bundles trained on different simulators")
        phases = {**self.phases, **other.phases}
        prov = sorted(set(self.provenance) | set(other.provenance))
        return ModelBundle(phases, self.meta or other.meta, prov)


def training_sets(rows: Sequence[DatasetRow], phase: int) -> dict[str, TrainingSet]:
    want = [c.name for c in PHASE_CLASSES[phase]]
    by_class: dict[str, list[DatasetRow]] = {}
    for r in rows:
        if r.cls in want:
            by_class.setdefault(r.cls, []).append(r)
    missing = [n for n in want if n not in by_class]
    if missing:
        raise BundleError(f"dataset has no rows for phase-{phase} class(es) {', '.join(missing)}")
    out = {}
    for name in want:
        rs = by_class[name]
        dims = {r.n for r in rs}
        if len(dims) != 1:
            raise BundleError(f"class {name}: rows have mixed dimensions {sorted(dims)}")
        out[name] = TrainingSet(name, np.stack([r.features for r in rs]),
                                [(r.snr_db, r.soil, r.seed) for r in rs])
    return out


def resolve_order(sets: Mapping[str, TrainingSet], spec, rmse_cap: float = RMSE_CAP) -> int:
    if spec != "auto":
        return int(spec)
    n = next(iter(sets.values())).n
    choices = []
    for ts in sets.values():
        probe = train(ts, rmse_cap)
        m, _ = select_order(probe.eigenvalues, rmse_cap)
        choices.append(m)
    return min(max(choices), n - 1)


def train_phase(rows: Sequence[DatasetRow], phase: int, order=None,
                rmse_cap: float = RMSE_CAP) -> dict[str, PcaClassModel]:
    sets = training_sets(rows, phase)
    spec = DEFAULT_ORDERS[phase] if order is None else order
    m = resolve_order(sets, spec, rmse_cap)
    return {name: train(ts, rmse_cap, order=m, phase=phase) for name, ts in sets.items()}


def train_bundle(rows: Sequence[DatasetRow], phases=(1, 2, 3), orders: Mapping | None = None,
                 rmse_cap: float = RMSE_CAP, meta: dict | None = None) -> ModelBundle:
    soils = sorted({r.soil for r in rows})
    if len(soils) > 1:
        raise BundleError(f"dataset mixes soils {soils}; train one bundle per soil")
    orders = dict(orders or {})
    bundle = ModelBundle(meta=dict(meta or {}))
    used = set()
    for p in phases:
        bundle.phases[p] = train_phase(rows, p, orders.get(p), rmse_cap)
        used |= set(bundle.phases[p])
    bundle.provenance = sorted({(r.cls, r.snr_db, r.seed) for r in rows if r.cls in used})
    return bundle
