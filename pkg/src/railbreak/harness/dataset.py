"""Dataset rows and their CSV form.

Two kinds of files share one layout. A training dataset has one row per
(class, SNR, trial) holding that class's feature vector. A case dataset
describes end-to-end detections: each case is three rows (``ind1``, ``ind2``,
``joint``) whose ``scenario_id`` differs only in that suffix, and whose
``class`` is the expected final decision.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..detector import label
from ..features import FeatureVector, InjectionMode
from .suite import (HEALTHY, MEASUREMENT_KEYS, ScenarioSuite, Simulator, class_configs,
                    class_mode, derive_seed, measurement_seed, snr_label)

COLUMNS = ["scenario_id", "class", "phase", "soil", "snr_db", "seed"] + [f"f{k}" for k in range(1, 9)]


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRow:
    scenario_id: str
    cls: str
    phase: int
    soil: str
    snr_db: float
    seed: int
    features: np.ndarray

    @property
    def n(self) -> int:
        return len(self.features)

    def to_csv_fields(self) -> list[str]:
        feats = [repr(float(v)) for v in self.features] + [""] * (8 - self.n)
        return [self.scenario_id, self.cls, str(self.phase), self.soil,
                snr_label(self.snr_db), str(self.seed)] + feats

    @property
    def case_key(self) -> tuple[str, str]:
        """(case id, measurement key) for rows of a case dataset."""
        base, _, key = self.scenario_id.rpartition("#")
        if key not in MEASUREMENT_KEYS:
            raise DatasetError(f"row {self.scenario_id!r} is not part of a detection case")
        return base, key


def write_rows(rows: Iterable[DatasetRow], out) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow(r.to_csv_fields())
    Path(out).write_text(buf.getvalue())


def read_rows(path) -> list[DatasetRow]:
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != COLUMNS:
        raise DatasetError(f"{path}: unexpected header {header!r}")
    rows = []
    for line_no, f in enumerate(reader, start=2):
        try:
            feats = [float(v) for v in f[6:] if v != ""]
            rows.append(DatasetRow(f[0], f[1], int(f[2]), f[3], float(f[4]), int(f[5]),
                                   np.array(feats)))
        except (ValueError, IndexError) as exc:
            raise DatasetError(f"{path}:{line_no}: {exc}") from exc
    return rows


# training datasets -------------------------------------------------------------

def simulate_training(suite: ScenarioSuite, simulators: dict[str, Simulator] | None = None) -> list[DatasetRow]:
    """One row per (soil, class, SNR, trial), in that canonical order."""
    rows = []
    for soil in suite.soils:
        sim = (simulators or {}).get(soil) or Simulator(soil, suite.base, suite.kasami_degree)
        for name in suite.classes:
            if name == HEALTHY:
                raise DatasetError("the healthy cell is not a trainable class; use a phase-1 OK class")
            cls = label(name)
            mode = class_mode(cls)
            configs = class_configs(cls)
            ci = suite.class_index(name)
            for si, snr in enumerate(suite.snr_list_db):
                for k in range(suite.trials_per_snr):
                    seed = derive_seed(suite.seed_base, ci, si, k)
                    x = sim.measure(configs[k % len(configs)], mode, snr, seed)
                    sid = f"{soil}:{name}:{si}:{k}"
                    rows.append(DatasetRow(sid, name, cls.phase, soil, snr, seed, x.components))
    return rows


# case datasets -----------------------------------------------------------------

def expected_outcome(breakages: frozenset) -> str:
    """The decision a correct detector reaches for a breakage set."""
    tracks = {b.track for b in breakages}
    if not breakages:
        return HEALTHY
    if len(tracks) == 2:
        return "both-broken"
    (t,) = tracks
    if len(breakages) == 2:
        return f"{t}ie"
    (b,) = breakages
    return b.label


def case_configs(name: str) -> list[frozenset]:
    if name in (HEALTHY, "both-broken"):
        if name == HEALTHY:
            return [frozenset()]
        raise DatasetError("both-broken cases are not generated")
    cls = label(name)
    if cls.phase == 1:
        raise DatasetError(f"phase-1 class {name} is not a detection outcome")
    return class_configs(cls)


def simulate_cases(suite: ScenarioSuite, simulators: dict[str, Simulator] | None = None) -> list[DatasetRow]:
    """Three rows (two independent vectors and one joint) per case."""
    rows = []
    for soil in suite.soils:
        sim = (simulators or {}).get(soil) or Simulator(soil, suite.base, suite.kasami_degree)
        for name in suite.classes:
            configs = case_configs(name)
            ci = suite.class_index(name)
            for si, snr in enumerate(suite.snr_list_db):
                for k in range(suite.trials_per_snr):
                    case_seed = derive_seed(suite.seed_base, ci, si, k)
                    brk = configs[k % len(configs)]
                    truth = expected_outcome(brk)
                    meas = sim.measure_case(brk, snr, case_seed)
                    for key in MEASUREMENT_KEYS:
                        sid = f"{soil}:{name}:{si}:{k}#{key}"
                        phase = 1 if key != "joint" else (label(truth).phase if truth != HEALTHY else 1)
                        rows.append(DatasetRow(sid, truth, phase, soil, snr,
                                               measurement_seed(case_seed, key), meas[key].components))
    return rows


@dataclass
class Case:
    case_id: str
    truth: str
    soil: str
    snr_db: float
    measurements: dict[str, FeatureVector]
    seeds: dict[str, int]


def group_cases(rows: Sequence[DatasetRow]) -> list[Case]:
    modes = {"ind1": InjectionMode.independent(1), "ind2": InjectionMode.independent(2),
             "joint": InjectionMode.joint()}
    parts: dict[str, dict[str, DatasetRow]] = {}
    order = []
    for r in rows:
        base, key = r.case_key
        if base not in parts:
            parts[base] = {}
            order.append(base)
        if key in parts[base]:
            raise DatasetError(f"case {base!r} has two {key} rows")
        parts[base][key] = r
    cases = []
    for base in order:
        p = parts[base]
        missing = [k for k in MEASUREMENT_KEYS if k not in p]
        if missing:
            raise DatasetError(f"case {base!r} lacks {', '.join(missing)}")
        truths = {r.cls for r in p.values()}
        if len(truths) != 1:
            raise DatasetError(f"case {base!r} rows disagree on the class")
        first = p["joint"]
        try:
            meas = {k: FeatureVector(modes[k], p[k].features) for k in MEASUREMENT_KEYS}
        except ValueError as exc:
            raise DatasetError(f"case {base!r}: {exc}") from exc
        cases.append(Case(base, first.cls, first.soil, first.snr_db, meas,
                          {k: p[k].seed for k in MEASUREMENT_KEYS}))
    return cases


def is_case_dataset(rows: Sequence[DatasetRow]) -> bool:
    return bool(rows) and all("#" in r.scenario_id for r in rows)

