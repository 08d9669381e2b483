"""End-to-end evaluation of a model bundle on a labelled case dataset."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..detector import PHASE_CLASSES, DetectionReport, detect
from ..features import JOINT_SYMBOLS
from ..pca import dispersion_stats, score_many
from .bundle import ModelBundle
from .dataset import Case, DatasetError, DatasetRow, group_cases
from .suite import HEALTHY

MARGIN_BINS = (0.0, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.5, 1.0, float("inf"))


class HygieneError(ValueError):
    pass


def check_hygiene(bundle: ModelBundle, rows: Sequence[DatasetRow]) -> None:
    """Refuse test rows whose (class, SNR, seed) was used for training."""
    seen = set(bundle.provenance)
    train_seeds = {seed for _, _, seed in bundle.provenance}
    clash = [r.scenario_id for r in rows
             if (r.cls, r.snr_db, r.seed) in seen or r.seed in train_seeds]
    if clash:
        raise HygieneError(f"{len(clash)} test rows reuse training seeds, e.g. {clash[0]}")


def vocabulary(bundle: ModelBundle) -> list[str]:
    """Every decision the detector can reach with this bundle."""
    out = [HEALTHY, "both-broken"]
    out += [c.name for c in PHASE_CLASSES[2] if c.status == "ie"]
    out += [c.name for c in PHASE_CLASSES[3]]
    return out


@dataclass
class EvaluationSummary:
    labels: list[str]
    confusion: list[list[int]]
    n_cases: int
    success_rate: float
    margins: dict
    t2_outlier_rate: dict[str, float]
    dispersion: dict[str, dict[str, list[float]]]
    per_snr_success: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "labels": self.labels,
            "confusion": self.confusion,
            "n_cases": self.n_cases,
            "success_rate": self.success_rate,
            "per_snr_success": self.per_snr_success,
            "margins": self.margins,
            "t2_outlier_rate": self.t2_outlier_rate,
            "dispersion": self.dispersion,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=False)


def run_cases(bundle: ModelBundle, cases: Sequence[Case]) -> list[DetectionReport]:
    return [detect(bundle, c.measurements) for c in cases]


def _margin_stats(margins: np.ndarray) -> dict:
    counts, _ = np.histogram(margins, bins=np.array(MARGIN_BINS))
    finite = margins[np.isfinite(margins)]
    return {
        "bins": [b if np.isfinite(b) else "inf" for b in MARGIN_BINS],
        "counts": [int(c) for c in counts],
        "fraction_below_0.05": float(np.mean(margins < 0.05)) if len(margins) else float("nan"),
        "max": float(finite.max()) if len(finite) else float("nan"),
        "median": float(np.median(finite)) if len(finite) else float("nan"),
    }


def t2_outlier_rates(bundle: ModelBundle, cases: Sequence[Case]) -> dict[str, float]:
    """Fraction of each true class's samples whose T² exceeds its own model's limit."""
    rates = {}
    by_truth: dict[str, list[Case]] = {}
    for c in cases:
        by_truth.setdefault(c.truth, []).append(c)
    for truth, cs in by_truth.items():
        if truth == HEALTHY:
            exceed = []
            for t, key in ((1, "ind1"), (2, "ind2")):
                m = bundle.phases[1][f"{t}OK"]
                _, t2 = score_many(m, np.stack([c.measurements[key].components for c in cs]))
                exceed.append(t2 > m.t2_threshold)
            rates[truth] = float(np.mean(np.concatenate(exceed)))
            continue
        phase = 2 if truth.endswith("ie") else 3
        m = bundle.phases[phase].get(truth)
        if m is None:
            continue
        _, t2 = score_many(m, np.stack([c.measurements["joint"].components for c in cs]))
        rates[truth] = float(np.mean(t2 > m.t2_threshold))
    return rates


def dispersion_table(cases: Sequence[Case]) -> dict[str, dict[str, list[float]]]:
    """(σ, μ, D) of every joint-vector component, per true class."""
    table = {}
    by_truth: dict[str, list[Case]] = {}
    for c in cases:
        by_truth.setdefault(c.truth, []).append(c)
    for truth, cs in by_truth.items():
        x = np.stack([c.measurements["joint"].components for c in cs])
        table[truth] = {sym: list(dispersion_stats(x[:, k])) for k, sym in enumerate(JOINT_SYMBOLS)}
    return table


def evaluate(bundle: ModelBundle, rows: Sequence[DatasetRow], check: bool = True) -> EvaluationSummary:
    if check:
        check_hygiene(bundle, rows)
    cases = group_cases(rows)
    if not cases:
        raise DatasetError("no cases to evaluate")
    labels = vocabulary(bundle)
    unknown = sorted({c.truth for c in cases} - set(labels))
    if unknown:
        raise DatasetError(f"labels outside the detector vocabulary: {unknown}")
    reports = run_cases(bundle, cases)
    idx = {name: i for i, name in enumerate(labels)}
    conf = np.zeros((len(labels), len(labels)), dtype=int)
    for c, r in zip(cases, reports):
        conf[idx[c.truth], idx[r.final]] += 1
    hits = np.array([r.final == c.truth for c, r in zip(cases, reports)])
    margins = np.array([r.confidence_margin for r in reports if r.terminal_phase == 3])
    per_snr = {}
    for snr in sorted({c.snr_db for c in cases}):
        sel = np.array([c.snr_db == snr for c in cases])
        per_snr[repr(snr)] = float(hits[sel].mean())
    return EvaluationSummary(
        labels=labels,
        confusion=conf.tolist(),
        n_cases=len(cases),
        success_rate=float(hits.mean()),
        margins=_margin_stats(margins),
        t2_outlier_rate=t2_outlier_rates(bundle, cases),
        dispersion=dispersion_table(cases),
        per_snr_success=per_snr,
    )

