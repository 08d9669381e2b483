"""Three-phase broken-rail detection over per-class PCA scores.

Phase 1 scores each track's independent-injection vector against its OK and
BR classes. Only when exactly one track is broken does phase 2 decide the
rail (internal, external or both) from the joint-injection vector. A single
broken rail then goes to phase 3, which scores all twelve breakage zones.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .features import FeatureVector, InjectionMode
from .pca import ClassScore, PcaClassModel, score

log = logging.getLogger(__name__)

HIGH_CONFIDENCE_MARGIN = 0.05

ZONE_NAMES = {1: "ne", 2: "in", 3: "nr"}
ZONE_TEXT = {1: "close to the emitting node (2 km)", 2: "intermediate area (4 km)",
             3: "close to the receiving node (6 km)"}
RAIL_TEXT = {"i": "internal rail", "e": "external rail", "ie": "both rails"}


class ConfigurationError(ValueError):
    pass


class PhaseError(RuntimeError):
    def __init__(self, phase: int, cause: Exception):
        self.phase = phase
        self.cause = cause
        super().__init__(f"phase {phase}: {cause}")


@dataclass(frozen=True)
class ClassLabel:
    """One class of one detection phase.

    ``status`` is "OK"/"BR" in phase 1 and the rail ("i", "e", "ie") in
    phases 2 and 3; ``zone`` (1..3) is set only in phase 3.
    """

    phase: int
    track: int
    status: str
    zone: int | None = None

    def __post_init__(self):
        if self.phase not in (1, 2, 3) or self.track not in (1, 2):
            raise ValueError(f"bad class label {self!r}")
        allowed = {1: ("OK", "BR"), 2: ("i", "e", "ie"), 3: ("i", "e")}[self.phase]
        if self.status not in allowed:
            raise ValueError(f"phase {self.phase} status must be one of {allowed}, got {self.status!r}")
        if (self.phase == 3) != (self.zone in (1, 2, 3)):
            raise ValueError("zone is required in phase 3 and forbidden elsewhere")

    @property
    def name(self) -> str:
        if self.phase == 1:
            return f"{self.track}{self.status}"
        if self.phase == 2:
            return f"{self.track}{self.status}"
        return f"R{self.track}{self.status}{self.zone}/4"

    @property
    def rail(self) -> str | None:
        return None if self.phase == 1 else self.status

    @property
    def description(self) -> str:
        if self.phase == 1:
            return f"track {self.track} is {'not broken' if self.status == 'OK' else 'broken'}"
        text = f"track {self.track}, {RAIL_TEXT[self.status]}"
        if self.phase == 3:
            text += f", {ZONE_TEXT[self.zone]}"
        return text

    def __str__(self):
        return self.name


PHASE1_CLASSES = tuple(ClassLabel(1, t, s) for t in (1, 2) for s in ("OK", "BR"))
PHASE2_CLASSES = tuple(ClassLabel(2, t, r) for t in (1, 2) for r in ("i", "e", "ie"))
PHASE3_CLASSES = tuple(
    ClassLabel(3, t, r, z) for z in (1, 2, 3) for t, r in ((1, "e"), (1, "i"), (2, "i"), (2, "e")))
PHASE_CLASSES = {1: PHASE1_CLASSES, 2: PHASE2_CLASSES, 3: PHASE3_CLASSES}
ALL_CLASSES = PHASE1_CLASSES + PHASE2_CLASSES + PHASE3_CLASSES
LABELS = {c.name: c for c in ALL_CLASSES}


def label(name: str) -> ClassLabel:
    try:
        return LABELS[name.replace(" ", "")]
    except KeyError:
        raise ValueError(f"unknown class {name!r}") from None


class Selection(NamedTuple):
    winner: str
    margin: float
    tie: bool


def select_class(scores: Sequence[ClassScore]) -> Selection:
    """Minimum reconstruction error wins; margin is best over runner-up.

    Scores are taken in the order given, so on an exact tie the first listed
    class wins and ``tie`` is set.
    """
    if len(scores) < 2:
        raise ValueError("selection needs at least two class scores")
    errs = np.array([s.reconstruction_error for s in scores], dtype=float)
    best = int(np.argmin(errs))
    losers = np.delete(errs, best)
    runner_up = losers.min()
    tie = bool(runner_up == errs[best])
    if tie:
        log.info("tie between classes at error %g; keeping %s", errs[best], scores[best].class_label)
    if runner_up > 0:
        margin = float(errs[best] / runner_up)
    else:
        margin = 1.0 if tie else float("inf")
    return Selection(scores[best].class_label, margin, tie)


def _ordered(scores: Sequence[ClassScore], phase: int) -> list[ClassScore]:
    """Scores sorted into the phase's enumeration order."""
    rank = {c.name: i for i, c in enumerate(PHASE_CLASSES[phase])}
    try:
        return sorted(scores, key=lambda s: rank[s.class_label])
    except KeyError as exc:
        raise ConfigurationError(f"class {exc.args[0]!r} does not belong to phase {phase}") from None


def _require(scores: Sequence[ClassScore], names: Sequence[str], phase: int) -> dict[str, ClassScore]:
    by_name = {s.class_label: s for s in scores}
    missing = [n for n in names if n not in by_name]
    if missing:
        raise ConfigurationError(f"phase {phase}: missing scores for {', '.join(missing)}")
    return by_name


# decisions on precomputed scores ---------------------------------------------

@dataclass
class TrackDecision:
    track: int
    scores: list[ClassScore]
    broken: bool
    margin: float


@dataclass
class Phase1Result:
    tracks: list[TrackDecision]
    outcome: str

    @property
    def broken_track(self) -> int | None:
        broken = [d.track for d in self.tracks if d.broken]
        return broken[0] if len(broken) == 1 else None

    @property
    def proceeds(self) -> bool:
        return self.broken_track is not None


@dataclass
class PhaseResult:
    phase: int
    scores: list[ClassScore]
    winner: str
    margin: float
    tie: bool
    considered: list[str] = field(default_factory=list)


def decide_phase1(scores: Sequence[ClassScore]) -> Phase1Result:
    by_name = _require(scores, [c.name for c in PHASE1_CLASSES], 1)
    tracks = []
    for t in (1, 2):
        pair = [by_name[f"{t}OK"], by_name[f"{t}BR"]]
        sel = select_class(pair)
        tracks.append(TrackDecision(t, pair, sel.winner == f"{t}BR", sel.margin))
    broken = [d.track for d in tracks if d.broken]
    if not broken:
        outcome = "no-breakage"
    elif len(broken) == 2:
        outcome = "both-broken"
    else:
        outcome = f"track-{broken[0]}-broken"
    return Phase1Result(tracks, outcome)


def decide_phase2(scores: Sequence[ClassScore], broken_track: int) -> PhaseResult:
    """Rail decision among the broken track's three classes only."""
    if broken_track not in (1, 2):
        raise ValueError(f"broken_track must be 1 or 2, got {broken_track!r}")
    ordered = _ordered(scores, 2)
    _require(ordered, [c.name for c in PHASE2_CLASSES], 2)
    own = [s for s in ordered if label(s.class_label).track == broken_track]
    sel = select_class(own)
    return PhaseResult(2, ordered, sel.winner, sel.margin, sel.tie, [s.class_label for s in own])


def decide_phase3(scores: Sequence[ClassScore]) -> PhaseResult:
    ordered = _ordered(scores, 3)
    _require(ordered, [c.name for c in PHASE3_CLASSES], 3)
    sel = select_class(ordered)
    return PhaseResult(3, ordered, sel.winner, sel.margin, sel.tie, [s.class_label for s in ordered])


# decisions on feature vectors ------------------------------------------------

def _score_all(models: Mapping[str, PcaClassModel], phase: int, x: FeatureVector) -> list[ClassScore]:
    out = []
    for c in PHASE_CLASSES[phase]:
        if c.name not in models:
            raise ConfigurationError(f"phase {phase}: no model for class {c.name}")
        out.append(score(models[c.name], x))
    return out


def _check_mode(x: FeatureVector, mode: InjectionMode, what: str):
    if getattr(x, "mode", None) != mode:
        raise ValueError(f"{what} must be a {mode} feature vector")


def run_phase1(models: Mapping[str, PcaClassModel], x1: FeatureVector, x2: FeatureVector) -> Phase1Result:
    _check_mode(x1, InjectionMode.independent(1), "track-1 measurement")
    _check_mode(x2, InjectionMode.independent(2), "track-2 measurement")
    for c in PHASE1_CLASSES:
        if c.name not in models:
            raise ConfigurationError(f"phase 1: no model for class {c.name}")
    scores = [score(models[c.name], x1 if c.track == 1 else x2) for c in PHASE1_CLASSES]
    return decide_phase1(scores)


def run_phase2(models: Mapping[str, PcaClassModel], x: FeatureVector, broken_track: int) -> PhaseResult:
    _check_mode(x, InjectionMode.joint(), "phase-2 measurement")
    return decide_phase2(_score_all(models, 2, x), broken_track)


def run_phase3(models: Mapping[str, PcaClassModel], x: FeatureVector,
               prior: tuple[int, str]) -> tuple[PhaseResult, bool]:
    """Zone decision over all twelve classes plus agreement with ``prior``."""
    _check_mode(x, InjectionMode.joint(), "phase-3 measurement")
    result = decide_phase3(_score_all(models, 3, x))
    win = label(result.winner)
    return result, (win.track, win.status) == tuple(prior)


# full procedure --------------------------------------------------------------

@dataclass
class DetectionReport:
    phase1: Phase1Result
    phase2: PhaseResult | None
    phase3: PhaseResult | None
    final: str
    terminal_phase: int
    confidence_margin: float
    t2_flags: list[str]
    consistency: bool | None

    @property
    def breakage(self) -> bool:
        return self.final != "no-breakage"

    @property
    def high_confidence(self) -> bool:
        return self.confidence_margin < HIGH_CONFIDENCE_MARGIN

    def to_dict(self) -> dict:
        def sc(s: ClassScore):
            return {"class": s.class_label, "error": s.reconstruction_error,
                    "t2": s.t_squared, "t2_threshold": s.t_squared_threshold,
                    "t2_exceeded": s.t2_exceeded}

        out = {
            "phase1": {
                "outcome": self.phase1.outcome,
                "tracks": [{"track": d.track, "broken": d.broken, "margin": d.margin,
                            "scores": [sc(s) for s in d.scores]} for d in self.phase1.tracks],
            },
            "phase2": None,
            "phase3": None,
            "final": self.final,
            "terminal_phase": self.terminal_phase,
            "confidence_margin": self.confidence_margin,
            "high_confidence": self.high_confidence,
            "t2_flags": list(self.t2_flags),
            "consistency": self.consistency,
        }
        for key, res in (("phase2", self.phase2), ("phase3", self.phase3)):
            if res is not None:
                out[key] = {"decision": res.winner, "margin": res.margin, "tie": res.tie,
                            "considered": res.considered, "scores": [sc(s) for s in res.scores]}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def render_text(self) -> str:
        lines = []

        def table(title, scores, mark):
            lines.append(title)
            lines.append(f"  {'class':<8} {'error':>14} {'T2':>12} {'T2 limit':>10}")
            for s in scores:
                flag = " *" if s.class_label in mark else ""
                t2 = "!" if s.t2_exceeded else ""
                lines.append(f"  {s.class_label:<8} {s.reconstruction_error:>14.2f} "
                             f"{s.t_squared:>12.2f} {s.t_squared_threshold:>10.2f}{t2}{flag}")

        winners = set()
        for d in self.phase1.tracks:
            winners.add(f"{d.track}{'BR' if d.broken else 'OK'}")
        table("Phase 1 (independent injection)",
              [s for d in self.phase1.tracks for s in d.scores], winners)
        lines.append(f"  outcome: {self.phase1.outcome}")
        if self.phase2 is not None:
            table("Phase 2 (joint injection)", self.phase2.scores, {self.phase2.winner})
            lines.append(f"  decision: {self.phase2.winner} ({label(self.phase2.winner).description})")
        if self.phase3 is not None:
            table("Phase 3 (joint injection)", self.phase3.scores, {self.phase3.winner})
            lines.append(f"  decision: {self.phase3.winner} ({label(self.phase3.winner).description})")
        lines.append(f"Final: {self.final} (phase {self.terminal_phase}), "
                     f"margin {self.confidence_margin:.3g}"
                     f"{'' if self.high_confidence else ' LOW CONFIDENCE'}")
        if self.consistency is False:
            lines.append("Warning: phase-3 winner disagrees with the phase-1/2 track and rail")
        if self.t2_flags:
            lines.append("T2 above limit for: " + ", ".join(self.t2_flags))
        return "\n".join(lines)


def _phase_models(bundle, phase: int) -> Mapping[str, PcaClassModel]:
    phases = getattr(bundle, "phases", bundle)
    try:
        return phases[phase]
    except KeyError:
        raise ConfigurationError(f"bundle has no phase-{phase} models") from None


def detect(bundle, measurements: Mapping[str, FeatureVector]) -> DetectionReport:
    """Run the phases in order, stopping at the first terminal outcome.

    ``measurements`` holds the keys ``"ind1"``, ``"ind2"`` and ``"joint"``;
    ``bundle`` maps phase number to {class name: model} or has such a
    ``phases`` attribute.
    """
    for key in ("ind1", "ind2", "joint"):
        if key not in measurements:
            raise ConfigurationError(f"missing measurement {key!r}")
    try:
        p1 = run_phase1(_phase_models(bundle, 1), measurements["ind1"], measurements["ind2"])
    except Exception as exc:
        raise PhaseError(1, exc) from exc

    flags = []
    for d in p1.tracks:
        win = d.scores[1] if d.broken else d.scores[0]
        if win.t2_exceeded:
            flags.append(win.class_label)

    if not p1.proceeds:
        final = "no-breakage" if p1.outcome == "no-breakage" else p1.outcome
        margin = max(d.margin for d in p1.tracks)
        return DetectionReport(p1, None, None, final, 1, margin, flags, None)

    track = p1.broken_track
    try:
        p2 = run_phase2(_phase_models(bundle, 2), measurements["joint"], track)
    except Exception as exc:
        raise PhaseError(2, exc) from exc
    win2 = next(s for s in p2.scores if s.class_label == p2.winner)
    if win2.t2_exceeded:
        flags.append(win2.class_label)
    if p2.winner.endswith("ie"):
        return DetectionReport(p1, p2, None, p2.winner, 2, p2.margin, flags, None)

    try:
        p3, consistent = run_phase3(_phase_models(bundle, 3), measurements["joint"],
                                    (track, label(p2.winner).status))
    except Exception as exc:
        raise PhaseError(3, exc) from exc
    win3 = next(s for s in p3.scores if s.class_label == p3.winner)
    if win3.t2_exceeded:
        flags.append(win3.class_label)
    return DetectionReport(p1, p2, p3, p3.winner, 3, p3.margin, flags, consistent)
