"""Injection modes and feature-vector assembly.

Joint injection measures all eight rail currents::

    [I1e(e), I1i(e), I2i(e), I2e(e), I1e(r), I1i(r), I2i(r), I2e(r)]

Independent injection on track ``t`` yields four::

    [Ite(e), Iti(e), Iti(r), Ite(r)]

Components are non-negative correlation magnitudes; no scaling or centering
happens here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

JOINT_SYMBOLS = ("I1e(e)", "I1i(e)", "I2i(e)", "I2e(e)", "I1e(r)", "I1i(r)", "I2i(r)", "I2e(r)")


class FeatureAssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class InjectionMode:
    """Independent injection on one track (4 features) or joint injection (8)."""

    kind: str
    track: int | None = None

    def __post_init__(self):
        if self.kind == "independent":
            if self.track not in (1, 2):
                raise ValueError(f"independent injection needs track 1 or 2, got {self.track!r}")
        elif self.kind == "joint":
            if self.track is not None:
                raise ValueError("joint injection takes no track")
        else:
            raise ValueError(f"unknown injection kind {self.kind!r}")

    @classmethod
    def independent(cls, track: int) -> "InjectionMode":
        return cls("independent", track)

    @classmethod
    def joint(cls) -> "InjectionMode":
        return cls("joint")

    @property
    def n_features(self) -> int:
        return 8 if self.kind == "joint" else 4

    @property
    def symbols(self) -> tuple[str, ...]:
        if self.kind == "joint":
            return JOINT_SYMBOLS
        return independent_symbols(self.track)

    def __str__(self):
        return "joint" if self.kind == "joint" else f"independent-{self.track}"


def independent_symbols(track: int) -> tuple[str, ...]:
    if track not in (1, 2):
        raise ValueError(f"track must be 1 or 2, got {track!r}")
    t = track
    return (f"I{t}e(e)", f"I{t}i(e)", f"I{t}i(r)", f"I{t}e(r)")


def parse_symbol(symbol: str) -> tuple[str, str]:
    """Split ``"I1e(r)"`` into conductor ``"1e"`` and node ``"r"``."""
    if len(symbol) != 6 or symbol[0] != "I" or symbol[3] != "(" or symbol[5] != ")":
        raise ValueError(f"bad current symbol {symbol!r}")
    return symbol[1:3], symbol[4]


@dataclass(frozen=True)
class FeatureVector:
    mode: InjectionMode
    components: np.ndarray

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        if comps.shape != (self.mode.n_features,):
            raise ValueError(
                f"{self.mode} injection needs {self.mode.n_features} components, got shape {comps.shape}")
        if not np.all(np.isfinite(comps)):
            raise ValueError("feature components must be finite")
        if np.any(comps < 0):
            raise ValueError("feature components are magnitudes and must be >= 0")
        comps.setflags(write=False)
        object.__setattr__(self, "components", comps)

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.mode == other.mode and np.array_equal(self.components, other.components)

    __hash__ = None

    def __len__(self):
        return len(self.components)

    def __getitem__(self, i):
        return self.components[i]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.mode.symbols, map(float, self.components)))


def _assemble(mode: InjectionMode, values: Mapping[str, float]) -> FeatureVector:
    out = []
    for k, sym in enumerate(mode.symbols):
        if sym not in values or values[sym] is None:
            raise FeatureAssemblyError(f"missing component {k + 1} ({sym})")
        out.append(float(values[sym]))
    return FeatureVector(mode, np.array(out))


def assemble_joint(values: Mapping[str, float]) -> FeatureVector:
    """8-component vector from correlation magnitudes keyed by current symbol."""
    return _assemble(InjectionMode.joint(), values)


def assemble_independent(track: int, values: Mapping[str, float]) -> FeatureVector:
    return _assemble(InjectionMode.independent(track), values)


def symbol_map_json() -> str:
    """Index-to-symbol map for both injection modes, 1-based like the CSV columns."""
    doc = {
        "joint": {f"f{k + 1}": s for k, s in enumerate(JOINT_SYMBOLS)},
        "independent-1": {f"f{k + 1}": s for k, s in enumerate(independent_symbols(1))},
        "independent-2": {f"f{k + 1}": s for k, s in enumerate(independent_symbols(2))},
    }
    return json.dumps(doc, indent=2)
