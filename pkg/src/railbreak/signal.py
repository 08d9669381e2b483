"""Kasami spreading codes, noisy chip-stream measurement and correlation.

Each measured rail current becomes one chip-stream: the current magnitude
times the ±1 code plus white Gaussian noise at a per-stream SNR. Correlating
a stream with the code over one period recovers ``period * magnitude``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureVector, InjectionMode, parse_symbol
from .netmodel import CONDUCTORS, SectionModel, solve_currents

DEFAULT_DEGREE = 14

# Feedback taps of primitive polynomials over GF(2), by degree.
# x^n + ... + 1 is written as the exponents below n that carry a 1.
PRIMITIVE_TAPS = {
    4: (1, 0),
    6: (1, 0),
    8: (4, 3, 2, 0),
    10: (3, 0),
    12: (6, 4, 1, 0),
    14: (10, 6, 1, 0),
    16: (12, 3, 1, 0),
}

# Receiver-to-emitter variance ratio of a healthy class: the receiver-side
# eigenvalues sum to 1249247.91 and the emitter-side ones to 67755.32.
REFERENCE_RECEIVER_RATIO = 1249247.91 / 67755.32


@dataclass(frozen=True, eq=False)
class KasamiCode:
    degree: int
    family_index: int
    chips: np.ndarray

    def __post_init__(self):
        chips = np.asarray(self.chips, dtype=np.int8)
        chips.setflags(write=False)
        object.__setattr__(self, "chips", chips)

    @property
    def period(self) -> int:
        return len(self.chips)

    def __eq__(self, other):
        return (isinstance(other, KasamiCode) and self.degree == other.degree
                and self.family_index == other.family_index
                and np.array_equal(self.chips, other.chips))

    def __hash__(self):
        return hash((self.degree, self.family_index))


def m_sequence(degree: int) -> np.ndarray:
    """One period of the maximal-length LFSR sequence as 0/1 bits."""
    if degree not in PRIMITIVE_TAPS:
        raise ValueError(f"no primitive polynomial tabulated for degree {degree}")
    taps = PRIMITIVE_TAPS[degree]
    period = (1 << degree) - 1
    # recurrence a[k+n] = sum over taps j of a[k+j]
    bits = np.zeros(period + degree, dtype=np.uint8)
    bits[degree - 1] = 1
    for k in range(period):
        s = 0
        for j in taps:
            s ^= bits[k + j]
        bits[k + degree] = s
    return bits[:period]


def kasami_small_set(degree: int) -> list[KasamiCode]:
    """The small Kasami set of ``2**(degree/2)`` codes with period ``2**degree - 1``.

    Member 0 is the m-sequence itself; member ``k`` is the m-sequence XOR the
    decimated sequence shifted by ``k - 1``.
    """
    if not isinstance(degree, (int, np.integer)) or degree % 2:
        raise ValueError(f"Kasami degree must be an even integer, got {degree!r}")
    if not 4 <= degree <= 16:
        raise ValueError(f"Kasami degree must be within 4..16, got {degree}")
    u = m_sequence(degree)
    period = len(u)
    q = (1 << (degree // 2)) + 1
    # decimating by q yields either a shorter m-sequence or all zeros,
    # depending on the phase; take the first phase that is not all zeros
    idx = np.arange(period) * q
    w = next(u[(idx + s) % period] for s in range(period) if u[(idx + s) % period].any())
    size = 1 << (degree // 2)
    seqs = [u] + [u ^ np.roll(w, -k) for k in range(size - 1)]
    return [KasamiCode(degree, i, 1 - 2 * s.astype(np.int8)) for i, s in enumerate(seqs)]


def periodic_correlation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Periodic correlation of ``a`` with every cyclic shift of ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("sequences must have equal length")
    return np.array([np.dot(a, np.roll(b, -s)) for s in range(len(a))])


@dataclass(frozen=True)
class FrontEnd:
    """Gains applied to the emitter-side and receiver-side current sensors."""

    emitter_gain: float = 1.0
    receiver_gain: float = 1.0

    def __post_init__(self):
        if not (self.emitter_gain > 0 and self.receiver_gain > 0):
            raise ValueError("front-end gains must be positive")


def calibrate_receiver_gain(model: SectionModel,
                            target_ratio: float = REFERENCE_RECEIVER_RATIO) -> FrontEnd:
    """Level-balance the receiver sensors on the healthy cell.

    The receiver gain is set so that, under joint injection with no breakage,
    the receiver-side power sum is ``target_ratio`` times the emitter-side sum.
    With per-stream noise this fixes the receiver share of the class variance.
    """
    healthy = model.with_breakages(())
    cur = solve_currents(healthy, InjectionMode.joint())
    pe = float(np.sum(np.abs(cur.emitter) ** 2))
    pr = float(np.sum(np.abs(cur.receiver) ** 2))
    if pe == 0 or pr == 0:
        raise ValueError("cannot calibrate: healthy cell carries no current")
    return FrontEnd(1.0, math.sqrt(target_ratio * pe / pr))


def measured_magnitudes(model: SectionModel, injection: InjectionMode,
                        front_end: FrontEnd = FrontEnd()) -> np.ndarray:
    """Sensor-level current magnitudes in feature order for ``injection``."""
    cur = solve_currents(model, injection)
    out = []
    for sym in injection.symbols:
        cond, node = parse_symbol(sym)
        k = CONDUCTORS.index(cond)
        if node == "e":
            out.append(front_end.emitter_gain * abs(cur.emitter[k]))
        else:
            out.append(front_end.receiver_gain * abs(cur.receiver[k]))
    return np.array(out)


@dataclass(frozen=True)
class RawMeasurement:
    """Noisy chip-streams, one row per measured current in feature order."""

    mode: InjectionMode
    streams: np.ndarray
    snr_db: float
    seed: int
    magnitudes: np.ndarray = field(repr=False)

    @property
    def period(self) -> int:
        return self.streams.shape[1]


def noise_sigma(amplitude, snr_db: float):
    """Per-chip noise deviation for a ±``amplitude`` stream at ``snr_db``."""
    if math.isinf(snr_db) and snr_db > 0:
        return np.zeros_like(np.asarray(amplitude, dtype=float))
    return np.asarray(amplitude, dtype=float) * 10.0 ** (-snr_db / 20.0)


def modulate(magnitudes: np.ndarray, code: KasamiCode, snr_db: float,
             rng: np.random.Generator, interference: np.ndarray | None = None) -> np.ndarray:
    """Chip-streams for known magnitudes; ``interference`` is added before noise."""
    mags = np.asarray(magnitudes, dtype=float)
    streams = mags[:, None] * code.chips[None, :]
    if interference is not None:
        streams = streams + interference
    sigma = noise_sigma(mags, snr_db)
    if np.any(sigma > 0):
        streams = streams + sigma[:, None] * rng.standard_normal(streams.shape)
    return streams


def transmit_measure(model: SectionModel, injection: InjectionMode, code: KasamiCode,
                     snr_db: float, seed: int, front_end: FrontEnd = FrontEnd(),
                     interferer: tuple[SectionModel, KasamiCode] | None = None) -> RawMeasurement:
    """Simulate one coded measurement of every current of ``injection``.

    ``interferer`` optionally adds a simultaneous emission of another cell
    with its own code, seen through the same sensors. SNR is set relative to
    the wanted signal only.
    """
    if math.isnan(snr_db):
        raise ValueError("snr_db must not be NaN")
    mags = measured_magnitudes(model, injection, front_end)
    extra = None
    if interferer is not None:
        other_model, other_code = interferer
        if other_code.period != code.period:
            raise ValueError("interfering code must have the same period")
        other = measured_magnitudes(other_model, injection, front_end)
        extra = other[:, None] * other_code.chips[None, :]
    rng = np.random.default_rng(seed)
    streams = modulate(mags, code, snr_db, rng, extra)
    return RawMeasurement(injection, streams, snr_db, int(seed), mags)


def correlate(raw: RawMeasurement, code: KasamiCode) -> FeatureVector:
    """Zero-lag correlation magnitude of every stream with ``code``."""
    if raw.period != code.period:
        raise ValueError(f"stream length {raw.period} does not match code period {code.period}")
    values = np.abs(raw.streams @ code.chips.astype(float))
    return FeatureVector(raw.mode, values)
