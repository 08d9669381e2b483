"""Per-class PCA models and the statistics used to score samples against them.

A class model keeps the training mean, the 1/K covariance, its eigenbasis and
the retained order ``m``. A sample is scored by the Mahalanobis norm of its
residual outside the retained subspace (the reconstruction error) and by
Hotelling's T² inside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.stats

RMSE_CAP = 0.10
REG_EPS = 1e-8
T2_CONFIDENCE = 0.95


class PcaError(ValueError):
    pass


class InsufficientDataError(PcaError):
    pass


class DegenerateModelError(PcaError):
    pass


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a small real symmetric matrix by cyclic Jacobi.

    Returns eigenvalues in descending order and eigenvectors as columns, each
    column signed so its largest-magnitude entry is positive.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, rtol=0, atol=1e-10 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix must be symmetric")
    a = (a + a.T) / 2
    v = np.eye(n)

    mask = ~np.eye(n, dtype=bool)

    def off(m):
        return float(np.sqrt(np.sum(m[mask] ** 2)))

    # rotations leave rounding residue of order eps * |A| in the off-diagonal,
    # so the relative target is floored there
    stop = max(tol * off(a), 4 * np.finfo(float).eps * float(np.linalg.norm(a)))
    for _ in range(max_sweeps):
        if off(a) <= stop:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * apq)
                if abs(theta) > 1e150:
                    t = 1 / (2 * theta)
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                a[p, q] = a[q, p] = 0.0
                v = v @ rot
    else:
        raise PcaError("Jacobi iteration did not converge")

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    for j in range(n):
        k = np.argmax(np.abs(v[:, j]))
        if v[k, j] < 0:
            v[:, j] = -v[:, j]
    return w, v


def rmse_curve(eigenvalues: Sequence[float]) -> np.ndarray:
    """Residual variance fraction for every order m = 0..n.

    ``out[m]`` is the sum of the eigenvalues beyond the first ``m`` divided by
    the total.
    """
    lam = np.sort(np.asarray(eigenvalues, dtype=float))[::-1]
    total = lam.sum()
    if total <= 0:
        raise DegenerateModelError("eigenvalues sum to zero")
    tail = np.concatenate([np.cumsum(lam[::-1])[::-1], [0.0]])
    return tail / total


def select_order(eigenvalues: Sequence[float], rmse_cap: float = RMSE_CAP) -> tuple[int, bool]:
    """Smallest m < n whose RMSE is below the cap, else (n, flagged)."""
    curve = rmse_curve(eigenvalues)
    n = len(curve) - 1
    for m in range(1, n):
        if curve[m] < rmse_cap:
            return m, False
    return n, True


def t2_threshold(K: int, m: int, confidence: float = T2_CONFIDENCE) -> float:
    """Upper control limit of Hotelling's T² for a new observation."""
    if not (isinstance(K, (int, np.integer)) and isinstance(m, (int, np.integer))):
        raise ValueError("K and m must be integers")
    if m < 1 or K <= m:
        raise ValueError(f"need K > m >= 1, got K={K}, m={m}")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    scale = m * (K - 1) * (K + 1) / (K * (K - m))
    return float(scale * scipy.stats.f.ppf(confidence, m, K - m))


def dispersion_stats(values: Sequence[float]) -> tuple[float, float, float]:
    """Population standard deviation, mean and index of dispersion σ²/μ."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("dispersion of an empty list")
    mu = float(x.mean())
    if mu == 0:
        raise ValueError("dispersion index undefined for zero mean")
    sigma = float(x.std())
    return sigma, mu, sigma * sigma / mu


@dataclass(frozen=True)
class TrainingSet:
    class_label: str
    vectors: np.ndarray
    provenance: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 2:
            raise ValueError("training vectors must form a K x n array")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "provenance", tuple(self.provenance))
        if self.provenance and len(self.provenance) != len(v):
            raise ValueError("provenance must have one entry per vector")

    @property
    def K(self) -> int:
        return self.vectors.shape[0]

    @property
    def n(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True, eq=False)
class PcaClassModel:
    class_label: str
    mean: np.ndarray
    covariance: np.ndarray
    inv_covariance: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    order: int
    rmse_at_m: float
    training_K: int
    flagged: bool = False
    phase: int | None = None
    t2_threshold: float = field(default=math.nan)

    @property
    def n(self) -> int:
        return len(self.mean)

    @property
    def transform(self) -> np.ndarray:
        """The n x m matrix of retained eigenvectors."""
        return self.eigenvectors[:, :self.order]

    def with_order(self, m: int) -> "PcaClassModel":
        return _finish(self.class_label, self.mean, self.covariance, self.inv_covariance,
                       self.eigenvalues, self.eigenvectors, m, self.training_K, self.phase)

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "phase": self.phase,
            "class_label": self.class_label,
            "n": self.n,
            "m": self.order,
            "psi": _num(self.mean),
            "U": _num(self.transform.T.ravel()),
            "eigenvectors": _num(self.eigenvectors.T.ravel()),
            "eigenvalues": _num(self.eigenvalues),
            "S": _num(self.covariance.ravel()),
            "S_inv": _num(self.inv_covariance.ravel()),
            "rmse_at_m": _num(self.rmse_at_m),
            "K": self.training_K,
            "t2_threshold": _num(self.t2_threshold),
            "flagged": self.flagged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaClassModel":
        if d.get("format_version") != 1:
            raise PcaError(f"unsupported model format_version {d.get('format_version')!r}")
        try:
            n, m = int(d["n"]), int(d["m"])
            vecs = np.array(d["eigenvectors"], dtype=float).reshape(n, n).T
            model = cls(
                class_label=str(d["class_label"]),
                mean=np.array(d["psi"], dtype=float).reshape(n),
                covariance=np.array(d["S"], dtype=float).reshape(n, n),
                inv_covariance=np.array(d["S_inv"], dtype=float).reshape(n, n),
                eigenvalues=np.array(d["eigenvalues"], dtype=float).reshape(n),
                eigenvectors=vecs,
                order=m,
                rmse_at_m=float(d["rmse_at_m"]),
                training_K=int(d["K"]),
                flagged=bool(d.get("flagged", False)),
                phase=d.get("phase"),
                t2_threshold=float(d["t2_threshold"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise PcaError(f"malformed class model: {exc}") from exc
        u = np.array(d["U"], dtype=float).reshape(m, n).T
        if not np.array_equal(u, model.transform):
            raise PcaError(f"class {model.class_label}: U disagrees with the eigenvectors")
        return model


def _num(x):
    # repr of a float round-trips exactly (17 significant digits when needed)
    if np.ndim(x) == 0:
        return float(x)
    return [float(v) for v in np.asarray(x).ravel()]


def _finish(label, mean, cov, inv, lam, vecs, m, K, phase) -> PcaClassModel:
    n = len(mean)
    if not 1 <= m <= n:
        raise ValueError(f"order must lie in 1..{n}, got {m}")
    curve = rmse_curve(lam)
    rmse = float(curve[m])
    thr = t2_threshold(K, m) if K > m else math.inf
    return PcaClassModel(label, mean, cov, inv, lam, vecs, m, rmse, K,
                         flagged=bool(rmse >= RMSE_CAP), phase=phase, t2_threshold=thr)


def train(data: TrainingSet | np.ndarray, rmse_cap: float = RMSE_CAP, order: int | None = None,
          reg_eps: float = REG_EPS, class_label: str = "", phase: int | None = None) -> PcaClassModel:
    """Fit one class model.

    With ``order=None`` the retained order is the smallest m < n whose RMSE is
    below ``rmse_cap``; if none qualifies the model keeps all n components
    and is flagged. A fixed ``order`` bypasses the search; the model is then
    flagged only if its RMSE misses the cap.
    """
    if isinstance(data, TrainingSet):
        x, class_label = data.vectors, data.class_label
    else:
        x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise ValueError("training vectors must form a K x n array")
    K, n = x.shape
    if K < n + 1:
        raise InsufficientDataError(f"class {class_label!r}: need at least {n + 1} vectors, got {K}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"class {class_label!r}: training vectors must be finite")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / K
    cov = (cov + cov.T) / 2
    if np.trace(cov) <= 0:
        raise DegenerateModelError(f"class {class_label!r}: all training vectors are identical")
    lam, vecs = jacobi_eigh(cov)
    lam = np.where((lam < 0) & (lam > -1e-10 * lam[0]), 0.0, lam)
    inv = np.linalg.inv(cov + reg_eps * np.trace(cov) / n * np.eye(n))
    inv = (inv + inv.T) / 2

    no_fit = False
    if order is None:
        order, no_fit = select_order(lam, rmse_cap)
    model = _finish(class_label, mean, cov, inv, lam, vecs, order, K, phase)
    if no_fit or model.rmse_at_m >= rmse_cap:
        object.__setattr__(model, "flagged", True)
    return model


@dataclass(frozen=True)
class ClassScore:
    class_label: str
    reconstruction_error: float
    t_squared: float
    t_squared_threshold: float

    @property
    def t2_exceeded(self) -> bool:
        return self.t_squared > self.t_squared_threshold


def score_many(model: PcaClassModel, samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruction errors and T² for a batch of samples (rows)."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[1] != model.n:
        raise ValueError(f"sample dimension {x.shape[1]} does not match model dimension {model.n}")
    d = x - model.mean
    u = model.transform
    y = d @ u
    r = d - y @ u.T
    eps = np.einsum("ki,ij,kj->k", r, model.inv_covariance, r)
    if model.order == model.n:
        eps = np.zeros(len(x))  # the retained basis spans everything
    lam = model.eigenvalues[:model.order]
    with np.errstate(divide="ignore", invalid="ignore"):
        t2 = np.where(lam > 0, y * y / lam, np.where(y == 0, 0.0, np.inf)).sum(axis=1)
    return np.maximum(eps, 0.0), t2


def score(model: PcaClassModel, sample) -> ClassScore:
    comps = getattr(sample, "components", sample)
    comps = np.asarray(comps, dtype=float)
    if comps.shape != (model.n,):
        raise ValueError(f"sample dimension {comps.shape} does not match model dimension {model.n}")
    eps, t2 = score_many(model, comps[None, :])
    return ClassScore(model.class_label, float(eps[0]), float(t2[0]), model.t2_threshold)
