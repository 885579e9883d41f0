"""Principal component analysis on top of a cyclic Jacobi eigensolver."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateError, DimensionError, InsufficientDataError, NumericError
from .indicators import FeatureMatrix

FORMAT = "arbr_drqn.pca"
VERSION = 1
MAX_SWEEPS = 100


def covariance(rows) -> np.ndarray:
    """Population covariance of the columns of ``rows``."""
    x = np.asarray(rows, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise InsufficientDataError("covariance needs at least 2 rows")
    xc = x - x.mean(axis=0)
    cov = (xc.T @ xc) / x.shape[0]
    return 0.5 * (cov + cov.T)


def eig_symmetric(m, tol: float = 1e-9, max_sweeps: int = MAX_SWEEPS):
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, vectors)`` with eigenvalues in descending order and
    the matching unit eigenvectors as the *columns* of ``vectors``. Equal
    eigenvalues keep their diagonal order.

    Sweeps stop once the off-diagonal Frobenius norm drops below
    ``tol * max(1, ||m||_F)``; one extra sweep is then applied, which the
    quadratic convergence turns into round-off-level residuals.
    """
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError("matrix has non-finite entries")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10:
        raise ContractError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    threshold = tol * max(1.0, float(np.linalg.norm(a)))

    off_mask = ~np.eye(n, dtype=bool)

    def off_norm() -> float:
        # summed directly; subtracting the diagonal from the full norm cancels badly
        return float(np.linalg.norm(a[off_mask]))

    polish = False
    for _ in range(max_sweeps):
        if polish:
            break
        if off_norm() < threshold:
            polish = True
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta  # theta^2 would overflow
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        if not polish and off_norm() >= threshold:
            raise NumericError(f"Jacobi did not converge in {max_sweeps} sweeps")

    eigenvalues = np.diag(a).copy()
    order = sorted(range(n), key=lambda i: (-eigenvalues[i], i))
    return eigenvalues[order], v[:, order]


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, d), one unit vector per row
    eigenvalues: np.ndarray  # (k,), descending, clamped at 0
    total_variance: float  # sum of all d eigenvalues
    d: int
    k: int

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "d": self.d,
            "k": self.k,
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "total_variance": self.total_variance,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PcaModel":
        if doc.get("format") != FORMAT or doc.get("version") != VERSION:
            raise ContractError(f"not a {FORMAT} v{VERSION} document")
        return cls(
            mean=np.array(doc["mean"], dtype=float),
            components=np.array(doc["components"], dtype=float).reshape(doc["k"], doc["d"]),
            eigenvalues=np.array(doc["eigenvalues"], dtype=float),
            total_variance=float(doc["total_variance"]),
            d=int(doc["d"]),
            k=int(doc["k"]),
        )


def _matrix(data) -> np.ndarray:
    if isinstance(data, FeatureMatrix):
        return data.values
    x = np.asarray(data, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def fit(data, k: int) -> PcaModel:
    """Fit the top-``k`` components of a FeatureMatrix (or plain row matrix).

    Each component is sign-normalised so its largest-magnitude entry is
    positive (first such entry on ties).
    """
    x = _matrix(data)
    d = x.shape[1]
    if not 1 <= k <= d:
        raise DimensionError(f"k={k} must be in 1..{d}")
    cov = covariance(x)
    lam, vecs = eig_symmetric(cov)
    lam = np.where(lam < 0, 0.0, lam)  # round-off negatives on rank-deficient data
    comps = vecs[:, :k].T.copy()
    for i in range(k):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return PcaModel(
        mean=x.mean(axis=0),
        components=comps,
        eigenvalues=lam[:k].copy(),
        total_variance=float(np.sum(lam)),
        d=d,
        k=k,
    )


def transform(model: PcaModel, rows) -> np.ndarray:
    x = _matrix(rows)
    if x.shape[1] != model.d:
        raise DimensionError(f"row width {x.shape[1]} != model dimension {model.d}")
    return (x - model.mean) @ model.components.T


def inverse_transform(model: PcaModel, projected) -> np.ndarray:
    return np.asarray(projected, dtype=float) @ model.components + model.mean


def explained_variance_ratio(model: PcaModel) -> np.ndarray:
    if not model.total_variance > 0:
        raise DegenerateError("total variance is zero")
    return model.eigenvalues / model.total_variance
