"""Estimators that confront simulated ensembles with the urn's limit theorems."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateVariance,
    DimensionMismatch,
    EmptySample,
    GammaZero,
    NotAStar,
    TooFewReplicas,
    UnsupportedRegime,
    ValidationError,
)
from .matrix_core import LimitReport, ModelSpec, Regime, StarInfo, detect_star
from .urn_process import TrajectoryRecord


@dataclass(eq=False)
class EnsembleSample:
    """One statistic (rows = replicas, columns = colours) at time ``n``."""

    n: int
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if not np.all(np.isfinite(self.vectors)):
            raise ValidationError("ensemble sample has non-finite entries")

    @property
    def replicas(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def from_records(cls, records, n: int, stat: str = "U") -> "EnsembleSample":
        rows = []
        for rec in records:
            i = rec.at(n)
            rows.append(rec.U[i] if stat == "U" else rec.N[i])
        return cls(n=n, vectors=np.array(rows, dtype=float))


@dataclass(eq=False)
class StatSummary:
    mean: np.ndarray
    cov: np.ndarray
    ks: float | None = None
    slopes: dict | None = None


@dataclass(eq=False)
class StarDiagnostics:
    """Martingale diagnostics of one star trajectory.

    ``W`` is the martingale ``U_n xi / Pi_n(gamma)``; ``W_scaled`` is
    ``U_n xi / n**gamma``, whose limit is the random variable in the
    ``n**gamma`` growth law of the non-central colours.  The two limits
    differ by the factor ``Gamma(1 + gamma)``.
    """

    xi: np.ndarray
    ns: np.ndarray
    Pi: np.ndarray
    W: np.ndarray
    W_scaled: np.ndarray
    identity_residual: float
    central_share: np.ndarray
    gamma: float

    def euler_ratio(self) -> float:
        """``Pi_n(gamma) Gamma(gamma + 1) / n**gamma`` at the last checkpoint."""
        n = self.ns[-1]
        return float(self.Pi[-1] * math.gamma(self.gamma + 1.0) / n**self.gamma)


def slln_residual(record: TrajectoryRecord, limits: LimitReport) -> np.ndarray:
    """``max_j |U_{n,j}/(n+1) - mu_j|`` at every checkpoint."""
    if record.U.shape[1] != len(limits.mu):
        raise DimensionMismatch(f"record has {record.U.shape[1]} colours, mu has {len(limits.mu)}")
    return np.max(np.abs(record.proportions - limits.mu), axis=1)


def colour_count_limit(spec: ModelSpec, limits: LimitReport) -> np.ndarray:
    """Almost-sure limit of ``N_n / n``: ``(theta - mu) / (k theta - 1)``."""
    return (spec.theta - limits.mu) / (spec.k * spec.theta - 1.0)


def count_slln_residual(record: TrajectoryRecord, count_limit) -> np.ndarray:
    """``max_j |N_{n,j}/n - limit_j|`` at every checkpoint with ``n >= 1``."""
    count_limit = np.asarray(count_limit, dtype=float)
    if record.N.shape[1] != len(count_limit):
        raise DimensionMismatch("count limit has the wrong length")
    keep = record.ns >= 1
    return np.max(np.abs(record.count_frequencies[keep] - count_limit), axis=1)


def scale(n: int, regime: Regime) -> float:
    """``sigma_n``: ``sqrt(n)`` or ``sqrt(n log n)`` (natural log)."""
    if regime is Regime.SQRT_N:
        return math.sqrt(n)
    if regime is Regime.SQRT_N_LOG_N:
        return math.sqrt(n * math.log(n))
    raise UnsupportedRegime(f"no Gaussian scaling is asserted for regime {regime.value}")


def standardize(sample: EnsembleSample, center, regime: Regime) -> EnsembleSample:
    """``(X - n * center) / sigma_n`` row by row."""
    if sample.n < 2:
        raise ValidationError("standardize needs n >= 2")
    sigma = scale(sample.n, regime)
    center = np.asarray(center, dtype=float)
    return EnsembleSample(n=sample.n, vectors=(sample.vectors - sample.n * center) / sigma)


def empirical_moments(sample: EnsembleSample) -> StatSummary:
    """Sample mean and unbiased sample covariance."""
    X = sample.vectors
    if X.shape[0] < 2:
        raise TooFewReplicas("need at least two replicas for a covariance")
    mean = X.mean(axis=0)
    D = X - mean
    cov = D.T @ D / (X.shape[0] - 1)
    return StatSummary(mean=mean, cov=0.5 * (cov + cov.T))


def sigma_relation_residual(SigmaU, SigmaN, R, eps: float = 1e-12) -> float:
    """Relative Frobenius gap ``|SigmaU - R^T SigmaN R| / max(|SigmaU|, eps)``."""
    SigmaU = np.asarray(SigmaU, dtype=float)
    SigmaN = np.asarray(SigmaN, dtype=float)
    R = np.asarray(R, dtype=float)
    gap = np.linalg.norm(SigmaU - R.T @ SigmaN @ R, "fro")
    return float(gap / max(np.linalg.norm(SigmaU, "fro"), eps))


def star_vector(star: StarInfo, k: int) -> np.ndarray:
    """``xi = (1/gamma)`` on non-central colours, 0 on the central one."""
    xi = np.full(k, 1.0 / star.gamma)
    xi[star.central] = 0.0
    return xi


def euler_product(gamma: float, n_max: int) -> np.ndarray:
    """``Pi_n(gamma) = prod_{i<=n} (1 + gamma/i)`` for ``n = 0..n_max`` (running product)."""
    out = np.empty(n_max + 1)
    out[0] = 1.0
    out[1:] = np.cumprod(1.0 + gamma / np.arange(1, n_max + 1))
    return out


def _star_identity_residual(U, U0, star: StarInfo) -> float:
    cols = [h for h in range(len(U0)) if h != star.central and star.alpha[h] > 0]
    worst = 0.0
    for a, h in enumerate(cols):
        for l in cols[a + 1:]:
            now = U[:, h] / star.alpha[h] - U[:, l] / star.alpha[l]
            start = U0[h] / star.alpha[h] - U0[l] / star.alpha[l]
            worst = max(worst, float(np.max(np.abs(now - start))))
    return worst


def star_diagnostics(record: TrajectoryRecord, spec: ModelSpec) -> StarDiagnostics:
    """Martingale ``W_n``, Euler product and the exact pairwise identity
    ``U_{n,h}/alpha_h - U_{n,l}/alpha_l = const`` for a star urn at theta = 1.
    """
    star = detect_star(spec.R)
    if star is None or spec.theta != 1.0:
        raise NotAStar("star diagnostics need a star replacement matrix and theta = 1")
    if star.gamma <= 0.0:
        raise GammaZero("alpha of the central colour is 1; the urn is deterministic")
    xi = star_vector(star, spec.k)
    ns = record.ns
    Pi_all = euler_product(star.gamma, int(ns.max()) if len(ns) else 0)
    Pi = Pi_all[ns]
    Uxi = record.U @ xi
    with np.errstate(divide="ignore", invalid="ignore"):
        W_scaled = np.where(ns > 0, Uxi / np.power(ns.astype(float), star.gamma), np.nan)
    return StarDiagnostics(
        xi=xi,
        ns=ns,
        Pi=Pi,
        W=Uxi / Pi,
        W_scaled=W_scaled,
        identity_residual=_star_identity_residual(record.U, spec.U0, star),
        central_share=record.U[:, star.central] / (ns + 1.0),
        gamma=star.gamma,
    )


def star_count_covariance(k: int) -> np.ndarray:
    """``I/(k-1) - J/(k-1)**2`` over the ``k - 1`` non-central colours."""
    if k < 2:
        raise ValidationError("k must be >= 2")
    m = k - 1
    return np.eye(m) / m - np.ones((m, m)) / m**2


def ks_statistic(samples, reference_cdf) -> float:
    """One-sample Kolmogorov-Smirnov distance ``sup |F_hat - F|``."""
    x = np.sort(np.asarray(samples, dtype=float))
    m = len(x)
    if m == 0:
        raise EmptySample("KS statistic of an empty sample")
    F = np.array([reference_cdf(v) for v in x])
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - F), np.max(F - (i - 1) / m)))


def ks_critical_value(m: int, level: float = 0.05) -> float:
    """Asymptotic two-sided critical value ``c(level) / sqrt(m)``."""
    c = math.sqrt(-0.5 * math.log(level / 2.0))
    return c / math.sqrt(m)


def variance_profile(samples, center, colour: int) -> tuple[np.ndarray, np.ndarray]:
    """``(n_i, Var(X_{n_i, colour} - n_i center_colour))`` over the grid."""
    ns = np.array([s.n for s in samples], dtype=float)
    var = np.array([
        np.var(s.vectors[:, colour] - s.n * center[colour], ddof=1) for s in samples
    ])
    return ns, var


def variance_scaling_slope(samples, center, colour: int, regime: Regime) -> float:
    """Empirical check of the fluctuation scale over a geometric ``n`` grid.

    ``SQRT_N``: least-squares slope of ``log Var`` against ``log n`` (about 1).
    ``SQRT_N_LOG_N``: ``max / min`` of ``Var / (n log n)`` across the grid.
    """
    if len(samples) < 3:
        raise ValidationError("need at least three grid points")
    ns, var = variance_profile(samples, np.asarray(center, dtype=float), colour)
    if np.any(np.diff(ns) <= 0):
        raise ValidationError("grid must be strictly increasing")
    if np.any(var < 1e-12):
        raise DegenerateVariance(f"colour {colour} has (near) zero variance")
    if regime is Regime.SQRT_N:
        slope, _ = np.polyfit(np.log(ns), np.log(var), 1)
        return float(slope)
    if regime is Regime.SQRT_N_LOG_N:
        r = var / (ns * np.log(ns))
        return float(r.max() / r.min())
    raise UnsupportedRegime(f"no variance law is asserted for regime {regime.value}")


def critical_colour(spec: ModelSpec) -> int:
    """Colour carrying the largest share of the critical eigendirection.

    In the ``sqrt(n log n)`` regime only components along left eigenvectors of
    ``R`` with real part ``-(k theta - 1)/2`` grow at the critical rate.
    """
    vals, left = np.linalg.eig(spec.R.T)
    target = -(spec.k * spec.theta - 1.0) / 2.0
    idx = np.flatnonzero(np.abs(vals.real - target) <= 1e-9)
    if len(idx) == 0:
        raise UnsupportedRegime("model has no critical eigenvalue")
    weight = np.abs(left[:, idx]).sum(axis=1)
    return int(np.argmax(weight))


def expected_central_count(spec: ModelSpec, n: int) -> float:
    """Exact ``E[N_{n, central}]`` for a star urn at theta = 1.

    The draw probability of the central colour is ``gamma U_i xi / ((k-1)(i+1))``
    and ``E[U_i xi] = U_0 xi Pi_i(gamma)``.
    """
    star = detect_star(spec.R)
    if star is None or spec.theta != 1.0:
        raise NotAStar("expected central count needs a star urn at theta = 1")
    k = spec.k
    w0 = float(spec.U0 @ star_vector(star, k)) if star.gamma > 0 else 0.0
    Pi = euler_product(star.gamma, n - 1) if n >= 1 else np.ones(0)
    i = np.arange(n)
    return float(star.gamma * w0 / (k - 1) * np.sum(Pi / (i + 1.0)))
