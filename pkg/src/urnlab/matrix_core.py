"""Exact (non-random) objects of the negatively reinforced urn.

Everything here is a pure function of a :class:`ModelSpec`: the selection
operator ``A``, the coupled replacement matrix ``Rhat = R A``, star detection,
irreducibility of ``Rhat``, the almost-sure limit vectors and the spectral
classification of the fluctuation scale.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment
from scipy.sparse.csgraph import connected_components

from .errors import (
    BadInitial,
    EigenFailure,
    InternalInconsistency,
    NegativeEntry,
    NoUniqueLimit,
    NonStochasticRow,
    ReducibleInput,
    SingularSystem,
    ThetaOutOfRange,
    ValidationError,
)

ROW_SUM_TOL = 1e-9
ONE_TOL = 1e-12
LIMIT_TOL = 1e-10
SPECTRAL_TOL = 1e-8
CRITICAL_TOL = 1e-9


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A complete urn instance: replacement matrix, weight parameter, start.

    ``R`` is a row-stochastic ``k x k`` array, ``theta >= 1`` and ``U0`` is a
    probability vector.  Build instances with :func:`validate_model`.
    """

    R: np.ndarray
    theta: float
    U0: np.ndarray

    @property
    def k(self) -> int:
        return self.R.shape[0]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "theta": float(self.theta),
            "R": self.R.tolist(),
            "U0": self.U0.tolist(),
        }


@dataclass(frozen=True, eq=False)
class StarInfo:
    central: int
    alpha: np.ndarray
    gamma: float
    both_central: bool = False

    def to_dict(self) -> dict:
        return {
            "central": self.central,
            "both_central": self.both_central,
            "alpha": self.alpha.tolist(),
            "gamma": self.gamma,
        }


@dataclass(frozen=True, eq=False)
class LimitReport:
    mu: np.ndarray
    nu: np.ndarray
    solver_residual: float


class Regime(enum.Enum):
    SQRT_N = "sqrt_n"
    SQRT_N_LOG_N = "sqrt_n_log_n"
    OUTSIDE_THEOREM = "outside_theorem"


@dataclass(frozen=True, eq=False)
class SpectralReport:
    eig_R: np.ndarray
    eig_Rhat: np.ndarray
    b: float
    tau: float
    regime: Regime | None
    aperiodic_hint: bool
    beyond_stated_hypothesis: bool = False
    extra: dict = field(default_factory=dict)


def as_stochastic_matrix(raw, k: int | None = None) -> np.ndarray:
    """Validate ``raw`` as a row-stochastic matrix and return a frozen copy.

    Rows whose sum is within ``1e-9`` of one are accepted and renormalised
    so that the stored matrix has row sums equal to one to rounding.
    """
    try:
        R = np.array(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"R is not a rectangular numeric array: {exc}") from None
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValidationError(f"R must be square, got shape {R.shape}")
    if R.shape[0] < 2:
        raise ValidationError("need at least k = 2 colours")
    if k is not None and R.shape[0] != k:
        raise ValidationError(f"R is {R.shape[0]}x{R.shape[0]} but k = {k}")
    if not np.all(np.isfinite(R)):
        raise ValidationError("R has non-finite entries")
    neg = np.argwhere(R < 0)
    if len(neg):
        i, j = neg[0]
        raise NegativeEntry(f"R[{i},{j}] = {R[i, j]!r} is negative")
    sums = R.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if len(bad):
        i = bad[0]
        raise NonStochasticRow(f"row {i} of R sums to {sums[i]!r}, not 1")
    return _frozen(R / sums[:, None])


def validate_model(k, theta, R, U0) -> ModelSpec:
    """Check the raw ingredients of an urn and assemble a :class:`ModelSpec`.

    Raises
    ------
    ThetaOutOfRange
        ``theta < 1`` (the weight ``theta - x`` could go negative).
    NegativeEntry, NonStochasticRow
        ``R`` is not a stochastic matrix.
    BadInitial
        ``U0`` is not a probability vector of length ``k``.
    """
    try:
        theta = float(theta)
    except (TypeError, ValueError):
        raise ValidationError(f"theta must be a real number, got {theta!r}") from None
    if not math.isfinite(theta) or theta < 1.0:
        raise ThetaOutOfRange(f"theta = {theta!r} must satisfy theta >= 1")
    if k is not None:
        try:
            k = int(k)
        except (TypeError, ValueError):
            raise ValidationError(f"k must be an integer, got {k!r}") from None
    R = as_stochastic_matrix(R, k)
    k = R.shape[0]
    try:
        u = np.array(U0, dtype=float)
    except (TypeError, ValueError):
        raise BadInitial("U0 is not a numeric vector") from None
    if u.shape != (k,):
        raise BadInitial(f"U0 must have length {k}, got shape {u.shape}")
    if not np.all(np.isfinite(u)) or np.any(u < 0):
        raise BadInitial("U0 entries must be finite and non-negative")
    if abs(u.sum() - 1.0) > ROW_SUM_TOL:
        raise BadInitial(f"U0 sums to {u.sum()!r}, not 1")
    return ModelSpec(R=R, theta=theta, U0=_frozen(u / u.sum()))


def model_from_dict(d: dict) -> ModelSpec:
    """Parse the model JSON object ``{"k", "theta", "R", "U0"}``."""
    if not isinstance(d, dict):
        raise ValidationError("model must be a JSON object")
    missing = [key for key in ("theta", "R", "U0") if key not in d]
    if missing:
        raise ValidationError(f"model is missing field(s): {', '.join(missing)}")
    return validate_model(d.get("k"), d["theta"], d["R"], d["U0"])


def selection_operator(k: int, theta: float) -> np.ndarray:
    """Matrix ``A`` mapping colour proportions to draw probabilities.

    ``A = (theta J - I) / (k theta - 1)``: off-diagonal ``theta/(k theta - 1)``,
    diagonal ``(theta - 1)/(k theta - 1)``.
    """
    if k < 2:
        raise ValidationError("k must be >= 2")
    if theta < 1:
        raise ThetaOutOfRange(f"theta = {theta!r} must satisfy theta >= 1")
    d = k * theta - 1.0
    A = np.full((k, k), theta / d)
    np.fill_diagonal(A, (theta - 1.0) / d)
    return A


def selection_operator_inverse(k: int, theta: float) -> np.ndarray:
    """Closed-form inverse of :func:`selection_operator`.

    ``A^{-1} = theta J - (k theta - 1) I``.
    """
    d = k * theta - 1.0
    return theta * np.ones((k, k)) - d * np.eye(k)


def coupled_replacement(spec: ModelSpec) -> np.ndarray:
    """``Rhat = R A = (theta J - R) / (k theta - 1)``, the coupled classical urn."""
    k, theta = spec.k, spec.theta
    return (theta * np.ones((k, k)) - spec.R) / (k * theta - 1.0)


def detect_star(R) -> StarInfo | None:
    """Find a central vertex ``j`` with ``R[i, j] == 1`` for every ``i != j``.

    For ``k = 2`` with ``R = [[0, 1], [1, 0]]`` both colours qualify; colour 0
    is returned and ``both_central`` is set.
    """
    R = np.asarray(R, dtype=float)
    k = R.shape[0]
    off = ~np.eye(k, dtype=bool)
    hits = [
        j for j in range(k)
        if np.all(R[off[:, j], j] >= 1.0 - ONE_TOL)
    ]
    if not hits:
        return None
    j = hits[0]
    alpha = _frozen(R[j])
    gamma = (1.0 - alpha[j]) / (k - 1)
    return StarInfo(central=j, alpha=alpha, gamma=float(gamma), both_central=len(hits) > 1)


def coupled_graph_is_strongly_connected(spec: ModelSpec) -> bool:
    """Strong connectivity of the digraph of ``Rhat``.

    An entry ``(theta - R_uv)/(k theta - 1)`` vanishes exactly when
    ``theta == 1`` and ``R_uv == 1``; edges are read off that closed form.
    """
    if spec.theta > 1.0:
        adj = np.ones((spec.k, spec.k))
    else:
        adj = (spec.R < 1.0 - ONE_TOL).astype(float)
    n_comp, _ = connected_components(adj, directed=True, connection="strong")
    return n_comp == 1


def hat_irreducible(spec: ModelSpec) -> bool:
    """Whether ``Rhat`` is irreducible: ``theta > 1`` or ``R`` is not a star.

    The closed-form answer is cross-checked against graph reachability and
    :class:`InternalInconsistency` is raised if they disagree.
    """
    closed_form = spec.theta > 1.0 or detect_star(spec.R) is None
    by_graph = coupled_graph_is_strongly_connected(spec)
    if closed_form != by_graph:
        raise InternalInconsistency(
            f"star criterion says irreducible={closed_form} but graph "
            f"reachability says {by_graph}"
        )
    return closed_form


def is_doubly_stochastic(R) -> bool:
    R = np.asarray(R, dtype=float)
    return bool(np.all(np.abs(R.sum(axis=0) - 1.0) <= LIMIT_TOL))


def limit_equation_residual(spec: ModelSpec, mu) -> float:
    """``max |(theta 1 - mu) R - (k theta - 1) mu|``."""
    mu = np.asarray(mu, dtype=float)
    lhs = (spec.theta - mu) @ spec.R
    return float(np.max(np.abs(lhs - (spec.k * spec.theta - 1.0) * mu)))


def _is_friedman(spec: ModelSpec) -> bool:
    star = detect_star(spec.R)
    return spec.theta == 1.0 and star is not None and star.both_central


def solve_limits(spec: ModelSpec) -> LimitReport:
    """Solve ``mu ((k theta - 1) I + R) = theta 1 R`` and set ``nu = mu A``.

    The transposed system is factorised once by partially pivoted LU and the
    solution polished with one step of iterative refinement.

    Raises
    ------
    SingularSystem
        Only for ``k = 2, theta = 1, R = [[0, 1], [1, 0]]``, whose limit is
        random.
    NoUniqueLimit
        ``Rhat`` reducible and the direct solve does not satisfy the limit
        equation.
    """
    k, theta = spec.k, spec.theta
    M = (k * theta - 1.0) * np.eye(k) + spec.R.T
    rhs = theta * spec.R.sum(axis=0)
    if _is_friedman(spec):
        raise SingularSystem(
            "limit system is singular for the two-colour swap urn at theta = 1; "
            "its proportions converge to a Beta-distributed random limit"
        )
    lu, piv = scipy.linalg.lu_factor(M, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= 1e-12 * max(1.0, pivots.max()):
        raise SingularSystem("limit system is numerically singular")
    mu = scipy.linalg.lu_solve((lu, piv), rhs)
    mu = mu + scipy.linalg.lu_solve((lu, piv), rhs - M @ mu)
    mu[(mu < 0) & (mu > -1e-12)] = 0.0
    residual = limit_equation_residual(spec, mu)
    if residual > LIMIT_TOL and not hat_irreducible(spec):
        raise NoUniqueLimit(f"reducible coupled matrix and residual {residual:.3e}")
    nu = mu @ selection_operator(k, theta)
    return LimitReport(mu=_frozen(mu), nu=_frozen(nu), solver_residual=residual)


def _match_multisets(a: np.ndarray, b: np.ndarray) -> float:
    """Largest distance in the optimal one-to-one pairing of two multisets."""
    if len(a) == 0:
        return 0.0
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


def spectrum(spec: ModelSpec) -> SpectralReport:
    """Eigenvalues of ``R`` and ``Rhat`` and the resulting fluctuation regime.

    The non-Perron eigenvalues of ``Rhat`` must equal ``b * lambda`` over the
    eigenvalues of ``R`` with one copy of 1 removed, ``b = -1/(k theta - 1)``.
    """
    k, theta = spec.k, spec.theta
    Rhat = coupled_replacement(spec)
    try:
        eig_R = np.linalg.eigvals(spec.R)
        eig_Rhat = np.linalg.eigvals(Rhat)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(f"eigenvalue iteration failed: {exc}") from None
    if not (np.all(np.isfinite(eig_R)) and np.all(np.isfinite(eig_Rhat))):
        raise EigenFailure("eigenvalue iteration produced non-finite values")
    eig_R = eig_R.astype(complex)
    eig_Rhat = eig_Rhat.astype(complex)

    b = -1.0 / (k * theta - 1.0)
    i_perron = int(np.argmax(eig_Rhat.real))
    if abs(eig_Rhat[i_perron] - 1.0) > SPECTRAL_TOL:
        raise InternalInconsistency(f"Perron root of Rhat is {eig_Rhat[i_perron]}, not 1")
    i_one = int(np.argmin(np.abs(eig_R - 1.0)))
    rest_hat = np.delete(eig_Rhat, i_perron)
    mapped = b * np.delete(eig_R, i_one)
    mismatch = _match_multisets(rest_hat, mapped)
    if mismatch > SPECTRAL_TOL:
        raise InternalInconsistency(
            f"spectrum of Rhat differs from b * spectrum(R) by {mismatch:.3e}"
        )
    tau = float(rest_hat.real.max())

    irreducible = hat_irreducible(spec)
    report = SpectralReport(
        eig_R=eig_R,
        eig_Rhat=eig_Rhat,
        b=b,
        tau=tau,
        regime=None,
        aperiodic_hint=irreducible and k > 2,
        beyond_stated_hypothesis=(k == 2 and theta > 1.5),
        extra={"spectral_mismatch": mismatch},
    )
    if irreducible:
        object.__setattr__(report, "regime", classify_regime(report, spec))
    return report


def _regime_from_case_table(spec: ModelSpec, eig_R: np.ndarray) -> Regime:
    k, theta = spec.k, spec.theta
    if k >= 4:
        return Regime.SQRT_N
    if k == 3:
        has_minus_one = bool(np.any(np.abs(eig_R + 1.0) <= CRITICAL_TOL))
        if theta == 1.0 and has_minus_one:
            return Regime.SQRT_N_LOG_N
        return Regime.SQRT_N
    # k = 2: the non-unit eigenvalue is trace - 1.
    lam = float(np.trace(spec.R)) - 1.0
    boundary = (1.0 - 2.0 * theta) / 2.0
    if abs(lam - boundary) <= CRITICAL_TOL:
        return Regime.SQRT_N_LOG_N
    if lam > boundary:
        return Regime.SQRT_N
    return Regime.OUTSIDE_THEOREM


def classify_regime(sr: SpectralReport, spec: ModelSpec) -> Regime:
    """Fluctuation scale of ``U_n - n mu``: ``sqrt(n)``, ``sqrt(n log n)`` or
    outside the range where a Gaussian limit is asserted.

    Decided by ``tau`` against 1/2 and cross-checked against the explicit
    case analysis in ``k`` and ``theta``.
    """
    if not hat_irreducible(spec):
        raise ReducibleInput("regime is only defined when Rhat is irreducible")
    if abs(sr.tau - 0.5) <= CRITICAL_TOL:
        regime = Regime.SQRT_N_LOG_N
    elif sr.tau < 0.5:
        regime = Regime.SQRT_N
    else:
        regime = Regime.OUTSIDE_THEOREM
    expected = _regime_from_case_table(spec, np.asarray(sr.eig_R))
    if regime is not expected:
        raise InternalInconsistency(
            f"tau = {sr.tau!r} gives {regime.value} but the case table gives {expected.value}"
        )
    return regime


def _complex_pairs(values) -> list:
    return [[float(z.real), float(z.imag)] for z in values]


def analysis_report(spec: ModelSpec) -> dict:
    """The analysis report consumed by ``urnlab analyze``."""
    star = detect_star(spec.R)
    sr = spectrum(spec)
    report = {
        "schema": "urnlab/1",
        "model": spec.to_dict(),
        "irreducible": hat_irreducible(spec),
        "aperiodic_hint": sr.aperiodic_hint,
        "star": star.to_dict() if star is not None else None,
        "mu": None,
        "nu": None,
        "solver_residual": None,
        "eig_R": _complex_pairs(sr.eig_R),
        "eig_Rhat": _complex_pairs(sr.eig_Rhat),
        "b": sr.b,
        "tau": sr.tau,
        "regime": sr.regime.value if sr.regime is not None else None,
        "beyond_stated_hypothesis": sr.beyond_stated_hypothesis,
        "doubly_stochastic": is_doubly_stochastic(spec.R),
    }
    try:
        lim = solve_limits(spec)
    except SingularSystem as exc:
        report["limit_error"] = exc.to_dict()
    else:
        report["mu"] = lim.mu.tolist()
        report["nu"] = lim.nu.tolist()
        report["solver_residual"] = lim.solver_residual
    return report
