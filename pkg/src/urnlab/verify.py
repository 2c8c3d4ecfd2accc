"""Verification suites: simulate ensembles and score them against the limit laws.

Each suite returns a list of :class:`Check` records.  A check passes when its
statistic satisfies ``comparison`` against ``threshold``; checks with
``comparison == "info"`` are reported but never fail a run.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import asymptotics as asy
from .errors import InapplicableSuite, InvariantViolation
from .matrix_core import (
    ModelSpec,
    Regime,
    detect_star,
    hat_irreducible,
    selection_operator,
    solve_limits,
    spectrum,
)
from .rng import RngStream, sub_seed
from .urn_process import (
    UrnState,
    coupling_residual,
    parse_schedule,
    run_ensemble,
    run_trajectory,
    spec_digest,
    trajectory_csv_text,
)

SCHEMA = "urnlab/1"
SUITES = ("invariants", "slln", "clt", "counts", "star", "friedman")


@dataclass(frozen=True)
class Budget:
    name: str
    n_single: int
    n_ens: int
    m_ens: int
    m_cov: int
    clt_grid: tuple
    m_clt: int
    star_n: int
    star_m: int
    star_big_n: int
    star_big_m: int
    slln_tol: float
    slope_range: tuple
    ratio_max: float
    ks_tol: float | None  # None: asymptotic 5% critical value
    central_share_min: float


BUDGETS = {
    "quick": Budget(
        name="quick", n_single=10_000, n_ens=10_000, m_ens=500, m_cov=500,
        clt_grid=(100, 1_000, 10_000), m_clt=500, star_n=10_000, star_m=500,
        star_big_n=10_000, star_big_m=500, slln_tol=0.05,
        slope_range=(0.8, 1.2), ratio_max=1.5, ks_tol=None, central_share_min=0.9,
    ),
    "full": Budget(
        name="full", n_single=1_000_000, n_ens=10_000, m_ens=2000, m_cov=5000,
        clt_grid=(1_000, 10_000, 100_000), m_clt=2000, star_n=100_000, star_m=2000,
        star_big_n=1_000_000, star_big_m=500, slln_tol=0.01,
        slope_range=(0.9, 1.1), ratio_max=1.25, ks_tol=0.05, central_share_min=0.98,
    ),
}


@dataclass
class Check:
    name: str
    statistic: float
    threshold: object
    comparison: str
    inputs: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool | None:
        s, t = self.statistic, self.threshold
        if self.comparison == "info":
            return None
        if not math.isfinite(s):
            return False
        if self.comparison == "<=":
            return s <= t
        if self.comparison == "<":
            return s < t
        if self.comparison == ">=":
            return s >= t
        if self.comparison == "in":
            return t[0] <= s <= t[1]
        raise ValueError(self.comparison)

    def to_dict(self) -> dict:
        blob = json.dumps(self.inputs, sort_keys=True, separators=(",", ":"))
        return {
            "name": self.name,
            "inputs_digest": hashlib.sha256(blob.encode()).hexdigest()[:16],
            "inputs": self.inputs,
            "statistic": float(self.statistic) if math.isfinite(self.statistic) else None,
            "comparison": self.comparison,
            "threshold": list(self.threshold) if isinstance(self.threshold, tuple) else self.threshold,
            "pass": self.passed,
        }


def _inputs(spec, seed, label, **kw):
    return {"model": spec_digest(spec), "seed": seed, "stream": label, **kw}


# -- applicability -----------------------------------------------------------

def inapplicable_reason(spec: ModelSpec, suite: str) -> str | None:
    """Why ``suite`` cannot run on ``spec``; ``None`` when it can."""
    star = detect_star(spec.R)
    irreducible = hat_irreducible(spec)
    friedman = spec.theta == 1.0 and star is not None and star.both_central
    if suite == "invariants":
        return None
    if suite in ("slln", "clt"):
        if not irreducible:
            return (
                "the coupled matrix Rhat = R A is reducible (theta = 1 and R is a star), "
                "so there is no deterministic limit mu and no Gaussian fluctuation law"
            )
        if suite == "clt":
            regime = spectrum(spec).regime
            if regime is Regime.OUTSIDE_THEOREM:
                return (
                    "largest non-principal real part of Rhat exceeds 1/2; no Gaussian "
                    "limit is asserted for this model"
                )
        return None
    if suite == "counts":
        if irreducible or (star is not None and not friedman and star.gamma > 0):
            return None
        if friedman:
            return "two-colour swap urn: colour counts have a Beta limit, use --suite friedman"
        return "star with alpha of the central colour equal to 1: counts are deterministic"
    if suite == "star":
        if star is None:
            return (
                "R is not a star; a star replacement matrix at theta = 1 is the only "
                "case in which Rhat is reducible, which the star limit laws require"
            )
        if spec.theta != 1.0:
            return (
                f"theta = {spec.theta} > 1 makes Rhat strictly positive hence irreducible; "
                "the star limit laws need theta = 1"
            )
        if friedman:
            return "the two-colour swap urn is excluded from the star limit laws; use --suite friedman"
        if star.gamma <= 0:
            return "alpha of the central colour is 1 (gamma = 0): the urn is deterministic"
        return None
    if suite == "friedman":
        if not friedman:
            return "friedman suite needs k = 2, theta = 1, R = [[0, 1], [1, 0]]"
        if np.any(spec.U0 <= 0):
            return "Beta limit needs both initial masses positive"
        return None
    raise InapplicableSuite(f"unknown suite {suite!r}")


# -- suites ------------------------------------------------------------------

def suite_invariants(spec: ModelSpec, seed: int, budget: Budget) -> list[Check]:
    n = budget.n_single
    label = "invariants"
    rng = RngStream(sub_seed(seed, label), 0)
    checkpoints = [0] + parse_schedule("geometric:2", n)
    rec = run_trajectory(spec, n, checkpoints, rng, keep_draws=True)
    inp = _inputs(spec, seed, label, n=n)
    ns = rec.ns
    sum_err = float(np.max(np.abs(rec.U.sum(axis=1) - (ns + 1.0))))
    recon = spec.U0 + rec.N.astype(float) @ spec.R
    recon_err = float(np.max(np.abs(rec.U - recon)))
    counts_ok = float(np.max(np.abs(rec.N.sum(axis=1) - ns)))
    checks = [
        Check("sum_of_weights", sum_err, 1e-9, "<=", inp),
        Check("counts_total", counts_ok, 0.0, "<=", inp),
        Check("mass_from_counts", recon_err, 1e-9, "<=", inp),
        Check("coupling_residual", coupling_residual(rec, spec), 1e-8 * (n + 1), "<=", inp),
    ]
    # both expressions of the draw law, at the final state
    state = UrnState(n=int(ns[-1]), U=rec.U[-1], N=rec.N[-1])
    d = spec.k * spec.theta - 1.0
    x = state.U / (state.n + 1.0)
    gap = float(np.max(np.abs((spec.theta - x) / d - x @ selection_operator(spec.k, spec.theta))))
    checks.append(Check("selection_formulas", gap, 1e-12, "<=", inp))

    star = detect_star(spec.R)
    if star is not None and spec.theta == 1.0 and not star.both_central:
        if star.gamma > 0:
            diag = asy.star_diagnostics(rec, spec)
            checks.append(Check("star_pair_identity", diag.identity_residual, 1e-9, "<=", inp))
        else:
            j = star.central
            expect = spec.U0[None, :].repeat(len(ns), axis=0)
            expect[:, j] = spec.U0[j] + ns
            checks.append(Check("degenerate_star_growth",
                                float(np.max(np.abs(rec.U - expect))), 1e-9, "<=", inp))

    short = min(n, 1000)
    a = trajectory_csv_text([run_trajectory(spec, short, [short], RngStream(sub_seed(seed, label), 1))])
    b = trajectory_csv_text([run_trajectory(spec, short, [short], RngStream(sub_seed(seed, label), 1))])
    checks.append(Check("determinism", float(a != b), 0.0, "<=", inp))
    return checks


def suite_slln(spec: ModelSpec, seed: int, budget: Budget) -> list[Check]:
    n = budget.n_single
    label = "slln"
    lim = solve_limits(spec)
    rec = run_trajectory(spec, n, [n], RngStream(sub_seed(seed, label), 0))
    inp = _inputs(spec, seed, label, n=n)
    nlim = asy.colour_count_limit(spec, lim)
    return [
        Check("limit_equation_residual", lim.solver_residual, 1e-10, "<=", inp),
        Check("proportions_to_mu", float(asy.slln_residual(rec, lim)[-1]), budget.slln_tol, "<", inp),
        Check("counts_to_limit", float(asy.count_slln_residual(rec, nlim)[-1]), budget.slln_tol, "<", inp),
    ]


def _covariance_checks(spec, lim, seed, label, n, m, regime):
    recs = run_ensemble(spec, n, m, sub_seed(seed, label), [n])
    inp = _inputs(spec, seed, label, n=n, m=m)
    U = asy.EnsembleSample.from_records(recs, n, "U")
    N = asy.EnsembleSample.from_records(recs, n, "N")
    SU = asy.empirical_moments(asy.standardize(U, lim.mu, regime)).cov
    SN = asy.empirical_moments(asy.standardize(N, asy.colour_count_limit(spec, lim), regime)).cov
    ones = np.ones(spec.k)
    return [
        Check("config_covariance_kernel", float(np.max(np.abs(SU @ ones))), 5 / math.sqrt(m), "<=", inp),
        Check("count_covariance_kernel", float(np.max(np.abs(SN @ ones))), 5 / math.sqrt(m), "<=", inp),
        Check("covariance_relation", asy.sigma_relation_residual(SU, SN, spec.R), 0.15, "<", inp),
    ]


def suite_clt(spec: ModelSpec, seed: int, budget: Budget) -> list[Check]:
    lim = solve_limits(spec)
    regime = spectrum(spec).regime
    label = "clt"
    samples = []
    for i, n in enumerate(budget.clt_grid):
        recs = run_ensemble(spec, n, budget.m_clt, sub_seed(seed, f"{label}/{i}"), [n])
        samples.append(asy.EnsembleSample.from_records(recs, n, "U"))
    inp = _inputs(spec, seed, label, grid=list(budget.clt_grid), m=budget.m_clt,
                  regime=regime.value)
    checks = []
    if regime is Regime.SQRT_N_LOG_N:
        colour = asy.critical_colour(spec)
        stat = asy.variance_scaling_slope(samples, lim.mu, colour, regime)
        checks.append(Check(f"variance_ratio_nlogn_colour{colour}", stat, budget.ratio_max, "<=", inp))
    else:
        colour = int(np.argmax(samples[-1].vectors.var(axis=0)))
        stat = asy.variance_scaling_slope(samples, lim.mu, colour, regime)
        checks.append(Check(f"variance_slope_colour{colour}", stat, budget.slope_range, "in", inp))
    checks += _covariance_checks(spec, lim, seed, f"{label}/cov", budget.n_ens, budget.m_cov, regime)
    return checks


def _star_count_checks(spec, seed, budget):
    star = detect_star(spec.R)
    k, g = spec.k, star.gamma
    checks = []
    label = "counts/star"
    n = budget.n_single
    rec = run_trajectory(spec, n, [n], RngStream(sub_seed(seed, label), 0))
    freq = rec.N[-1] / n
    target = np.full(k, 1.0 / (k - 1))
    target[star.central] = 0.0
    inp = _inputs(spec, seed, label, n=n)
    checks.append(Check("star_count_frequencies", float(np.max(np.abs(freq - target))),
                        budget.slln_tol, "<", inp))
    others = [j for j in range(k) if j != star.central]
    if g < 0.5:
        n, m = budget.n_ens, budget.m_cov
        recs = run_ensemble(spec, n, m, sub_seed(seed, label + "/clt"), [n])
        N = asy.EnsembleSample.from_records(recs, n, "N").vectors
        inp = _inputs(spec, seed, label + "/clt", n=n, m=m)
        Z = (N[:, others] - n / (k - 1)) / math.sqrt(n)
        C = asy.empirical_moments(asy.EnsembleSample(n, Z)).cov
        T = asy.star_count_covariance(k)
        checks.append(Check("star_count_covariance_rel", float(np.max(np.abs(C - T) / np.abs(T))),
                            0.10, "<=", inp))
        central = N[:, star.central] / math.sqrt(n)
        checks.append(Check("central_count_over_sqrt_n", float(central.mean()), 0.05, "<", inp))
        expect = asy.expected_central_count(spec, n) / math.sqrt(n)
        checks.append(Check("central_count_over_sqrt_n_exact_mean", expect, None, "info", inp))
    else:
        n, m = budget.star_big_n, budget.star_big_m
        recs = run_ensemble(spec, n, m, sub_seed(seed, label + "/gamma"), [n])
        inp = _inputs(spec, seed, label + "/gamma", n=n, m=m)
        N0 = np.array([r.N[-1, star.central] for r in recs]) / n**g
        diags = [asy.star_diagnostics(r, spec) for r in recs]
        W_scaled = np.array([d.W_scaled[-1] for d in diags])
        W_mart = np.array([d.W[-1] for d in diags])
        coef = (1 - star.alpha[star.central]) / (k - 1)
        checks.append(Check("central_count_gamma_scale",
                            float(np.mean(np.abs(N0 - coef * W_scaled))), 0.05, "<", inp))
        checks.append(Check("central_count_gamma_scale_vs_martingale",
                            float(np.mean(np.abs(N0 - coef * W_mart))), None, "info", inp))
    return checks


def suite_counts(spec: ModelSpec, seed: int, budget: Budget) -> list[Check]:
    if not hat_irreducible(spec):
        return _star_count_checks(spec, seed, budget)
    lim = solve_limits(spec)
    label = "counts"
    n = budget.n_single
    rec = run_trajectory(spec, n, [n], RngStream(sub_seed(seed, label), 0))
    inp = _inputs(spec, seed, label, n=n)
    checks = [
        Check("count_limit_is_distribution",
              float(abs(asy.colour_count_limit(spec, lim).sum() - 1.0)), 1e-10, "<=", inp),
        Check("counts_to_limit",
              float(asy.count_slln_residual(rec, asy.colour_count_limit(spec, lim))[-1]),
              budget.slln_tol, "<", inp),
    ]
    regime = spectrum(spec).regime
    if regime is not Regime.OUTSIDE_THEOREM:
        checks += _covariance_checks(spec, lim, seed, f"{label}/cov", budget.n_ens, budget.m_cov, regime)
    return checks


def suite_star(spec: ModelSpec, seed: int, budget: Budget) -> list[Check]:
    star = detect_star(spec.R)
    k, g = spec.k, star.gamma
    n, m = budget.star_n, budget.star_m
    label = "star"
    checkpoints = [0] + parse_schedule("geometric:2", n)
    recs = run_ensemble(spec, n, m, sub_seed(seed, label), checkpoints)
    inp = _inputs(spec, seed, label, n=n, m=m)
    diags = [asy.star_diagnostics(r, spec) for r in recs]
    W = np.array([d.W for d in diags])
    W0 = float(spec.U0 @ diags[0].xi)
    # at n = 0 every replica has W = W0 and the standard error is rounding noise
    se = np.maximum(W.std(axis=0, ddof=1) / math.sqrt(m), 1e-12 * max(1.0, W0))
    z = np.abs(W.mean(axis=0) - W0) / se
    checks = [
        Check("pair_identity_residual", max(d.identity_residual for d in diags), 1e-9, "<=", inp),
        Check("martingale_mean_max_z", float(np.max(z)), 3.0, "<=", inp),
        Check("martingale_nonnegative_min", float(W.min()), 0.0, ">=", inp),
        Check("euler_product_ratio_error", abs(diags[0].euler_ratio() - 1.0), 0.02, "<=", inp),
        Check("central_share_min", float(min(d.central_share[-1] for d in diags)),
              budget.central_share_min, ">=", inp),
    ]
    U_final = np.array([r.U[-1] for r in recs])
    W_scaled = np.array([d.W_scaled[-1] for d in diags])
    for j in range(k):
        if j == star.central or star.alpha[j] <= 0:
            continue
        lhs = U_final[:, j] / n**g
        coef = star.alpha[j] / (k - 1)
        checks.append(Check(f"growth_law_colour{j}",
                            float(np.mean(np.abs(lhs - coef * W_scaled))), 0.05, "<", inp))
        checks.append(Check(f"growth_law_colour{j}_vs_martingale",
                            float(np.mean(np.abs(lhs - coef * W[:, -1]))), None, "info", inp))
    return checks


def suite_friedman(spec: ModelSpec, seed: int, budget: Budget) -> list[Check]:
    from .betadist import beta_cdf

    n, m = budget.n_ens, budget.m_ens
    label = "friedman"
    recs = run_ensemble(spec, n, m, sub_seed(seed, label), [n])
    share = np.array([r.U[-1, 0] / (n + 1.0) for r in recs])
    tol = budget.ks_tol if budget.ks_tol is not None else asy.ks_critical_value(m)
    inp = _inputs(spec, seed, label, n=n, m=m)
    stat = asy.ks_statistic(share, beta_cdf(spec.U0[0], spec.U0[1]))
    return [Check("ks_beta_limit", stat, tol, "<", inp)]


_RUNNERS = {
    "invariants": suite_invariants,
    "slln": suite_slln,
    "clt": suite_clt,
    "counts": suite_counts,
    "star": suite_star,
    "friedman": suite_friedman,
}


def run_verification(spec: ModelSpec, suite: str, seed: int, budget: str = "quick") -> dict:
    """Run one suite (or ``all`` applicable suites) and build the JSON report.

    Raises :class:`InapplicableSuite` if a single named suite does not apply.
    """
    b = BUDGETS[budget]
    names = SUITES if suite == "all" else (suite,)
    if suite != "all" and suite not in _RUNNERS:
        raise InapplicableSuite(f"unknown suite {suite!r}")
    checks, skipped = [], []
    for name in names:
        reason = inapplicable_reason(spec, name)
        if reason is not None:
            if suite != "all":
                raise InapplicableSuite(f"suite {name!r} does not apply: {reason}")
            skipped.append({"suite": name, "reason": reason})
            continue
        try:
            for c in _RUNNERS[name](spec, seed, b):
                d = c.to_dict()
                d["suite"] = name
                checks.append(d)
        except InvariantViolation as exc:
            checks.append({"suite": name, "name": "simulation", "statistic": None,
                           "pass": False, "error": str(exc)})
    verdicts = [c["pass"] for c in checks if c["pass"] is not None]
    return {
        "schema": SCHEMA,
        "suite": suite,
        "budget": budget,
        "seed": seed,
        "model": spec.to_dict(),
        "model_digest": spec_digest(spec),
        "checks": checks,
        "skipped": skipped,
        "pass": all(verdicts),
    }
