"""Simulation of the negatively reinforced urn.

At step ``n`` colour ``j`` is drawn with probability
``theta/(k theta - 1) - U[n, j] / ((k theta - 1)(n + 1))`` and row ``j`` of
``R`` is added to the urn.  Draws use inverse-CDF sampling with one uniform per
step, accumulating the CDF left to right in colour order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .errors import InvariantViolation, MissingHistory, ValidationError
from .matrix_core import ModelSpec, coupled_replacement, selection_operator
from .rng import RngStream

INVARIANT_TOL = 1e-9
CLAMP_TOL = 1e-14


@dataclass(eq=False)
class UrnState:
    """Running state: ``U`` is the ball mass per colour, ``N`` the draw counts."""

    n: int
    U: np.ndarray
    N: np.ndarray
    last_draw: int | None = None


@dataclass(eq=False)
class TrajectoryRecord:
    spec_digest: str
    replica_index: int
    horizon: int
    ns: np.ndarray
    U: np.ndarray
    N: np.ndarray
    draws: np.ndarray | None = None
    W: np.ndarray | None = None

    @property
    def proportions(self) -> np.ndarray:
        """``U_n / (n + 1)`` at each checkpoint."""
        return self.U / (self.ns[:, None] + 1.0)

    @property
    def count_frequencies(self) -> np.ndarray:
        """``N_n / n`` at each checkpoint (``nan`` at ``n = 0``)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.N / self.ns[:, None].astype(float)

    def at(self, n: int) -> int:
        """Row index of checkpoint ``n``."""
        idx = np.searchsorted(self.ns, n)
        if idx >= len(self.ns) or self.ns[idx] != n:
            raise KeyError(f"no checkpoint at n = {n}")
        return int(idx)


def spec_digest(spec: ModelSpec) -> str:
    blob = json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def init_state(spec: ModelSpec) -> UrnState:
    return UrnState(n=0, U=np.array(spec.U0, dtype=float), N=np.zeros(spec.k, dtype=np.int64))


def selection_distribution(state: UrnState, spec: ModelSpec) -> np.ndarray:
    """Conditional law of the next draw.

    Computed from the explicit linear weights and, independently, as
    ``(U / (n + 1)) A``; the two must agree to ``1e-12``.
    """
    k, theta = spec.k, spec.theta
    d = k * theta - 1.0
    x = state.U / (state.n + 1.0)
    p = theta / d - x / d
    p_op = x @ selection_operator(k, theta)
    gap = float(np.max(np.abs(p - p_op)))
    if gap > 1e-12:
        raise InvariantViolation(f"selection formulas disagree by {gap:.3e}", step=state.n)
    if np.any(p < -CLAMP_TOL):
        raise InvariantViolation(f"negative selection probability {p.min()!r}", step=state.n)
    return np.maximum(p, 0.0)


def inverse_cdf(p: np.ndarray, u: float) -> int:
    """First colour whose running CDF exceeds ``u``; ties go left."""
    acc = 0.0
    last = -1
    for j, pj in enumerate(p):
        if pj > 0.0:
            last = j
        acc += pj
        if u < acc:
            return j
    return last


def step(state: UrnState, spec: ModelSpec, rng: RngStream) -> UrnState:
    """One draw; returns a new state (the input is not modified)."""
    p = selection_distribution(state, spec)
    z = inverse_cdf(p, rng.uniform())
    N = state.N.copy()
    N[z] += 1
    return UrnState(n=state.n + 1, U=state.U + spec.R[z], N=N, last_draw=z)


def check_state(U, N, n, spec: ModelSpec, tol: float = INVARIANT_TOL) -> None:
    """Raise :class:`InvariantViolation` unless sum(U) = n + 1, sum(N) = n
    and ``U = U0 + N R``."""
    U = np.asarray(U, dtype=float)
    if int(np.sum(N)) != n:
        raise InvariantViolation(f"sum(N) = {int(np.sum(N))} at n = {n}", step=n)
    total_err = abs(math.fsum(U) - (n + 1))
    if total_err > tol:
        raise InvariantViolation(f"sum(U) off by {total_err:.3e} at n = {n}", step=n)
    recon_err = float(np.max(np.abs(U - (spec.U0 + np.asarray(N, dtype=float) @ spec.R))))
    if recon_err > tol:
        raise InvariantViolation(f"U differs from U0 + N R by {recon_err:.3e} at n = {n}", step=n)


# Compiled kernel.  U is carried with a Neumaier compensation term so the
# absolute invariants stay at rounding level for n ~ 1e6.

@numba.njit(cache=True, nogil=True)
def _invariant_error(U, c, N, U0, R, n):
    k = U.shape[0]
    s = 0.0
    sc = 0.0
    err = 0.0
    for j in range(k):
        v = U[j] + c[j]
        t = s + v
        if abs(s) >= abs(v):
            sc += (s - t) + v
        else:
            sc += (v - t) + s
        s = t
        r = U0[j]
        rc = 0.0
        for i in range(k):
            x = N[i] * R[i, j]
            t = r + x
            if abs(r) >= abs(x):
                rc += (r - t) + x
            else:
                rc += (x - t) + r
            r = t
        e = abs(v - (r + rc))
        if e > err:
            err = e
    e = abs((s + sc) - (n + 1.0))
    if e > err:
        err = e
    return err


@numba.njit(cache=True, nogil=True)
def _simulate(R, theta, U0, uniforms, checkpoints, paranoid, keep_draws,
              out_U, out_N, draws, tol, clamp_tol):
    """Returns ``(status, step)``; status 0 ok, 1 invariant, 2 negative prob."""
    k = R.shape[0]
    horizon = uniforms.shape[0]
    U = U0.copy()
    c = np.zeros(k)
    N = np.zeros(k, dtype=np.int64)
    d = k * theta - 1.0
    base = theta / d
    ci = 0
    nc = checkpoints.shape[0]
    while ci < nc and checkpoints[ci] == 0:
        for j in range(k):
            out_U[ci, j] = U[j]
            out_N[ci, j] = 0
        ci += 1
    for n in range(horizon):
        scale = 1.0 / (d * (n + 1.0))
        u = uniforms[n]
        acc = 0.0
        z = -1
        last = -1
        for j in range(k):
            pj = base - (U[j] + c[j]) * scale
            if pj < 0.0:
                if pj < -clamp_tol:
                    return 2, n
                pj = 0.0
            if pj > 0.0:
                last = j
            acc += pj
            if z < 0 and u < acc:
                z = j
        if z < 0:
            z = last
        for j in range(k):
            x = R[z, j]
            t = U[j] + x
            if abs(U[j]) >= abs(x):
                c[j] += (U[j] - t) + x
            else:
                c[j] += (x - t) + U[j]
            U[j] = t
        N[z] += 1
        if keep_draws:
            draws[n] = z
        m = n + 1
        at_checkpoint = ci < nc and checkpoints[ci] == m
        if paranoid or at_checkpoint:
            if _invariant_error(U, c, N, U0, R, m) > tol:
                return 1, m
        if at_checkpoint:
            for j in range(k):
                out_U[ci, j] = U[j] + c[j]
                out_N[ci, j] = N[j]
            ci += 1
    return 0, horizon


def _normalise_checkpoints(checkpoints, horizon: int) -> np.ndarray:
    ns = np.array(sorted(set(int(c) for c in checkpoints)), dtype=np.int64)
    if len(ns) and (ns[0] < 0 or ns[-1] > horizon):
        raise ValidationError(f"checkpoints must lie in [0, {horizon}]")
    return ns


def run_trajectory(spec: ModelSpec, horizon: int, checkpoints, rng: RngStream,
                   paranoid: bool = False, keep_draws: bool = False) -> TrajectoryRecord:
    """Simulate ``horizon`` draws and snapshot ``U`` and ``N`` at ``checkpoints``.

    Invariants are asserted at every checkpoint (every step with
    ``paranoid=True``).  Output is a deterministic function of the spec, the
    horizon, the checkpoint set and the stream's seed and replica index.
    """
    if horizon < 0:
        raise ValidationError("horizon must be non-negative")
    ns = _normalise_checkpoints(checkpoints, horizon)
    k = spec.k
    out_U = np.zeros((len(ns), k))
    out_N = np.zeros((len(ns), k), dtype=np.int64)
    draws = np.zeros(horizon if keep_draws else 0, dtype=np.int64)
    uniforms = rng.uniforms(horizon)
    status, at = _simulate(
        np.ascontiguousarray(spec.R), float(spec.theta), np.ascontiguousarray(spec.U0),
        uniforms, ns, paranoid, keep_draws, out_U, out_N, draws,
        INVARIANT_TOL, CLAMP_TOL,
    )
    if status == 1:
        raise InvariantViolation(
            f"urn invariant violated at step {at} (replica {rng.replica_index})",
            step=at, replica=rng.replica_index,
        )
    if status == 2:
        raise InvariantViolation(
            f"negative selection probability at step {at} (replica {rng.replica_index})",
            step=at, replica=rng.replica_index,
        )
    return TrajectoryRecord(
        spec_digest=spec_digest(spec),
        replica_index=rng.replica_index,
        horizon=horizon,
        ns=ns,
        U=out_U,
        N=out_N,
        draws=draws if keep_draws else None,
    )


def run_ensemble(spec: ModelSpec, horizon: int, replicas: int, master_seed: int,
                 checkpoints, workers: int = 1, paranoid: bool = False,
                 keep_draws: bool = False) -> list[TrajectoryRecord]:
    """Independent replicas; replica ``i`` uses ``RngStream(master_seed, i)``.

    The result is sorted by replica index and does not depend on ``workers``.
    """
    if replicas < 1:
        raise ValidationError("replicas must be >= 1")

    def one(i):
        try:
            return run_trajectory(spec, horizon, checkpoints, RngStream(master_seed, i),
                                  paranoid=paranoid, keep_draws=keep_draws)
        except InvariantViolation as exc:
            exc.replica = i
            raise

    if workers <= 1:
        records = [one(i) for i in range(replicas)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, range(replicas)))
    return sorted(records, key=lambda r: r.replica_index)


def ensemble_array(records, n: int, stat: str = "U") -> np.ndarray:
    """Stack statistic ``stat`` ("U" or "N") at checkpoint ``n`` across replicas."""
    rows = []
    for rec in records:
        i = rec.at(n)
        rows.append(rec.U[i] if stat == "U" else rec.N[i].astype(float))
    return np.array(rows)


def coupling_residual(record: TrajectoryRecord, spec: ModelSpec) -> float:
    """Max discrepancy between two constructions of the coupled urn ``Uhat = U A``.

    One side accumulates ``Uhat_{n+1} = Uhat_n + (row Z_n of R A)`` from the
    draw sequence (or, without stored draws, from the counts ``N_n``); the other
    multiplies the simulated ``U_n`` by ``A``.
    """
    if len(record.ns) == 0:
        raise MissingHistory("record has no checkpoints to compare")
    A = selection_operator(spec.k, spec.theta)
    Rhat = spec.R @ A
    direct = record.U @ A
    start = spec.U0 @ A
    if record.draws is not None:
        path = np.vstack([start, start + np.cumsum(Rhat[record.draws], axis=0)])
        recursive = path[record.ns]
    else:
        recursive = start + record.N.astype(float) @ Rhat
    return float(np.max(np.abs(recursive - direct)))


def parse_schedule(text: str, horizon: int) -> list[int]:
    """Checkpoint schedule ``linear:<step>`` or ``geometric:<ratio>``.

    The horizon is always included.  ``geometric:2`` with horizon 1000 gives
    ``1, 2, 4, ..., 512, 1000``.
    """
    kind, _, arg = text.partition(":")
    try:
        value = float(arg)
    except ValueError:
        raise ValidationError(f"bad checkpoint schedule {text!r}") from None
    points = set()
    if kind == "linear":
        stride = int(value)
        if stride < 1 or stride != value:
            raise ValidationError("linear schedule needs an integer step >= 1")
        points.update(range(stride, horizon + 1, stride))
    elif kind == "geometric":
        if not value > 1.0:
            raise ValidationError("geometric schedule needs a ratio > 1")
        x = 1.0
        while x < horizon:
            points.add(int(round(x)))
            x *= value
    else:
        raise ValidationError(f"unknown schedule kind {kind!r}")
    if horizon >= 1:
        points.add(horizon)
    return sorted(p for p in points if 1 <= p <= horizon)


def write_trajectory_csv(records, fh) -> None:
    """Rows ``replica,n,U_0..U_{k-1},N_0..N_{k-1}``; floats to 17 significant digits."""
    if not records:
        return
    k = records[0].U.shape[1]
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["replica", "n"] + [f"U_{j}" for j in range(k)] + [f"N_{j}" for j in range(k)])
    for rec in records:
        for i, n in enumerate(rec.ns):
            writer.writerow(
                [rec.replica_index, int(n)]
                + [format(float(x), ".17g") for x in rec.U[i]]
                + [int(x) for x in rec.N[i]]
            )


def read_trajectory_csv(fh) -> list[TrajectoryRecord]:
    """Inverse of :func:`write_trajectory_csv` (digest and horizon not stored)."""
    reader = csv.reader(fh)
    header = next(reader)
    k = (len(header) - 2) // 2
    rows: dict[int, list] = {}
    for row in reader:
        rows.setdefault(int(row[0]), []).append(row)
    out = []
    for rep in sorted(rows):
        block = rows[rep]
        ns = np.array([int(r[1]) for r in block], dtype=np.int64)
        U = np.array([[float(x) for x in r[2:2 + k]] for r in block])
        N = np.array([[int(x) for x in r[2 + k:]] for r in block], dtype=np.int64)
        out.append(TrajectoryRecord("", rep, int(ns.max()) if len(ns) else 0, ns, U, N))
    return out


def trajectory_csv_text(records) -> str:
    buf = io.StringIO()
    write_trajectory_csv(records, buf)
    return buf.getvalue()
