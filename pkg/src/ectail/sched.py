"""Probabilistic scheduling policies for k-of-n chunk dispatch.

A policy is an ``r x n`` matrix ``pi`` where ``pi[i, j]`` is the probability
that a request for file ``i`` reads a chunk from server ``j``.  Every row sums
to ``k`` since each request reads exactly ``k`` distinct chunks.

Two samplers realize such a matrix:

* ``uniform``: every k-subset is equally likely (requires ``pi = k/n``).
* ``marginal``: systematic sampling over the servers sorted by decreasing
  probability, with one uniform start.  Inclusion probabilities equal the row
  of ``pi`` exactly; the joint law over subsets is one valid choice among many.

Servers are indexed from 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .dist import ParetoParams, ServerRate, pareto_mean

__all__ = [
    "UNIFORM",
    "MARGINAL",
    "PolicyShapeError",
    "SchedulingPolicy",
    "FileClass",
    "WorkloadSpec",
    "ValidationReport",
    "StabilityReport",
    "uniform_policy",
    "validate_policy",
    "sample_subset",
    "SubsetSampler",
    "node_arrival_rates",
    "stability_check",
    "workload_stability",
]

UNIFORM = "uniform"
MARGINAL = "marginal"
ROW_TOL = 1e-9
WARN_RHO = 0.95


class PolicyShapeError(ValueError):
    """Policy matrix dimensions do not match the workload."""


@dataclass(frozen=True)
class FileClass:
    rate: float
    pareto: ParetoParams


@dataclass(frozen=True)
class WorkloadSpec:
    file_classes: tuple
    n: int
    k: int

    def __post_init__(self):
        object.__setattr__(self, "file_classes", tuple(self.file_classes))
        if not 1 <= self.k <= self.n:
            raise ValueError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        if not self.file_classes:
            raise ValueError("workload needs at least one file class")
        for i, fc in enumerate(self.file_classes):
            if not fc.rate > 0:
                raise ValueError(f"file class {i}: arrival rate must be positive")

    @property
    def r(self) -> int:
        return len(self.file_classes)

    @property
    def rates(self) -> np.ndarray:
        return np.array([fc.rate for fc in self.file_classes])


@dataclass(frozen=True)
class SchedulingPolicy:
    pi: np.ndarray
    mode: str = MARGINAL

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float)
        if pi.ndim != 2:
            raise PolicyShapeError("policy matrix must be two-dimensional")
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        if self.mode not in (UNIFORM, MARGINAL):
            raise ValueError(f"unknown sampling mode {self.mode!r}")

    @property
    def shape(self):
        return self.pi.shape

    def row_k(self, i: int) -> int:
        return int(round(self.pi[i].sum()))


def uniform_policy(r: int, n: int, k: int) -> SchedulingPolicy:
    return SchedulingPolicy(np.full((r, n), k / n), UNIFORM)


@dataclass
class ValidationReport:
    row_errors: List[tuple] = field(default_factory=list)
    entry_errors: List[tuple] = field(default_factory=list)
    mode_errors: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.row_errors or self.entry_errors or self.mode_errors)

    def __bool__(self):
        return self.ok

    def messages(self) -> List[str]:
        out = [f"row {i}: sum {s!r} != k={k}" for i, s, k in self.row_errors]
        out += [f"entry ({i}, {j}): {v!r} outside [0, 1]" for i, j, v in self.entry_errors]
        return out + list(self.mode_errors)


def validate_policy(policy: SchedulingPolicy, w: WorkloadSpec) -> ValidationReport:
    """List every out-of-range entry and every row not summing to k.

    Raises PolicyShapeError on a dimension mismatch, which is not a
    constraint violation.
    """
    if policy.shape != (w.r, w.n):
        raise PolicyShapeError(f"policy is {policy.shape}, workload needs {(w.r, w.n)}")
    rep = ValidationReport()
    pi = policy.pi
    for i, j in zip(*np.nonzero((pi < 0) | (pi > 1) | ~np.isfinite(pi))):
        rep.entry_errors.append((int(i), int(j), float(pi[i, j])))
    sums = pi.sum(axis=1)
    for i, s in enumerate(sums):
        if abs(s - w.k) > ROW_TOL:
            rep.row_errors.append((i, float(s), w.k))
    if policy.mode == UNIFORM and not np.allclose(pi, w.k / w.n, rtol=0, atol=ROW_TOL):
        rep.mode_errors.append(f"uniform mode requires every entry equal k/n={w.k / w.n!r}")
    return rep


def _systematic(probs_sorted, order, starts):
    """Vectorized systematic sampling.

    For each start ``u`` in [0, 1) the points ``u, u+1, ..., u+k-1`` are
    swept over the cumulative probabilities; server ``order[j]`` is picked when
    a point falls in its interval.  Intervals have length <= 1, so each holds
    at most one point and exactly k distinct servers come out.
    """
    cum = np.concatenate(([0.0], np.cumsum(probs_sorted)))
    cum[-1] = round(cum[-1])
    # number of points at or below each cumulative edge
    hits = np.floor(cum[None, :] - starts[:, None] + 1.0)
    picked = np.diff(hits, axis=1) > 0
    return picked, order


class SubsetSampler:
    """Draws dispatch subsets for one policy from a dedicated random stream.

    Draws are produced in blocks; the i-th subset returned depends only on the
    stream seed and i, not on the block size.
    """

    def __init__(self, policy: SchedulingPolicy, rng: np.random.Generator, block: int = 4096):
        self.policy = policy
        self.rng = rng
        self.block = block
        r, n = policy.shape
        self.n = n
        self._k = [policy.row_k(i) for i in range(r)]
        self._buf = [None] * r
        self._pos = [0] * r
        if policy.mode == MARGINAL:
            self._orders = []
            for i in range(r):
                order = np.argsort(-policy.pi[i], kind="stable")
                probs = policy.pi[i][order]
                self._orders.append((order, probs))

    def _refill(self, i: int):
        k = self._k[i]
        if self.policy.mode == UNIFORM:
            keys = self.rng.random((self.block, self.n))
            sets = np.argpartition(keys, k - 1, axis=1)[:, :k] if k < self.n else np.tile(np.arange(self.n), (self.block, 1))
        else:
            order, probs = self._orders[i]
            starts = self.rng.random(self.block)
            picked, order = _systematic(probs, order, starts)
            sets = np.broadcast_to(order, picked.shape)[picked].reshape(self.block, k)
        sets = np.sort(sets, axis=1)
        self._buf[i] = sets.tolist()
        self._pos[i] = 0

    def draw(self, i: int) -> list:
        buf = self._buf[i]
        if buf is None or self._pos[i] >= len(buf):
            self._refill(i)
            buf = self._buf[i]
        out = buf[self._pos[i]]
        self._pos[i] += 1
        return out


def sample_subset(policy: SchedulingPolicy, file: int, rng: np.random.Generator) -> frozenset:
    """One dispatch subset of k distinct servers for a request of ``file``."""
    return frozenset(SubsetSampler(policy, rng, block=1).draw(file))


def node_arrival_rates(policy: SchedulingPolicy, w: WorkloadSpec) -> np.ndarray:
    """Per-server chunk arrival rates ``Lambda_j = sum_i lambda_i pi[i, j]``."""
    if policy.shape != (w.r, w.n):
        raise PolicyShapeError(f"policy is {policy.shape}, workload needs {(w.r, w.n)}")
    return w.rates @ policy.pi


@dataclass(frozen=True)
class StabilityReport:
    rho: np.ndarray
    verdict: str

    @property
    def stable(self) -> bool:
        return self.verdict != "UNSTABLE"

    @property
    def warn_servers(self) -> List[int]:
        return [int(j) for j in np.nonzero((self.rho >= WARN_RHO) & (self.rho < 1))[0]]


def stability_check(rates: Sequence[float], servers: Sequence[ServerRate], pareto: ParetoParams) -> StabilityReport:
    """Utilization ``rho_j = Lambda_j E[L] / mu_j`` per server and an overall verdict.

    The verdict is STABLE when every ``rho_j < 0.95``, WARN when the largest lies
    in [0.95, 1) and UNSTABLE otherwise.  Nothing is raised; callers decide.
    """
    rates = np.asarray(rates, dtype=float)
    if len(rates) != len(servers):
        raise PolicyShapeError(f"{len(rates)} rates for {len(servers)} servers")
    mus = np.array([s.mu for s in servers])
    return _verdict(rates * pareto_mean(pareto) / mus)


def workload_stability(policy: SchedulingPolicy, w: WorkloadSpec, servers: Sequence[ServerRate]) -> StabilityReport:
    """Like ``stability_check`` but with each file class's own mean chunk size."""
    if len(servers) != w.n:
        raise PolicyShapeError(f"{len(servers)} servers for n={w.n}")
    if policy.shape != (w.r, w.n):
        raise PolicyShapeError(f"policy is {policy.shape}, workload needs {(w.r, w.n)}")
    work = np.array([fc.rate * pareto_mean(fc.pareto) for fc in w.file_classes])
    mus = np.array([s.mu for s in servers])
    return _verdict(work @ policy.pi / mus)


def _verdict(rho) -> StabilityReport:
    top = rho.max() if rho.size else 0.0
    if top >= 1:
        verdict = "UNSTABLE"
    elif top >= WARN_RHO:
        verdict = "WARN"
    else:
        verdict = "STABLE"
    return StabilityReport(rho, verdict)
