"""Experiment configuration files.

Configs are TOML with a strict schema: unknown keys are errors, so a typo
such as ``alpha_`` never silently falls back to a default.  See
``examples/`` in the repository for complete files.
"""
from __future__ import annotations

from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
import tomli
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .dist import ParetoParams, ServerRate
from .sched import (
    MARGINAL,
    UNIFORM,
    FileClass,
    SchedulingPolicy,
    WorkloadSpec,
    stability_check,
    uniform_policy,
    validate_policy,
    workload_stability,
    node_arrival_rates,
)
from .simcore import FIXED_CATALOG, PER_REQUEST, SimConfig

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "loads_config",
    "dumps_config",
    "SCENARIOS",
]

SINGLE_SERVER = "single_server"
FULL_SYSTEM = "full_system"
GENIE = "genie"
ALL = "all"
SCENARIOS = (SINGLE_SERVER, FULL_SYSTEM, GENIE, ALL)


class ConfigError(ValueError):
    """Config could not be parsed or validated; the message names the location."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class FileClassSpec(_Strict):
    rate: float = Field(gt=0)
    x_m: float = Field(gt=0)
    alpha: float = Field(gt=1)
    count: int = Field(default=1, ge=1)


class ClusterSpec(_Strict):
    n: int = Field(ge=1)
    k: int = Field(ge=1)
    mu: List[float]
    file_classes: List[FileClassSpec] = Field(min_length=1)
    allow_heavy: bool = False

    @model_validator(mode="after")
    def _check(self):
        if self.k > self.n:
            raise ValueError(f"k={self.k} exceeds n={self.n}")
        if len(self.mu) != self.n:
            raise ValueError(f"mu lists {len(self.mu)} rates for n={self.n}")
        if any(not m > 0 for m in self.mu):
            raise ValueError("every mu must be positive")
        return self

    def expanded_classes(self) -> List[FileClassSpec]:
        out = []
        for fc in self.file_classes:
            out.extend([fc] * fc.count)
        return out


class PolicySpec(_Strict):
    mode: Literal["uniform", "marginal"] = UNIFORM
    pi: Optional[List[List[float]]] = None


class SimulationSpec(_Strict):
    horizon: int = Field(ge=1)
    warmup_fraction: float = Field(default=0.1, ge=0, lt=1)
    chunk_size_mode: Literal["per_request", "fixed_catalog"] = PER_REQUEST
    catalog_seed: Optional[int] = None
    allow_unstable: bool = False


class EstimatorSpec(_Strict):
    order_fraction: float = Field(default=0.05, gt=0, lt=1)
    order_fractions: List[float] = [0.01, 0.02, 0.05, 0.10]
    tolerance_waiting: float = Field(default=0.25, gt=0)
    tolerance_latency: float = Field(default=0.3, gt=0)
    bootstrap: int = Field(default=200, ge=0)
    predicted_index: Optional[float] = None


class OutputSpec(_Strict):
    directory: str = "out"
    write_traces: bool = True
    figures: bool = False


class ExperimentConfig(_Strict):
    scenario: Literal["single_server", "full_system", "genie", "all"]
    seeds: List[int] = Field(min_length=1)
    workers: int = Field(default=1, ge=1)
    cluster: ClusterSpec
    policy: PolicySpec = PolicySpec()
    simulation: SimulationSpec
    estimator: EstimatorSpec = EstimatorSpec()
    output: OutputSpec = OutputSpec()

    @model_validator(mode="after")
    def _check(self):
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        for i, fc in enumerate(self.cluster.file_classes):
            try:
                ParetoParams(fc.x_m, fc.alpha, allow_heavy=self.cluster.allow_heavy)
            except ValueError as exc:
                raise ValueError(f"cluster.file_classes[{i}]: {exc}") from None
        r = len(self.cluster.expanded_classes())
        if self.policy.mode == MARGINAL:
            if self.policy.pi is None:
                raise ValueError("policy.pi is required in marginal mode")
        if self.policy.pi is not None:
            rows = self.policy.pi
            if len(rows) != r or any(len(row) != self.cluster.n for row in rows):
                raise ValueError(f"policy.pi must be {r} x {self.cluster.n}")
            rep = validate_policy(self.scheduling_policy(), self.workload())
            if not rep.ok:
                raise ValueError("policy.pi: " + "; ".join(rep.messages()))
        return self

    # -- derived simulation objects --------------------------------------

    def workload(self) -> WorkloadSpec:
        c = self.cluster
        classes = [
            FileClass(fc.rate, ParetoParams(fc.x_m, fc.alpha, allow_heavy=c.allow_heavy))
            for fc in c.expanded_classes()
        ]
        return WorkloadSpec(classes, c.n, c.k)

    def servers(self):
        return tuple(ServerRate(m) for m in self.cluster.mu)

    def scheduling_policy(self) -> SchedulingPolicy:
        c = self.cluster
        r = len(c.expanded_classes())
        if self.policy.pi is None:
            return uniform_policy(r, c.n, c.k)
        return SchedulingPolicy(np.array(self.policy.pi, dtype=float), self.policy.mode)

    def sim_config(self, seed: int) -> SimConfig:
        s = self.simulation
        return SimConfig(
            workload=self.workload(),
            servers=self.servers(),
            policy=self.scheduling_policy(),
            horizon=s.horizon,
            warmup_fraction=s.warmup_fraction,
            seed=seed,
            chunk_size_mode=s.chunk_size_mode,
            catalog_seed=s.catalog_seed,
            allow_unstable=s.allow_unstable,
        )

    def stability(self):
        w = self.workload()
        pareto = {fc.pareto for fc in w.file_classes}
        if len(pareto) == 1:
            rates = node_arrival_rates(self.scheduling_policy(), w)
            return stability_check(rates, self.servers(), pareto.pop())
        return workload_stability(self.scheduling_policy(), w, self.servers())

    def predicted_index(self) -> float:
        if self.estimator.predicted_index is not None:
            return self.estimator.predicted_index
        # the heaviest class dominates every tail
        return min(fc.alpha for fc in self.cluster.file_classes) - 1.0

    def common_pareto(self) -> Optional[ParetoParams]:
        pareto = {fc.pareto for fc in self.workload().file_classes}
        return pareto.pop() if len(pareto) == 1 else None


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def loads_config(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: parse error: {exc}") from None
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {_format_validation(exc)}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return loads_config(text, str(path))


def dumps_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.model_dump(exclude_none=True))
