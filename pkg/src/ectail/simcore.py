"""Discrete-event simulation of k-of-n chunk dispatch over per-server FIFO queues.

Each file class emits requests as a Poisson process.  On arrival a request
gets a chunk size ``L`` from its class's Pareto law, picks k servers through
the scheduling policy, and enqueues one chunk at each.  Server ``j`` serves a
chunk of size ``L`` in ``L * X`` seconds, ``X ~ Exp(mu_j)`` drawn per chunk.
A request completes when the last of its k chunks departs.

In genie mode all servers are pooled into one with rate ``sum(mu_j)`` and a
request needs a single chunk.

Randomness comes from independent streams keyed off the master seed:
one per file class for arrivals, one per file class for dispatch, one for
chunk sizes and one for per-chunk service variates.  The size and service
streams are consumed strictly in request-id order, so draw number ``r`` always
belongs to request ``r``.  Changing ``n`` or the policy therefore leaves every
arrival time and chunk size untouched, which is what couples a genie run to
the full system it bounds.
"""
from __future__ import annotations

import heapq
import io
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .dist import ServerRate
from .sched import (
    SchedulingPolicy,
    SubsetSampler,
    WorkloadSpec,
    FileClass,
    uniform_policy,
    validate_policy,
    workload_stability,
)

log = logging.getLogger(__name__)

__all__ = [
    "PER_REQUEST",
    "FIXED_CATALOG",
    "SimulationFault",
    "UnstableConfigError",
    "ChunkJob",
    "SimEvent",
    "SimConfig",
    "LatencyTrace",
    "ServerStats",
    "SimResult",
    "run_simulation",
    "run_genie",
    "genie_config",
    "waiting_times_per_server",
    "chunk_latencies",
    "write_trace",
    "trace_header",
]

PER_REQUEST = "per_request"
FIXED_CATALOG = "fixed_catalog"

ARRIVAL = 0
DEPARTURE = 1

# stream kinds for SeedSequence spawn keys
_S_ARRIVAL, _S_DISPATCH, _S_SIZE, _S_SERVICE, _S_CATALOG = range(5)
_BLOCK = 4096


class SimulationFault(RuntimeError):
    """Internal consistency of the event loop was violated."""


class UnstableConfigError(ValueError):
    """Some server has utilization >= 1 and the run did not opt in."""


@dataclass(slots=True)
class ChunkJob:
    request_id: int
    file_class: int
    server: int
    chunk_size: float
    enqueue_time: float
    service_time: float
    service_start: float = math.nan
    depart_time: float = math.nan


@dataclass(frozen=True, order=True)
class SimEvent:
    time: float
    seq: int
    kind: int = field(compare=False)
    target: int = field(compare=False)


@dataclass(frozen=True)
class SimConfig:
    workload: WorkloadSpec
    servers: tuple
    policy: SchedulingPolicy
    horizon: int
    warmup_fraction: float = 0.1
    seed: int = 0
    chunk_size_mode: str = PER_REQUEST
    catalog_seed: Optional[int] = None
    genie: bool = False
    allow_unstable: bool = False

    def __post_init__(self):
        object.__setattr__(self, "servers", tuple(self.servers))
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if len(self.servers) != self.workload.n:
            raise ValueError(f"{len(self.servers)} server rates for n={self.workload.n}")
        if self.chunk_size_mode not in (PER_REQUEST, FIXED_CATALOG):
            raise ValueError(f"unknown chunk_size_mode {self.chunk_size_mode!r}")


@dataclass
class LatencyTrace:
    """Completed requests in completion order.

    ``servers``, ``wait`` and ``service`` have one row per request and one
    column per dispatched chunk, with servers in ascending order.
    """

    n: int
    k: int
    request_id: np.ndarray
    file_class: np.ndarray
    arrival: np.ndarray
    latency: np.ndarray
    warmup: np.ndarray
    servers: np.ndarray
    wait: np.ndarray
    service: np.ndarray

    def __len__(self):
        return len(self.request_id)

    @property
    def post_warmup(self) -> np.ndarray:
        return ~self.warmup

    def chunk_latency(self) -> np.ndarray:
        """``depart - arrival`` per dispatched chunk (chunks enqueue on arrival)."""
        return self.wait + self.service


@dataclass
class ServerStats:
    chunk_arrivals: np.ndarray
    chunks_served: np.ndarray
    busy_time: np.ndarray
    max_queue: np.ndarray


@dataclass
class SimResult:
    config: SimConfig
    trace: LatencyTrace
    stats: ServerStats
    end_time: float
    rho: np.ndarray
    arrivals_by_class: np.ndarray


def _stream(seed: int, kind: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(kind, index)))


def _open_unit(rng, size):
    u = rng.random(size)
    # Generator.random is [0, 1); map the 0 endpoint inside the open interval
    u[u == 0.0] = np.nextafter(0.0, 1.0)
    return u


class _Exp1Stream:
    """Block-buffered unit-exponential variates via inverse CDF."""

    __slots__ = ("rng", "buf", "pos", "width")

    def __init__(self, rng, width=1):
        self.rng = rng
        self.width = width
        self.buf = []
        self.pos = 0

    def next(self):
        if self.pos >= len(self.buf):
            self.buf = (-np.log(_open_unit(self.rng, _BLOCK * self.width))).reshape(_BLOCK, self.width).tolist()
            self.pos = 0
        out = self.buf[self.pos]
        self.pos += 1
        return out


def genie_config(cfg: SimConfig) -> SimConfig:
    """Pool all servers into one of rate ``sum(mu)`` that needs a single chunk."""
    w = cfg.workload
    pooled = ServerRate(sum(s.mu for s in cfg.servers))
    return replace(
        cfg,
        workload=WorkloadSpec(w.file_classes, n=1, k=1),
        servers=(pooled,),
        policy=uniform_policy(w.r, 1, 1),
        genie=True,
    )


def run_genie(cfg: SimConfig) -> SimResult:
    return run_simulation(genie_config(cfg) if not cfg.genie else cfg)


def run_simulation(cfg: SimConfig) -> SimResult:
    """Simulate until ``cfg.horizon`` file requests have completed.

    Identical configs give identical results.  Raises UnstableConfigError if a
    server is overloaded and ``allow_unstable`` is not set, and SimulationFault
    if event ordering or FIFO bookkeeping is ever inconsistent.
    """
    if cfg.genie and (cfg.workload.n != 1 or cfg.workload.k != 1):
        cfg = genie_config(replace(cfg, genie=False))
    w = cfg.workload
    report = validate_policy(cfg.policy, w)
    if not report.ok:
        raise ValueError("invalid policy: " + "; ".join(report.messages()))
    stab = workload_stability(cfg.policy, w, cfg.servers)
    if not stab.stable and not cfg.allow_unstable:
        raise UnstableConfigError(f"server utilizations {stab.rho.tolist()} reach 1; set allow_unstable")
    if stab.verdict == "WARN":
        log.warning("servers %s run at utilization >= 0.95", stab.warn_servers)

    n, k, r = w.n, w.k, w.r
    horizon = cfg.horizon
    seed = cfg.seed
    mus = [s.mu for s in cfg.servers]
    x_ms = [fc.pareto.x_m for fc in w.file_classes]
    inv_alphas = [1.0 / fc.pareto.alpha for fc in w.file_classes]
    rates = [fc.rate for fc in w.file_classes]

    arrival_streams = [_Exp1Stream(_stream(seed, _S_ARRIVAL, i)) for i in range(r)]
    samplers = [SubsetSampler(cfg.policy, _stream(seed, _S_DISPATCH, i)) for i in range(r)]
    size_stream = _stream(seed, _S_SIZE)
    service_stream = _Exp1Stream(_stream(seed, _S_SERVICE), width=k)
    if cfg.chunk_size_mode == FIXED_CATALOG:
        cat_seed = seed if cfg.catalog_seed is None else cfg.catalog_seed
        u = _open_unit(_stream(cat_seed, _S_CATALOG), r)
        catalog = [x_ms[i] * u[i] ** (-inv_alphas[i]) for i in range(r)]
    else:
        catalog = None
    size_buf: list = []
    size_pos = 0

    # output columns
    out_id = np.empty(horizon, dtype=np.int64)
    out_cls = np.empty(horizon, dtype=np.int64)
    out_arr = np.empty(horizon)
    out_lat = np.empty(horizon)
    out_srv = np.empty((horizon, k), dtype=np.int64)
    out_wait = np.empty((horizon, k))
    out_svc = np.empty((horizon, k))

    queues = [deque() for _ in range(n)]
    last_rid = [-1] * n
    arrivals_srv = [0] * n
    served = [0] * n
    busy = [0.0] * n
    max_q = [0] * n
    arrivals_cls = [0] * r
    # request_id -> [class, arrival, remaining, servers, waits, services]
    pending = {}

    heap: List[tuple] = []
    seq = 0
    for i in range(r):
        heap.append((arrival_streams[i].next()[0] / rates[i], seq, ARRIVAL, i))
        seq += 1
    heapq.heapify(heap)

    now = 0.0
    next_rid = 0
    done = 0
    push, pop = heapq.heappush, heapq.heappop

    while done < horizon:
        t, _, kind, target = pop(heap)
        if t < now:
            raise SimulationFault(f"event time {t!r} precedes clock {now!r}")
        now = t
        if kind == ARRIVAL:
            i = target
            rid = next_rid
            next_rid += 1
            arrivals_cls[i] += 1
            if catalog is None:
                if size_pos >= len(size_buf):
                    size_buf = _open_unit(size_stream, _BLOCK).tolist()
                    size_pos = 0
                L = x_ms[i] * size_buf[size_pos] ** (-inv_alphas[i])
                size_pos += 1
            else:
                L = catalog[i]
            chosen = samplers[i].draw(i)
            exps = service_stream.next()
            svcs = []
            for slot in range(k):
                j = chosen[slot]
                s = L * exps[slot] / mus[j]
                svcs.append(s)
                job = ChunkJob(rid, i, j, L, now, s)
                q = queues[j]
                q.append(job)
                arrivals_srv[j] += 1
                if len(q) > max_q[j]:
                    max_q[j] = len(q)
                if len(q) == 1:
                    job.service_start = now
                    push(heap, (now + s, seq, DEPARTURE, j))
                    seq += 1
                elif q[0].service_start != q[0].service_start:
                    raise SimulationFault(f"server {j} idle with a nonempty queue")
            pending[rid] = [i, now, k, chosen, [0.0] * k, svcs]
            push(heap, (now + arrival_streams[i].next()[0] / rates[i], seq, ARRIVAL, i))
            seq += 1
        else:
            j = target
            q = queues[j]
            if not q:
                raise SimulationFault(f"departure at idle server {j}")
            job = q.popleft()
            if job.request_id <= last_rid[j]:
                raise SimulationFault(f"FIFO violated at server {j}")
            last_rid[j] = job.request_id
            job.depart_time = now
            served[j] += 1
            busy[j] += job.service_time
            if q:
                nxt = q[0]
                nxt.service_start = now
                push(heap, (now + nxt.service_time, seq, DEPARTURE, j))
                seq += 1
            rec = pending[job.request_id]
            slot = rec[3].index(j)
            rec[4][slot] = job.service_start - job.enqueue_time
            rec[2] -= 1
            if rec[2] == 0:
                del pending[job.request_id]
                out_id[done] = job.request_id
                out_cls[done] = rec[0]
                out_arr[done] = rec[1]
                # max over chunks of the same sums the trace stores, so T = max_j A_j bit for bit
                out_lat[done] = max([w + v for w, v in zip(rec[4], rec[5])])
                out_srv[done] = rec[3]
                out_wait[done] = rec[4]
                out_svc[done] = rec[5]
                done += 1

    n_warm = math.floor(cfg.warmup_fraction * horizon)
    warm = np.zeros(horizon, dtype=bool)
    warm[:n_warm] = True
    trace = LatencyTrace(n, k, out_id, out_cls, out_arr, out_lat, warm, out_srv, out_wait, out_svc)
    stats = ServerStats(
        np.array(arrivals_srv), np.array(served), np.array(busy), np.array(max_q)
    )
    return SimResult(cfg, trace, stats, now, stab.rho, np.array(arrivals_cls))


def waiting_times_per_server(trace: LatencyTrace, server: int) -> np.ndarray:
    """Post-warmup chunk waiting times at ``server``, in that server's service order."""
    if not 0 <= server < trace.n:
        raise IndexError(f"server {server} out of range for n={trace.n}")
    mask = (trace.servers == server) & trace.post_warmup[:, None]
    rows, cols = np.nonzero(mask)
    # FIFO: service order at a server is request-id order
    order = np.argsort(trace.request_id[rows], kind="stable")
    return trace.wait[rows[order], cols[order]]


def chunk_latencies(trace: LatencyTrace, post_warmup_only: bool = True) -> np.ndarray:
    """Per-request chunk latency at every server, 0 where a server was not used.

    Returns an ``(requests, n)`` array so that row maxima are the file latencies.
    """
    sel = trace.post_warmup if post_warmup_only else np.ones(len(trace), dtype=bool)
    out = np.zeros((int(sel.sum()), trace.n))
    rows = np.arange(out.shape[0])[:, None]
    out[rows, trace.servers[sel]] = trace.chunk_latency()[sel]
    return out


def trace_header(k: int) -> List[str]:
    cols = ["request_id", "class", "arrival", "latency", "warmup"]
    for s in range(1, k + 1):
        cols += [f"server_{s}", f"wait_{s}", f"service_{s}"]
    return cols


def write_trace(trace: LatencyTrace, fh: io.TextIOBase):
    """Write one comma-separated row per completed request.

    Columns: request_id, class, arrival, latency, warmup (0/1), then for each
    of the k dispatched chunks in ascending server order the triple
    server, wait, service.  Floats use the shortest round-trip representation.
    """
    fh.write(",".join(trace_header(trace.k)) + "\n")
    r = repr
    ids = trace.request_id.tolist()
    cls = trace.file_class.tolist()
    arr = trace.arrival.tolist()
    lat = trace.latency.tolist()
    warm = trace.warmup.tolist()
    srv = trace.servers.tolist()
    wait = trace.wait.tolist()
    svc = trace.service.tolist()
    lines = []
    for idx in range(len(ids)):
        parts = [str(ids[idx]), str(cls[idx]), r(arr[idx]), r(lat[idx]), "1" if warm[idx] else "0"]
        for s, wv, sv in zip(srv[idx], wait[idx], svc[idx]):
            parts += [str(s), r(wv), r(sv)]
        lines.append(",".join(parts))
        if len(lines) >= 8192:
            fh.write("\n".join(lines) + "\n")
            lines.clear()
    if lines:
        fh.write("\n".join(lines) + "\n")
