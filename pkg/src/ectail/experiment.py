"""Seeded replications, tail analysis and report assembly.

``run_experiment`` simulates every seed, analyzes the post-warmup samples per
seed and pooled over seeds, and returns a ``ReportBundle``.  ``write_bundle``
serializes it: per-seed directories (traces and summaries), ``report.json``,
one delimited file per curve and a ``manifest.json`` listing everything.

Verdicts:

* waiting_tail: waiting-time tail index at the most loaded server is alpha-1.
* genie_bound: genie (pooled server) latency tail index is alpha-1 and the
  genie CCDF does not exceed the full-system CCDF in the top decile.
* file_latency_tail: file latency tail index under probabilistic scheduling is
  alpha-1 and the union bound over servers holds on every trace.

The exit status is 0 iff every enabled verdict passes and no seed failed.
"""
from __future__ import annotations

import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import simcore
from .config import ALL, FULL_SYSTEM, GENIE, SINGLE_SERVER, ExperimentConfig
from .dist import (
    ServiceLawB,
    WaitingTailParams,
    pk_mean_waiting,
    service_ccdf,
    service_mean,
    waiting_tail_asymptote,
)
from .sched import node_arrival_rates
from .tailest import (
    InsufficientDataError,
    default_window,
    empirical_ccdf,
    hill_sweep,
    verify_tail_index,
)

log = logging.getLogger(__name__)

__all__ = [
    "EXIT_OK",
    "EXIT_VERDICT",
    "EXIT_CONFIG",
    "EXIT_RUNTIME",
    "CurveTable",
    "ReportBundle",
    "run_experiment",
    "emit_plot_data",
    "write_bundle",
    "union_bound_check",
    "genie_dominance_check",
    "asymptote_ratio_check",
]

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

CURVE_POINTS = 48
ASYMPTOTE_DECADES = 0.5
ASYMPTOTE_POINTS = 8
ASYMPTOTE_BAND = (0.5, 2.0)
DOMINANCE_SIGMAS = 3.0
DOMINANCE_POINTS = 16


@dataclass
class CurveTable:
    name: str
    role: str
    columns: List[str]
    rows: List[tuple]


@dataclass
class SeedOutcome:
    seed: int
    full: Optional[simcore.SimResult] = None
    genie: Optional[simcore.SimResult] = None
    error: Optional[str] = None


@dataclass
class ReportBundle:
    config: ExperimentConfig
    report: dict
    seed_summaries: Dict[int, dict] = field(default_factory=dict)
    curves: List[CurveTable] = field(default_factory=list)
    outcomes: List[SeedOutcome] = field(default_factory=list)

    @property
    def exit_status(self) -> int:
        return self.report.get("exit_status", EXIT_OK)


# -- simulation ------------------------------------------------------------


def _needs(scenario):
    full = True
    genie = scenario in (GENIE, ALL)
    return full, genie


def _run_seed(cfg: ExperimentConfig, seed: int) -> SeedOutcome:
    out = SeedOutcome(seed)
    try:
        _, want_genie = _needs(cfg.scenario)
        sim_cfg = cfg.sim_config(seed)
        out.full = simcore.run_simulation(sim_cfg)
        if want_genie:
            out.genie = simcore.run_genie(sim_cfg)
    except Exception as exc:  # reported per seed; other seeds continue
        log.error("seed %d failed: %s", seed, exc)
        out.error = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        out.full = out.genie = None
    return out


def _simulate(cfg: ExperimentConfig) -> List[SeedOutcome]:
    seeds = sorted(cfg.seeds)
    if cfg.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(seeds))) as pool:
            outcomes = list(pool.map(_run_seed, [cfg] * len(seeds), seeds))
    else:
        outcomes = [_run_seed(cfg, s) for s in seeds]
    return sorted(outcomes, key=lambda o: o.seed)


# -- checks ----------------------------------------------------------------


def union_bound_check(trace: simcore.LatencyTrace, grid=None) -> dict:
    """Exact count check of ``#{T >= x} <= sum_j #{A_j >= x}`` on one trace.

    ``A_j`` is the chunk latency at server j, taken as 0 when j was not used.
    """
    A = simcore.chunk_latencies(trace)
    T = trace.latency[trace.post_warmup]
    if T.size == 0:
        return {"verdict": "pass", "violations": 0, "grid_points": 0}
    if grid is None:
        pos = T[T > 0]
        grid = np.geomspace(pos.min(), pos.max(), 32)
    grid = np.asarray(grid, dtype=float)
    lhs = (T[:, None] >= grid[None, :]).sum(axis=0)
    A_sorted = np.sort(A, axis=0)
    rhs = np.zeros(grid.size, dtype=np.int64)
    for j in range(A.shape[1]):
        rhs += A.shape[0] - np.searchsorted(A_sorted[:, j], grid, side="left")
    bad = np.nonzero(lhs > rhs)[0]
    return {
        "verdict": "pass" if bad.size == 0 else "fail",
        "violations": int(bad.size),
        "grid_points": int(grid.size),
        "grid": grid.tolist(),
        "file_exceed": lhs.tolist(),
        "sum_server_exceed": rhs.tolist(),
        "requests": int(T.size),
    }


def genie_dominance_check(genie_lat, full_lat, sigmas: float = DOMINANCE_SIGMAS) -> dict:
    """Genie CCDF must not exceed the full-system CCDF (at ``sigmas``) in the top decile."""
    genie_lat = np.sort(np.asarray(genie_lat, dtype=float))
    full_lat = np.sort(np.asarray(full_lat, dtype=float))
    ng, nf = genie_lat.size, full_lat.size
    lo = float(np.quantile(full_lat, 0.9))
    hi = float(full_lat[-min(11, nf)])
    grid = np.geomspace(lo, hi, DOMINANCE_POINTS) if hi > lo else np.array([lo])
    pg = (ng - np.searchsorted(genie_lat, grid, side="right")) / ng
    pf = (nf - np.searchsorted(full_lat, grid, side="right")) / nf
    sigma = np.sqrt(pg * (1 - pg) / ng + pf * (1 - pf) / nf)
    slack = pg - pf - sigmas * sigma
    bad = np.nonzero(slack > 0)[0]
    return {
        "verdict": "pass" if bad.size == 0 else "fail",
        "violations": int(bad.size),
        "grid": grid.tolist(),
        "genie_p": pg.tolist(),
        "full_p": pf.tolist(),
        "sigmas": sigmas,
    }


def asymptote_ratio_check(waits, params: WaitingTailParams, decades: float = ASYMPTOTE_DECADES) -> dict:
    """Ratio of empirical ``P(W > x)`` to the waiting-tail asymptote over the top ``decades``.

    The top of the range stops at the 11th largest observation, as for the
    regression window, since the last few order statistics carry no
    probability resolution.
    """
    waits = np.asarray(waits, dtype=float)
    pos = waits[waits > 0]
    _, hi = default_window(pos)
    grid = np.geomspace(hi / 10.0**decades, hi, ASYMPTOTE_POINTS)
    curve = empirical_ccdf(waits, grid)
    ratio = curve.p / waiting_tail_asymptote(params, curve.x)
    lo_band, hi_band = ASYMPTOTE_BAND
    ok = bool(ratio.size == grid.size and np.all((ratio >= lo_band) & (ratio <= hi_band)))
    return {
        "verdict": "pass" if ok else "fail",
        "band": list(ASYMPTOTE_BAND),
        "x": curve.x.tolist(),
        "ratio": ratio.tolist(),
        "min_ratio": float(ratio.min()) if ratio.size else None,
        "max_ratio": float(ratio.max()) if ratio.size else None,
    }


# -- analysis --------------------------------------------------------------


def _tagged_server(cfg: ExperimentConfig) -> int:
    rates = node_arrival_rates(cfg.scheduling_policy(), cfg.workload())
    return int(np.argmax(rates))


def _service_samples(trace: simcore.LatencyTrace, server: int):
    mask = (trace.servers == server) & trace.post_warmup[:, None]
    return trace.service[mask]


def _verify(samples, predicted, tol, est, seed):
    try:
        rep = verify_tail_index(samples, predicted, tol, order_fraction=est.order_fraction, n_boot=est.bootstrap, seed=seed)
    except (InsufficientDataError, ValueError) as exc:
        return None, {"verdict": "fail", "error": str(exc)}
    return rep, rep.as_dict()


def _sweep(samples, est, seed):
    pos = np.asarray(samples)
    pos = pos[pos > 0]
    return [e.as_dict() for e in hill_sweep(pos, est.order_fractions, n_boot=est.bootstrap, seed=seed)]


def _ccdf_rows(samples, analytic=None):
    curve = empirical_ccdf(samples, CURVE_POINTS)
    if analytic is None:
        return [(x, p) for x, p in zip(curve.x.tolist(), curve.p.tolist())]
    a = np.asarray(analytic(curve.x), dtype=float).tolist()
    return [(x, p, q) for x, p, q in zip(curve.x.tolist(), curve.p.tolist(), a)]


def _sweep_rows(sweep):
    return [(e["order_fraction"], e["index_hat"], e["ci"][0], e["ci"][1], e["sample_count"]) for e in sweep]


def _analyze_waiting_tail(cfg, outcomes, curves, report):
    est = cfg.estimator
    j = _tagged_server(cfg)
    predicted = cfg.predicted_index()
    base_seed = outcomes[0].seed
    waits_by_seed = {o.seed: simcore.waiting_times_per_server(o.full.trace, j) for o in outcomes}
    pooled = np.concatenate(list(waits_by_seed.values()))
    rep, pooled_dict = _verify(pooled, predicted, est.tolerance_waiting, est, base_seed)
    per_seed = {}
    for s, w in waits_by_seed.items():
        per_seed[str(s)] = _verify(w, predicted, est.tolerance_waiting, est, s)[1]
    sweep = _sweep(pooled, est, base_seed)
    section = {
        "claim": "waiting-time tail index at one server equals alpha - 1",
        "server": j,
        "predicted": predicted,
        "verdict": pooled_dict["verdict"],
        "pooled": pooled_dict,
        "per_seed": per_seed,
        "hill_sweep": sweep,
        "mean_wait": float(pooled.mean()) if pooled.size else None,
    }

    pareto = cfg.common_pareto()
    service = np.concatenate([_service_samples(o.full.trace, j) for o in outcomes])
    lam = float(node_arrival_rates(cfg.scheduling_policy(), cfg.workload())[j])
    law = ServiceLawB(pareto, cfg.servers()[j]) if pareto is not None else None
    rho = lam * service_mean(law) if law is not None else None
    if law is not None:
        curves.append(CurveTable("service_ccdf", "service time CCDF, empirical vs closed form",
                                 ["x", "empirical_p", "analytic_p"],
                                 _ccdf_rows(service, lambda x: service_ccdf(law, x))))
    if law is not None and rho < 1:
        params = WaitingTailParams.from_load(lam, law)
        curves.append(CurveTable("waiting_ccdf", "waiting-time CCDF, empirical vs heavy-tail asymptote",
                                 ["x", "empirical_p", "analytic_p"],
                                 _ccdf_rows(pooled, lambda x: waiting_tail_asymptote(params, x))))
        diag = {"lambda": lam, "rho": params.rho}
        try:
            diag["asymptote_ratio"] = asymptote_ratio_check(pooled, params)
        except InsufficientDataError as exc:
            diag["asymptote_ratio"] = {"verdict": "fail", "error": str(exc)}
        if pareto.alpha > 2:
            pk = pk_mean_waiting(lam, law)
            diag["pk_mean_wait"] = pk
            diag["mean_wait_rel_error"] = (section["mean_wait"] - pk) / pk if section["mean_wait"] is not None else None
        section["diagnostics"] = diag
    else:
        if law is None:
            curves.append(CurveTable("service_ccdf", "service time CCDF, empirical", ["x", "empirical_p"], _ccdf_rows(service)))
        else:
            # overloaded server: no stationary waiting law to compare against
            section["diagnostics"] = {"lambda": lam, "rho": rho}
        curves.append(CurveTable("waiting_ccdf", "waiting-time CCDF, empirical", ["x", "empirical_p"], _ccdf_rows(pooled)))
    curves.append(CurveTable("hill_sweep", "Hill estimates of waiting-time tail by order fraction",
                             ["order_fraction", "index_hat", "ci_low", "ci_high", "sample_count"], _sweep_rows(sweep)))
    report["verdicts"]["waiting_tail"] = section
    return rep


def _analyze_file_latency_tail(cfg, outcomes, curves, report):
    est = cfg.estimator
    predicted = cfg.predicted_index()
    base_seed = outcomes[0].seed
    lat = {o.seed: o.full.trace.latency[o.full.trace.post_warmup] for o in outcomes}
    pooled = np.concatenate(list(lat.values()))
    _, pooled_dict = _verify(pooled, predicted, est.tolerance_latency, est, base_seed)
    per_seed = {str(s): _verify(v, predicted, est.tolerance_latency, est, s)[1] for s, v in lat.items()}
    grid = np.geomspace(pooled[pooled > 0].min(), pooled.max(), 32)
    ub = {str(o.seed): union_bound_check(o.full.trace, grid) for o in outcomes}
    ub_ok = all(u["verdict"] == "pass" for u in ub.values())
    sweep = _sweep(pooled, est, base_seed)

    n_total = sum(u["requests"] for u in ub.values())
    file_exceed = np.sum([u["file_exceed"] for u in ub.values()], axis=0) / n_total
    server_exceed = np.sum([u["sum_server_exceed"] for u in ub.values()], axis=0) / n_total
    keep = file_exceed > 0
    curves.append(CurveTable("file_latency_ccdf", "file latency CCDF with union bound over servers",
                             ["x", "empirical_p", "union_bound_p"],
                             list(zip(grid[keep].tolist(), file_exceed[keep].tolist(), server_exceed[keep].tolist()))))
    curves.append(CurveTable("hill_sweep_file_latency", "Hill estimates of file latency tail by order fraction",
                             ["order_fraction", "index_hat", "ci_low", "ci_high", "sample_count"], _sweep_rows(sweep)))
    tail_ok = pooled_dict["verdict"] == "pass"
    report["verdicts"]["file_latency_tail"] = {
        "claim": "probabilistic scheduling achieves file latency tail index alpha - 1",
        "predicted": predicted,
        "verdict": "pass" if tail_ok and ub_ok else "fail",
        "pooled": pooled_dict,
        "per_seed": per_seed,
        "hill_sweep": sweep,
        "union_bound": {"verdict": "pass" if ub_ok else "fail",
                        "per_seed": {s: {k: u[k] for k in ("verdict", "violations", "grid_points", "requests")}
                                     for s, u in ub.items()}},
        "completed_requests_post_warmup": int(pooled.size),
    }


def _analyze_genie_bound(cfg, outcomes, curves, report):
    est = cfg.estimator
    predicted = cfg.predicted_index()
    base_seed = outcomes[0].seed
    g = {o.seed: o.genie.trace.latency[o.genie.trace.post_warmup] for o in outcomes}
    pooled = np.concatenate(list(g.values()))
    full = np.concatenate([o.full.trace.latency[o.full.trace.post_warmup] for o in outcomes])
    _, pooled_dict = _verify(pooled, predicted, est.tolerance_latency, est, base_seed)
    per_seed = {str(s): _verify(v, predicted, est.tolerance_latency, est, s)[1] for s, v in g.items()}
    dom = genie_dominance_check(pooled, full)
    sweep = _sweep(pooled, est, base_seed)
    curves.append(CurveTable("genie_latency_ccdf", "genie vs full-system latency CCDF",
                             ["x", "genie_p", "full_p"],
                             _ccdf_pair_rows(pooled, full)))
    curves.append(CurveTable("hill_sweep_genie", "Hill estimates of genie latency tail by order fraction",
                             ["order_fraction", "index_hat", "ci_low", "ci_high", "sample_count"], _sweep_rows(sweep)))
    tail_ok = pooled_dict["verdict"] == "pass"
    report["verdicts"]["genie_bound"] = {
        "claim": "no scheduling beats tail index alpha - 1 (pooled genie server)",
        "predicted": predicted,
        "pooled_rate": sum(cfg.cluster.mu),
        "verdict": "pass" if tail_ok and dom["verdict"] == "pass" else "fail",
        "pooled": pooled_dict,
        "per_seed": per_seed,
        "hill_sweep": sweep,
        "genie_dominance": dom,
    }


def _ccdf_pair_rows(a, b):
    both = np.concatenate([a, b])
    pos = both[both > 0]
    grid = np.geomspace(pos.min(), pos.max(), CURVE_POINTS)
    a, b = np.sort(a), np.sort(b)
    pa = (a.size - np.searchsorted(a, grid, side="right")) / a.size
    pb = (b.size - np.searchsorted(b, grid, side="right")) / b.size
    keep = (pa > 0) | (pb > 0)
    return list(zip(grid[keep].tolist(), pa[keep].tolist(), pb[keep].tolist()))


def _seed_summary(o: SeedOutcome) -> dict:
    if o.error:
        return {"seed": o.seed, "error": o.error}
    res = o.full
    tr = res.trace
    out = {
        "seed": o.seed,
        "end_time": res.end_time,
        "rho": res.rho.tolist(),
        "arrivals_by_class": res.arrivals_by_class.tolist(),
        "chunk_arrivals": res.stats.chunk_arrivals.tolist(),
        "busy_fraction": (res.stats.busy_time / res.end_time).tolist(),
        "max_queue": res.stats.max_queue.tolist(),
        "completed": len(tr),
        "mean_latency": float(tr.latency[tr.post_warmup].mean()) if tr.post_warmup.any() else None,
    }
    if o.genie is not None:
        gt = o.genie.trace
        out["genie_mean_latency"] = float(gt.latency[gt.post_warmup].mean()) if gt.post_warmup.any() else None
    return out


def run_experiment(cfg: ExperimentConfig) -> ReportBundle:
    """Simulate all seeds, analyze, and assemble the report bundle."""
    outcomes = _simulate(cfg)
    stab = cfg.stability()
    report = {
        "scenario": cfg.scenario,
        "seeds": sorted(cfg.seeds),
        "predicted_index": cfg.predicted_index(),
        "stability": {"rho": stab.rho.tolist(), "verdict": stab.verdict},
        "verdicts": {},
        "errors": {str(o.seed): o.error for o in outcomes if o.error},
    }
    bundle = ReportBundle(cfg, report, outcomes=outcomes)
    bundle.seed_summaries = {o.seed: _seed_summary(o) for o in outcomes}
    good = [o for o in outcomes if not o.error]
    if good:
        try:
            if cfg.scenario in (SINGLE_SERVER, ALL):
                _analyze_waiting_tail(cfg, good, bundle.curves, report)
            if cfg.scenario in (FULL_SYSTEM, ALL):
                _analyze_file_latency_tail(cfg, good, bundle.curves, report)
            if cfg.scenario in (GENIE, ALL):
                _analyze_genie_bound(cfg, good, bundle.curves, report)
        except Exception as exc:
            log.exception("analysis failed")
            report["errors"]["analysis"] = str(exc)
    verdicts = [t["verdict"] for t in report["verdicts"].values()]
    if report["errors"]:
        status = EXIT_RUNTIME
    elif all(v == "pass" for v in verdicts):
        status = EXIT_OK
    else:
        status = EXIT_VERDICT
    report["exit_status"] = status
    return bundle


# -- output ----------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _dump_json(obj, path: Path):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_plot_data(bundle: ReportBundle, out_dir, extra_files=()) -> List[Path]:
    """Write one CSV per curve plus ``manifest.json``; returns the written paths.

    ``extra_files`` are ``(relative_path, role)`` pairs for other artifacts to
    list in the manifest.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc.strerror}") from exc
    written = []
    entries = [{"path": p, "role": role} for p, role in extra_files]
    for c in bundle.curves:
        path = out_dir / f"{c.name}.csv"
        lines = [",".join(c.columns)] + [",".join(_fmt(v) for v in row) for row in c.rows]
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
        entries.append({"path": path.name, "role": c.role, "columns": c.columns, "kind": "curve"})
    manifest = out_dir / "manifest.json"
    _dump_json({"files": sorted(entries, key=lambda e: e["path"])}, manifest)
    written.append(manifest)
    return written


def write_bundle(bundle: ReportBundle, out_dir, figures: bool = False) -> List[Path]:
    """Serialize the whole bundle under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    extra = []
    for o in bundle.outcomes:
        sd = out_dir / f"seed_{o.seed}"
        sd.mkdir(exist_ok=True)
        _dump_json(bundle.seed_summaries[o.seed], sd / "summary.json")
        extra.append((f"seed_{o.seed}/summary.json", "per-seed summary"))
        if bundle.config.output.write_traces:
            for kind, res in (("full", o.full), ("genie", o.genie)):
                if res is None:
                    continue
                name = f"seed_{o.seed}/trace_{kind}.csv"
                with open(out_dir / name, "w", newline="") as fh:
                    simcore.write_trace(res.trace, fh)
                extra.append((name, f"{kind} trace, one row per completed request"))
    _dump_json(bundle.report, out_dir / "report.json")
    extra.append(("report.json", "merged report with verdicts"))
    if figures:
        from .plots import render_figures

        for path in render_figures(bundle.curves, out_dir / "figures"):
            extra.append((str(path.relative_to(out_dir)), "figure"))
    return emit_plot_data(bundle, out_dir, extra)
