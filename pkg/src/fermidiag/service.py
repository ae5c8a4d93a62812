"""FastAPI service exposing the engine: info, nq tables, verification,
patch export.  Heavy per-configuration state (patch scheme, coupling
bundles) is cached across requests, so a long-running instance can serve
many momentum queries against the same configuration cheaply."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

from fastapi import FastAPI, HTTPException

from .kernel import SpdError
from .fock import ModeCapError
from .series import DiagramBudgetError
from .lattice import Momentum, transfer_set
from .patches import export_patch_summary, pair_list
from .models import (
    InfoRequest,
    InfoResponse,
    NqRecord,
    NqRequest,
    NqResponse,
    PatchExportResponse,
    RunConfig,
    TransferInfo,
    VerifyRequest,
    VerifyResponse,
    build_problem,
)
from . import series, verify

app = FastAPI(
    title="fermidiag",
    description=(
        "Excitation density of a patched Fermi-gas trial state via "
        "contraction-diagram series, with an exact sparse oracle"
    ),
)

_DOMAIN_ERRORS = (SpdError, ModeCapError, DiagramBudgetError, ValueError)


def _problem_or_400(config: RunConfig):
    try:
        return build_problem(config)
    except _DOMAIN_ERRORS as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


@app.get("/health")
def health() -> dict:
    return {"status": "ok"}


@app.post("/info", response_model=InfoResponse)
def info(req: InfoRequest) -> InfoResponse:
    problem = _problem_or_400(req.config)
    bound = series.s_norm_bound(problem.scheme, problem.sys, problem.bundles)
    transfers = []
    modes = set()
    for k in sorted(problem.bundles, key=lambda k: k.sort_key):
        bundle = problem.bundles[k]
        counts = {}
        for alpha in bundle.labels:
            pairs = pair_list(problem.scheme, problem.sys, alpha, k)
            counts[str(alpha)] = len(pairs)
            for p, h in pairs:
                modes.update((p, h))
        transfers.append(
            TransferInfo(
                k=(k.x, k.y, k.z),
                plus=list(bundle.labels[: bundle.half_dim]),
                minus=list(bundle.labels[bundle.half_dim :]),
                pair_counts=counts,
            )
        )
    return InfoResponse(
        config_hash=req.config.config_hash(),
        particle_count=problem.sys.N,
        transfer_count=len(transfer_set(problem.sys)),
        patch_count=problem.scheme.M,
        mode_count_estimate=len(modes),
        transfers=transfers,
        generator_norm_bound=bound,
        convergence_envelope=math.exp(bound),
        tail_at_default_order=series.series_tail(bound, series.DEFAULT_EXACT_ORDER),
    )


def compute_nq_records(req: NqRequest) -> list[NqRecord]:
    problem = build_problem(req.config)
    methods, q_list, n_max, threads = req.resolved()
    if q_list == "all-in-shell":
        qs = problem.shell_momenta()
    else:
        qs = [Momentum(*q) for q in q_list]
    jobs = [(q, method) for q in qs for method in methods]

    def run(job):
        q, method = job
        res = series.nq(
            q,
            method,
            problem.sys,
            problem.scheme,
            problem.bundles,
            n_max=n_max,
        )
        return NqRecord(
            q=(q.x, q.y, q.z),
            side=res.side,
            method=res.method,
            n_max=res.n_max,
            value=res.value,
            per_order=list(res.per_order),
            diagram_counts={str(k): v for k, v in sorted(res.diagram_counts.items())},
            loop_histogram={str(k): v for k, v in sorted(res.loop_histogram.items())},
        )

    if threads <= 1:
        return [run(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, jobs))  # submission order keeps output deterministic


@app.post("/nq", response_model=NqResponse)
def nq_endpoint(req: NqRequest) -> NqResponse:
    try:
        records = compute_nq_records(req)
    except _DOMAIN_ERRORS as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return NqResponse(config_hash=req.config.config_hash(), records=records)


@app.post("/verify", response_model=VerifyResponse)
def verify_endpoint(req: VerifyRequest) -> VerifyResponse:
    try:
        checks = verify.run_checks(req.config, deep=req.deep, seed=req.seed)
    except _DOMAIN_ERRORS as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return VerifyResponse(
        config_hash=req.config.config_hash(),
        passed=all(c.passed for c in checks),
        checks=checks,
    )


@app.post("/patches/export", response_model=PatchExportResponse)
def patches_export(req: InfoRequest) -> PatchExportResponse:
    problem = _problem_or_400(req.config)
    return PatchExportResponse(
        config_hash=req.config.config_hash(),
        summary=export_patch_summary(problem.scheme, problem.sys),
    )
