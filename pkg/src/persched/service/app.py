"""The HTTP API: patient records, risk curves, and biopsy proposals.

A model artifact is loaded at startup; every statistical number served here
comes from the core package, so the CLI and the UI see identical values for
identical inputs and seeds.
"""

from __future__ import annotations

import math
import threading

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from ..artifact import ModelArtifact
from ..errors import DataError, DomainError, NumericError, TailDominatedError
from ..prediction import (
    NewPatientState,
    dynamic_survival,
    fitted_psa_curve,
    sample_subject_effects,
)
from ..scheduling import (
    KappaSource,
    Policy,
    VisitState,
    next_biopsy_decision,
    propose,
)
from ..seeds import derive_seed
from ..types import PatientHistory
from .schemas import (
    BiopsyIn,
    BiopsyOut,
    DecisionPreviewOut,
    ModelSummaryOut,
    ParameterSummary,
    PatientCreate,
    PatientOut,
    ProposalDiagnosticsOut,
    ProposalOut,
    PsaFitOut,
    PsaFitPoint,
    PsaIn,
    PsaOut,
    SurvivalCurveOut,
    SurvivalPoint,
)
from .store import ConflictError, PatientStore, StoredPatient, UnknownPatientError

EXIT_AS_MESSAGE = "Remove patient from AS"


def _patient_out(sp: StoredPatient) -> PatientOut:
    h = sp.history
    return PatientOut(
        id=h.id,
        age=h.age_at_entry,
        psa=[PsaOut(time=p.time, psa=p.psa) for p in h.psa],
        biopsies=[BiopsyOut(time=b.time, upgraded=b.upgraded) for b in h.biopsies],
        upgraded=h.upgraded,
        last_biopsy_time=h.biopsies[-1].time if h.biopsies else 0.0,
        last_psa_time=h.psa[-1].time if h.psa else 0.0,
        version=sp.version,
    )


def _parse_policy(policy: str, kappa: float | None, hybrid_center: str) -> Policy:
    if policy in ("annual", "prias", "exp", "med"):
        return Policy(kind=policy)
    if policy == "dyn_risk":
        return Policy(kind="dyn_risk", kappa=KappaSource("fixed", kappa if kappa is not None else 0.95))
    if policy == "hybrid":
        return Policy(
            kind="hybrid",
            kappa=KappaSource("fixed", kappa if kappa is not None else 0.95),
            hybrid_center=hybrid_center,
        )
    raise DataError(
        f"unknown policy {policy!r}; use annual, prias, exp, med, dyn_risk or hybrid"
    )


def create_app(
    artifact: ModelArtifact,
    store_path: str | None = None,
    seed: int = 0,
    n_theta: int = 200,
    per_theta: int = 5,
    horizon: float = 20.0,
) -> FastAPI:
    app = FastAPI(title="persched", version="0.1.0")
    store = PatientStore(store_path)
    samples = artifact.samples
    spec = samples.model_spec
    pp_cache: dict = {}
    pp_lock = threading.Lock()

    def predictive_for(sp: StoredPatient):
        history = sp.history
        state = NewPatientState.from_history(history)
        key = (history.id, sp.version, n_theta, per_theta, seed)
        with pp_lock:
            hit = pp_cache.get(key)
        if hit is not None:
            return state, hit
        pp = sample_subject_effects(
            state,
            samples,
            per_theta=per_theta,
            n_theta=n_theta,
            seed=derive_seed(seed, history.id, state.t, state.s),
            horizon=horizon,
        )
        with pp_lock:
            if len(pp_cache) > 64:
                pp_cache.clear()
            pp_cache[key] = pp
        return state, pp

    # -- error mapping ------------------------------------------------------

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        errors = [
            {"field": ".".join(str(p) for p in e["loc"]), "message": e["msg"]}
            for e in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": "validation failed", "errors": errors})

    @app.exception_handler(UnknownPatientError)
    async def unknown_handler(request: Request, exc: UnknownPatientError):
        return JSONResponse(status_code=404, content={"detail": f"unknown patient {exc.args[0]!r}"})

    @app.exception_handler(ConflictError)
    async def conflict_handler(request: Request, exc: ConflictError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(DataError)
    async def data_handler(request: Request, exc: DataError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(NumericError)
    async def numeric_handler(request: Request, exc: NumericError):
        detail = {"detail": f"numeric failure: {exc}"}
        if isinstance(exc, TailDominatedError):
            detail["tail_prob"] = exc.tail_prob
            detail["estimate"] = exc.estimate
        return JSONResponse(status_code=500, content=detail)

    # -- patients -----------------------------------------------------------

    @app.post("/patients", response_model=PatientOut, status_code=201)
    def create_patient(body: PatientCreate):
        return _patient_out(store.create(body.id, body.age))

    @app.get("/patients", response_model=list[PatientOut])
    def list_patients():
        return [_patient_out(store.get(pid)) for pid in store.ids()]

    @app.get("/patients/{pid}", response_model=PatientOut)
    def get_patient(pid: str):
        return _patient_out(store.get(pid))

    @app.post("/patients/{pid}/psa", response_model=PatientOut)
    def add_psa(pid: str, body: PsaIn):
        return _patient_out(store.add_psa(pid, body.time, body.psa))

    @app.post("/patients/{pid}/biopsies", response_model=PatientOut)
    def add_biopsy(pid: str, body: BiopsyIn):
        return _patient_out(store.add_biopsy(pid, body.time, body.upgraded))

    # -- model outputs ------------------------------------------------------

    def _require_active(sp: StoredPatient):
        if sp.history.upgraded:
            return JSONResponse(status_code=422, content={"detail": EXIT_AS_MESSAGE})
        return None

    @app.get("/patients/{pid}/survival", response_model=SurvivalCurveOut)
    def survival_curve(
        pid: str,
        from_u: float | None = Query(default=None, alias="from"),
        to_u: float | None = Query(default=None, alias="to"),
        points: int = Query(default=81, ge=2, le=500),
    ):
        sp = store.get(pid)
        blocked = _require_active(sp)
        if blocked is not None:
            return blocked
        state, pp = predictive_for(sp)
        lo = state.t if from_u is None else max(from_u, state.t)
        hi = horizon if to_u is None else min(to_u, horizon)
        if hi < lo:
            raise DataError(f"empty survival range [{lo}, {hi}]")
        grid = np.linspace(lo, hi, points)
        return SurvivalCurveOut(
            patient_id=pid,
            t=state.t,
            s=state.s,
            points=[
                SurvivalPoint(u=float(u), prob=dynamic_survival(float(u), state, pp))
                for u in grid
            ],
            pairs=pp.n_pairs,
        )

    @app.get("/patients/{pid}/psa-fit", response_model=PsaFitOut)
    def psa_fit(
        pid: str,
        from_t: float = Query(default=0.0, alias="from", ge=0),
        to_t: float | None = Query(default=None, alias="to"),
        points: int = Query(default=61, ge=2, le=500),
    ):
        sp = store.get(pid)
        blocked = _require_active(sp)
        if blocked is not None:
            return blocked
        state, pp = predictive_for(sp)
        hi = to_t if to_t is not None else max(10.0, state.s + 2.0)
        grid = np.linspace(from_t, hi, points)
        band = fitted_psa_curve(state, pp, grid)
        return PsaFitOut(
            patient_id=pid,
            points=[
                PsaFitPoint(time=float(t), mean=float(m), low=float(lo), high=float(hg))
                for t, m, lo, hg in zip(band["times"], band["mean"], band["low"], band["high"])
            ],
            observed=[PsaOut(time=p.time, psa=p.psa) for p in sp.history.psa],
        )

    @app.get("/patients/{pid}/proposal", response_model=ProposalOut)
    def proposal(
        pid: str,
        policy: str = Query(default="hybrid"),
        kappa: float | None = Query(default=None, gt=0.0, lt=1.0),
        hybrid_center: str = Query(default="med"),
        t_nv: float | None = Query(default=None, ge=0.0),
    ):
        sp = store.get(pid)
        blocked = _require_active(sp)
        if blocked is not None:
            return blocked
        pol = _parse_policy(policy, kappa, hybrid_center)
        state = NewPatientState.from_history(sp.history)
        visit = VisitState(t=state.t, s=max(state.s, state.t))
        if pol.personalized:
            state, pp = predictive_for(sp)
            prop = propose(
                pol, visit=visit, history=sp.history, state=state, pp=pp, full_diag=True
            )
        else:
            prop = propose(pol, visit=visit, history=sp.history)
        preview = None
        if t_nv is not None:
            decision = next_biopsy_decision(
                VisitState(t=visit.t, s=visit.s, t_nv=t_nv), prop.u
            )
            preview = DecisionPreviewOut(action=decision.action, time=decision.time)
        d = prop.diagnostics
        return ProposalOut(
            patient_id=pid,
            policy=pol.label(),
            u=prop.u,
            t=state.t,
            s=state.s,
            diagnostics=ProposalDiagnosticsOut(
                expected=d.expected,
                median=d.median,
                sd=d.sd,
                q025=d.q025,
                kappa_used=d.kappa_used,
                hybrid_fallback=d.hybrid_fallback,
                tail_dominated=d.tail_dominated,
                censored_at_horizon=d.censored_at_horizon,
            ),
            decision_preview=preview,
        )

    @app.get("/model/summary", response_model=ModelSummaryOut)
    def model_summary():
        parameters = []
        for name, series in samples.scalar_series().items():
            diag = samples.diagnostics.get(name, {})
            parameters.append(
                ParameterSummary(
                    name=name,
                    mean=float(np.mean(series)),
                    low95=float(np.quantile(series, 0.025)),
                    high95=float(np.quantile(series, 0.975)),
                    rhat=diag.get("rhat"),
                    ess=diag.get("ess"),
                )
            )
        return ModelSummaryOut(
            n_draws=samples.n_draws,
            baseline_kind=samples.baseline_kind,
            provenance=artifact.provenance,
            parameters=parameters,
        )

    return app
