"""Request/response models of the HTTP API.

Times travel in years since induction, PSA in raw ng/mL.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class PsaIn(BaseModel):
    time: float = Field(ge=0, description="years since induction")
    psa: float = Field(gt=0, description="PSA in ng/mL")


class BiopsyIn(BaseModel):
    time: float = Field(gt=0, description="years since induction")
    upgraded: bool


class PatientCreate(BaseModel):
    id: str | None = None
    age: float = Field(gt=18, lt=120, description="age at induction, years")


class PsaOut(BaseModel):
    time: float
    psa: float


class BiopsyOut(BaseModel):
    time: float
    upgraded: bool


class PatientOut(BaseModel):
    id: str
    age: float
    psa: list[PsaOut]
    biopsies: list[BiopsyOut]
    upgraded: bool
    last_biopsy_time: float
    last_psa_time: float
    version: int


class SurvivalPoint(BaseModel):
    u: float
    prob: float


class SurvivalCurveOut(BaseModel):
    patient_id: str
    t: float
    s: float
    points: list[SurvivalPoint]
    pairs: int


class PsaFitPoint(BaseModel):
    time: float
    mean: float
    low: float
    high: float


class PsaFitOut(BaseModel):
    patient_id: str
    points: list[PsaFitPoint]
    observed: list[PsaOut]
    log2_scale: bool = True


class ProposalDiagnosticsOut(BaseModel):
    expected: float | None
    median: float | None
    sd: float | None
    q025: float | None
    kappa_used: float | None
    hybrid_fallback: bool
    tail_dominated: bool
    censored_at_horizon: bool


class DecisionPreviewOut(BaseModel):
    action: str
    time: float


class ProposalOut(BaseModel):
    patient_id: str
    policy: str
    u: float
    t: float
    s: float
    diagnostics: ProposalDiagnosticsOut
    decision_preview: DecisionPreviewOut | None = None


class ParameterSummary(BaseModel):
    name: str
    mean: float
    low95: float
    high95: float
    rhat: float | None = None
    ess: float | None = None


class ModelSummaryOut(BaseModel):
    n_draws: int
    baseline_kind: str
    provenance: str
    parameters: list[ParameterSummary]


class ErrorOut(BaseModel):
    detail: str
