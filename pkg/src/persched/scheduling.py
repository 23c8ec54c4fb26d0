"""Biopsy policies and the visit-loop decision rule.

Personalized proposals minimize a posterior expected loss: squared loss gives
the predictive mean, absolute loss the median, and the asymmetric multilinear
loss the survival-threshold (dynamic risk) time pi^-1(kappa).  The hybrid
policy uses a central proposal unless the predictive spread (center minus the
0.025 quantile) exceeds three years, in which case it falls back to dynamic
risk.  Baseline policies (annual and the standard four-slot protocol with its
PSA doubling-time trigger) need no model.

``next_biopsy_decision`` applies the clinic constraints: never before the
latest PSA draw, at least one year since the previous biopsy, keep the
earlier of the current and previously proposed time, and defer past the next
visit rather than scheduling between visits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, DomainError, TailDominatedError, UndefinedRateError
from .prediction import (
    NewPatientState,
    PredictivePosterior,
    expected_gr_time,
    quantile_gr_time,
    survival_inverse,
    variance_gr_time,
)
from .types import PatientHistory, PsaMeasurement

HYBRID_SPREAD_YEARS = 3.0
PRIAS_FIXED_SLOTS_BASE = (1.0, 4.0, 7.0, 10.0)
PSA_DT_TRIGGER_YEARS = 10.0


@dataclass(frozen=True)
class KappaSource:
    kind: str  # "fixed" | "f1" | "youden"
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "f1", "youden"):
            raise DataError(f"unknown kappa source {self.kind!r}")
        if self.kind == "fixed":
            if self.value is None or not 0.0 < self.value < 1.0:
                raise DataError(f"fixed kappa must lie strictly in (0, 1), got {self.value}")
        elif self.value is not None:
            raise DataError("auto-selected kappa sources carry no value")


@dataclass(frozen=True)
class Policy:
    """A biopsy scheduling rule."""

    kind: str  # "annual" | "prias" | "exp" | "med" | "dyn_risk" | "hybrid"
    kappa: KappaSource | None = None
    hybrid_center: str = "med"

    def __post_init__(self):
        if self.kind not in ("annual", "prias", "exp", "med", "dyn_risk", "hybrid"):
            raise DataError(f"unknown policy kind {self.kind!r}")
        if self.kind in ("dyn_risk", "hybrid") and self.kappa is None:
            raise DataError(f"{self.kind} policy needs a kappa source")
        if self.kind == "hybrid" and self.hybrid_center not in ("exp", "med"):
            raise DataError(f"hybrid center must be 'exp' or 'med', got {self.hybrid_center!r}")

    @property
    def personalized(self) -> bool:
        return self.kind in ("exp", "med", "dyn_risk", "hybrid")

    def label(self) -> str:
        if self.kind == "dyn_risk":
            src = self.kappa
            tag = f"kappa={src.value:g}" if src.kind == "fixed" else src.kind
            return f"dyn_risk({tag})"
        if self.kind == "hybrid":
            return f"hybrid({self.hybrid_center},{self.kappa.kind})"
        return self.kind


ANNUAL = Policy(kind="annual")
PRIAS = Policy(kind="prias")
EXPECTED = Policy(kind="exp")
MEDIAN = Policy(kind="med")


def dyn_risk_fixed(kappa: float) -> Policy:
    return Policy(kind="dyn_risk", kappa=KappaSource("fixed", kappa))


def dyn_risk_auto(objective: str = "f1") -> Policy:
    return Policy(kind="dyn_risk", kappa=KappaSource(objective))


def hybrid(center: str = "med", kappa: KappaSource | None = None) -> Policy:
    return Policy(kind="hybrid", kappa=kappa or KappaSource("f1"), hybrid_center=center)


@dataclass(frozen=True)
class ProposalDiagnostics:
    expected: float | None = None
    median: float | None = None
    sd: float | None = None
    q025: float | None = None
    kappa_used: float | None = None
    hybrid_fallback: bool = False
    tail_dominated: bool = False
    censored_at_horizon: bool = False


@dataclass(frozen=True)
class ScheduleProposal:
    u: float
    method: Policy
    diagnostics: ProposalDiagnostics = field(default_factory=ProposalDiagnostics)

    def __post_init__(self):
        if not self.u > 0:
            raise DataError(f"proposed biopsy time must be positive, got {self.u}")


@dataclass(frozen=True)
class VisitState:
    """Decision context at a hospital visit."""

    t: float
    s: float
    u_pv: float = math.inf
    t_nv: float = math.inf

    def __post_init__(self):
        if self.t > self.s:
            raise DataError(f"last biopsy t={self.t} cannot follow last PSA time s={self.s}")
        if self.u_pv < 0:
            raise DataError("previously proposed time must be nonnegative")


@dataclass(frozen=True)
class Decision:
    action: str  # "conduct" | "defer"
    time: float  # biopsy time, or the carried proposal when deferring


# ---------------------------------------------------------------------------
# personalized proposals


def _full_diagnostics(state, pp, kappa_used=None, hybrid_fallback=False):
    e = expected_gr_time(state, pp)
    v = variance_gr_time(state, pp)
    med = survival_inverse(0.5, state, pp)
    q = quantile_gr_time(0.025, state, pp)
    return ProposalDiagnostics(
        expected=e.value,
        median=med.u,
        sd=math.sqrt(v.value),
        q025=q.u,
        kappa_used=kappa_used,
        hybrid_fallback=hybrid_fallback,
        tail_dominated=e.tail_dominated,
        censored_at_horizon=med.at_horizon,
    )


def propose_expected(state: NewPatientState, pp: PredictivePosterior,
                     full_diag: bool = True) -> ScheduleProposal:
    """Squared-loss minimizer: next biopsy at the predictive mean."""
    e = expected_gr_time(state, pp)
    if e.tail_dominated:
        raise TailDominatedError(
            f"predictive mean dominated by mass beyond the horizon "
            f"(pi(horizon) = {e.tail_prob:.3f})",
            estimate=e.value,
            tail_prob=e.tail_prob,
        )
    diag = _full_diagnostics(state, pp) if full_diag else ProposalDiagnostics(
        expected=e.value, tail_dominated=e.tail_dominated
    )
    return ScheduleProposal(u=max(e.value, 1e-9), method=EXPECTED, diagnostics=diag)


def propose_median(state: NewPatientState, pp: PredictivePosterior,
                   full_diag: bool = True) -> ScheduleProposal:
    """Absolute-loss minimizer: next biopsy at the predictive median."""
    med = survival_inverse(0.5, state, pp)
    diag = _full_diagnostics(state, pp) if full_diag else ProposalDiagnostics(
        median=med.u, censored_at_horizon=med.at_horizon
    )
    return ScheduleProposal(u=max(med.u, 1e-9), method=MEDIAN, diagnostics=diag)


def propose_dyn_risk(state: NewPatientState, pp: PredictivePosterior, kappa: float,
                     full_diag: bool = True) -> ScheduleProposal:
    """Risk-threshold rule: biopsy where the dynamic risk reaches 1 - kappa."""
    if not 0.0 < kappa <= 1.0:
        raise DomainError(f"kappa must lie in (0, 1], got {kappa}")
    if kappa == 1.0:
        inv_u, at_horizon = state.t, False
    else:
        inv = survival_inverse(kappa, state, pp)
        inv_u, at_horizon = inv.u, inv.at_horizon
    method = dyn_risk_fixed(kappa) if 0 < kappa < 1 else Policy(
        kind="dyn_risk", kappa=KappaSource("fixed", 0.999999)
    )
    if full_diag:
        diag = _full_diagnostics(state, pp, kappa_used=kappa)
        diag = replace(diag, censored_at_horizon=at_horizon)
    else:
        diag = ProposalDiagnostics(kappa_used=kappa, censored_at_horizon=at_horizon)
    return ScheduleProposal(u=max(inv_u, 1e-9), method=method, diagnostics=diag)


def propose_hybrid(state: NewPatientState, pp: PredictivePosterior, center: str,
                   kappa: float, full_diag: bool = True) -> ScheduleProposal:
    """Central proposal unless the predictive spread exceeds three years.

    Spread is the center estimate minus the 0.025 quantile; the comparison is
    strict, so a spread of exactly three years keeps the central proposal.
    """
    if center not in ("exp", "med"):
        raise DataError(f"hybrid center must be 'exp' or 'med', got {center!r}")
    q = quantile_gr_time(0.025, state, pp)
    if center == "exp":
        center_value = expected_gr_time(state, pp).value
    else:
        center_value = survival_inverse(0.5, state, pp).u
    fallback = (center_value - q.u) > HYBRID_SPREAD_YEARS
    if fallback:
        inner = propose_dyn_risk(state, pp, kappa, full_diag=False)
        u = inner.u
    else:
        u = center_value
    method = Policy(kind="hybrid", kappa=KappaSource("fixed", min(kappa, 1 - 1e-9)) if kappa < 1
                    else KappaSource("f1"), hybrid_center=center)
    if full_diag:
        diag = _full_diagnostics(state, pp, kappa_used=kappa, hybrid_fallback=fallback)
    else:
        diag = ProposalDiagnostics(q025=q.u, kappa_used=kappa, hybrid_fallback=fallback)
    return ScheduleProposal(u=max(u, 1e-9), method=method, diagnostics=diag)


# ---------------------------------------------------------------------------
# classification accuracy and kappa selection


@dataclass(frozen=True)
class ClassificationRates:
    tpr: float
    fpr: float
    ppv: float

    def __post_init__(self):
        for name in ("tpr", "fpr", "ppv"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DataError(f"{name} must lie in [0, 1], got {v}")


def classification_rates(kappa: float, t: float, delta_t: float, cohort) -> ClassificationRates:
    """Empirical TPR / FPR / PPV at threshold kappa.

    ``cohort`` holds (predicted survival pi_j(t + delta_t | t, s), case flag)
    pairs for subjects at risk at t; a subject is predicted positive when
    pi <= kappa.  Raises UndefinedRateError (carrying any rates that remain
    computable) when a conditioning set is empty.
    """
    risks = np.array([p for p, _ in cohort], dtype=float)
    cases = np.array([bool(c) for _, c in cohort])
    if len(risks) == 0:
        raise UndefinedRateError("empty cohort")
    pred_pos = risks <= kappa
    controls = ~cases
    tpr = float(pred_pos[cases].mean()) if cases.any() else None
    fpr = float(pred_pos[controls].mean()) if controls.any() else None
    ppv = float(cases[pred_pos].mean()) if pred_pos.any() else None
    missing = [name for name, v in (("TPR", tpr), ("FPR", fpr), ("PPV", ppv)) if v is None]
    if missing:
        raise UndefinedRateError(
            f"undefined rate(s) {', '.join(missing)} at kappa={kappa:g} "
            f"({int(cases.sum())} cases, {int(controls.sum())} controls, "
            f"{int(pred_pos.sum())} predicted positive)",
            tpr=tpr,
            fpr=fpr,
            ppv=ppv,
        )
    return ClassificationRates(tpr=tpr, fpr=fpr, ppv=ppv)


def f1_score(rates: ClassificationRates) -> float:
    if rates.tpr == 0.0 and rates.ppv == 0.0:
        return 0.0
    return 2.0 * rates.tpr * rates.ppv / (rates.tpr + rates.ppv)


def youden_j(rates: ClassificationRates) -> float:
    return rates.tpr - rates.fpr


@dataclass(frozen=True)
class KappaSelection:
    delta_t: float
    grid_step: float
    objective: str
    chosen_kappa: float
    objective_value: float


def select_kappa(objective: str, t: float, delta_t: float, cohort,
                 grid_step: float = 0.01) -> KappaSelection:
    """Grid-search the threshold maximizing F1 or Youden's J.

    Grid points with undefined rates are skipped; ties break toward the
    larger kappa (the later biopsy).
    """
    if objective not in ("f1", "youden"):
        raise DataError(f"objective must be 'f1' or 'youden', got {objective!r}")
    cases = sum(1 for _, c in cohort if c)
    controls = sum(1 for _, c in cohort if not c)
    if cases == 0 or controls == 0:
        raise UndefinedRateError(
            f"kappa selection needs at least one case and one control "
            f"(got {cases} cases, {controls} controls)"
        )
    best = None
    n_grid = int(round(1.0 / grid_step))
    for i in range(n_grid + 1):
        kappa = i * grid_step
        try:
            rates = classification_rates(kappa, t, delta_t, cohort)
        except UndefinedRateError:
            continue
        value = f1_score(rates) if objective == "f1" else youden_j(rates)
        if best is None or value >= best[0]:
            best = (value, kappa)
    if best is None:
        raise UndefinedRateError("no admissible kappa on the grid")
    return KappaSelection(
        delta_t=delta_t,
        grid_step=grid_step,
        objective=objective,
        chosen_kappa=best[1],
        objective_value=best[0],
    )


# ---------------------------------------------------------------------------
# baseline schedules


def psa_doubling_time(psa, window: float | None = None) -> float:
    """Inverse OLS slope of log2 PSA on time; +inf when PSA is not rising.

    ``window`` restricts the regression to the trailing years before the
    latest measurement; the default uses the whole history.
    """
    points = list(psa)
    if window is not None and points:
        cutoff = points[-1].time - window
        points = [p for p in points if p.time >= cutoff]
    if len(points) < 2:
        raise DataError("PSA doubling time needs at least two measurements")
    times = np.array([p.time for p in points])
    values = np.array([p.log2_psa for p in points])
    tc = times - times.mean()
    denom = float(tc @ tc)
    if denom == 0.0:
        raise DataError("PSA doubling time needs distinct measurement times")
    slope = float(tc @ (values - values.mean())) / denom
    if slope <= 0.0:
        return math.inf
    return 1.0 / slope


def prias_fixed_slots(through: float = 30.0):
    slots = [s for s in PRIAS_FIXED_SLOTS_BASE if s <= through]
    s = 15.0
    while s <= through:
        slots.append(s)
        s += 5.0
    return slots


def prias_next_biopsy(visit: VisitState, psa) -> float:
    """Four-slot protocol with annual biopsies while PSA-DT < 10 years."""
    try:
        dt = psa_doubling_time(psa)
    except DataError:
        dt = math.inf
    t = visit.t
    if dt < PSA_DT_TRIGGER_YEARS:
        next_annual = math.floor(t) + 1.0
        return max(t + 1.0, next_annual)
    for slot in prias_fixed_slots(through=max(30.0, t + 6.0)):
        if slot > t:
            return slot
    return t + 5.0


def annual_next_biopsy(t: float) -> float:
    return t + 1.0


# ---------------------------------------------------------------------------
# the visit-loop decision


def next_biopsy_decision(visit: VisitState, u: float) -> Decision:
    """Constrain a proposed time and decide whether to conduct now or defer.

    In order: keep the earlier of u and the previously proposed time; never
    biopsy before the latest PSA time s; enforce the one-year gap after the
    last biopsy; conduct if the result does not pass the next scheduled
    visit, otherwise defer and carry the adjusted proposal.
    """
    if not u > 0:
        raise DataError(f"proposed time must be positive, got {u}")
    u = min(u, visit.u_pv)
    if u <= visit.s:
        u = visit.s
    if u - visit.t < 1.0:
        u = visit.t + 1.0
    if u > visit.t_nv:
        return Decision(action="defer", time=u)
    return Decision(action="conduct", time=u)


# ---------------------------------------------------------------------------
# dispatcher


def propose(policy: Policy, *, visit: VisitState, history: PatientHistory,
            state: NewPatientState | None = None, pp: PredictivePosterior | None = None,
            kappa_value: float | None = None, full_diag: bool = True) -> ScheduleProposal:
    """Produce the policy's raw proposal (before visit-loop constraints)."""
    if policy.kind == "annual":
        return ScheduleProposal(u=annual_next_biopsy(visit.t), method=policy)
    if policy.kind == "prias":
        return ScheduleProposal(u=prias_next_biopsy(visit, history.psa), method=policy)
    if pp is None or state is None:
        raise DataError(f"policy {policy.label()} needs a predictive posterior")
    if policy.kind == "exp":
        return propose_expected(state, pp, full_diag=full_diag)
    if policy.kind == "med":
        return propose_median(state, pp, full_diag=full_diag)
    kappa = kappa_value
    if kappa is None:
        if policy.kappa.kind != "fixed":
            raise DataError(f"policy {policy.label()} needs a resolved kappa value")
        kappa = policy.kappa.value
    if policy.kind == "dyn_risk":
        return propose_dyn_risk(state, pp, kappa, full_diag=full_diag)
    return propose_hybrid(state, pp, policy.hybrid_center, kappa, full_diag=full_diag)
