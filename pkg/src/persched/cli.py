"""Command-line interface.

A thin client over the core package: ``fit`` produces a model artifact,
``predict`` / ``schedule`` answer per-patient questions from an artifact,
``simulate`` runs the schedule-comparison study, ``evaluate`` scores a study
summary, ``kappa`` tunes the risk threshold on a cohort file, and ``serve``
starts the HTTP API (which calls the exact same core functions).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import csv as csv_module
import io
import json
import math
import sys

import click
import numpy as np

from .artifact import ModelArtifact, demo_artifact, load_model, save_model
from .errors import ArtifactError, DataError, DomainError, InfeasibleError, NumericError
from .likelihood import Dataset, PriorConfig
from .mcmc import BaselineFitConfig, McmcConfig, run_mcmc
from .patients_io import parse_patient_file
from .prediction import (
    NewPatientState,
    dynamic_survival,
    expected_gr_time,
    quantile_gr_time,
    sample_subject_effects,
    survival_inverse,
    variance_gr_time,
)
from .scheduling import VisitState, next_biopsy_decision, propose, select_kappa
from .seeds import derive_seed
from .service.app import _parse_policy, create_app
from .simulation import (
    CompoundLossSpec,
    PredictionBudget,
    SimConfig,
    compound_loss,
    constrained_select,
    default_policies,
    run_study,
    summary_from_json,
    summary_to_json,
)
from .types import ModelSpec


def _parse_policy_token(token: str):
    """Policy names for `simulate --policies`: kind[:kappa] or kind:auto."""
    from .scheduling import Policy, KappaSource

    kind, _, arg = token.partition(":")
    if kind in ("annual", "prias", "exp", "med"):
        return Policy(kind=kind)
    if kind in ("dyn_risk", "hybrid"):
        if arg in ("f1", "youden"):
            kappa = KappaSource(arg)
        else:
            kappa = KappaSource("fixed", float(arg) if arg else 0.95)
        return Policy(kind=kind, kappa=kappa)
    raise DataError(f"unknown policy token {token!r}")


def _emit(payload, output: str):
    if output == "json":
        click.echo(json.dumps(payload, sort_keys=True, indent=2))
        return
    buf = io.StringIO()
    if isinstance(payload, list) and payload and isinstance(payload[0], dict):
        writer = csv_module.DictWriter(buf, fieldnames=list(payload[0].keys()))
        writer.writeheader()
        writer.writerows(payload)
    elif isinstance(payload, dict):
        writer = csv_module.writer(buf)
        writer.writerow(["key", "value"])
        for key, value in sorted(payload.items()):
            writer.writerow([key, json.dumps(value) if isinstance(value, (dict, list)) else value])
    else:
        buf.write(str(payload))
    click.echo(buf.getvalue().rstrip("\n"))


def _load_artifact(path: str | None) -> ModelArtifact:
    if path is None:
        return demo_artifact()
    with open(path, "rb") as fh:
        return load_model(fh.read())


def _load_one_patient(path: str, fmt: str, patient_id: str | None):
    with open(path, "rb") as fh:
        patients = parse_patient_file(fh.read(), fmt)
    if not patients:
        raise DataError(f"no patients in {path}")
    if patient_id is None:
        if len(patients) > 1:
            raise DataError(
                f"{path} holds {len(patients)} patients; pick one with --patient-id"
            )
        return patients[0]
    for p in patients:
        if p.id == patient_id:
            return p
    raise DataError(f"patient {patient_id!r} not found in {path}")


def _predictive(artifact: ModelArtifact, history, pairs: int, seed: int, horizon: float):
    state = NewPatientState.from_history(history)
    n_theta = min(200, artifact.samples.n_draws)
    per_theta = max(1, int(math.ceil(pairs / n_theta)))
    pp = sample_subject_effects(
        state,
        artifact.samples,
        per_theta=per_theta,
        n_theta=n_theta,
        seed=derive_seed(seed, history.id, state.t, state.s),
        horizon=horizon,
    )
    return state, pp


@click.group()
@click.option("--seed", type=int, default=0, show_default=True, help="master RNG seed")
@click.option("--horizon", type=float, default=20.0, show_default=True,
              help="prediction/integration horizon in years")
@click.option("--pairs", type=int, default=1000, show_default=True,
              help="Monte Carlo pair budget for predictions")
@click.option("--output", type=click.Choice(["json", "csv"]), default="json", show_default=True)
@click.pass_context
def main(ctx, seed, horizon, pairs, output):
    """Personalized biopsy schedules for active surveillance."""
    ctx.obj = {"seed": seed, "horizon": horizon, "pairs": pairs, "output": output}


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
@click.option("--model-out", required=True, type=click.Path())
@click.option("--chains", type=int, default=2, show_default=True)
@click.option("--iterations", type=int, default=4000, show_default=True)
@click.option("--burn-in", type=int, default=2000, show_default=True)
@click.option("--thin", type=int, default=2, show_default=True)
@click.option("--baseline", type=click.Choice(["pspline", "weibull"]), default="pspline",
              show_default=True)
@click.option("--knots", type=int, default=15, show_default=True,
              help="interior knots of the penalized baseline")
@click.pass_context
def fit(ctx, input_path, fmt, model_out, chains, iterations, burn_in, thin, baseline, knots):
    """Fit the joint model to an interval-censored cohort."""
    with open(input_path, "rb") as fh:
        histories = parse_patient_file(fh.read(), fmt)
    if not histories:
        raise DataError(f"no patients in {input_path}")
    dataset = Dataset.from_histories(histories)
    config = McmcConfig(
        chains=chains, iterations=iterations, burn_in=burn_in, thin=thin, seed=ctx.obj["seed"]
    )
    samples = run_mcmc(
        dataset,
        ModelSpec(),
        PriorConfig(),
        config,
        baseline=BaselineFitConfig(kind=baseline, n_knots=knots),
    )
    artifact = ModelArtifact(samples=samples, provenance=f"fit from {input_path}")
    with open(model_out, "wb") as fh:
        fh.write(save_model(artifact))
    worst_rhat = max(
        (d.get("rhat", 1.0) for d in samples.diagnostics.values()), default=float("nan")
    )
    _emit(
        {
            "model": model_out,
            "patients": len(dataset),
            "draws": samples.n_draws,
            "worst_rhat": worst_rhat,
        },
        ctx.obj["output"],
    )


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), default=None,
              help="model artifact (bundled demonstration model when omitted)")
@click.option("--patient", "patient_path", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
@click.option("--patient-id", default=None)
@click.option("--curve-points", type=int, default=0, help="also emit a survival curve")
@click.pass_context
def predict(ctx, model_path, patient_path, fmt, patient_id, curve_points):
    """Predictive summaries of the reclassification time for one patient."""
    artifact = _load_artifact(model_path)
    history = _load_one_patient(patient_path, fmt, patient_id)
    state, pp = _predictive(artifact, history, ctx.obj["pairs"], ctx.obj["seed"], ctx.obj["horizon"])
    e = expected_gr_time(state, pp)
    v = variance_gr_time(state, pp)
    med = survival_inverse(0.5, state, pp)
    payload = {
        "patient_id": history.id,
        "t": state.t,
        "s": state.s,
        "expected": e.value,
        "sd": math.sqrt(v.value),
        "median": med.u,
        "q025": quantile_gr_time(0.025, state, pp).u,
        "q975": quantile_gr_time(0.975, state, pp).u,
        "tail_prob": e.tail_prob,
        "tail_dominated": e.tail_dominated,
        "pairs": pp.n_pairs,
    }
    if curve_points:
        grid = np.linspace(state.t, ctx.obj["horizon"], curve_points)
        payload["curve"] = [
            {"u": float(u), "prob": dynamic_survival(float(u), state, pp)} for u in grid
        ]
    _emit(payload, ctx.obj["output"])


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), default=None)
@click.option("--patient", "patient_path", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
@click.option("--patient-id", default=None)
@click.option("--policy", default="hybrid", show_default=True,
              help="annual | prias | exp | med | dyn_risk | hybrid")
@click.option("--kappa", type=float, default=None, help="risk threshold for dyn_risk/hybrid")
@click.option("--hybrid-center", type=click.Choice(["exp", "med"]), default="med", show_default=True)
@click.option("--t-nv", type=float, default=None, help="next visit time for the decision preview")
@click.pass_context
def schedule(ctx, model_path, patient_path, fmt, patient_id, policy, kappa, hybrid_center, t_nv):
    """Propose the next biopsy time under a policy."""
    artifact = _load_artifact(model_path)
    history = _load_one_patient(patient_path, fmt, patient_id)
    if history.upgraded:
        raise DataError("patient already reclassified; remove from surveillance")
    pol = _parse_policy(policy, kappa, hybrid_center)
    state = NewPatientState.from_history(history)
    visit = VisitState(t=state.t, s=max(state.s, state.t))
    if pol.personalized:
        state, pp = _predictive(
            artifact, history, ctx.obj["pairs"], ctx.obj["seed"], ctx.obj["horizon"]
        )
        prop = propose(pol, visit=visit, history=history, state=state, pp=pp, full_diag=True)
    else:
        prop = propose(pol, visit=visit, history=history)
    payload = {
        "patient_id": history.id,
        "policy": pol.label(),
        "u": prop.u,
        "t": state.t,
        "s": state.s,
        "diagnostics": {
            "expected": prop.diagnostics.expected,
            "median": prop.diagnostics.median,
            "sd": prop.diagnostics.sd,
            "q025": prop.diagnostics.q025,
            "kappa_used": prop.diagnostics.kappa_used,
            "hybrid_fallback": prop.diagnostics.hybrid_fallback,
            "tail_dominated": prop.diagnostics.tail_dominated,
            "censored_at_horizon": prop.diagnostics.censored_at_horizon,
        },
    }
    if t_nv is not None:
        decision = next_biopsy_decision(VisitState(t=visit.t, s=visit.s, t_nv=t_nv), prop.u)
        payload["decision_preview"] = {"action": decision.action, "time": decision.time}
    _emit(payload, ctx.obj["output"])


@main.command()
@click.option("--datasets", type=int, default=20, show_default=True)
@click.option("--patients", type=int, default=250, show_default=True)
@click.option("--train-fraction", type=float, default=0.75, show_default=True)
@click.option("--iterations", type=int, default=3000, show_default=True)
@click.option("--burn-in", type=int, default=1500, show_default=True)
@click.option("--thin", type=int, default=3, show_default=True)
@click.option("--knots", type=int, default=8, show_default=True)
@click.option("--n-theta", type=int, default=100, show_default=True)
@click.option("--per-theta", type=int, default=3, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--policies", "policy_names", default=None,
              help="comma-separated subset, e.g. annual,prias,dyn_risk:0.95,med")
@click.option("--summary-out", type=click.Path(), default=None)
@click.pass_context
def simulate(ctx, datasets, patients, train_fraction, iterations, burn_in, thin, knots,
             n_theta, per_theta, jobs, policy_names, summary_out):
    """Simulate cohorts, fit each training split and compare all policies."""
    config = SimConfig(
        n_datasets=datasets,
        n_patients=patients,
        train_fraction=train_fraction,
        horizon=ctx.obj["horizon"],
        master_seed=ctx.obj["seed"],
        budget=PredictionBudget(n_theta=n_theta, per_theta=per_theta),
        mcmc=McmcConfig(chains=2, iterations=iterations, burn_in=burn_in, thin=thin),
        baseline_fit=BaselineFitConfig(kind="pspline", n_knots=knots),
    )
    policies = None
    if policy_names:
        policies = [_parse_policy_token(tok.strip()) for tok in policy_names.split(",")]
    summary = run_study(config, policies=policies, n_jobs=jobs)
    payload = summary_to_json(summary)
    if summary_out:
        with open(summary_out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
    if ctx.obj["output"] == "csv":
        _emit(summary.table(), "csv")
    else:
        _emit(payload, "json")


@main.command()
@click.option("--summary", "summary_path", required=True, type=click.Path(exists=True),
              help="summary JSON produced by `simulate`")
@click.option("--weights", default="mean_n=0.5,mean_o=0.5", show_default=True,
              help="comma-separated criterion=weight pairs (weights sum to 1)")
@click.option("--objective", default="mean_n", show_default=True)
@click.option("--constraint", "constraints", multiple=True,
              help="criterion<bound, e.g. mean_o<12 (repeatable)")
@click.pass_context
def evaluate(ctx, summary_path, weights, objective, constraints):
    """Score policies by compound loss and constrained selection."""
    with open(summary_path, "r", encoding="utf-8") as fh:
        summary = summary_from_json(json.load(fh))
    criteria = []
    for part in weights.split(","):
        name, _, value = part.partition("=")
        if not value:
            raise DataError(f"malformed weight {part!r}; use criterion=weight")
        criteria.append((name.strip(), float(value)))
    spec = CompoundLossSpec(criteria=tuple(criteria))
    losses = compound_loss(summary, spec)
    parsed = []
    for c in constraints:
        name, _, bound = c.partition("<")
        if not bound:
            raise DataError(f"malformed constraint {c!r}; use criterion<bound")
        parsed.append((name.strip(), float(bound)))
    payload = {"compound_loss": losses, "weights": dict(criteria)}
    payload["best_by_loss"] = min(losses, key=losses.get)
    if parsed:
        payload["constraints"] = [f"{n}<{b:g}" for n, b in parsed]
        payload["constrained_choice"] = constrained_select(summary, objective, parsed)
    _emit(payload, ctx.obj["output"])


@main.command()
@click.option("--cohort", "cohort_path", required=True, type=click.Path(exists=True),
              help="CSV with columns pi,event")
@click.option("--objective", type=click.Choice(["f1", "youden"]), default="f1", show_default=True)
@click.option("--t", type=float, default=0.0, show_default=True)
@click.option("--delta-t", type=float, default=1.0, show_default=True)
@click.option("--grid-step", type=float, default=0.01, show_default=True)
@click.pass_context
def kappa(ctx, cohort_path, objective, t, delta_t, grid_step):
    """Select the risk threshold maximizing F1 or Youden's J on a cohort."""
    cohort = []
    with open(cohort_path, "r", encoding="utf-8") as fh:
        reader = csv_module.DictReader(fh)
        if reader.fieldnames is None or {"pi", "event"} - set(reader.fieldnames):
            raise DataError("cohort CSV needs columns pi,event")
        for row_no, row in enumerate(reader, start=2):
            try:
                cohort.append((float(row["pi"]), row["event"].strip().lower() in ("1", "true", "yes")))
            except (TypeError, ValueError):
                raise DataError(f"row {row_no}: cannot parse pi/event") from None
    sel = select_kappa(objective, t, delta_t, cohort, grid_step=grid_step)
    _emit(
        {
            "objective": sel.objective,
            "chosen_kappa": sel.chosen_kappa,
            "objective_value": sel.objective_value,
            "delta_t": sel.delta_t,
            "grid_step": sel.grid_step,
            "cohort_size": len(cohort),
        },
        ctx.obj["output"],
    )


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), default=None)
@click.option("--host", default=None, help="bind address (defaults to $PERSCHED_BIND or 127.0.0.1)")
@click.option("--port", type=int, default=8008, show_default=True)
@click.option("--store", "store_path", type=click.Path(), default=None,
              help="single-file patient store (in-memory when omitted)")
@click.pass_context
def serve(ctx, model_path, host, port, store_path):
    """Start the HTTP API."""
    import os

    import uvicorn

    artifact = _load_artifact(model_path)
    app = create_app(
        artifact,
        store_path=store_path,
        seed=ctx.obj["seed"],
        horizon=ctx.obj["horizon"],
        n_theta=min(200, artifact.samples.n_draws),
        per_theta=max(1, int(math.ceil(ctx.obj["pairs"] / min(200, artifact.samples.n_draws)))),
    )
    bind = host or os.environ.get("PERSCHED_BIND", "127.0.0.1")
    uvicorn.run(app, host=bind, port=port)


def cli_entry():
    sys.exit(run())


def run(argv=None) -> int:
    """Entry point with the documented exit codes."""
    try:
        main.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except (click.UsageError, click.BadParameter) as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except (DataError, ArtifactError, DomainError, InfeasibleError, OSError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except NumericError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(run())
