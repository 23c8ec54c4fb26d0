"""Posterior sampling for the joint model.

Blocked adaptive Metropolis-within-Gibbs.  Blocks: fixed effects (MH),
residual variance (conjugate), random-effects covariance (conjugate inverse
Wishart), association + baseline-covariate coefficients (joint MH), baseline
hazard parameters (MH), per-patient random effects (vectorized MH), and the
shrinkage/penalty scale hyperparameters (conjugate).

The survival likelihood is evaluated on quadrature nodes fixed per patient
(the censoring times never change), so one likelihood pass is a handful of
dense matrix products over all patients at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.stats import invwishart

from .errors import DataError, NumericError
from .likelihood import (
    Dataset,
    PenaltyMatrix,
    PriorConfig,
    ShrinkageState,
    difference_penalty,
    theta_logprior,
)
from .model import (
    psa_fixed_design_matrix,
    psa_fixed_slope_matrix,
    psa_random_design_matrix,
    psa_random_slope_matrix,
)
from .quadrature import kronrod_nodes
from .splines import SplineBasis, bspline_basis
from .types import (
    FunctionalForm,
    ModelSpec,
    PSplineLogHazard,
    RandomEffects,
    Theta,
    WeibullHazard,
)

BLOCK_NAMES = ("beta", "sigma2", "D", "assoc", "baseline", "ranef", "hyper")


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 2
    iterations: int = 4000
    burn_in: int = 2000
    thin: int = 2
    adapt_window: int = 50
    seed: int = 0
    survival_enabled: bool = True
    fixed_blocks: frozenset = frozenset()
    init_overrides: tuple = ()  # (name, value) pairs; values replace the defaults

    def __post_init__(self):
        if self.chains < 1:
            raise DataError("need at least one chain")
        if not 0 <= self.burn_in < self.iterations:
            raise DataError("burn_in must be < iterations")
        if self.thin < 1:
            raise DataError("thin must be >= 1")
        unknown = set(self.fixed_blocks) - set(BLOCK_NAMES)
        if unknown:
            raise DataError(f"unknown block names {sorted(unknown)}")

    @property
    def kept_per_chain(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass(frozen=True)
class BaselineFitConfig:
    """Baseline hazard family fitted by the sampler."""

    kind: str = "pspline"  # "pspline" | "weibull"
    n_knots: int = 15
    degree: int = 3
    penalty_order: int = 2
    horizon: float | None = None  # defaults to the largest finite time in the data

    def basis_for(self, horizon: float) -> SplineBasis:
        interior = np.linspace(0.0, horizon, self.n_knots + 2)[1:-1]
        return SplineBasis(degree=self.degree, internal_knots=tuple(interior), boundary=(0.0, horizon))


# ---------------------------------------------------------------------------
# precomputed designs


from .quadrature import graded_edges as _segment_edges


class _SurvivalGrid:
    """Fixed quadrature nodes and node designs for H(0, l) and H(l, r)."""

    def __init__(self, dataset: Dataset, spec: ModelSpec, baseline: BaselineFitConfig, horizon: float):
        knots = set(spec.fixed_basis.internal_knots) | set(spec.random_basis.internal_knots)
        knots |= {spec.fixed_basis.boundary[1]}
        self.pspline = baseline.kind == "pspline"
        if self.pspline:
            self.basis = baseline.basis_for(horizon)
            knots |= set(self.basis.internal_knots)

        node_t, node_w, node_key = [], [], []
        self.kind = np.zeros(len(dataset), dtype=int)  # 0 exact, 1 right-censored, 2 interval
        ev_t, ev_patient = [], []
        for i, (history, interval) in enumerate(dataset.patients):
            if interval.exact:
                if interval.l <= 1e-6:
                    raise DataError(
                        f"patient {history.id}: exact event at time {interval.l} is "
                        "degenerate (no cumulative hazard to balance the density)"
                    )
                self.kind[i] = 0
                ev_t.append(interval.l)
                ev_patient.append(i)
                parts = [(0.0, interval.l, 0)]
            elif interval.right_censored:
                self.kind[i] = 1
                parts = [(0.0, interval.l, 0)]
            else:
                self.kind[i] = 2
                parts = [(0.0, interval.l, 0), (interval.l, interval.r, 1)]
            for lo, hi, part in parts:
                if hi <= lo:
                    continue
                edges = lo + _segment_edges(hi - lo, [k - lo for k in knots])
                for a, b in zip(edges[:-1], edges[1:]):
                    ts, ws = kronrod_nodes(a, b)
                    node_t.append(ts)
                    node_w.append(ws)
                    node_key.append(np.full(ts.shape, 2 * i + part))

        self.n = len(dataset)
        self.node_t = np.concatenate(node_t) if node_t else np.zeros(0)
        self.node_w = np.concatenate(node_w) if node_w else np.zeros(0)
        self.node_key = np.concatenate(node_key).astype(int) if node_key else np.zeros(0, dtype=int)
        self.owner = self.node_key // 2

        ages = np.array([h.age_at_entry for h, _ in dataset.patients])
        self._build_designs(spec, ages, ev_t, ev_patient)

    def _build_designs(self, spec: ModelSpec, ages, ev_t, ev_patient):
        self.spec = spec
        # designs evaluated at the centering age have zero age columns; the
        # per-patient age contributions are added separately in loglik()
        self.Xt = self._time_only_fixed(self.node_t, spec)
        self.Z = psa_random_design_matrix(self.node_t, spec)
        self.Xst = self._time_only_fixed_slope(self.node_t, spec)
        self.Zs = psa_random_slope_matrix(self.node_t, spec)
        dev = ages - spec.age_center
        self.age_dev = dev
        self.node_dev = dev[self.owner]
        if self.pspline:
            clamped = np.clip(self.node_t, *self.basis.boundary)
            self.B = bspline_basis(clamped, self.basis)
        else:
            self.log_t = np.log(self.node_t)

        self.ev_patient = np.asarray(ev_patient, dtype=int)
        ev_t = np.asarray(ev_t, dtype=float)
        self.ev_t = ev_t
        self.ev_Xt = self._time_only_fixed(ev_t, spec)
        self.ev_Z = psa_random_design_matrix(ev_t, spec)
        self.ev_Xst = self._time_only_fixed_slope(ev_t, spec)
        self.ev_Zs = psa_random_slope_matrix(ev_t, spec)
        self.ev_dev = self.age_dev[self.ev_patient]
        if self.pspline:
            self.ev_B = bspline_basis(np.clip(ev_t, *self.basis.boundary), self.basis)
        else:
            self.ev_log_t = np.log(ev_t) if len(ev_t) else ev_t

    @staticmethod
    def _time_only_fixed(ts, spec):
        X = psa_fixed_design_matrix(ts, spec.age_center, spec)
        return X  # age columns are zero at the centering age

    @staticmethod
    def _time_only_fixed_slope(ts, spec):
        return psa_fixed_slope_matrix(ts, spec)

    def _log_h0(self, baseline_params: np.ndarray, which: str):
        if self.pspline:
            B = self.B if which == "node" else self.ev_B
            return baseline_params[0] + B @ baseline_params[1:]
        log_k, log_lam = baseline_params
        log_t = self.log_t if which == "node" else self.ev_log_t
        k = math.exp(log_k)
        return (log_k - log_lam) + (k - 1.0) * (log_t - log_lam)

    def loglik(self, beta, gamma, alpha, baseline_params, b) -> np.ndarray:
        """Per-patient survival log-likelihood for the given state."""
        if self.n == 0:
            return np.zeros(0)
        spec = self.spec
        out = np.zeros(self.n)
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            logh = self._log_h0(baseline_params, "node")
            if spec.include_age_terms:
                logh = logh + gamma[0] * self.node_dev + gamma[1] * self.node_dev**2
                m_age = beta[1] * self.node_dev + beta[2] * self.node_dev**2
            else:
                m_age = 0.0
            m = self.Xt @ beta + (self.Z * b[self.owner]).sum(axis=1) + m_age
            logh = logh + alpha[0] * m
            if spec.functional_form is FunctionalForm.VALUE_AND_SLOPE:
                slope = self.Xst @ beta + (self.Zs * b[self.owner]).sum(axis=1)
                logh = logh + alpha[1] * slope
            contrib = self.node_w * np.exp(logh)
            sums = np.bincount(self.node_key, weights=contrib, minlength=2 * self.n)
            H_l = sums[0::2]
            H_gap = sums[1::2]

            exact = self.kind == 0
            censored = self.kind == 1
            interval = self.kind == 2
            out[censored] = -H_l[censored]
            if interval.any():
                with np.errstate(divide="ignore"):
                    log_mass = np.log(-np.expm1(-H_gap[interval]))
                out[interval] = -H_l[interval] + log_mass
            if exact.any():
                ev_logh = self._log_h0(baseline_params, "ev")
                if spec.include_age_terms:
                    ev_logh = ev_logh + gamma[0] * self.ev_dev + gamma[1] * self.ev_dev**2
                    ev_m_age = beta[1] * self.ev_dev + beta[2] * self.ev_dev**2
                else:
                    ev_m_age = 0.0
                ev_m = self.ev_Xt @ beta + (self.ev_Z * b[self.ev_patient]).sum(axis=1) + ev_m_age
                ev_logh = ev_logh + alpha[0] * ev_m
                if spec.functional_form is FunctionalForm.VALUE_AND_SLOPE:
                    ev_slope = self.ev_Xst @ beta + (self.ev_Zs * b[self.ev_patient]).sum(axis=1)
                    ev_logh = ev_logh + alpha[1] * ev_slope
                out[exact] = ev_logh - H_l[self.ev_patient]
        out[~np.isfinite(out)] = -np.inf
        return out


class _LongitudinalGrid:
    def __init__(self, dataset: Dataset, spec: ModelSpec):
        times, y, owner, ages = [], [], [], []
        for i, (history, _) in enumerate(dataset.patients):
            if not history.psa:
                raise DataError(f"patient {history.id} has no PSA measurements")
            t = history.psa_times()
            times.append(t)
            y.append(history.log2_psa_values())
            owner.append(np.full(len(t), i))
            ages.append(history.age_at_entry)
        self.t = np.concatenate(times)
        self.y = np.concatenate(y)
        self.owner = np.concatenate(owner).astype(int)
        self.n = len(dataset.patients)
        self.counts = np.bincount(self.owner, minlength=self.n)
        ages = np.asarray(ages)
        self.X = psa_fixed_design_matrix(self.t, spec.age_center, spec)
        if spec.include_age_terms:
            dev = (ages - spec.age_center)[self.owner]
            self.X[:, 1] = dev
            self.X[:, 2] = dev**2
        self.Z = psa_random_design_matrix(self.t, spec)
        self.N = len(self.y)

    def residuals(self, beta, b):
        return self.y - self.X @ beta - (self.Z * b[self.owner]).sum(axis=1)

    def ssr_per_patient(self, beta, b):
        r = self.residuals(beta, b)
        return np.bincount(self.owner, weights=r * r, minlength=self.n)

    def loglik(self, beta, b, sigma2) -> np.ndarray:
        ssr = self.ssr_per_patient(beta, b)
        return -0.5 * self.counts * math.log(2.0 * math.pi * sigma2) - 0.5 * ssr / sigma2


# ---------------------------------------------------------------------------
# adaptive MH helpers


class _AdaptiveBlock:
    def __init__(self, dim: int, init_cov: np.ndarray, rng_dim_target=None):
        self.dim = dim
        self.chol = np.linalg.cholesky(init_cov + 1e-12 * np.eye(dim))
        self.log_scale = 0.0
        self.target = 0.44 if dim <= 2 else 0.234
        self.updates = 0
        self._mean = np.zeros(dim)
        self._m2 = np.zeros((dim, dim))
        self._count = 0

    def propose(self, rng, current: np.ndarray) -> np.ndarray:
        step = self.chol @ rng.standard_normal(self.dim)
        return current + math.exp(self.log_scale) * (2.38 / math.sqrt(self.dim)) * step

    def record(self, state: np.ndarray):
        self._count += 1
        delta = state - self._mean
        self._mean += delta / self._count
        self._m2 += np.outer(delta, state - self._mean)

    def adapt(self, accepted: bool, refresh: bool):
        self.updates += 1
        eta = min(0.25, 3.0 / self.updates**0.6)
        self.log_scale += eta * ((1.0 if accepted else 0.0) - self.target)
        if refresh and self._count > max(20, 4 * self.dim):
            cov = self._m2 / (self._count - 1)
            cov = cov + 1e-9 * np.eye(self.dim) * (1.0 + np.trace(cov) / self.dim)
            try:
                self.chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                pass


# ---------------------------------------------------------------------------
# posterior container


@dataclass
class PosteriorSamples:
    """Ordered posterior draws with convergence diagnostics."""

    model_spec: ModelSpec
    prior_config: PriorConfig
    seed: int
    baseline_kind: str
    baseline_basis: SplineBasis | None
    penalty_order: int
    betas: np.ndarray
    gammas: np.ndarray
    alphas: np.ndarray
    sigma2s: np.ndarray
    Ds: np.ndarray
    baseline_params: np.ndarray
    ranef: np.ndarray
    chain_id: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return len(self.sigma2s)

    @classmethod
    def from_thetas(cls, spec: ModelSpec, priors: PriorConfig, thetas, ranef=None, seed: int = 0):
        """Build a posterior container from explicit draws (synthetic models)."""
        thetas = list(thetas)
        if not thetas:
            raise DataError("need at least one draw")
        first = thetas[0].baseline
        if isinstance(first, WeibullHazard):
            kind, basis, order = "weibull", None, 2
            params = np.array(
                [[math.log(t.baseline.shape), math.log(t.baseline.scale)] for t in thetas]
            )
        else:
            kind, basis, order = "pspline", first.basis, first.penalty_order
            params = np.array(
                [[t.baseline.intercept, *t.baseline.coefficients] for t in thetas]
            )
        M = len(thetas)
        q = thetas[0].q
        if ranef is None:
            ranef = np.zeros((M, 0, q))
        return cls(
            model_spec=spec,
            prior_config=priors,
            seed=seed,
            baseline_kind=kind,
            baseline_basis=basis,
            penalty_order=order,
            betas=np.array([t.beta for t in thetas]),
            gammas=np.array([t.gamma for t in thetas]).reshape(M, -1),
            alphas=np.array([t.alpha for t in thetas]),
            sigma2s=np.array([t.sigma2 for t in thetas]),
            Ds=np.array([t.D for t in thetas]),
            baseline_params=params,
            ranef=np.asarray(ranef, dtype=float),
            chain_id=np.zeros(M, dtype=int),
        )

    def baseline(self, i: int):
        params = self.baseline_params[i]
        if self.baseline_kind == "weibull":
            return WeibullHazard(shape=math.exp(params[0]), scale=math.exp(params[1]))
        return PSplineLogHazard(
            basis=self.baseline_basis,
            intercept=params[0],
            coefficients=tuple(params[1:]),
            penalty_order=self.penalty_order,
        )

    def theta(self, i: int) -> Theta:
        return Theta(
            beta=self.betas[i],
            gamma=self.gammas[i],
            alpha=self.alphas[i],
            sigma2=float(self.sigma2s[i]),
            D=self.Ds[i],
            baseline=self.baseline(i),
        )

    @cached_property
    def draws(self) -> list:
        return [
            (self.theta(i), [RandomEffects(b) for b in self.ranef[i]])
            for i in range(self.n_draws)
        ]

    def scalar_series(self) -> dict[str, np.ndarray]:
        """Named scalar traces, used by the diagnostics."""
        out = {}
        for j in range(self.betas.shape[1]):
            out[f"beta[{j}]"] = self.betas[:, j]
        for j in range(self.gammas.shape[1]):
            out[f"gamma[{j}]"] = self.gammas[:, j]
        for j in range(self.alphas.shape[1]):
            out[f"alpha[{j}]"] = self.alphas[:, j]
        out["sigma2"] = self.sigma2s
        q = self.Ds.shape[1]
        for a in range(q):
            for b in range(a, q):
                out[f"D[{a},{b}]"] = self.Ds[:, a, b]
        for j in range(self.baseline_params.shape[1]):
            out[f"baseline[{j}]"] = self.baseline_params[:, j]
        return out

    def posterior_mean_theta(self) -> Theta:
        params = self.baseline_params.mean(axis=0)
        if self.baseline_kind == "weibull":
            baseline = WeibullHazard(shape=math.exp(params[0]), scale=math.exp(params[1]))
        else:
            baseline = PSplineLogHazard(
                basis=self.baseline_basis,
                intercept=params[0],
                coefficients=tuple(params[1:]),
                penalty_order=self.penalty_order,
            )
        return Theta(
            beta=self.betas.mean(axis=0),
            gamma=self.gammas.mean(axis=0),
            alpha=self.alphas.mean(axis=0),
            sigma2=float(self.sigma2s.mean()),
            D=self.Ds.mean(axis=0),
            baseline=baseline,
        )

    def credible_interval(self, name: str, level: float = 0.95):
        series = self.scalar_series()[name]
        lo = float(np.quantile(series, (1 - level) / 2))
        hi = float(np.quantile(series, 1 - (1 - level) / 2))
        return lo, hi


def _autocorr_ess(x: np.ndarray) -> float:
    n = len(x)
    x = x - x.mean()
    var = float(x @ x) / n
    if var <= 0 or n < 4:
        return 1.0
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acf = np.fft.irfft(f * np.conjugate(f))[:n].real
    acf /= acf[0]
    # Geyer initial positive sequence on pair sums
    pair = acf[1:-1:2] + acf[2::2]
    rho_sum = 0.0
    for p in pair:
        if p <= 0:
            break
        rho_sum += p
    ess = n / (1.0 + 2.0 * rho_sum)
    return float(min(max(ess, 1.0), n))


def diagnostics(samples: PosteriorSamples) -> dict[str, dict[str, float]]:
    """Gelman-Rubin R-hat (needs >= 2 chains) and ESS per scalar parameter."""
    chain_ids = np.unique(samples.chain_id)
    out = {}
    for name, series in samples.scalar_series().items():
        chains = [series[samples.chain_id == c] for c in chain_ids]
        ess = float(sum(_autocorr_ess(c) for c in chains))
        entry = {"ess": ess}
        if len(chains) >= 2:
            n = min(len(c) for c in chains)
            arr = np.stack([c[:n] for c in chains])
            means = arr.mean(axis=1)
            W = float(arr.var(axis=1, ddof=1).mean())
            B = n * float(means.var(ddof=1))
            if W <= 0:
                rhat = 1.0 if B <= 0 else math.inf
            else:
                rhat = math.sqrt(((n - 1) / n * W + B / n) / W)
            entry["rhat"] = float(rhat)
        out[name] = entry
    return out


def diagnostics_rhat(samples: PosteriorSamples) -> dict[str, float]:
    chain_ids = np.unique(samples.chain_id)
    if len(chain_ids) < 2:
        raise DataError("R-hat requires at least two chains")
    return {k: v["rhat"] for k, v in diagnostics(samples).items()}


# ---------------------------------------------------------------------------
# the sampler


class _ChainState:
    def __init__(self, beta, gamma, alpha, sigma2, D, baseline_params, b, hyper: ShrinkageState):
        self.beta = beta
        self.gamma = gamma
        self.alpha = alpha
        self.sigma2 = sigma2
        self.D = D
        self.baseline_params = baseline_params
        self.b = b
        self.hyper = hyper


def _initial_state(dataset, spec, baseline_cfg, horizon, overrides: dict) -> _ChainState:
    long_grid = _LongitudinalGrid(dataset, spec)
    n = long_grid.n
    q = spec.q
    b = np.zeros((n, q))
    resid_var = []
    for i in range(n):
        rows = long_grid.owner == i
        Z = long_grid.Z[rows]
        y = long_grid.y[rows]
        sol, *_ = np.linalg.lstsq(Z, y, rcond=None)
        b[i] = sol
        r = y - Z @ sol
        resid_var.extend(r * r)
    sigma2 = max(float(np.mean(resid_var)), 1e-4) if resid_var else 0.1
    beta = np.zeros(spec.n_fixed)
    gamma = np.zeros(spec.n_gamma)
    alpha = np.zeros(spec.functional_form.alpha_len)
    if baseline_cfg.kind == "weibull":
        mean_t = np.mean([max(iv.l, 0.5) for _, iv in dataset.patients]) if len(dataset) else 1.0
        baseline_params = np.array([0.0, math.log(mean_t)])
    else:
        events = sum(1 for _, iv in dataset.patients if not iv.right_censored)
        exposure = sum(max(iv.l, 1e-2) for _, iv in dataset.patients) or 1.0
        rate = max(events, 0.5) / exposure
        dim = baseline_cfg.basis_for(horizon).dim
        baseline_params = np.concatenate([[math.log(rate)], np.zeros(dim)])
    state = _ChainState(
        beta=beta,
        gamma=gamma,
        alpha=alpha,
        sigma2=sigma2,
        D=np.eye(q),
        baseline_params=baseline_params,
        b=b,
        hyper=ShrinkageState.initial(spec),
    )
    for name, value in overrides.items():
        if name == "sigma2":
            state.sigma2 = float(value)
        elif name in ("beta", "gamma", "alpha", "baseline_params"):
            setattr(state, name, np.asarray(value, dtype=float).copy())
        elif name == "D":
            state.D = np.asarray(value, dtype=float).copy()
        elif name == "b":
            state.b = np.asarray(value, dtype=float).copy()
        else:
            raise DataError(f"unknown init override {name!r}")
    return state


def _ranef_logpdf_per_patient(b: np.ndarray, D: np.ndarray) -> np.ndarray:
    chol = np.linalg.cholesky(D)
    z = np.linalg.solve(chol, b.T)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    q = b.shape[1]
    return -0.5 * (q * math.log(2.0 * math.pi) + logdet + (z * z).sum(axis=0))


def _data_horizon(dataset: Dataset) -> float:
    times = [1.0]
    for history, interval in dataset.patients:
        times.append(interval.l)
        if not interval.right_censored:
            times.append(interval.r)
        if history.psa:
            times.append(history.psa[-1].time)
    return float(max(times))


def run_mcmc(
    dataset: Dataset,
    spec: ModelSpec,
    priors: PriorConfig,
    config: McmcConfig,
    baseline: BaselineFitConfig | None = None,
    progress=None,
) -> PosteriorSamples:
    """Sample the joint posterior of theta and the per-patient random effects."""
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    baseline = baseline or BaselineFitConfig()
    horizon = baseline.horizon if baseline.horizon is not None else _data_horizon(dataset) * 1.05
    overrides = dict(config.init_overrides)

    long_grid = _LongitudinalGrid(dataset, spec)
    surv_grid = _SurvivalGrid(dataset, spec, baseline, horizon) if config.survival_enabled else None
    penalty = None
    if baseline.kind == "pspline":
        penalty = difference_penalty(
            baseline.basis_for(horizon).dim, baseline.penalty_order, priors.pspline_ridge_eps
        )
    n = long_grid.n
    q = spec.q
    df_D = priors.wishart_df if priors.wishart_df is not None else q

    kept = config.kept_per_chain
    total_kept = kept * config.chains
    p = spec.n_fixed
    a_len = spec.functional_form.alpha_len
    bl_dim = 2 if baseline.kind == "weibull" else 1 + baseline.basis_for(horizon).dim

    betas = np.empty((total_kept, p))
    gammas = np.empty((total_kept, spec.n_gamma))
    alphas = np.empty((total_kept, a_len))
    sigma2s = np.empty(total_kept)
    Ds = np.empty((total_kept, q, q))
    baseline_store = np.empty((total_kept, bl_dim))
    ranef_store = np.empty((total_kept, n, q))
    chain_id = np.empty(total_kept, dtype=int)

    keep_idx = 0
    for chain in range(config.chains):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(chain,)))
        state = _initial_state(dataset, spec, baseline, horizon, overrides)
        if chain > 0:
            # overdispersed starts: jitter the continuous blocks
            state.beta = state.beta + 0.1 * rng.standard_normal(p)
            state.b = state.b + 0.1 * rng.standard_normal(state.b.shape)

        def surv_ll(beta, gamma, alpha, baseline_params, b):
            if surv_grid is None:
                return np.zeros(n)
            return surv_grid.loglik(beta, gamma, alpha, baseline_params, b)

        def prior_assoc_marginal(gamma, alpha, hyper):
            # local scales psi integrated out: coef | tau is Student-t with
            # 2 * psi_shape degrees of freedom.  The collapsed update escapes
            # the sticky joint mode of (coef ~ 0, psi ~ 0); psi is redrawn
            # from its exact conditional right after (partially collapsed
            # Gibbs), keeping the stationary distribution intact.
            nu = 2.0 * priors.ridge_psi_shape
            total = 0.0
            for coeffs, tau in ((gamma, hyper.tau_gamma), (alpha, hyper.tau_alpha)):
                scale2 = priors.ridge_psi_rate * tau / priors.ridge_psi_shape
                for c in coeffs:
                    total += -0.5 * (nu + 1.0) * math.log1p(c * c / (scale2 * nu))
                total += -0.5 * len(coeffs) * math.log(scale2)
            return total

        def gibbs_psi(coeffs, tau, rng):
            out = []
            for c in coeffs:
                sh = priors.ridge_psi_shape + 0.5
                ra = priors.ridge_psi_rate + 0.5 * c * c / tau
                out.append(ra / rng.gamma(sh, 1.0))
            return tuple(out)

        def prior_baseline(params, hyper):
            if baseline.kind == "weibull":
                return float(-0.5 * (params @ params) / priors.beta_var)
            coefs = params[1:]
            quad = float(coefs @ penalty.K @ coefs)
            return float(
                -0.5 * hyper.tau_h * quad - 0.5 * params[0] ** 2 / priors.beta_var
            )

        def prior_beta(beta):
            return float(-0.5 * (beta @ beta) / priors.beta_var)

        cur_long = long_grid.loglik(state.beta, state.b, state.sigma2)
        cur_surv = surv_ll(state.beta, state.gamma, state.alpha, state.baseline_params, state.b)
        cur_ranef = _ranef_logpdf_per_patient(state.b, state.D)
        if not (np.all(np.isfinite(cur_long)) and np.all(np.isfinite(cur_surv)) and np.all(np.isfinite(cur_ranef))):
            bad = []
            if not np.all(np.isfinite(cur_long)):
                bad.append("longitudinal likelihood")
            if not np.all(np.isfinite(cur_surv)):
                bad.append("survival likelihood")
            if not np.all(np.isfinite(cur_ranef)):
                bad.append("random-effects prior")
            raise NumericError(f"non-finite log posterior at initialization: {', '.join(bad)}")

        # block proposal preconditioners
        XtX = long_grid.X.T @ long_grid.X
        beta_cov = np.linalg.inv(XtX / state.sigma2 + np.eye(p) / priors.beta_var)
        beta_block = _AdaptiveBlock(p, beta_cov)
        assoc_dim = spec.n_gamma + a_len
        assoc_block = _AdaptiveBlock(assoc_dim, 0.05**2 * np.eye(assoc_dim))
        if baseline.kind == "weibull":
            bl_block = _AdaptiveBlock(2, 0.05**2 * np.eye(2))
        else:
            prec = state.hyper.tau_h * penalty.K + np.eye(penalty.K.shape[0]) / priors.beta_var
            cov = np.zeros((bl_dim, bl_dim))
            cov[0, 0] = 0.1
            cov[1:, 1:] = np.linalg.inv(prec)
            bl_block = _AdaptiveBlock(bl_dim, 0.1 * cov)
        ranef_log_scale = np.zeros(n)
        ranef_updates = 0

        # columns of the fixed and random designs that are the same function
        # of time; mass can be translated between them without changing any
        # likelihood term, which decouples the intercept from the mean of b
        aligned_cols = [(0, 0)]
        if spec.random_basis == spec.fixed_basis:
            off = 3 if spec.include_age_terms else 1
            aligned_cols += [(off + j, 1 + j) for j in range(spec.random_basis.dim - 1)]

        update_beta = "beta" not in config.fixed_blocks
        update_sigma2 = "sigma2" not in config.fixed_blocks
        update_D = "D" not in config.fixed_blocks
        update_assoc = "assoc" not in config.fixed_blocks and assoc_dim > 0
        update_baseline = (
            "baseline" not in config.fixed_blocks and config.survival_enabled
        )
        update_ranef = "ranef" not in config.fixed_blocks
        update_hyper = "hyper" not in config.fixed_blocks

        for it in range(config.iterations):
            adapting = it < config.burn_in
            refresh = adapting and (it % config.adapt_window == config.adapt_window - 1)

            if update_beta:
                prop = beta_block.propose(rng, state.beta)
                prop_long = long_grid.loglik(prop, state.b, state.sigma2)
                prop_surv = surv_ll(prop, state.gamma, state.alpha, state.baseline_params, state.b)
                log_acc = (
                    prop_long.sum() + prop_surv.sum() + prior_beta(prop)
                    - cur_long.sum() - cur_surv.sum() - prior_beta(state.beta)
                )
                accepted = math.log(rng.uniform()) < log_acc
                if accepted:
                    state.beta = prop
                    cur_long = prop_long
                    cur_surv = prop_surv
                if adapting:
                    beta_block.adapt(accepted, refresh)
                beta_block.record(state.beta)

            if update_sigma2:
                ssr = float(long_grid.ssr_per_patient(state.beta, state.b).sum())
                shape = priors.sigma2_shape + 0.5 * long_grid.N
                rate = priors.sigma2_rate + 0.5 * ssr
                state.sigma2 = rate / rng.gamma(shape, 1.0)
                cur_long = long_grid.loglik(state.beta, state.b, state.sigma2)

            if update_D:
                scale = np.eye(q) + state.b.T @ state.b
                state.D = invwishart.rvs(df=df_D + n, scale=scale, random_state=rng)
                state.D = np.atleast_2d(state.D)
                cur_ranef = _ranef_logpdf_per_patient(state.b, state.D)

            if update_assoc:
                cur_vec = np.concatenate([state.gamma, state.alpha])
                prop = assoc_block.propose(rng, cur_vec)
                pg, pa = prop[: spec.n_gamma], prop[spec.n_gamma :]
                prop_surv = surv_ll(state.beta, pg, pa, state.baseline_params, state.b)
                log_acc = (
                    prop_surv.sum() + prior_assoc_marginal(pg, pa, state.hyper)
                    - cur_surv.sum() - prior_assoc_marginal(state.gamma, state.alpha, state.hyper)
                )
                accepted = math.log(rng.uniform()) < log_acc
                if accepted:
                    state.gamma, state.alpha = pg, pa
                    cur_surv = prop_surv
                if adapting:
                    assoc_block.adapt(accepted, refresh)
                assoc_block.record(np.concatenate([state.gamma, state.alpha]))

            if update_baseline:
                prop = bl_block.propose(rng, state.baseline_params)
                prop_surv = surv_ll(state.beta, state.gamma, state.alpha, prop, state.b)
                log_acc = (
                    prop_surv.sum() + prior_baseline(prop, state.hyper)
                    - cur_surv.sum() - prior_baseline(state.baseline_params, state.hyper)
                )
                accepted = math.log(rng.uniform()) < log_acc
                if accepted:
                    state.baseline_params = prop
                    cur_surv = prop_surv
                if adapting:
                    bl_block.adapt(accepted, refresh)
                bl_block.record(state.baseline_params)

            if update_ranef:
                ranef_updates += 1
                chol_D = np.linalg.cholesky(state.D)
                steps = (
                    np.exp(ranef_log_scale)[:, None]
                    * (2.38 / math.sqrt(q))
                    * (rng.standard_normal((n, q)) @ chol_D.T)
                )
                prop_b = state.b + steps
                prop_long = long_grid.loglik(state.beta, prop_b, state.sigma2)
                prop_surv = surv_ll(state.beta, state.gamma, state.alpha, state.baseline_params, prop_b)
                prop_ranef = _ranef_logpdf_per_patient(prop_b, state.D)
                log_acc = (
                    prop_long + prop_surv + prop_ranef - cur_long - cur_surv - cur_ranef
                )
                accept = np.log(rng.uniform(size=n)) < log_acc
                state.b = np.where(accept[:, None], prop_b, state.b)
                cur_long = np.where(accept, prop_long, cur_long)
                cur_surv = np.where(accept, prop_surv, cur_surv)
                cur_ranef = np.where(accept, prop_ranef, cur_ranef)
                if adapting:
                    eta = min(0.25, 3.0 / ranef_updates**0.6)
                    ranef_log_scale += eta * (accept.astype(float) - 0.234)

            if update_beta and update_ranef:
                # exact Gibbs draw of the translation along each aligned
                # column pair (beta_f += delta, b[:, r] -= delta)
                P = np.linalg.inv(state.D)
                b_sum = state.b.sum(axis=0)
                for fi, ri in aligned_cols:
                    prec = 1.0 / priors.beta_var + n * P[ri, ri]
                    mean = (-state.beta[fi] / priors.beta_var + P[ri] @ b_sum) / prec
                    delta = mean + math.sqrt(1.0 / prec) * rng.standard_normal()
                    state.beta = state.beta.copy()
                    state.beta[fi] += delta
                    state.b = state.b.copy()
                    state.b[:, ri] -= delta
                    b_sum[ri] -= n * delta
                cur_ranef = _ranef_logpdf_per_patient(state.b, state.D)

            if update_hyper:
                h = state.hyper
                new = {}
                for label, coeffs, tau, psis in (
                    ("gamma", state.gamma, h.tau_gamma, h.psi_gamma),
                    ("alpha", state.alpha, h.tau_alpha, h.psi_alpha),
                ):
                    if len(coeffs) == 0:
                        new[f"tau_{label}"] = tau
                        new[f"psi_{label}"] = psis
                        continue
                    # psi first (the collapsed assoc update marginalized it),
                    # then tau given the fresh psi
                    psi_new = gibbs_psi(coeffs, tau, rng)
                    shape = priors.ridge_tau_shape + 0.5 * len(coeffs)
                    rate = priors.ridge_tau_rate + 0.5 * float(
                        np.sum(coeffs**2 / np.asarray(psi_new))
                    )
                    tau_new = rate / rng.gamma(shape, 1.0)
                    new[f"tau_{label}"] = tau_new
                    new[f"psi_{label}"] = psi_new
                tau_h = h.tau_h
                if baseline.kind == "pspline" and config.survival_enabled:
                    coefs = state.baseline_params[1:]
                    quad = float(coefs @ penalty.K @ coefs)
                    tau_h = rng.gamma(
                        priors.pspline_tau_shape + 0.5 * penalty.rank,
                        1.0 / (priors.pspline_tau_rate + 0.5 * quad),
                    )
                state.hyper = ShrinkageState(
                    tau_gamma=new.get("tau_gamma", h.tau_gamma),
                    psi_gamma=new.get("psi_gamma", h.psi_gamma),
                    tau_alpha=new.get("tau_alpha", h.tau_alpha),
                    psi_alpha=new.get("psi_alpha", h.psi_alpha),
                    tau_h=tau_h,
                )

            if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
                if keep_idx < total_kept and (it - config.burn_in) // config.thin < kept:
                    betas[keep_idx] = state.beta
                    gammas[keep_idx] = state.gamma
                    alphas[keep_idx] = state.alpha
                    sigma2s[keep_idx] = state.sigma2
                    Ds[keep_idx] = state.D
                    baseline_store[keep_idx] = state.baseline_params
                    ranef_store[keep_idx] = state.b
                    chain_id[keep_idx] = chain
                    keep_idx += 1
            if progress is not None and it % 500 == 0:
                progress(chain, it)

    samples = PosteriorSamples(
        model_spec=spec,
        prior_config=priors,
        seed=config.seed,
        baseline_kind=baseline.kind,
        baseline_basis=None if baseline.kind == "weibull" else baseline.basis_for(horizon),
        penalty_order=baseline.penalty_order,
        betas=betas[:keep_idx],
        gammas=gammas[:keep_idx],
        alphas=alphas[:keep_idx],
        sigma2s=sigma2s[:keep_idx],
        Ds=Ds[:keep_idx],
        baseline_params=baseline_store[:keep_idx],
        ranef=ranef_store[:keep_idx],
        chain_id=chain_id[:keep_idx],
    )
    samples.diagnostics = diagnostics(samples)
    return samples
