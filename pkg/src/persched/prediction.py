"""Subject-specific predictive distribution of the reclassification time.

Given a fitted posterior and a new patient with PSA history through time s
and a last negative biopsy at time t, draws paired (theta, b) realizations of
the conditional law of T* given T* > t, and answers every downstream query
(dynamic survival, its inverse, mean / variance / quantiles of T*, fitted PSA
band) as Monte Carlo averages over one shared pair set.

The per-pair cumulative hazard is accumulated on an increasing time grid with
the K15 rule, so survival curves from one pair set are exactly nonincreasing.
"""

from __future__ import annotations

import bisect
import math
import threading
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DataError, DomainError, NumericError
from .mcmc import PosteriorSamples
from .model import (
    psa_fixed_design_matrix,
    psa_fixed_slope_matrix,
    psa_random_design_matrix,
    psa_random_slope_matrix,
)
from .quadrature import graded_edges, kronrod_nodes
from .splines import bspline_basis
from .types import FunctionalForm, ModelSpec, PatientHistory, RandomEffects, Theta

DEFAULT_HORIZON = 20.0
TAIL_CAP = 0.05


@dataclass(frozen=True)
class NewPatientState:
    """A patient awaiting a schedule: history, last negative biopsy t, last PSA time s."""

    history: PatientHistory
    t: float
    s: float

    def __post_init__(self):
        if self.t < 0:
            raise DataError("last biopsy time t must be nonnegative")
        if self.history.upgraded:
            raise DataError("patient already reclassified; remove from surveillance")
        if self.history.psa and self.s < self.history.psa[-1].time:
            raise DataError("s must not precede the latest PSA measurement")

    @classmethod
    def from_history(cls, history: PatientHistory) -> "NewPatientState":
        t = history.biopsies[-1].time if history.biopsies else 0.0
        s = history.psa[-1].time if history.psa else 0.0
        return cls(history=history, t=t, s=max(s, 0.0))


class InverseResult(NamedTuple):
    u: float
    at_horizon: bool


@dataclass(frozen=True)
class TimeSummary:
    """A predictive moment with honest truncation reporting."""

    value: float
    tail_prob: float
    tail_dominated: bool
    bound_width: float


class PredictivePosterior:
    """Paired (theta, b) draws conditioned on T* > t and the PSA history."""

    def __init__(self, state, spec, betas, gammas, alphas, baseline_kind, baseline_basis,
                 baseline_params, b, horizon: float = DEFAULT_HORIZON):
        if len(b) == 0:
            raise DataError("predictive posterior needs at least one pair")
        self.state = state
        self.spec = spec
        self.betas = betas
        self.gammas = gammas
        self.alphas = alphas
        self.baseline_kind = baseline_kind
        self.baseline_basis = baseline_basis
        self.baseline_params = baseline_params
        self.b = b
        self.horizon = float(horizon)
        self.n_pairs = len(b)
        self._age_dev = state.history.age_at_entry - spec.age_center
        self._lock = threading.Lock()
        self._grid_times = [state.t]
        self._grid_H = [np.zeros(self.n_pairs)]
        self._interior_cache: dict[float, np.ndarray] = {}
        self._pi_cache = None
        knots = set(spec.fixed_basis.internal_knots) | set(spec.random_basis.internal_knots)
        knots |= {spec.fixed_basis.boundary[1]}
        if baseline_kind == "pspline":
            knots |= set(baseline_basis.internal_knots) | {baseline_basis.boundary[1]}
        self._knots = sorted(knots)

    # -- hazard machinery ---------------------------------------------------

    def _log_hazard_nodes(self, ts: np.ndarray) -> np.ndarray:
        """(len(ts), n_pairs) log-hazard matrix."""
        spec = self.spec
        if self.baseline_kind == "weibull":
            log_k = self.baseline_params[:, 0]
            log_lam = self.baseline_params[:, 1]
            log_t = np.log(ts)[:, None]
            logh = (log_k - log_lam) + (np.exp(log_k) - 1.0) * (log_t - log_lam)
        else:
            B = bspline_basis(np.clip(ts, *self.baseline_basis.boundary), self.baseline_basis)
            logh = self.baseline_params[:, 0] + B @ self.baseline_params[:, 1:].T
        if spec.include_age_terms:
            logh = logh + self.gammas[:, 0] * self._age_dev + self.gammas[:, 1] * self._age_dev**2
        X = psa_fixed_design_matrix(ts, self.state.history.age_at_entry, spec)
        Z = psa_random_design_matrix(ts, spec)
        m = X @ self.betas.T + Z @ self.b.T
        logh = logh + self.alphas[:, 0] * m
        if spec.functional_form is FunctionalForm.VALUE_AND_SLOPE:
            Xs = psa_fixed_slope_matrix(ts, spec)
            Zs = psa_random_slope_matrix(ts, spec)
            slope = Xs @ self.betas.T + Zs @ self.b.T
            logh = logh + self.alphas[:, 1] * slope
        return logh

    def _increment(self, a: float, b: float) -> np.ndarray:
        """Per-pair integral of the hazard over [a, b] (a < b)."""
        edges = a + graded_edges(b - a, [k - a for k in self._knots], max_len=1.0)
        total = np.zeros(self.n_pairs)
        with np.errstate(over="ignore"):
            for lo, hi in zip(edges[:-1], edges[1:]):
                ts, ws = kronrod_nodes(lo, hi)
                total += ws @ np.exp(self._log_hazard_nodes(ts))
        if not np.all(np.isfinite(total)):
            raise NumericError("cumulative hazard overflowed; parameters out of range")
        return total

    def _extend_ascending(self, new_times: np.ndarray) -> None:
        """Append H for sorted times beyond the grid end in one matrix pass."""
        from .quadrature import segments

        prev = self._grid_times[-1]
        node_blocks, weight_blocks, gap_sizes = [], [], []
        for u in new_times:
            count = 0
            for lo, hi in segments(prev, float(u), self._knots):
                ts, ws = kronrod_nodes(lo, hi)
                node_blocks.append(ts)
                weight_blocks.append(ws)
                count += len(ts)
            gap_sizes.append(count)
            prev = float(u)
        nodes = np.concatenate(node_blocks)
        weights = np.concatenate(weight_blocks)
        with np.errstate(over="ignore"):
            contrib = weights[:, None] * np.exp(self._log_hazard_nodes(nodes))
        starts = np.concatenate([[0], np.cumsum(gap_sizes)[:-1]]).astype(int)
        increments = np.add.reduceat(contrib, starts, axis=0)
        H = self._grid_H[-1] + np.cumsum(increments, axis=0)
        if not np.all(np.isfinite(H)):
            raise NumericError("cumulative hazard overflowed; parameters out of range")
        self._grid_times.extend(float(u) for u in new_times)
        self._grid_H.extend(H)

    def H_many(self, us) -> np.ndarray:
        """(len(us), n_pairs) cumulative hazards for sorted times >= t."""
        us = np.asarray(us, dtype=float)
        with self._lock:
            last = self._grid_times[-1]
            fresh = np.unique(us[us > last])
            if len(fresh):
                self._extend_ascending(fresh)
            grid = np.asarray(self._grid_times)
            idx = np.searchsorted(grid, us)
            idx = np.clip(idx, 0, len(grid) - 1)
            on_grid = grid[idx] == us
            H_grid = np.asarray(self._grid_H)
        out = np.empty((len(us), self.n_pairs))
        out[on_grid] = H_grid[idx[on_grid]]
        for i in np.nonzero(~on_grid)[0]:
            out[i] = self._H_at(float(us[i]))
        return out

    def pi_grid(self):
        """Memoized outer-quadrature sweep: (nodes, weights, pi, pi(horizon))."""
        if self._pi_cache is None:
            ts, ws = _outer_nodes(self)
            H = self.H_many(np.append(ts, self.horizon))
            with np.errstate(under="ignore"):
                pi = np.exp(-H).mean(axis=1)
            self._pi_cache = (ts, ws, pi[:-1], float(pi[-1]))
        return self._pi_cache

    def _H_at(self, u: float) -> np.ndarray:
        """Per-pair cumulative hazard from t to u (u >= t)."""
        t = self.state.t
        if u < t:
            raise DomainError(f"u={u} precedes the last biopsy t={t}")
        if u == t:
            return self._grid_H[0]
        with self._lock:
            idx = bisect.bisect_right(self._grid_times, u) - 1
            if self._grid_times[idx] == u:
                return self._grid_H[idx]
            if idx == len(self._grid_times) - 1:
                # ascending append keeps the grid telescoping exactly
                H = self._grid_H[idx] + self._increment(self._grid_times[idx], u)
                self._grid_times.append(u)
                self._grid_H.append(H)
                return H
            cached = self._interior_cache.get(u)
            if cached is None:
                cached = self._grid_H[idx] + self._increment(self._grid_times[idx], u)
                if len(self._interior_cache) > 4096:
                    self._interior_cache.clear()
                self._interior_cache[u] = cached
            return cached

    def survival(self, u: float) -> float:
        return float(np.mean(np.exp(-self._H_at(u))))

    def survival_many(self, us) -> np.ndarray:
        return np.array([self.survival(float(u)) for u in us])

    def mean_values(self, ts) -> np.ndarray:
        """(len(ts), n_pairs) matrix of m_j(t) across pairs."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        X = psa_fixed_design_matrix(ts, self.state.history.age_at_entry, self.spec)
        Z = psa_random_design_matrix(ts, self.spec)
        return X @ self.betas.T + Z @ self.b.T


# ---------------------------------------------------------------------------
# pair generation


def _select_theta_indices(n_available: int, n_theta: int) -> np.ndarray:
    if n_available <= n_theta:
        return np.arange(n_available)
    return np.unique(np.linspace(0, n_available - 1, n_theta).round().astype(int))


def sample_subject_effects(
    state: NewPatientState,
    posterior: PosteriorSamples,
    per_theta: int = 5,
    n_theta: int = 200,
    mh_steps: int = 50,
    seed: int = 0,
    horizon: float = DEFAULT_HORIZON,
) -> PredictivePosterior:
    """Draw subject random effects conditional on survival to t and the PSA data.

    For each retained theta draw, ``per_theta`` random-walk Metropolis chains
    target p(y | b, theta) * exp(-H(t | b, theta)) * p(b | theta); proposals
    use the Gaussian-part conditional covariance (a Laplace-style
    approximation that is exact when no survival term is present).
    """
    spec = posterior.model_spec
    idx = _select_theta_indices(posterior.n_draws, n_theta)
    n_sel = len(idx)
    W = n_sel * per_theta
    q = spec.q
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))

    betas = posterior.betas[idx]
    gammas = posterior.gammas[idx]
    alphas = posterior.alphas[idx]
    sigma2s = posterior.sigma2s[idx]
    Ds = posterior.Ds[idx]
    bl_params = posterior.baseline_params[idx]

    history = state.history
    age = history.age_at_entry
    has_data = bool(history.psa)
    if has_data:
        times = history.psa_times()
        y = history.log2_psa_values()
        X = psa_fixed_design_matrix(times, age, spec)
        Z = psa_random_design_matrix(times, spec)

    # one walker block per theta: indices w -> theta via repeat
    theta_of = np.repeat(np.arange(n_sel), per_theta)

    # Laplace-style proposal: conditional of the Gaussian part
    modes = np.zeros((n_sel, q))
    chols = np.zeros((n_sel, q, q))
    for j in range(n_sel):
        Dj = Ds[j]
        prec = np.linalg.inv(Dj)
        if has_data:
            prec = prec + Z.T @ Z / sigma2s[j]
            rhs = Z.T @ (y - X @ betas[j]) / sigma2s[j]
            cov = np.linalg.inv(prec)
            modes[j] = cov @ rhs
        else:
            cov = Dj
        chols[j] = np.linalg.cholesky(cov)

    walkers = modes[theta_of] + np.einsum(
        "wij,wj->wi", chols[theta_of], rng.standard_normal((W, q))
    )

    # expand per-theta quantities to walkers
    betas_w = betas[theta_of]
    alphas_w = alphas[theta_of]
    bl_w = bl_params[theta_of]
    sigma2_w = sigma2s[theta_of]
    age_dev = age - spec.age_center

    if has_data:
        Xbeta_w = X @ betas_w.T  # (n_obs, W)

    need_H = state.t > 0
    if need_H:
        knots = set(spec.fixed_basis.internal_knots) | set(spec.random_basis.internal_knots)
        knots |= {spec.fixed_basis.boundary[1]}
        if posterior.baseline_kind == "pspline":
            knots |= set(posterior.baseline_basis.internal_knots)
        edges = graded_edges(state.t, sorted(knots), max_len=1.0)
        node_t, node_w = [], []
        for lo, hi in zip(edges[:-1], edges[1:]):
            ts, ws = kronrod_nodes(lo, hi)
            node_t.append(ts)
            node_w.append(ws)
        node_t = np.concatenate(node_t)
        node_w = np.concatenate(node_w)
        Xn = psa_fixed_design_matrix(node_t, age, spec)
        Zn = psa_random_design_matrix(node_t, spec)
        Xsn = psa_fixed_slope_matrix(node_t, spec)
        Zsn = psa_random_slope_matrix(node_t, spec)
        if posterior.baseline_kind == "weibull":
            log_t = np.log(node_t)[:, None]
            logh0_w = (bl_w[:, 0] - bl_w[:, 1]) + (np.exp(bl_w[:, 0]) - 1.0) * (log_t - bl_w[:, 1])
        else:
            Bn = bspline_basis(np.clip(node_t, *posterior.baseline_basis.boundary), posterior.baseline_basis)
            logh0_w = bl_w[:, 0] + Bn @ bl_w[:, 1:].T
        if spec.include_age_terms:
            logh0_w = logh0_w + gammas[theta_of, 0] * age_dev + gammas[theta_of, 1] * age_dev**2
        base_m_w = Xn @ betas_w.T
        base_s_w = Xsn @ betas_w.T

    prior_chols = np.linalg.cholesky(Ds)  # (n_sel, q, q), for the prior term
    prior_logdets = 2.0 * np.log(np.diagonal(prior_chols, axis1=1, axis2=2)).sum(axis=1)

    def log_target(b_w: np.ndarray) -> np.ndarray:
        # prior: N(0, D_theta), batched over the theta blocks
        stacked = b_w.reshape(n_sel, per_theta, q).transpose(0, 2, 1)
        zq = np.linalg.solve(prior_chols, stacked)  # (n_sel, q, per_theta)
        quad = (zq * zq).sum(axis=1)
        out = (-0.5 * (quad + prior_logdets[:, None] + q * math.log(2 * math.pi))).reshape(W)
        if has_data:
            resid = y[:, None] - Xbeta_w - Z @ b_w.T
            ssr = (resid * resid).sum(axis=0)
            out += -0.5 * len(y) * np.log(2 * math.pi * sigma2_w) - 0.5 * ssr / sigma2_w
        if need_H:
            with np.errstate(over="ignore"):
                logh = logh0_w + alphas_w[:, 0] * (base_m_w + Zn @ b_w.T)
                if spec.functional_form is FunctionalForm.VALUE_AND_SLOPE:
                    logh = logh + alphas_w[:, 1] * (base_s_w + Zsn @ b_w.T)
                H = node_w @ np.exp(logh)
            out -= H
        out[~np.isfinite(out)] = -np.inf
        return out

    cur = log_target(walkers)
    if not np.all(np.isfinite(cur)):
        # fall back to the prior mode for walkers that started in a bad region
        bad = ~np.isfinite(cur)
        walkers[bad] = 0.0
        cur = log_target(walkers)
        if not np.all(np.isfinite(cur)):
            raise NumericError("non-finite conditional density for subject random effects")

    scale = 2.38 / math.sqrt(q)
    for _ in range(mh_steps):
        prop = walkers + scale * np.einsum(
            "wij,wj->wi", chols[theta_of], rng.standard_normal((W, q))
        )
        new = log_target(prop)
        accept = np.log(rng.uniform(size=W)) < new - cur
        walkers = np.where(accept[:, None], prop, walkers)
        cur = np.where(accept, new, cur)

    return PredictivePosterior(
        state=state,
        spec=spec,
        betas=betas_w,
        gammas=gammas[theta_of],
        alphas=alphas_w,
        baseline_kind=posterior.baseline_kind,
        baseline_basis=posterior.baseline_basis,
        baseline_params=bl_w,
        b=walkers,
        horizon=horizon,
    )


# ---------------------------------------------------------------------------
# queries


def dynamic_survival(u: float, state: NewPatientState, pp: PredictivePosterior) -> float:
    """pi(u | t, s): probability of no reclassification by u, given T* > t."""
    if u < state.t:
        raise DomainError(f"u={u} precedes the last biopsy t={state.t}")
    return pp.survival(u)


def survival_inverse(p: float, state: NewPatientState, pp: PredictivePosterior,
                     tol: float = 1e-4) -> InverseResult:
    """Smallest u with pi(u) = p (bisection; pi is nonincreasing)."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    t, horizon = state.t, pp.horizon
    if pp.survival(horizon) > p:
        return InverseResult(u=horizon, at_horizon=True)
    lo, hi = t, horizon
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pp.survival(mid) >= p:
            lo = mid
        else:
            hi = mid
    return InverseResult(u=0.5 * (lo + hi), at_horizon=False)


def _outer_nodes(pp: PredictivePosterior):
    """Ascending K15 nodes and weights over [t, horizon], plus the edges."""
    t, horizon = pp.state.t, pp.horizon
    edges = t + graded_edges(horizon - t, [k - t for k in pp._knots], max_len=2.0)
    all_t, all_w = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        ts, ws = kronrod_nodes(lo, hi)
        all_t.append(ts)
        all_w.append(ws)
    return np.concatenate(all_t), np.concatenate(all_w)


def _pi_on_outer_grid(pp: PredictivePosterior):
    return pp.pi_grid()


def expected_gr_time(state: NewPatientState, pp: PredictivePosterior) -> TimeSummary:
    """E[T* | T* > t, data] = t + integral of pi over [t, horizon].

    ``tail_dominated`` flags pi(horizon) > 0.05; ``bound_width`` reports the
    horizon * pi(horizon) truncation bracket either way.
    """
    ts, ws, pi, tail = _pi_on_outer_grid(pp)
    value = state.t + float(ws @ pi)
    return TimeSummary(
        value=value,
        tail_prob=tail,
        tail_dominated=tail > TAIL_CAP,
        bound_width=pp.horizon * tail,
    )


def variance_gr_time(state: NewPatientState, pp: PredictivePosterior) -> TimeSummary:
    """var[T*] = 2 * int (u - t) pi(u) du - (int pi du)^2 over [t, horizon]."""
    ts, ws, pi, tail = _pi_on_outer_grid(pp)
    integral = float(ws @ pi)
    second = 2.0 * float(ws @ ((ts - state.t) * pi))
    value = max(second - integral * integral, 0.0)
    return TimeSummary(
        value=value,
        tail_prob=tail,
        tail_dominated=tail > TAIL_CAP,
        bound_width=pp.horizon * tail,
    )


def quantile_gr_time(q: float, state: NewPatientState, pp: PredictivePosterior) -> InverseResult:
    """q-quantile of the predictive time: survival_inverse(1 - q)."""
    if not 0.0 < q < 1.0:
        raise DomainError(f"q must lie in (0, 1), got {q}")
    return survival_inverse(1.0 - q, state, pp)


def fitted_psa_curve(state: NewPatientState, pp: PredictivePosterior, times) -> dict:
    """Pointwise mean and 95% band of m_j(t) over the pairs."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    values = pp.mean_values(times)
    return {
        "times": times,
        "mean": values.mean(axis=1),
        "low": np.quantile(values, 0.025, axis=1),
        "high": np.quantile(values, 0.975, axis=1),
    }
