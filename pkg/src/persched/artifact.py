"""Fitted-model persistence.

A model artifact is canonical JSON (sorted keys, fixed separators) with every
numeric array encoded as base64 little-endian float64 bytes, so save/load
round trips are bit-exact and repeated saves of the same model are
byte-identical.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ArtifactError
from .likelihood import PriorConfig
from .mcmc import PosteriorSamples
from .splines import SplineBasis
from .types import FunctionalForm, ModelSpec

FORMAT_NAME = "persched-model"
FORMAT_VERSION = 1


@dataclass
class ModelArtifact:
    """A persisted fitted model plus provenance."""

    samples: PosteriorSamples
    provenance: str = ""
    kappa_table: dict[float, float] = field(default_factory=dict)

    @property
    def model_spec(self) -> ModelSpec:
        return self.samples.model_spec


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def _decode_array(obj) -> np.ndarray:
    try:
        raw = base64.b64decode(obj["data"].encode("ascii"), validate=True)
        arr = np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).copy()
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"corrupt array payload: {exc}") from exc
    return arr


def _basis_to_json(basis: SplineBasis | None):
    if basis is None:
        return None
    return {
        "degree": basis.degree,
        "internal_knots": list(basis.internal_knots),
        "boundary": list(basis.boundary),
    }


def _basis_from_json(obj) -> SplineBasis | None:
    if obj is None:
        return None
    return SplineBasis(
        degree=int(obj["degree"]),
        internal_knots=tuple(obj["internal_knots"]),
        boundary=tuple(obj["boundary"]),
    )


def save_model(artifact: ModelArtifact) -> bytes:
    s = artifact.samples
    spec = s.model_spec
    payload = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "provenance": artifact.provenance,
        "seed": s.seed,
        "model_spec": {
            "fixed_basis": _basis_to_json(spec.fixed_basis),
            "random_basis": _basis_to_json(spec.random_basis),
            "functional_form": spec.functional_form.value,
            "age_center": spec.age_center,
            "include_age_terms": spec.include_age_terms,
        },
        "priors": asdict(s.prior_config),
        "baseline": {
            "kind": s.baseline_kind,
            "basis": _basis_to_json(s.baseline_basis),
            "penalty_order": s.penalty_order,
        },
        "arrays": {
            "betas": _encode_array(s.betas),
            "gammas": _encode_array(s.gammas),
            "alphas": _encode_array(s.alphas),
            "sigma2s": _encode_array(s.sigma2s),
            "Ds": _encode_array(s.Ds),
            "baseline_params": _encode_array(s.baseline_params),
            "ranef": _encode_array(s.ranef),
            "chain_id": _encode_array(s.chain_id.astype(float)),
        },
        "diagnostics": s.diagnostics,
        "kappa_table": {str(k): v for k, v in artifact.kappa_table.items()},
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def load_model(data: bytes) -> ModelArtifact:
    try:
        payload = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"cannot parse model artifact: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT_NAME:
        raise ArtifactError("not a model artifact")
    version = payload.get("version")
    if version != FORMAT_VERSION:
        raise ArtifactError(
            f"artifact version {version} not supported (expected {FORMAT_VERSION}); "
            "re-fit or convert the model"
        )
    try:
        spec_obj = payload["model_spec"]
        spec = ModelSpec(
            fixed_basis=_basis_from_json(spec_obj["fixed_basis"]),
            random_basis=_basis_from_json(spec_obj["random_basis"]),
            functional_form=FunctionalForm(spec_obj["functional_form"]),
            age_center=spec_obj["age_center"],
            include_age_terms=spec_obj["include_age_terms"],
        )
        priors = PriorConfig(**payload["priors"])
        arrays = payload["arrays"]
        samples = PosteriorSamples(
            model_spec=spec,
            prior_config=priors,
            seed=int(payload["seed"]),
            baseline_kind=payload["baseline"]["kind"],
            baseline_basis=_basis_from_json(payload["baseline"]["basis"]),
            penalty_order=int(payload["baseline"]["penalty_order"]),
            betas=_decode_array(arrays["betas"]),
            gammas=_decode_array(arrays["gammas"]),
            alphas=_decode_array(arrays["alphas"]),
            sigma2s=_decode_array(arrays["sigma2s"]),
            Ds=_decode_array(arrays["Ds"]),
            baseline_params=_decode_array(arrays["baseline_params"]),
            ranef=_decode_array(arrays["ranef"]),
            chain_id=_decode_array(arrays["chain_id"]).astype(int),
            diagnostics=payload.get("diagnostics", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ArtifactError):
            raise
        raise ArtifactError(f"corrupt model artifact: {exc}") from exc
    kappa_table = {float(k): float(v) for k, v in payload.get("kappa_table", {}).items()}
    return ModelArtifact(
        samples=samples, provenance=payload.get("provenance", ""), kappa_table=kappa_table
    )


def demo_artifact(n_draws: int = 1) -> ModelArtifact:
    """The bundled demonstration model at the shipped parameter values."""
    from .params import default_model_spec, default_theta

    spec = default_model_spec()
    thetas = [default_theta() for _ in range(n_draws)]
    samples = PosteriorSamples.from_thetas(spec, PriorConfig(), thetas)
    return ModelArtifact(
        samples=samples,
        provenance="bundled demonstration model (shipped posterior means, Weibull baseline)",
    )
