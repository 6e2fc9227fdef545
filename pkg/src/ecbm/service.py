"""Stateless HTTP facade over a loaded checkpoint and dataset split.

Every endpoint is a pure function of the immutable service state and the
request, so concurrent identical requests return identical bodies.  The
per-class concept-importance tables are dataset-level constants for a
frozen model and are precomputed once at startup.

Errors: 400 malformed body or dimension mismatch, 404 unknown example or
split, 422 exact-mode enumeration too large (the body hints at gradient
mode), 500 numerical failure.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import data as ed
from . import inference as inf
from . import interpret as it
from . import model as em
from .diffcore import GraphError


@dataclass
class ServiceState:
    """Read-only after startup."""

    theta: em.Theta
    dataset: ed.Dataset
    split: str
    concept_names: list
    class_names: list
    config: inf.InferenceConfig
    marginal_cache: list = field(default_factory=list)  # per class: [p1 per k]

    @classmethod
    def build(cls, theta: em.Theta, dataset: ed.Dataset, split: str = "test",
              config: inf.InferenceConfig | None = None,
              concept_names=None, class_names=None) -> "ServiceState":
        cfg = theta.config
        if dataset.n_concepts != cfg.n_concepts or dataset.n_classes != cfg.n_classes:
            raise ValueError("dataset dimensions do not match the checkpoint")
        state = cls(
            theta=theta,
            dataset=dataset,
            split=split,
            concept_names=list(concept_names
                               or (f"concept_{k}" for k in range(cfg.n_concepts))),
            class_names=list(class_names
                             or (f"class_{m}" for m in range(cfg.n_classes))),
            config=config or inf.InferenceConfig(),
        )
        estimator = it.EstimatorConfig(inference=state.config)
        for m in range(cfg.n_classes):
            tables = it.marginal_concept_importance(theta, dataset, m, estimator)
            state.marginal_cache.append([float(t.probs[1]) for t in tables])
        return state


class PredictBody(BaseModel):
    features: list[float]


class InterveneBody(BaseModel):
    features: list[float]
    fixed: dict[str, int] = {}
    mode: str = "exact"


def _check_features(state: ServiceState, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    want = state.theta.config.feature_dim
    if x.ndim != 1 or x.shape[0] != want:
        raise DimensionError(f"expected {want} features, got {x.shape}")
    if not np.isfinite(x).all():
        raise DimensionError("features must be finite")
    return x


class DimensionError(ValueError):
    pass


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="ecbm", docs_url=None, redoc_url=None)
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(DimensionError)
    async def bad_dims(request: Request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(inf.EnumerationLimitError)
    async def too_large(request: Request, exc):
        return JSONResponse(status_code=422, content={
            "detail": f"{exc}", "hint": "retry with mode=gradient"})

    @app.exception_handler(GraphError)
    async def numerical(request: Request, exc):
        return JSONResponse(status_code=500,
                            content={"detail": f"numerical failure: {exc}"})

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/model")
    def model_info():
        cfg = state.theta.config
        return {
            "K": cfg.n_concepts,
            "M": cfg.n_classes,
            "concept_names": state.concept_names,
            "class_names": state.class_names,
            "lambdas": {
                "train_concept": cfg.lambda_c,
                "train_global": cfg.lambda_g,
                "inference_concept": cfg.lambda_c_inf,
                "inference_global": cfg.lambda_g_inf,
            },
            "split": state.split,
            "n_examples": len(state.dataset),
        }

    @app.get("/examples")
    def example(split: str = "test", index: int = 0):
        if split != state.split:
            return JSONResponse(status_code=404,
                                content={"detail": f"unknown split {split!r}"})
        if not 0 <= index < len(state.dataset):
            return JSONResponse(status_code=404,
                                content={"detail": f"no example {index}"})
        return {
            "index": index,
            "features": [float(v) for v in state.dataset.features[index]],
            "concepts": [int(v) for v in state.dataset.concepts[index]],
            "label": int(state.dataset.labels[index]),
        }

    @app.post("/predict")
    def predict(body: PredictBody):
        x = _check_features(state, body.features)
        res = inf.predict(state.theta, x, state.config)
        return {
            "concept_probs": [float(v) for v in res.state.c_hat],
            "class_probs": [float(v) for v in res.state.y_hat],
            "energies": {
                "class": res.energies.e_class,
                "concept": float(res.energies.e_concept_per_k.sum()),
                "concept_per_k": [float(v) for v in res.energies.e_concept_per_k],
                "global": res.energies.e_global,
                "joint": res.energies.e_joint,
            },
            "rounded": {"concepts": [int(v) for v in res.concepts],
                        "class": res.class_index},
        }

    @app.post("/intervene")
    def intervene(body: InterveneBody):
        x = _check_features(state, body.features)
        try:
            mask = inf.check_mask(
                {int(k): v for k, v in body.fixed.items()},
                state.theta.config.n_concepts)
        except ValueError as exc:
            raise DimensionError(str(exc)) from exc
        if body.mode not in ("exact", "gradient"):
            raise DimensionError(f"unknown mode {body.mode!r}")
        if body.mode == "exact":
            c_marg, y_marg = inf.exact_marginals(state.theta, x, mask,
                                                 state.config)
            return {
                "mode": "exact",
                "concept_probs": [float(v) for v in c_marg],
                "class_probs": [float(v) for v in y_marg],
                "rounded": {
                    "concepts": [int(v) for v in (c_marg >= 0.5)],
                    "class": int(y_marg.argmax()),
                },
                "fixed": {str(k): v for k, v in sorted(mask.items())},
            }
        res = inf.intervene_gradient(state.theta, x, mask, state.config)
        return {
            "mode": "gradient",
            "concept_probs": [float(v) for v in res.state.c_hat],
            "class_probs": [float(v) for v in res.state.y_hat],
            "rounded": {"concepts": [int(v) for v in res.concepts],
                        "class": res.class_index},
            "fixed": {str(k): v for k, v in sorted(mask.items())},
        }

    @app.get("/interpret/marginal")
    def interpret_marginal(
            class_index: int = Query(alias="class")):
        if not 0 <= class_index < state.theta.config.n_classes:
            raise DimensionError(f"class {class_index} out of range")
        return [{"k": k, "p1": p}
                for k, p in enumerate(state.marginal_cache[class_index])]

    @app.get("/interpret/conditional")
    def interpret_conditional(
            k: int, kp: int, ckp: int,
            class_index: int | None = Query(default=None, alias="class")):
        cfg = state.theta.config
        if not (0 <= k < cfg.n_concepts and 0 <= kp < cfg.n_concepts):
            raise DimensionError("concept index out of range")
        if k == kp:
            raise DimensionError("the two concept indices must differ")
        if ckp not in (0, 1):
            raise DimensionError("ckp must be 0 or 1")
        estimator = it.EstimatorConfig(inference=state.config)
        if class_index is None:
            table = it.concept_conditional(state.theta, state.dataset, k, kp,
                                           ckp, estimator)
        else:
            if not 0 <= class_index < cfg.n_classes:
                raise DimensionError(f"class {class_index} out of range")
            table = it.concept_conditional_given_class(
                state.theta, state.dataset, k, kp, ckp, class_index, estimator)
        return {"k": k, "kp": kp, "ckp": ckp, "class": class_index,
                "value": float(table.probs[1])}

    ui_dir = os.environ.get("ECBM_UI_DIR")
    if ui_dir and os.path.isdir(ui_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
