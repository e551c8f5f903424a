"""HTTP service exposing the experiment runner.

Each endpoint takes a full experiment config plus the same overrides the CLI
accepts, runs synchronously, and returns the artifact names it wrote. Domain
failures map onto a stable error envelope::

    {"error": {"code": "config" | "numeric" | "io", "message": "..."}}

so clients can translate outcomes into exit codes without parsing messages.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .checkpoint import CheckpointError
from .config import ConfigError, ExperimentConfig
from .graph import GraphError
from .tensor import NumericError, ShapeError
from . import runner

ERROR_STATUS = {"config": 422, "numeric": 500, "io": 404, "internal": 500}


class ServiceError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


def classify_error(exc: Exception) -> str:
    if isinstance(exc, (ConfigError, GraphError, ShapeError, ValueError)):
        return "config"
    if isinstance(exc, NumericError):
        return "numeric"
    if isinstance(exc, (CheckpointError, FileNotFoundError, OSError)):
        return "io"
    return "internal"


class RunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    config: ExperimentConfig
    out_dir: str | None = None
    seed: int | None = Field(default=None, ge=0)
    tau: float | None = Field(default=None, ge=0)
    lam: float | None = Field(default=None, ge=0, alias="lambda")


class HeatmapRequest(RunRequest):
    group: int = Field(default=0, ge=0)


class RunResponse(BaseModel):
    ok: bool
    summary: dict
    artifacts: dict[str, str]


def _execute(fn, req: RunRequest, **kwargs) -> RunResponse:
    try:
        cfg = runner.apply_overrides(req.config, out_dir=req.out_dir,
                                     seed=req.seed, tau=req.tau, lam=req.lam)
        result = fn(cfg, **kwargs)
    except Exception as exc:  # noqa: BLE001 - classified and re-raised below
        raise ServiceError(classify_error(exc), str(exc)) from exc
    return RunResponse(**result.to_dict())


def create_app() -> FastAPI:
    app = FastAPI(title="vacl", version="0.1.0",
                  description="Training, regularization, and channel pruning "
                              "experiments for residual MLPs")

    @app.exception_handler(ServiceError)
    async def service_error_handler(_: Request, exc: ServiceError):
        return JSONResponse(
            status_code=ERROR_STATUS.get(exc.code, 500),
            content={"error": {"code": exc.code, "message": exc.message}})

    @app.exception_handler(RequestValidationError)
    async def validation_error_handler(_: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={"error": {"code": "config", "message": str(exc)}})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/train", response_model=RunResponse)
    def train_endpoint(req: RunRequest) -> RunResponse:
        return _execute(runner.run_train, req)

    @app.post("/prune", response_model=RunResponse)
    def prune_endpoint(req: RunRequest) -> RunResponse:
        return _execute(runner.run_prune, req)

    @app.post("/finetune", response_model=RunResponse)
    def finetune_endpoint(req: RunRequest) -> RunResponse:
        return _execute(runner.run_finetune, req)

    @app.post("/pipeline", response_model=RunResponse)
    def pipeline_endpoint(req: RunRequest) -> RunResponse:
        return _execute(runner.run_pipeline, req)

    @app.post("/sweep/tau", response_model=RunResponse)
    def sweep_tau_endpoint(req: RunRequest) -> RunResponse:
        return _execute(runner.run_sweep_tau, req)

    @app.post("/sweep/lambda", response_model=RunResponse)
    def sweep_lambda_endpoint(req: RunRequest) -> RunResponse:
        return _execute(runner.run_sweep_lambda, req)

    @app.post("/heatmap", response_model=RunResponse)
    def heatmap_endpoint(req: HeatmapRequest) -> RunResponse:
        return _execute(runner.run_heatmap, req, group=req.group)

    @app.post("/contour", response_model=RunResponse)
    def contour_endpoint(req: RunRequest) -> RunResponse:
        return _execute(runner.run_contour, req)

    return app


app = create_app()
