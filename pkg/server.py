"""
server.py — FastAPI REST server for the channel estimation harness.

Runs small experiments, the oracle self-test and CFO unit conversions over
JSON. Runs execute synchronously and are kept in memory; large sweeps
belong on the command line (harness.py run).

    uvicorn server:app --reload
"""

from __future__ import annotations

import dataclasses
import math
from typing import Any

from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

import oracle
from errors import EstimationError
from harness import ExperimentConfig, figure_tables, parse_sweep, run_experiment
from phase import ppm_to_digital

MAX_HTTP_TRIALS = 50

# ---------------------------------------------------------------------------
# App setup
# ---------------------------------------------------------------------------

app = FastAPI(title="Joint CFO and Channel Estimation")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["*"],
    allow_headers=["*"],
)

# In-memory experiment storage
_experiments: dict[int, dict] = {}
_experiment_next_id: int = 1


# ---------------------------------------------------------------------------
# Pydantic request bodies
# ---------------------------------------------------------------------------

class ExperimentRequest(BaseModel):
    config: ExperimentConfig = ExperimentConfig()
    sweeps: list[str] = []


class CfoConvertRequest(BaseModel):
    ppm: float
    f1: float = Field(38e9, gt=0)
    T: float = Field(10e-9, gt=0)
    Np: int | None = Field(None, ge=1)


# ---------------------------------------------------------------------------
# Serialization helpers
# ---------------------------------------------------------------------------

def _finite(value: Any) -> Any:
    """JSON has no NaN/inf; send null instead."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _serialize_row(row: dict) -> dict:
    return {k: _finite(v) for k, v in row.items()}


def _serialize_record(r) -> dict:
    return _serialize_row(dataclasses.asdict(r))


def _serialize_experiment(exp: dict, include_records: bool = False) -> dict:
    data = {
        "id": exp["id"],
        "config": exp["config"].model_dump(mode="json"),
        "sweeps": exp["sweeps"],
        "trials": len(exp["records"]),
        "diverged": sum(r.diverged for r in exp["records"]),
        "figures": sorted(exp["figures"]),
    }
    if include_records:
        data["records"] = [_serialize_record(r) for r in exp["records"]]
    return data


# ---------------------------------------------------------------------------
# Endpoints
# ---------------------------------------------------------------------------

@app.get("/api/health")
def health():
    return {"status": "ok", "experiments": len(_experiments)}


# -- Experiments ------------------------------------------------------------

@app.post("/api/experiments")
def create_experiment(req: ExperimentRequest):
    global _experiment_next_id
    cfg = req.config
    if cfg.trials > MAX_HTTP_TRIALS:
        raise HTTPException(
            status_code=400,
            detail=f"trials={cfg.trials} exceeds the HTTP limit of {MAX_HTTP_TRIALS}; use the CLI",
        )
    try:
        sweeps = [parse_sweep(s) for s in req.sweeps]
        records = run_experiment(cfg, sweeps)
    except (EstimationError, ValueError) as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    exp = {
        "id": _experiment_next_id,
        "config": cfg,
        "sweeps": req.sweeps,
        "records": records,
        "figures": figure_tables(records, cfg.success_threshold, cfg.trim_fraction),
    }
    _experiments[exp["id"]] = exp
    _experiment_next_id += 1
    return _serialize_experiment(exp, include_records=True)


@app.get("/api/experiments")
def list_experiments():
    return [_serialize_experiment(e) for e in _experiments.values()]


@app.get("/api/experiments/{experiment_id}")
def get_experiment(experiment_id: int):
    exp = _experiments.get(experiment_id)
    if exp is None:
        raise HTTPException(status_code=404, detail="Experiment not found")
    return _serialize_experiment(exp, include_records=True)


@app.get("/api/experiments/{experiment_id}/figures/{name}")
def get_figure(experiment_id: int, name: str):
    exp = _experiments.get(experiment_id)
    if exp is None:
        raise HTTPException(status_code=404, detail="Experiment not found")
    if name not in exp["figures"]:
        raise HTTPException(
            status_code=404,
            detail=f"Unknown figure. Valid: {sorted(exp['figures'])}",
        )
    return [_serialize_row(row) for row in exp["figures"][name]]


# -- Oracle and utilities ---------------------------------------------------

@app.post("/api/selftest")
def selftest(instances: int = Query(default=2, ge=1, le=20), seed: int = Query(default=0)):
    report = oracle.run_equivalence_suite(instances, seed)
    return {
        "passed": report.passed,
        "checks": [
            {"name": c.name, "worst": _finite(c.worst), "tolerance": c.tolerance, "passed": c.passed}
            for c in report.checks
        ],
    }


@app.post("/api/cfo/convert")
def convert_cfo(req: CfoConvertRequest):
    try:
        eps = ppm_to_digital(req.ppm, req.f1, req.T)
    except EstimationError as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    data = {"ppm": req.ppm, "epsilon": eps}
    if req.Np is not None:
        data["cfo_bins"] = eps * req.Np / (2.0 * math.pi)
    return data
