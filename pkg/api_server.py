import asyncio
import time
import uuid
from typing import Any, Dict, List, Literal, Optional

import uvicorn
from fastapi import BackgroundTasks, FastAPI
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field, field_validator

from src.bench.config import build_model
from src.bench.harness import run_meeting_benchmark_async
from src.bench.oracles import discrete_model_oracle, kalman_smoother
from src.estimation_engine import TEST_FUNCTIONS, averaged_estimate, tune_lag
from src.models.data_models import CouplingStrategy, ExperimentConfig
from src.utils.buffers import BufferManager
from src.utils.seeding import make_rng, replicate_seed

app = FastAPI(title="SMC Smoother API")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],  # Adjust for production
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# In-memory job store
sessions = {}


class JobRequest(BaseModel):
    kind: Literal["oracle", "unbiased", "bench"] = Field(description="Job type")
    model: Literal["barriers", "lg", "sv", "uniform", "discrete"] = Field(default="lg", description="Model family")
    params: List[float] = Field(default_factory=list, description="Family parameters (empty = defaults)")
    T: int = Field(default=8, ge=1, le=4096, description="Time horizon")
    N: int = Field(default=15, ge=1, description="Particle count (reference excluded)")
    strategy: CouplingStrategy = Field(default=CouplingStrategy.IMC, description="Forward coupling")
    seed: int = Field(default=0, ge=0, description="Root seed")
    replicates: int = Field(default=4, ge=1, le=1000, description="Benchmark replicates")
    iteration_cap: int = Field(default=10000, ge=1, description="Coupled iterations per replicate")
    h: str = Field(default="mid-state", description="Test function of an unbiased job")
    k: Optional[int] = Field(default=None, ge=0, description="Offset (tuned if omitted)")
    L: Optional[int] = Field(default=None, ge=1, description="Lag (tuned if omitted)")
    pilot_runs: int = Field(default=20, ge=10, description="Pilot runs for lag tuning")

    @field_validator("h")
    @classmethod
    def known_test_function(cls, v):
        if v not in TEST_FUNCTIONS:
            raise ValueError(f"h must be one of {sorted(TEST_FUNCTIONS)}")
        return v


class SessionResponse(BaseModel):
    session_id: str = Field(description="Unique job identifier")
    status: str = Field(description="Current status of the job")


class BufferContents(BaseModel):
    content: Dict[str, str] = Field(description="Contents of each run-log section")


class JobResponse(BaseModel):
    session_id: str = Field(description="Unique job identifier")
    status: str = Field(description="Status of the job: running, completed, error, not_found")
    result: Optional[Dict[str, Any]] = Field(default=None, description="Job result when completed")
    buffers: Optional[Dict[str, str]] = Field(default=None, description="Current run-log contents")
    error: Optional[str] = Field(default=None, description="Error message if status is 'error'")


def run_oracle_job(request: JobRequest, buffer_manager: BufferManager) -> Dict[str, Any]:
    if request.model == "lg":
        rho, sx, sy = request.params or (0.9, 1.0, 1.0)
        result = kalman_smoother(rho, sx, sy, request.T)
        buffer_manager.write("results", f"Kalman log-likelihood {result.log_likelihood:.6f}")
        return {"means": result.means.tolist(), "variances": result.variances.tolist(),
                "log_likelihood": result.log_likelihood}
    if request.model == "discrete":
        result = discrete_model_oracle(build_model("discrete", request.params, request.T))
        return {"marginals": result.marginals.tolist(), "log_normalizer": result.log_normalizer}
    raise ValueError("oracle jobs support the lg and discrete families")


def run_unbiased_job(request: JobRequest, buffer_manager: BufferManager) -> Dict[str, Any]:
    model = build_model(request.model, request.params, request.T)
    rng = make_rng(replicate_seed(request.seed, "unbiased", 0))
    if request.k is None or request.L is None:
        L, k, ell, tau_hint = tune_lag(model, request.N, request.strategy, rng, pilot_runs=request.pilot_runs,
                                       buffers=buffer_manager)
    else:
        L, k, ell, tau_hint = request.L, request.k, request.k, None
    estimate = averaged_estimate(model, TEST_FUNCTIONS[request.h], request.N, k, ell, L, request.strategy, rng,
                                 seed=request.seed, tau_hint=tau_hint, buffers=buffer_manager)
    return estimate.model_dump(mode="json")


async def run_bench_job(request: JobRequest, buffer_manager: BufferManager) -> Dict[str, Any]:
    config = ExperimentConfig(
        model_family=request.model,
        model_params=request.params,
        T=[request.T],
        N=[request.N],
        strategies=[request.strategy],
        replicates=request.replicates,
        seed=request.seed,
        iteration_cap=request.iteration_cap,
    )
    rows, costs = await run_meeting_benchmark_async(config, buffers=buffer_manager)
    return {
        "taus": [r.record.tau for r in rows],
        "cost": [c.model_dump(mode="json") for c in costs],
    }


@app.post("/jobs", response_model=SessionResponse)
async def create_job(request: JobRequest, background_tasks: BackgroundTasks):
    """Start a new job"""
    session_id = str(uuid.uuid4())
    buffer_manager = BufferManager(echo_progress=False)
    sessions[session_id] = {
        "status": "running",
        "buffer_manager": buffer_manager,
        "result": None,
        "error": None,
    }
    background_tasks.add_task(run_job_background, session_id, request, buffer_manager)
    return {"session_id": session_id, "status": "running"}


async def run_job_background(session_id: str, request: JobRequest, buffer_manager: BufferManager):
    """Run a job in the background"""
    start_time = time.time()
    try:
        buffer_manager.write("progress", f"Starting {request.kind} job at {time.strftime('%H:%M:%S')}")
        if request.kind == "bench":
            result = await run_bench_job(request, buffer_manager)
        elif request.kind == "oracle":
            result = await asyncio.to_thread(run_oracle_job, request, buffer_manager)
        else:
            result = await asyncio.to_thread(run_unbiased_job, request, buffer_manager)

        elapsed_time = time.time() - start_time
        buffer_manager.write("progress", f"Job completed in {elapsed_time:.2f} seconds")
        if session_id in sessions:
            sessions[session_id]["status"] = "completed"
            sessions[session_id]["result"] = result

    except Exception as e:
        elapsed_time = time.time() - start_time
        error_msg = getattr(e, "message", None) or str(e)
        if session_id in sessions:
            sessions[session_id]["status"] = "error"
            sessions[session_id]["error"] = error_msg
            buffer_manager.write("progress", f"Error after {elapsed_time:.2f} seconds: {error_msg}")


@app.get("/jobs/{session_id}", response_model=JobResponse)
async def get_job(session_id: str):
    """Get the current status and result of a job"""
    if session_id not in sessions:
        return {"session_id": session_id, "status": "not_found"}

    session = sessions[session_id]
    return {
        "session_id": session_id,
        "status": session["status"],
        "result": session["result"],
        "buffers": session["buffer_manager"].dump_all(),
        "error": session["error"],
    }


@app.get("/jobs/{session_id}/buffers", response_model=BufferContents)
async def get_buffer_contents(session_id: str):
    """Get just the run-log contents of a job"""
    if session_id not in sessions:
        return {"content": {}}
    return {"content": sessions[session_id]["buffer_manager"].dump_all()}


if __name__ == "__main__":
    uvicorn.run("api_server:app", host="0.0.0.0", port=8000, reload=True)
