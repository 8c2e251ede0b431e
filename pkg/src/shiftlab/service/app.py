"""HTTP service wrapping the experiment engine.

Runs and grids execute as background jobs on a small thread pool; clients
submit a config, poll the job, then fetch the result. Pure computations
(curve aggregation, presets) answer synchronously.
"""
from __future__ import annotations

import itertools
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import PRESETS, preset_config
from ..engine import execute_grid, execute_run
from ..errors import AggregationError, ShiftLabError
from ..runlog import aggregate_curves, curves_csv
from .models import (
    CurvesRequest,
    CurvesResponse,
    GridRequest,
    GridResult,
    HealthResponse,
    JobStatus,
    JobSubmitted,
    PresetList,
    RunRequest,
    RunResult,
)


@dataclass
class Job:
    job_id: str
    kind: str
    state: str = "queued"
    error: Optional[str] = None
    result: Optional[dict] = None


@dataclass
class JobStore:
    max_workers: int = 2
    jobs: dict[str, Job] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)
    counter: "itertools.count[int]" = field(default_factory=lambda: itertools.count(1))

    def __post_init__(self):
        self.executor = ThreadPoolExecutor(
            max_workers=self.max_workers, thread_name_prefix="shiftlab-job"
        )

    def submit(self, kind: str, fn) -> Job:
        with self.lock:
            job = Job(job_id=f"{kind}-{next(self.counter)}", kind=kind)
            self.jobs[job.job_id] = job

        def body():
            with self.lock:
                job.state = "running"
            try:
                result = fn()
            except Exception as err:
                with self.lock:
                    job.state = "failed"
                    job.error = f"{type(err).__name__}: {err}"
            else:
                with self.lock:
                    job.state = "done"
                    job.result = result

        self.executor.submit(body)
        return job

    def get(self, job_id: str) -> Job:
        with self.lock:
            job = self.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id!r}")
        return job


def create_app(job_workers: int = 2) -> FastAPI:
    app = FastAPI(
        title="shiftlab",
        version=__version__,
        description="Active learning under domain shift: run and grid execution service.",
    )
    store = JobStore(max_workers=job_workers)
    app.state.jobs = store

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.get("/presets", response_model=PresetList)
    def presets():
        return PresetList(presets=sorted(PRESETS))

    @app.get("/presets/{name}")
    def preset(name: str):
        try:
            return preset_config(name).model_dump(mode="json")
        except ShiftLabError as err:
            raise HTTPException(status_code=404, detail=str(err))

    @app.post("/runs", response_model=JobSubmitted, status_code=202)
    def submit_run(request: RunRequest):
        cfg = request.config
        job = store.submit("run", lambda: execute_run(cfg, out_dir=request.out_dir))
        return JobSubmitted(job_id=job.job_id, kind="run")

    @app.post("/grids", response_model=JobSubmitted, status_code=202)
    def submit_grid(request: GridRequest):
        grid = request.grid
        job = store.submit("grid", lambda: execute_grid(grid, out_dir=request.out_dir))
        return JobSubmitted(job_id=job.job_id, kind="grid")

    @app.get("/jobs/{job_id}", response_model=JobStatus)
    def job_status(job_id: str):
        job = store.get(job_id)
        return JobStatus(job_id=job.job_id, kind=job.kind, state=job.state, error=job.error)

    @app.get("/jobs/{job_id}/result")
    def job_result(job_id: str):
        job = store.get(job_id)
        if job.state == "failed":
            raise HTTPException(status_code=409, detail=job.error)
        if job.state != "done":
            raise HTTPException(status_code=409, detail=f"job is {job.state}")
        if job.kind == "run":
            return RunResult(**job.result)
        return GridResult(**job.result)

    @app.post("/curves", response_model=CurvesResponse)
    def curves(request: CurvesRequest):
        try:
            rows = aggregate_curves(request.runlogs)
        except AggregationError as err:
            raise HTTPException(status_code=422, detail=str(err))
        return CurvesResponse(rows=rows, csv=curves_csv(rows))

    return app


app = create_app()
