"""Request/response models for the HTTP service."""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict

from ..config import GridConfig, RunConfig


class HealthResponse(BaseModel):
    status: str
    version: str


class RunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig = RunConfig()
    out_dir: Optional[str] = None


class GridRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    grid: GridConfig = GridConfig()
    out_dir: Optional[str] = None


class JobSubmitted(BaseModel):
    job_id: str
    kind: Literal["run", "grid"]


class JobStatus(BaseModel):
    job_id: str
    kind: Literal["run", "grid"]
    state: Literal["queued", "running", "done", "failed"]
    error: Optional[str] = None


class RunResult(BaseModel):
    out_dir: str
    runlog_path: str
    final_accuracy: Optional[float]
    runlog: dict


class GridCellReport(BaseModel):
    scheme: str
    strategy: str
    seed: int
    status: Literal["ok", "failed"]
    out_dir: str
    error: Optional[str] = None


class GridResult(BaseModel):
    out_dir: str
    curves_path: str
    cells: list[GridCellReport]
    curves: list[dict]


class CurvesRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    runlogs: list[dict]


class CurvesResponse(BaseModel):
    rows: list[dict]
    csv: str


class PresetList(BaseModel):
    presets: list[str]
