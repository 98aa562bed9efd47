"""Request/response models for the experiment service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class PlanModel(BaseModel):
    envs: list[str]
    variants: list[str]
    seeds: list[int]
    output_root: str
    workers: int = 1
    overrides: dict[str, str] = Field(default_factory=dict)


class ConfigRequest(BaseModel):
    config_text: str
    overrides: dict[str, str] = Field(default_factory=dict)


class ValidateResponse(BaseModel):
    plan: PlanModel


class SubmitResponse(BaseModel):
    job_id: str


class CellStatus(BaseModel):
    env: str
    variant: str
    seed: int
    status: str  # pending | ok | failed
    run_dir: Optional[str] = None
    final_return: Optional[float] = None
    hns: Optional[float] = None
    error: Optional[str] = None


class JobStatus(BaseModel):
    job_id: str
    state: str  # running | done | failed
    plan: PlanModel
    cells: list[CellStatus]
    failed: int = 0
    error: Optional[str] = None


class JobList(BaseModel):
    jobs: list[str]


class AggregateRequest(BaseModel):
    run_dirs: list[str]
    out_dir: Optional[str] = None


class AggregateRow(BaseModel):
    env: str
    variant: str
    num_seeds: int
    iqm_hns: float
    optimality_gap: float
    median_return: float
    mean_return: float


class AggregateResponse(BaseModel):
    rows: list[AggregateRow]
    errors: list[str]
    csv_path: Optional[str] = None
    text_path: Optional[str] = None


class QErrorRequest(BaseModel):
    run_dirs: list[str]
    out_path: Optional[str] = None


class QErrorRow(BaseModel):
    step: int
    variant: str
    mean: float
    std: float


class QErrorResponse(BaseModel):
    rows: list[QErrorRow]
    errors: list[str]
    csv_path: Optional[str] = None


class HealthResponse(BaseModel):
    status: str
    version: str
