"""FastAPI service wrapping the experiment runner.

Experiments are long-running, so submission returns a job id immediately;
the job executes on a background thread (cells optionally in worker
processes) and clients poll for status.  Reports are synchronous.
"""

from __future__ import annotations

import threading
import uuid

from fastapi import FastAPI, HTTPException

from .. import __version__, experiment
from ..experiment import ConfigError, ExperimentPlan
from . import schemas


def _plan_to_model(plan: ExperimentPlan) -> schemas.PlanModel:
    return schemas.PlanModel(
        envs=plan.envs, variants=plan.variants, seeds=plan.seeds,
        output_root=plan.output_root, workers=plan.workers,
        overrides=dict(plan.overrides),
    )


class Job:
    def __init__(self, job_id: str, plan: ExperimentPlan):
        self.job_id = job_id
        self.plan = plan
        self.state = "running"
        self.error: str | None = None
        self.lock = threading.Lock()
        self.cells = {
            (env, variant, seed): schemas.CellStatus(
                env=env, variant=variant, seed=seed, status="pending",
                run_dir=None)
            for env, variant, seed in plan.cells
        }

    def on_cell(self, result: dict):
        key = (result["env"], result["variant"], result["seed"])
        with self.lock:
            self.cells[key] = schemas.CellStatus(
                env=result["env"], variant=result["variant"], seed=result["seed"],
                status=result["status"], run_dir=result["run_dir"],
                final_return=result["final_return"], hns=result["hns"],
                error=result["error"])

    def status(self) -> schemas.JobStatus:
        with self.lock:
            cells = list(self.cells.values())
        failed = sum(1 for c in cells if c.status == "failed")
        return schemas.JobStatus(job_id=self.job_id, state=self.state,
                                 plan=_plan_to_model(self.plan), cells=cells,
                                 failed=failed, error=self.error)


class JobRegistry:
    def __init__(self):
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()

    def submit(self, plan: ExperimentPlan) -> str:
        job_id = uuid.uuid4().hex[:12]
        job = Job(job_id, plan)
        with self._lock:
            self._jobs[job_id] = job

        def work():
            try:
                result = experiment.run_plan(plan, progress=job.on_cell)
                job.state = "failed" if result.failed else "done"
            except Exception as exc:
                job.state = "failed"
                job.error = f"{type(exc).__name__}: {exc}"

        threading.Thread(target=work, daemon=True).start()
        return job_id

    def get(self, job_id: str) -> Job:
        with self._lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise KeyError(job_id)
        return job

    def ids(self) -> list[str]:
        with self._lock:
            return sorted(self._jobs)


def create_app() -> FastAPI:
    app = FastAPI(title="vcrl experiment service", version=__version__)
    registry = JobRegistry()
    app.state.registry = registry

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/config/validate", response_model=schemas.ValidateResponse)
    def validate_config(req: schemas.ConfigRequest):
        plan = _parse(req)
        return schemas.ValidateResponse(plan=_plan_to_model(plan))

    @app.post("/experiments", response_model=schemas.SubmitResponse)
    def submit(req: schemas.ConfigRequest):
        plan = _parse(req)
        return schemas.SubmitResponse(job_id=registry.submit(plan))

    @app.get("/experiments", response_model=schemas.JobList)
    def list_jobs():
        return schemas.JobList(jobs=registry.ids())

    @app.get("/experiments/{job_id}", response_model=schemas.JobStatus)
    def job_status(job_id: str):
        try:
            return registry.get(job_id).status()
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no such job {job_id!r}")

    @app.post("/reports/aggregate", response_model=schemas.AggregateResponse)
    def aggregate(req: schemas.AggregateRequest):
        rows, errors = experiment.aggregate_runs(req.run_dirs)
        csv_path = text_path = None
        if req.out_dir:
            csv_path, text_path = experiment.write_aggregate(req.out_dir, rows, errors)
        return schemas.AggregateResponse(
            rows=[schemas.AggregateRow(**row) for row in rows],
            errors=errors, csv_path=csv_path, text_path=text_path)

    @app.post("/reports/qerror", response_model=schemas.QErrorResponse)
    def qerror(req: schemas.QErrorRequest):
        try:
            rows, errors = experiment.emit_qerror_comparison(req.run_dirs)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        csv_path = None
        if req.out_path:
            csv_path = experiment.write_qerror_comparison(req.out_path, rows, errors)
        return schemas.QErrorResponse(
            rows=[schemas.QErrorRow(**row) for row in rows],
            errors=errors, csv_path=csv_path)

    def _parse(req: schemas.ConfigRequest) -> ExperimentPlan:
        try:
            return experiment.parse_config(req.config_text, req.overrides)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    return app
