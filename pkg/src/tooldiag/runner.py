"""Run a dataset against a backend and aggregate the results."""

from __future__ import annotations

import datetime as dt
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .backends.base import PolicyBackend, harness_faults_of
from .metrics import ErrorMatrix, RunSummary, compute_summary
from .scenario import Dataset, Modality, Task
from .trace import StepRecord, TaskResult
from .workflow import DEFAULT_LIMIT, HarnessCrash, run_task


@dataclass
class EvaluationRun:
    header: dict[str, Any]
    summary: RunSummary
    results: list[TaskResult]
    traces: list[StepRecord]

    @property
    def run_id(self) -> str:
        return self.header["run_id"]

    def results_by_id(self) -> dict[str, TaskResult]:
        return {r.task_id: r for r in self.results}


def _run_one(task: Task, backend: PolicyBackend, limit: int) -> tuple[TaskResult, list[StepRecord]]:
    try:
        policy = backend.for_task(task.instance)
        return run_task(task.instance, task.truth, policy, limit, harness_faults_of(policy))
    except Exception as exc:
        raise HarnessCrash(f"task {task.task_id} crashed the harness: {type(exc).__name__}: {exc}") from exc


def summarize(run_id: str, backend: dict[str, Any], dataset_seed: int, limit: int,
              results: list[TaskResult]) -> RunSummary:
    return RunSummary(
        run_id=run_id,
        backend=backend,
        dataset_seed=dataset_seed,
        limit=limit,
        stats=compute_summary(results),
        matrix_vision=ErrorMatrix.from_results(r for r in results if r.modality == Modality.VISION.value),
        matrix_text=ErrorMatrix.from_results(r for r in results if r.modality == Modality.TEXT.value),
    )


def run_evaluation(
    dataset: Dataset,
    backend: PolicyBackend,
    limit: int = DEFAULT_LIMIT,
    workers: int = 1,
    out_dir: str | Path | None = None,
    run_id: str | None = None,
) -> EvaluationRun:
    """Execute every task once; results are folded in task-id order, so
    the worker count never changes the outcome."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if workers < 1:
        raise ValueError("workers must be at least 1")
    header = {
        "run_id": run_id or uuid.uuid4().hex,
        "backend": backend.descriptor.to_dict(),
        "dataset_seed": dataset.seed,
        "dataset_count": dataset.count,
        "tasks": len(dataset),
        "limit": limit,
        "started_at": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    }
    tasks = sorted(dataset.tasks, key=lambda t: t.task_id)
    if workers == 1:
        outputs = [_run_one(t, backend, limit) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_one, t, backend, limit) for t in tasks]
            try:
                outputs = [f.result() for f in futures]
            except HarnessCrash:
                for f in futures:
                    f.cancel()
                raise

    results = [result for result, _ in outputs]
    traces = [rec for _, records in outputs for rec in records]
    summary = summarize(header["run_id"], header["backend"], dataset.seed, limit, results)
    run = EvaluationRun(header, summary, results, traces)
    if out_dir is not None:
        from .report import write_archive

        write_archive(out_dir, run)
    return run
