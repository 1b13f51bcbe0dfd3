from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Protocol

from ..scenario import TaskInstance
from ..workflow import AgentPolicy, HarnessFault


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str
    label: str
    platform: str = "harness"
    seed: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}


class PolicyBackend(Protocol):
    """Factory for per-task policies. Policies are never shared between tasks."""

    descriptor: BackendDescriptor

    def for_task(self, instance: TaskInstance) -> AgentPolicy: ...


def harness_faults_of(policy: AgentPolicy) -> tuple[HarnessFault, ...]:
    return tuple(getattr(policy, "harness_faults", ()))
