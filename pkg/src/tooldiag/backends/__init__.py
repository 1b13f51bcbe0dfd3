"""Agent policies: golden script, fault injection, trace replay, remote model."""

from .base import BackendDescriptor, PolicyBackend, harness_faults_of
from .fault import (
    FaultBackend,
    FaultConfigError,
    FaultEntry,
    FaultMechanism,
    FaultPolicy,
    FaultProfile,
    fault_wrap,
    plan_faults,
)
from .golden import GOLDEN_STEPS, GoldenBackend, GoldenPolicy, parse_email
from .remote import RemoteBackend, RemoteEndpointConfig, RemotePolicy, parse_response
from .replay import ReplayBackend, ReplayError, ReplayPolicy

__all__ = [
    "BackendDescriptor",
    "FaultBackend",
    "FaultConfigError",
    "FaultEntry",
    "FaultMechanism",
    "FaultPolicy",
    "FaultProfile",
    "GOLDEN_STEPS",
    "GoldenBackend",
    "GoldenPolicy",
    "PolicyBackend",
    "RemoteBackend",
    "RemoteEndpointConfig",
    "RemotePolicy",
    "ReplayBackend",
    "ReplayError",
    "ReplayPolicy",
    "fault_wrap",
    "harness_faults_of",
    "parse_email",
    "parse_response",
    "plan_faults",
]
