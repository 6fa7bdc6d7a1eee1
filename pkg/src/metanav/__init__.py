"""Meta navigation functions: confined potentials for multi-agent coordination."""

from .core import (
    Agent,
    CoalitionPartition,
    Obstacle,
    PotentialParams,
    Scenario,
    ScenarioFormatError,
    Workspace,
    load_scenario,
    save_scenario,
    validate_scenario,
)
from .potentials import (
    FieldContext,
    Phase,
    SingularityError,
    dnf_baseline,
    grad_dnf_baseline,
    grad_mnf,
    grad_omega,
    grad_psi,
    mnf,
    omega,
    psi,
)
from .criticality import (
    CriticalSet,
    UnconfinableError,
    confinement_radius,
    find_critical_set,
    solve_alpha_dagger,
)
from .coordinator import Mode, NumericalFault, RunResult, SimConfig, gdc_step, run
from .metrics import RunMetrics, density, kappa, potential_trace, run_metrics
from .scenario import GeneratorSpec, generate, table1_suite, table2_suite

__all__ = [
    "Agent", "CoalitionPartition", "Obstacle", "PotentialParams", "Scenario",
    "ScenarioFormatError", "Workspace", "load_scenario", "save_scenario", "validate_scenario",
    "FieldContext", "Phase", "SingularityError", "dnf_baseline", "grad_dnf_baseline",
    "grad_mnf", "grad_omega", "grad_psi", "mnf", "omega", "psi",
    "CriticalSet", "UnconfinableError", "confinement_radius", "find_critical_set",
    "solve_alpha_dagger", "Mode", "NumericalFault", "RunResult", "SimConfig", "gdc_step",
    "run", "RunMetrics", "density", "kappa", "potential_trace", "run_metrics",
    "GeneratorSpec", "generate", "table1_suite", "table2_suite",
]
