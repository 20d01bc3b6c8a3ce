"""Network cases, power flow and stochastic PMU data generation."""
from .case import Branch, Bus, Generator, GridCase, Load, load_case, load_case_file, shipped_case
from .dynamics import Event, NetworkModel, SimConfig, initial_state, simulate
from .pmu import (PhasorWindow, read_pmu_csv, read_sidecar, write_pmu_csv,
                  write_sidecar)
from .powerflow import OperatingPoint, build_admittance, solve_power_flow

__all__ = [
    "Branch", "Bus", "Event", "Generator", "GridCase", "Load", "NetworkModel",
    "OperatingPoint", "PhasorWindow", "SimConfig", "build_admittance", "initial_state",
    "load_case", "load_case_file", "read_pmu_csv", "read_sidecar", "shipped_case",
    "simulate", "solve_power_flow", "write_pmu_csv", "write_sidecar",
]
