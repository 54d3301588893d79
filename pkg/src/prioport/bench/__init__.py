"""RTT probes under background load, in virtual time or over real sockets."""

from .emulated import EmuChannel, EmuPort, EmuSession, ProbeHandle
from .scenario import (QOS_COMMANDS, SCENARIOS, ScenarioResult, run_emulated, run_load, run_matrix,
                       run_real, run_rtt_probe, run_scenario, scenario_def)
from .stats import (REPORT_COLUMNS, BenchReport, BenchRow, LoadReport, LoadSpec, ProbeResult,
                    RttSample, read_csv, summarize, write_csv)

__all__ = [
    "EmuChannel", "EmuPort", "EmuSession", "ProbeHandle", "QOS_COMMANDS", "SCENARIOS",
    "ScenarioResult", "run_emulated", "run_load", "run_matrix", "run_real", "run_rtt_probe",
    "run_scenario", "scenario_def", "REPORT_COLUMNS", "BenchReport", "BenchRow", "LoadReport",
    "LoadSpec", "ProbeResult", "RttSample", "read_csv", "summarize", "write_csv",
]
