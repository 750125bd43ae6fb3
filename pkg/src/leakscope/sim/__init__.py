"""Batch pipeline/cache simulator: waveform logs, power traces, experiments."""

from .config import CacheGeometry, ConfigError, SimConfig, parse_config_file, with_overrides
from .cyclelog import CycleLog, emit_vcd, extract_cycle_log, synth_power
from .machine import Machine, SimError, element_catalog
from .program import (
    CT_ADDR,
    KEY_ADDR,
    PT_ADDR,
    RK_ADDR,
    STATE_ADDR,
    SWEEP_ADDR,
    TABLE_ADDR,
    build_aes_program,
    build_fuzz_program,
    build_single_access_program,
)
from .run import (
    BatchResult,
    SequentialSession,
    cache_set_experiment,
    epoch_keys,
    load_traces_npz,
    random_plaintexts,
    read_trace_csv,
    run_aes_batch,
    run_workload,
    save_traces_npz,
    sub_rng,
    write_manifest,
    write_trace_csv,
)

__all__ = [
    "BatchResult", "CacheGeometry", "ConfigError", "CycleLog", "Machine",
    "SequentialSession", "SimConfig", "SimError", "build_aes_program",
    "build_fuzz_program", "build_single_access_program", "cache_set_experiment",
    "element_catalog", "emit_vcd", "epoch_keys", "extract_cycle_log",
    "load_traces_npz", "parse_config_file", "random_plaintexts",
    "read_trace_csv", "run_aes_batch", "run_workload", "save_traces_npz",
    "sub_rng", "synth_power", "with_overrides", "write_manifest",
    "write_trace_csv",
]
