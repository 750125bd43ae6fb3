"""Batch drivers: AES trace acquisition, sequential re-keyed sessions, and
the cache-set sweep experiment.

All randomness (plaintexts, Gaussian noise, key material) flows from the
config seed through labeled substreams, so any artifact is reproducible from
its manifest regardless of batch sizes or evaluation order. Re-keying for
independent batch runs assigns run ``r`` the key epoch ``r // interval``;
epochs are consecutive LFSR draws.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .. import __version__
from ..feistel import lfsr_from_seed, next_round_keys
from .config import SimConfig, with_overrides
from .cyclelog import CycleLog, extract_cycle_log
from .machine import Machine
from .program import (
    CT_ADDR,
    PT_ADDR,
    SINGLE_ACCESS_SAMPLE_CYCLE,
    SWEEP_ADDR,
    aes_workload_memory,
    build_aes_program,
    build_single_access_program,
)


def sub_rng(seed: int, *labels) -> np.random.Generator:
    """Deterministic labeled substream of the master seed."""
    tag = hashlib.sha256(
        str(seed).encode() + b"|" + b"|".join(str(l).encode() for l in labels)
    ).digest()
    entropy = tuple(int.from_bytes(tag[i:i + 8], "big") for i in range(0, 32, 8))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def epoch_keys(cfg: SimConfig, n_epochs: int) -> list[tuple[int, int, int, int]]:
    """Round keys of epochs 0..n_epochs-1, drawn sequentially from the LFSR."""
    lfsr = lfsr_from_seed(cfg.seed)
    out = []
    for _ in range(n_epochs):
        keys, lfsr = next_round_keys(lfsr)
        out.append(keys.keys)
    return out


def _run_epochs(cfg: SimConfig, run_indices: np.ndarray) -> np.ndarray:
    if cfg.rekey_interval_runs is None:
        return np.zeros(len(run_indices), dtype=np.int64)
    return run_indices // cfg.rekey_interval_runs


def _per_lane_keys(cfg: SimConfig, run_indices: np.ndarray):
    """Four (N,) uint32 key arrays plus per-lane epoch ids."""
    epochs = _run_epochs(cfg, run_indices)
    table = np.array(epoch_keys(cfg, int(epochs.max()) + 1), dtype=np.uint32)
    ks = table[epochs]  # (N, 4)
    return [ks[:, i].copy() for i in range(4)], epochs


def _noise_rows(cfg: SimConfig, run_indices, d: int) -> np.ndarray:
    rows = np.empty((len(run_indices), d), dtype=np.float64)
    for i, r in enumerate(run_indices):
        rows[i] = sub_rng(cfg.seed, "noise", int(r)).normal(0.0, cfg.noise_sigma, d)
    return rows


def random_plaintexts(cfg: SimConfig, n: int, offset: int = 0) -> np.ndarray:
    """The batch's deterministic plaintext stream as an (n, 16) uint8 array."""
    rng = sub_rng(cfg.seed, "plaintexts")
    blocks = rng.integers(0, 256, size=(offset + n, 16), dtype=np.uint8)
    return blocks[offset:]


@dataclass
class BatchResult:
    traces: np.ndarray               # (N, d) float64, or int64 when sigma == 0
    n_cycles: int
    ciphertexts: np.ndarray | None   # (N, 16) uint8 when the program ran 10 rounds
    logs: list[CycleLog] | None
    rekey_runs: list[int]            # run indices at which a new epoch begins


def run_aes_batch(cfg: SimConfig, plaintexts, key: bytes, *,
                  collect_logs: bool = False, run_offset: int = 0,
                  max_lanes: int = 8192) -> BatchResult:
    """Simulate one AES run per plaintext on independent cold-start lanes."""
    plaintexts = np.asarray(plaintexts, dtype=np.uint8)
    if plaintexts.ndim != 2 or plaintexts.shape[1] != 16:
        raise ValueError(f"plaintexts must be (N, 16) bytes, got {plaintexts.shape}")
    n_total = plaintexts.shape[0]
    program = build_aes_program(cfg.rounds)
    d = len(program) + 3
    init_mem = aes_workload_memory(key)

    traces = np.empty((n_total, d), dtype=np.float64)
    cts = np.empty((n_total, 16), dtype=np.uint8) if cfg.rounds == 10 else None
    logs: list[CycleLog] | None = [] if collect_logs else None

    for base in range(0, n_total, max_lanes):
        chunk = plaintexts[base:base + max_lanes]
        lanes = chunk.shape[0]
        run_idx = np.arange(base, base + lanes) + run_offset
        keys = None
        if cfg.param_mode:
            keys, _ = _per_lane_keys(cfg, run_idx)
        machine = Machine(cfg, lanes, keys=keys)
        for addr, blob in init_mem.items():
            machine.poke_bytes(addr, blob)
        machine.poke_bytes(PT_ADDR, chunk)
        toggles, blog = machine.run_program(program, collect_log=collect_logs)
        if cfg.noise_sigma > 0:
            traces[base:base + lanes] = toggles + _noise_rows(cfg, run_idx, d)
        else:
            traces[base:base + lanes] = toggles
        if cts is not None:
            cts[base:base + lanes] = machine.peek_bytes(CT_ADDR, 16)
        if collect_logs:
            for lane in range(lanes):
                logs.append(extract_cycle_log(blog, lane, label=f"run{run_idx[lane]}"))

    if cfg.noise_sigma == 0:
        traces = traces.astype(np.int64)
    rekeys = []
    if cfg.param_mode and cfg.rekey_interval_runs is not None:
        rekeys = list(range(cfg.rekey_interval_runs, n_total, cfg.rekey_interval_runs))
    return BatchResult(traces=traces, n_cycles=d, ciphertexts=cts, logs=logs,
                       rekey_runs=rekeys)


def run_workload(cfg: SimConfig, plaintext: bytes, key: bytes,
                 collect_log: bool = True):
    """Single-run convenience wrapper: returns (CycleLog | None, trace)."""
    pts = np.frombuffer(bytes(plaintext), dtype=np.uint8).reshape(1, 16)
    res = run_aes_batch(cfg, pts, key, collect_logs=collect_log)
    log = res.logs[0] if collect_log else None
    return log, res.traces[0]


class SequentialSession:
    """Persistent-state session: AES blocks back to back with re-keying.

    Unlike the batch driver, processor state (registers, cache, memory)
    carries over from one block to the next on each lane, and the remapping
    flush runs between blocks whenever the key epoch changes.
    """

    def __init__(self, cfg: SimConfig, key: bytes, lanes: int = 1):
        self.cfg = cfg
        self.program = build_aes_program(cfg.rounds)
        self.lanes = lanes
        self.blocks_run = 0
        self._lfsr = lfsr_from_seed(cfg.seed)
        keys = None
        if cfg.param_mode:
            keys = self._draw_keys()
        self.machine = Machine(cfg, lanes, keys=keys)
        for addr, blob in aes_workload_memory(key).items():
            self.machine.poke_bytes(addr, blob)

    def _draw_keys(self):
        rk, self._lfsr = next_round_keys(self._lfsr)
        return [np.full(self.lanes, k, dtype=np.uint32) for k in rk.keys]

    def run_block(self, plaintexts) -> np.ndarray:
        """Run one AES block per lane; returns ciphertexts when rounds == 10."""
        cfg = self.cfg
        if (cfg.param_mode and cfg.rekey_interval_runs is not None
                and self.blocks_run and self.blocks_run % cfg.rekey_interval_runs == 0):
            self.machine.rekey_flush(self._draw_keys())
        pts = np.asarray(plaintexts, dtype=np.uint8).reshape(self.lanes, 16)
        self.machine.poke_bytes(PT_ADDR, pts)
        self.machine.run_program(self.program)
        self.blocks_run += 1
        if cfg.rounds == 10:
            return self.machine.peek_bytes(CT_ADDR, 16)
        return None


def cache_set_experiment(cfg: SimConfig, reps: int, rekey_every: int = 1,
                         max_lanes: int = 8192):
    """Power samples of single cache-set accesses, grouped by set index.

    Every sample is one dword load issued on an idle cold lane: the sampled
    memory-stage cycle then carries the fill, line-buffer, hit-buffer and
    pipeline-latch activity of exactly that set, with no carry-over from a
    previous access. One rep covers all sets under one key epoch; in param
    mode the epoch advances every ``rekey_every`` reps, so the same
    architectural set lands on fresh cache locations and freshly-mixed data
    over the course of the experiment.
    """
    g = cfg.cache
    program = build_single_access_program()
    d = len(program) + 3
    total = reps * g.sets
    mem_rng = sub_rng(cfg.seed, "sweep-memory")
    lines = [mem_rng.integers(0, 256, size=64, dtype=np.uint8).tobytes()
             for _ in range(g.sets)]

    samples = np.empty(total, dtype=np.float64)
    for base in range(0, total, max_lanes):
        lanes = min(max_lanes, total - base)
        lane_idx = np.arange(base, base + lanes)
        set_of = lane_idx % g.sets
        rep_of = lane_idx // g.sets
        keys = None
        if cfg.param_mode:
            sweep_cfg = with_overrides(cfg, rekey_interval_runs=rekey_every)
            keys, _ = _per_lane_keys(sweep_cfg, rep_of)
        machine = Machine(cfg, lanes, keys=keys)
        for s in range(g.sets):
            machine.poke_bytes(SWEEP_ADDR + s * g.line_bytes, lines[s])
        machine.preset_register(1, (np.uint64(SWEEP_ADDR)
                                    + set_of.astype(np.uint64) * np.uint64(g.line_bytes)))
        toggles, _ = machine.run_program(program)
        col = toggles[:, SINGLE_ACCESS_SAMPLE_CYCLE - 1].astype(np.float64)
        if cfg.noise_sigma > 0:
            col = col + sub_rng(cfg.seed, "sweep-noise", base).normal(
                0.0, cfg.noise_sigma, lanes
            )
        samples[base:base + lanes] = col

    set_of_all = np.arange(total) % g.sets
    return {
        f"set{s:02d}": samples[set_of_all == s].copy() for s in range(g.sets)
    }


# --- trace and manifest files ----------------------------------------------------

def save_traces_npz(path, traces, plaintexts, key: bytes | None = None,
                    meta: dict | None = None) -> None:
    arrays = {
        "samples": np.asarray(traces, dtype=np.float32),
        "plaintexts": np.asarray(plaintexts, dtype=np.uint8),
    }
    if key is not None:
        arrays["key"] = np.frombuffer(bytes(key), dtype=np.uint8)
    arrays["meta"] = np.frombuffer(
        json.dumps(meta or {}, sort_keys=True).encode(), dtype=np.uint8
    )
    with open(path, "wb") as f:
        np.savez_compressed(f, **arrays)


def load_traces_npz(path):
    with np.load(path) as z:
        traces = z["samples"].astype(np.float64)
        plaintexts = z["plaintexts"]
        key = bytes(z["key"].tobytes()) if "key" in z else None
        meta = json.loads(z["meta"].tobytes().decode()) if "meta" in z else {}
    return traces, plaintexts, key, meta


def write_trace_csv(path, traces) -> None:
    """Power trace CSV: run_index, cycle, sample."""
    traces = np.asarray(traces)
    with open(path, "w") as f:
        f.write("run_index,cycle,sample\n")
        for r in range(traces.shape[0]):
            for c in range(traces.shape[1]):
                f.write(f"{r},{c + 1},{traces[r, c]:.8g}\n")


def read_trace_csv(path) -> np.ndarray:
    rows: dict[int, dict[int, float]] = {}
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header != ["run_index", "cycle", "sample"]:
            raise ValueError(f"{path}: expected header run_index,cycle,sample")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                r, c, v = int(parts[0]), int(parts[1]), float(parts[2])
            except (IndexError, ValueError):
                raise ValueError(f"{path}: malformed trace row at line {lineno}") from None
            rows.setdefault(r, {})[c] = v
    n = max(rows) + 1
    d = max(max(cols) for cols in rows.values())
    out = np.zeros((n, d), dtype=np.float64)
    for r, cols in rows.items():
        for c, v in cols.items():
            out[r, c - 1] = v
    return out


def write_manifest(path, cfg: SimConfig, key_hex: str, plaintext_path: str,
                   artifacts: dict, rekey_runs) -> None:
    doc = {
        "tool": "leakscope",
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "key_hex": key_hex,
        "plaintexts": str(plaintext_path),
        "artifacts": {k: str(v) for k, v in artifacts.items()},
        "rekey_runs": list(rekey_runs),
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest_json(path) -> dict:
    with open(path) as f:
        return json.load(f)
