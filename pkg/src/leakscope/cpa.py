"""First-order correlation power analysis against the AES first round.

For every key-byte guess the hypothesis is the Hamming weight of a chosen
first-round intermediate (S-box output by default); the attack correlates the
hypothesis vector with every trace sample column and ranks guesses by their
best absolute correlation. Traces-to-disclosure re-runs the attack on growing
prefixes and reports the earliest checkpoint from which the true byte stays
rank 1.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .aes import POINT_FUNCTIONS, SBOX

_HW8 = np.array([bin(v).count("1") for v in range(256)], dtype=np.float64)
_SBOX_ARR = np.frombuffer(SBOX, dtype=np.uint8)


@lru_cache(maxsize=8)
def _point_table(point: str) -> np.ndarray:
    """(guess, plaintext byte) -> intermediate value, as a 256x256 table."""
    try:
        fn = POINT_FUNCTIONS[point]
    except KeyError:
        raise ValueError(
            f"unknown interesting point '{point}', expected one of {sorted(POINT_FUNCTIONS)}"
        ) from None
    if point == "sbox_out":  # fast path for the default
        g, p = np.meshgrid(np.arange(256, dtype=np.uint8),
                           np.arange(256, dtype=np.uint8), indexing="ij")
        return _SBOX_ARR[g ^ p]
    table = np.empty((256, 256), dtype=np.uint8)
    for g in range(256):
        for p in range(256):
            table[g, p] = fn(p, g)
    return table


@dataclass
class AttackResult:
    target_byte: int
    point: str
    correlations: np.ndarray   # (256 guesses, d samples) signed rho
    best_guess: int
    best_sample: int           # 1-based cycle index of the winning correlation
    ranks: np.ndarray          # guesses ordered by max |rho|, ties by lower guess
    n_traces: int

    @property
    def guess_scores(self) -> np.ndarray:
        return np.abs(self.correlations).max(axis=1)

    def rank_of(self, key_byte: int) -> int:
        """1-based rank of a key byte guess (1 = top)."""
        return int(np.where(self.ranks == key_byte)[0][0]) + 1

    def to_json_obj(self) -> dict:
        scores = self.guess_scores
        return {
            "target_byte": self.target_byte,
            "point": self.point,
            "n_traces": self.n_traces,
            "best_guess": self.best_guess,
            "best_sample": self.best_sample,
            "max_abs_rho": float(scores[self.best_guess]),
            "ranks": [int(g) for g in self.ranks],
            "guess_scores": [float(s) for s in scores],
        }


def cpa_attack(traces, plaintexts, target_byte: int,
               point: str = "sbox_out") -> AttackResult:
    """Correlate keyed hypotheses against every sample column.

    Degenerate columns (constant traces) and degenerate hypothesis rows
    (constant plaintext byte) score 0 rather than raising.
    """
    traces = np.asarray(traces, dtype=np.float64)
    plaintexts = np.asarray(plaintexts, dtype=np.uint8)
    if traces.ndim != 2:
        raise ValueError(f"traces must be (N, d), got {traces.shape}")
    n, d = traces.shape
    if n < 2:
        raise ValueError(f"need at least 2 traces, got {n}")
    if plaintexts.shape[0] != n:
        raise ValueError(
            f"{n} traces but {plaintexts.shape[0]} plaintexts"
        )
    if not 0 <= target_byte < 16:
        raise ValueError(f"target_byte {target_byte} out of range")

    pbytes = plaintexts[:, target_byte]
    hyp = _HW8[_point_table(point)[:, pbytes]]        # (256, n)

    hc = hyp - hyp.mean(axis=1, keepdims=True)
    hnorm = np.sqrt((hc * hc).sum(axis=1))            # (256,)
    tc = traces - traces.mean(axis=0, keepdims=True)
    tnorm = np.sqrt((tc * tc).sum(axis=0))            # (d,)

    denom = hnorm[:, None] * tnorm[None, :]
    corr = hc @ tc
    np.divide(corr, denom, out=corr, where=denom > 0)
    corr[:, tnorm == 0] = 0.0
    corr[hnorm == 0, :] = 0.0

    scores = np.abs(corr).max(axis=1)
    order = np.lexsort((np.arange(256), -scores))
    best_guess = int(order[0])
    best_sample = int(np.abs(corr[best_guess]).argmax()) + 1
    return AttackResult(
        target_byte=target_byte,
        point=point,
        correlations=corr,
        best_guess=best_guess,
        best_sample=best_sample,
        ranks=order,
        n_traces=n,
    )


def _checkpoints(n: int, step: int) -> list[int]:
    if step < 1:
        raise ValueError(f"checkpoint_step must be >= 1, got {step}")
    pts = list(range(step, n + 1, step))
    if not pts or pts[-1] != n:
        pts.append(n)
    return [p for p in pts if p >= 2]


@dataclass
class MtdCurve:
    checkpoints: list[tuple[int, int]]   # (trace_count, rank of true byte)
    mtd: int | None                      # None = not disclosed within budget

    def to_json_obj(self) -> dict:
        return {
            "checkpoints": [{"traces": n, "rank": r} for n, r in self.checkpoints],
            "mtd": self.mtd if self.mtd is not None else "not disclosed",
        }


def mtd(traces, plaintexts, target_byte: int, true_key_byte: int,
        checkpoint_step: int, point: str = "sbox_out") -> MtdCurve:
    """Stabilized traces-to-disclosure: rank 1 at a checkpoint and at every
    later checkpoint within the budget; re-runs the attack on each prefix."""
    if not 0 <= true_key_byte <= 0xFF:
        raise ValueError(f"true_key_byte {true_key_byte} out of range")
    traces = np.asarray(traces, dtype=np.float64)
    n = traces.shape[0]
    points = []
    for cp in _checkpoints(n, checkpoint_step):
        res = cpa_attack(traces[:cp], plaintexts[:cp], target_byte, point=point)
        points.append((cp, res.rank_of(true_key_byte)))
    disclosed = None
    for i in range(len(points)):
        if all(rank == 1 for _, rank in points[i:]):
            disclosed = points[i][0]
            break
    return MtdCurve(checkpoints=points, mtd=disclosed)


def correlation_evolution(traces, plaintexts, target_byte: int,
                          checkpoint_step: int | None = None,
                          point: str = "sbox_out"):
    """Per-guess max |rho| at growing trace counts.

    Returns (checkpoints, series) where series[i, g] is guess g's best score
    using the first checkpoints[i] traces.
    """
    traces = np.asarray(traces, dtype=np.float64)
    n = traces.shape[0]
    step = checkpoint_step or n
    cps = _checkpoints(n, step)
    series = np.empty((len(cps), 256), dtype=np.float64)
    for i, cp in enumerate(cps):
        res = cpa_attack(traces[:cp], plaintexts[:cp], target_byte, point=point)
        series[i] = res.guess_scores
    return cps, series


def write_evolution_csv(path, checkpoints, series) -> None:
    """CSV columns: trace_count, guess, max_abs_rho."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["trace_count", "guess", "max_abs_rho"])
        for cp, row in zip(checkpoints, series):
            for g in range(256):
                w.writerow([cp, g, f"{row[g]:.8g}"])


def write_attack_json(path, result: AttackResult, mtd_curve: MtdCurve | None = None) -> None:
    doc = result.to_json_obj()
    if mtd_curve is not None:
        doc["mtd"] = mtd_curve.to_json_obj()
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
