"""Latency and parallel-depth benchmark of the sequence-mixing kernels.

Three kernels at batch 1 and ``d = 16``: the sequential linear recurrence,
the Kogge-Stone scan, and 4-head softmax attention (``d_head = 16``).
Wall-clock times are CPU measurements and are only reported; the
assertions are on operation counts (scan levels, recurrence steps,
attention flops).
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InputError
from .scan import prefix_products, scan_depth

KERNELS = ("sequential_rnn", "parallel_scan", "attention")
DEFAULT_GRID = tuple(2**k for k in range(7, 16))  # 128 .. 32768
QUERY_BLOCK = 512


@dataclass
class BenchRow:
    kernel: str
    T: int
    median_ms: float | None
    iqr_ms: float | None
    levels: int  # parallel levels (scan), T (sequential), 1 (attention)
    steps: int  # executed combine levels / loop steps / query blocks
    flops: float
    timed: bool


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    t_grid: list = field(default_factory=list)
    trials: int = 0
    d: int = 16
    num_heads: int = 4
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def sequential_rnn(mats: np.ndarray, alpha: np.ndarray) -> tuple[np.ndarray, int]:
    h = alpha
    steps = 0
    for m in mats:
        h = m @ h
        steps += 1
    return h, steps


def parallel_scan(mats: np.ndarray, alpha: np.ndarray) -> tuple[np.ndarray, int]:
    P, levels = prefix_products(mats)
    return P @ alpha, levels


def attention(x: np.ndarray, wq, wk, wv, num_heads: int) -> tuple[np.ndarray, int]:
    """Softmax attention, processed in blocks of queries to bound memory."""
    T, D = x.shape
    dh = D // num_heads
    q = (x @ wq).reshape(T, num_heads, dh).transpose(1, 0, 2)
    k = (x @ wk).reshape(T, num_heads, dh).transpose(1, 0, 2)
    v = (x @ wv).reshape(T, num_heads, dh).transpose(1, 0, 2)
    out = np.empty_like(q)
    blocks = 0
    for s in range(0, T, QUERY_BLOCK):
        scores = q[:, s : s + QUERY_BLOCK] @ k.transpose(0, 2, 1) / np.sqrt(dh)
        scores -= scores.max(axis=-1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=-1, keepdims=True)
        out[:, s : s + QUERY_BLOCK] = scores @ v
        blocks += 1
    return out.transpose(1, 0, 2).reshape(T, D), blocks


def attention_flops(T: int, d_model: int) -> float:
    """Multiply-adds of ``Q K^T`` and ``A V`` counted as 2 flops each: ``4 T^2 d_model``."""
    return 4.0 * T * T * d_model


def _time(fn, trials: int, warmup: int) -> tuple[float, float, int]:
    for _ in range(warmup):
        fn()
    times = []
    res = None
    for _ in range(trials):
        t0 = time.perf_counter()
        res = fn()
        times.append((time.perf_counter() - t0) * 1e3)
    q1, med, q3 = np.percentile(times, [25, 50, 75])
    return float(med), float(q3 - q1), res[1]


def bench_latency(t_grid=DEFAULT_GRID, trials: int = 20, d: int = 16, num_heads: int = 4, seed=0,
                  warmup: int = 2, attention_max_T: int = 4096, scan_max_T: int | None = None) -> BenchReport:
    """Time each kernel over ``t_grid``.

    Attention beyond ``attention_max_T`` (and the scan beyond ``scan_max_T``)
    is not timed on CPU; those rows still carry the operation counts.
    """
    if trials < 20:
        raise InputError("bench_latency needs trials >= 20")
    rng = np.random.default_rng(seed)
    D = num_heads * d
    wq, wk, wv = (rng.standard_normal((D, D)) / np.sqrt(D) for _ in range(3))
    report = BenchReport(t_grid=[int(t) for t in t_grid], trials=trials, d=d, num_heads=num_heads,
                         notes={"device": "CPU (numpy)", "attention_d_model": D,
                                "wall_clock": "reported only; hardware-dependent",
                                "fused_kernels": "not implemented; parallel depth reported instead"})
    for T in report.t_grid:
        q, _ = np.linalg.qr(rng.standard_normal((T, d, d)))
        alpha = rng.standard_normal(d)
        x = rng.standard_normal((T, D))

        med, iqr, steps = _time(lambda: sequential_rnn(q, alpha), trials, warmup)
        report.rows.append(BenchRow("sequential_rnn", T, med, iqr, T, steps, 2.0 * T * d * d, True))

        depth = scan_depth(T)
        if scan_max_T is None or T <= scan_max_T:
            med, iqr, levels = _time(lambda: parallel_scan(q, alpha), trials, warmup)
            timed = True
        else:
            med = iqr = None
            levels = prefix_products(q)[1]
            timed = False
        if levels != depth:
            raise AssertionError(f"scan executed {levels} levels at T={T}, expected {depth}")
        report.rows.append(BenchRow("parallel_scan", T, med, iqr, levels, levels, 2.0 * T * depth * d**3, timed))

        n_blocks = -(-T // QUERY_BLOCK)
        if T <= attention_max_T:
            med, iqr, blocks = _time(lambda: attention(x, wq, wk, wv, num_heads), trials, warmup)
            timed = True
        else:
            med = iqr = None
            blocks, timed = n_blocks, False
        report.rows.append(BenchRow("attention", T, med, iqr, 1, blocks, attention_flops(T, D), timed))
    report.notes["crossovers"] = crossovers(report)
    return report


def crossovers(report: BenchReport) -> dict:
    """First grid T at which the scan's median time beats each other kernel (measured, not asserted)."""
    by = {(r.kernel, r.T): r for r in report.rows}
    out = {}
    for other in ("sequential_rnn", "attention"):
        out[f"parallel_scan_beats_{other}"] = None
        for T in report.t_grid:
            a, b = by.get(("parallel_scan", T)), by.get((other, T))
            if a and b and a.timed and b.timed and a.median_ms < b.median_ms:
                out[f"parallel_scan_beats_{other}"] = T
                break
    return out
