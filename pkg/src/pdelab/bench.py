"""Wall-clock scaling benchmark: diffusion forward vs quadratic attention.

Times the multi-scale diffusion forward and a reference single-head
softmax attention forward over a geometric grid of sequence lengths,
fits log-log slopes, and checks the expected linear vs quadratic growth.
Timings use the monotonic clock, warmup discards, and medians of
repeated measurements; inner loops are auto-calibrated so each
measurement spans at least 50 timer ticks.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .layer import DiffusionLayerParams, forward


class TimerResolutionError(RuntimeError):
    """Workload too fast for the clock even after rep escalation."""


def _timer_resolution() -> float:
    info = time.get_clock_info("perf_counter")
    return max(info.resolution, 1e-9)


def time_callable(
    fn: Callable[[], object],
    reps: int,
    *,
    warmup: int = 2,
    min_sample_time: float = 0.01,
) -> tuple[float, float]:
    """Median and IQR of per-call seconds over ``reps`` measurements.

    Each measurement loops the call enough times to span at least
    ``min_sample_time`` (and 50 clock ticks), which amortizes allocator
    noise and frequency-scaling jitter on small workloads.
    """
    resolution = _timer_resolution()
    floor = max(min_sample_time, 50 * resolution)
    for _ in range(warmup):
        fn()
    tic = time.perf_counter()
    fn()
    once = max(time.perf_counter() - tic, resolution)
    number = max(1, int(np.ceil(floor / once)))
    for _attempt in range(8):
        samples = []
        for _ in range(reps):
            tic = time.perf_counter()
            for _ in range(number):
                fn()
            samples.append((time.perf_counter() - tic) / number)
        med = float(np.median(samples))
        if med * number >= 50 * resolution:
            q75, q25 = np.percentile(samples, [75, 25])
            return med, float(q75 - q25)
        number *= 4
    raise TimerResolutionError(
        f"median {med:.3e}s spans fewer than 50 ticks of a {resolution:.1e}s clock"
    )


def _loglog_fit(L: Sequence[int], t: Sequence[float]) -> tuple[float, float]:
    x = np.log(np.asarray(L, dtype=float))
    y = np.log(np.asarray(t, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 0.0
    return float(slope), r2


def attention_reference(L: int, d: int, seed: int = 0) -> Callable[[], np.ndarray]:
    """Single-head softmax attention forward: the O(L^2 d) yardstick."""
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((L, d))
    k = rng.standard_normal((L, d))
    v = rng.standard_normal((L, d))
    scale = 1.0 / np.sqrt(d)

    def run() -> np.ndarray:
        scores = (q @ k.T) * scale
        scores -= scores.max(axis=1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=1, keepdims=True)
        return scores @ v

    return run


def diffusion_workload(L: int, d: int, k: int, seed: int = 0) -> Callable[[], np.ndarray]:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((L, d))
    scales = tuple(2**i for i in range(k))
    params = DiffusionLayerParams.init(d, scales=scales)

    def run() -> np.ndarray:
        return forward(x, params)[0]

    return run


@dataclass
class ComplexityReport:
    l_values: list[int]
    diffusion_medians: list[float]
    diffusion_iqrs: list[float]
    attention_l_values: list[int]
    attention_medians: list[float]
    attention_iqrs: list[float]
    diffusion_slope: float
    diffusion_r2: float
    attention_slope: float
    attention_r2: float
    k_double_ratio: float
    base_scales: int

    def noisy(self, threshold: float = 0.2) -> bool:
        rel = [i / m for i, m in zip(self.diffusion_iqrs, self.diffusion_medians)]
        rel += [i / m for i, m in zip(self.attention_iqrs, self.attention_medians)]
        return max(rel, default=0.0) > threshold


def bench_complexity(
    l_grid: Sequence[int],
    d: int = 64,
    k: int = 3,
    reps: int = 7,
    *,
    attention_max_l: int = 4096,
    seed: int = 0,
) -> ComplexityReport:
    """Measure scaling of the diffusion forward against quadratic attention.

    Requires the grid to span at least a 16x range and reps >= 7. The
    K-doubling ratio compares the diffusion forward at 2K vs K scales at
    the largest grid length.
    """
    l_grid = sorted(int(L) for L in l_grid)
    if len(l_grid) < 5:
        raise ValueError(f"need at least 5 lengths, got {l_grid}")
    if l_grid[-1] < 16 * l_grid[0]:
        raise ValueError(f"grid must span a >= 16x range, got {l_grid[0]}..{l_grid[-1]}")
    if reps < 7:
        raise ValueError(f"reps must be >= 7, got {reps}")

    diff_meds, diff_iqrs = [], []
    for L in l_grid:
        med, iqr = time_callable(diffusion_workload(L, d, k, seed), reps)
        diff_meds.append(med)
        diff_iqrs.append(iqr)

    attn_ls = [L for L in l_grid if L <= attention_max_l]
    attn_meds, attn_iqrs = [], []
    for L in attn_ls:
        med, iqr = time_callable(attention_reference(L, d, seed), reps)
        attn_meds.append(med)
        attn_iqrs.append(iqr)

    d_slope, d_r2 = _loglog_fit(l_grid, diff_meds)
    a_slope, a_r2 = _loglog_fit(attn_ls, attn_meds)

    l_mid = l_grid[len(l_grid) // 2]
    base, _ = time_callable(diffusion_workload(l_mid, d, k, seed), reps)
    doubled, _ = time_callable(diffusion_workload(l_mid, d, 2 * k, seed), reps)

    return ComplexityReport(
        l_values=l_grid,
        diffusion_medians=diff_meds,
        diffusion_iqrs=diff_iqrs,
        attention_l_values=attn_ls,
        attention_medians=attn_meds,
        attention_iqrs=attn_iqrs,
        diffusion_slope=d_slope,
        diffusion_r2=d_r2,
        attention_slope=a_slope,
        attention_r2=a_r2,
        k_double_ratio=doubled / base,
        base_scales=k,
    )
