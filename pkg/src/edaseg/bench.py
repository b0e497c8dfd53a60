"""Single-threaded inference latency measurement."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from edaseg.arch import ArchitectureSpec
from edaseg.network import NetworkInstance, build, check_input, network_forward


@dataclass
class BenchReport:
    arch: str
    height: int
    width: int
    runs: int
    warmup: int
    times_ms: list = field(default_factory=list)

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if any(t < 0 for t in self.times_ms):
            raise ValueError("negative timing")

    @property
    def mean(self) -> float:
        return statistics.fmean(self.times_ms)

    @property
    def median(self) -> float:
        return statistics.median(self.times_ms)

    @property
    def std(self) -> float:
        return statistics.pstdev(self.times_ms)

    def to_dict(self):
        return {"arch": self.arch, "height": self.height, "width": self.width,
                "runs": self.runs, "warmup": self.warmup, "times_ms": list(self.times_ms),
                "mean_ms": self.mean, "median_ms": self.median, "std_ms": self.std}


def benchmark_inference(model: ArchitectureSpec | NetworkInstance, height=480, width=720,
                        runs=10, warmup=2, seed=0, num_classes=6) -> BenchReport:
    """Time ``runs`` batch-1 inference forwards after ``warmup`` untimed ones.

    BLAS is pinned to one thread for the whole measurement.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    net = model if isinstance(model, NetworkInstance) else build(model, num_classes, seed)
    x = np.random.default_rng(seed).random((1, net.spec.input_channels, height, width),
                                           dtype=np.float32)
    check_input(net.spec, x)
    times = []
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            network_forward(net, x, "infer")
        for _ in range(runs):
            t0 = time.perf_counter()
            network_forward(net, x, "infer")
            times.append((time.perf_counter() - t0) * 1e3)
    return BenchReport(net.spec.name, height, width, runs, warmup, times)
