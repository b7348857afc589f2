"""Analytic objectives with known minima, used to sanity-check the
metaheuristics (``loadtune bench``)."""

from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np

from .errors import UsageError
from .types import Bounds


def sphere(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(x ** 2))


def rastrigin(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(10.0 * x.size + np.sum(x ** 2 - 10.0 * np.cos(2 * np.pi * x)))


def rosenbrock(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


@dataclass(frozen=True)
class Benchmark:
    function: Callable[[np.ndarray], float]
    dimension: int
    limit: float
    population: int
    generations: int
    # best fitness an algorithm has to reach to pass
    thresholds: Dict[str, float] = field(default_factory=dict)

    @property
    def bounds(self) -> Bounds:
        return Bounds.uniform(self.dimension, -self.limit, self.limit)


BENCHMARKS: Dict[str, Benchmark] = {
    "sphere": Benchmark(
        sphere, 5, 5.0, 30, 200, {"de": 1e-3, "pso": 1e-2, "ga": 1e-1, "random": 1.0}
    ),
    "rastrigin": Benchmark(
        rastrigin, 3, 5.12, 40, 300, {"de": 1e-1, "pso": 1.0, "ga": 2.0, "random": 5.0}
    ),
    "rosenbrock": Benchmark(
        rosenbrock, 2, 2.048, 30, 300, {"de": 1e-3, "pso": 1e-2, "ga": 0.5, "random": 1.0}
    ),
}


def get_benchmark(name: str) -> Benchmark:
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise UsageError(
            f"unknown benchmark '{name}', expected one of {', '.join(BENCHMARKS)}"
        ) from None
