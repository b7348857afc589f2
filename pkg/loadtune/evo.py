"""Population metaheuristics over box-bounded real genomes: Differential
Evolution (DE/rand/1/bin), a generational genetic algorithm, particle swarm
optimization and uniform random search. All minimize an :class:`Objective`.

Operators draw from a single seeded generator in a fixed order, and
evaluation only ever sees finished genomes, so running evaluations on a
thread pool cannot change a run's trajectory.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, OptimizationError, UsageError
from .types import Bounds, Candidate, OptimizationResult

logger = logging.getLogger(__name__)


def _check_rate(name: str, value: float):
    if not 0.0 <= value <= 1.0:
        raise ConfigurationError(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class DEConfig:
    population: int = 30
    F: float = 0.8
    CR: float = 0.9
    max_generations: int = 200
    target_fitness: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.population < 4:
            raise ConfigurationError(
                f"DE needs a population of at least 4, got {self.population}"
            )
        if not 0.0 <= self.F <= 2.0:
            raise ConfigurationError(f"F must be in [0, 2], got {self.F}")
        _check_rate("CR", self.CR)
        if self.max_generations < 0:
            raise ConfigurationError("max_generations must be >= 0")


@dataclass(frozen=True)
class GAConfig:
    population: int = 30
    tournament_size: int = 3
    crossover_rate: float = 0.9
    mutation_rate: float = 0.2
    mutation_sigma: float = 0.02
    elitism: int = 2
    generations: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ConfigurationError("GA population must be >= 2")
        if not 2 <= self.tournament_size <= self.population:
            raise ConfigurationError(
                f"tournament size must be in 2..{self.population}, got {self.tournament_size}"
            )
        _check_rate("crossover_rate", self.crossover_rate)
        _check_rate("mutation_rate", self.mutation_rate)
        _check_rate("mutation_sigma", self.mutation_sigma)
        if not 0 <= self.elitism < self.population:
            raise ConfigurationError("elitism must leave room for offspring")
        if self.generations < 0:
            raise ConfigurationError("generations must be >= 0")


@dataclass(frozen=True)
class PSOConfig:
    swarm_size: int = 30
    w: float = 0.7
    c1: float = 1.5
    c2: float = 1.5
    velocity_clamp: float = 0.2
    iterations: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.swarm_size < 2:
            raise ConfigurationError("swarm size must be >= 2")
        _check_rate("w", self.w)
        _check_rate("velocity_clamp", self.velocity_clamp)
        if self.c1 < 0 or self.c2 < 0:
            raise ConfigurationError("acceleration coefficients must be >= 0")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")


@dataclass(frozen=True)
class RandomSearchConfig:
    samples: int = 60
    batch_size: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1 or self.batch_size < 1:
            raise ConfigurationError("samples and batch_size must be >= 1")


@dataclass
class Objective:
    """``function(genome) -> cost``, lower is better. Evaluations must be
    independent of each other; with ``workers > 1`` a batch is spread over a
    thread pool, results keep genome order.
    """

    function: Callable[[np.ndarray], float]
    bounds: Bounds
    workers: int = 1

    @property
    def dimension(self) -> int:
        return self.bounds.dimension

    def evaluate(self, genomes: Sequence[np.ndarray]) -> List[float]:
        if self.workers > 1 and len(genomes) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return [float(v) for v in pool.map(self.function, genomes)]
        return [float(self.function(genome)) for genome in genomes]


@dataclass
class Population:
    generation: int
    candidates: List[Candidate]
    bounds: Bounds
    best: Optional[Candidate] = None

    def genomes(self) -> np.ndarray:
        return np.array([c.genome for c in self.candidates])

    def update_best(self) -> Optional[Candidate]:
        for candidate in self.candidates:
            if candidate.evaluated and (
                self.best is None or candidate.fitness < self.best.fitness
            ):
                self.best = Candidate(candidate.genome.copy(), candidate.fitness)
        return self.best


class _Evaluator:
    """Evaluates genomes, turning non-finite costs into discards."""

    def __init__(self, objective: Objective, max_evaluations: Optional[int]):
        self.objective = objective
        self.max_evaluations = max_evaluations
        self.evaluations = 0
        self.discarded = 0

    def can_afford(self, count: int) -> bool:
        return self.max_evaluations is None or self.evaluations + count <= self.max_evaluations

    def __call__(self, genomes: Sequence[np.ndarray]) -> List[Candidate]:
        values = self.objective.evaluate(genomes)
        self.evaluations += len(genomes)
        candidates = []
        for genome, value in zip(genomes, values):
            if math.isfinite(value):
                candidates.append(Candidate(genome, value))
            else:
                self.discarded += 1
                logger.warning("Discarding candidate %s with cost %s", genome, value)
                candidates.append(Candidate(genome, None))
        return candidates


def _start(
    evaluator: _Evaluator, genomes: Sequence[np.ndarray], bounds: Bounds, algorithm: str
) -> Population:
    if not evaluator.can_afford(len(genomes)):
        raise ConfigurationError(
            f"{algorithm}: budget of {evaluator.max_evaluations} evaluations "
            f"cannot cover the initial {len(genomes)}"
        )
    population = Population(0, evaluator(genomes), bounds)
    if population.update_best() is None:
        raise OptimizationError(f"{algorithm}: every initial candidate was discarded")
    return population


def _result(
    algorithm: str, population: Population, history: List[float], evaluator: _Evaluator
) -> OptimizationResult:
    logger.info(
        "%s finished after %d generation(s), %d evaluations, best %.6g",
        algorithm,
        population.generation,
        evaluator.evaluations,
        population.best.fitness,
    )
    return OptimizationResult(
        algorithm=algorithm,
        best=population.best,
        history=history,
        evaluations=evaluator.evaluations,
        discarded=evaluator.discarded,
    )


def uniform_genomes(count: int, bounds: Bounds, rng: np.random.Generator) -> List[np.ndarray]:
    return list(bounds.lower + rng.random((count, bounds.dimension)) * bounds.span)


# Differential Evolution


def de_init(cfg: DEConfig, bounds: Bounds, rng: np.random.Generator) -> Population:
    if cfg.population < 4:
        raise ConfigurationError("DE needs a population of at least 4")
    return Population(
        0, [Candidate(g) for g in uniform_genomes(cfg.population, bounds, rng)], bounds
    )


def sample_donors(n: int, i: int, rng: np.random.Generator) -> Tuple[int, int, int]:
    """Three indices, distinct from each other and from ``i``."""
    others = np.delete(np.arange(n), i)
    r1, r2, r3 = (int(r) for r in rng.choice(others, 3, replace=False))
    assert len({i, r1, r2, r3}) == 4
    return r1, r2, r3


def de_mutate(pop: Population, i: int, F: float, rng: np.random.Generator) -> np.ndarray:
    r1, r2, r3 = sample_donors(len(pop.candidates), i, rng)
    x = pop.candidates
    mutant = x[r1].genome + F * (x[r2].genome - x[r3].genome)
    return pop.bounds.clip(mutant)


def de_crossover(
    target: np.ndarray, mutant: np.ndarray, CR: float, rng: np.random.Generator
) -> np.ndarray:
    """Binomial crossover. Draw order: the forced index first, then one
    uniform per gene.
    """
    if target.shape != mutant.shape:
        raise UsageError(f"target {target.shape} and mutant {mutant.shape} differ")
    j_rand = int(rng.integers(target.size))
    take = rng.random(target.size) <= CR
    take[j_rand] = True
    return np.where(take, mutant, target)


def de_select(target: Candidate, trial: Candidate) -> Candidate:
    if not (target.evaluated and trial.evaluated):
        raise UsageError("selection needs both candidates evaluated")
    return trial if trial.fitness <= target.fitness else target


def de_run(
    cfg: DEConfig, obj: Objective, max_evaluations: Optional[int] = None
) -> OptimizationResult:
    rng = np.random.default_rng(cfg.seed)
    evaluator = _Evaluator(obj, max_evaluations)
    genomes = [c.genome for c in de_init(cfg, obj.bounds, rng).candidates]
    pop = _start(evaluator, genomes, obj.bounds, "de")
    history = [pop.best.fitness]

    def reached() -> bool:
        return cfg.target_fitness is not None and pop.best.fitness <= cfg.target_fitness

    while not reached() and pop.generation < cfg.max_generations:
        if not evaluator.can_afford(cfg.population):
            break
        trials = [
            de_crossover(c.genome, de_mutate(pop, i, cfg.F, rng), cfg.CR, rng)
            for i, c in enumerate(pop.candidates)
        ]
        evaluated = evaluator(trials)
        survivors = []
        for target, trial in zip(pop.candidates, evaluated):
            if not trial.evaluated:
                survivors.append(target)
            elif not target.evaluated:
                survivors.append(trial)
            else:
                survivors.append(de_select(target, trial))
        pop.candidates = survivors
        pop.generation += 1
        history.append(pop.update_best().fitness)
        logger.debug("de generation %d: best %.6g", pop.generation, pop.best.fitness)

    return _result("de", pop, history, evaluator)


# Genetic algorithm


def _rank_key(candidate: Candidate) -> float:
    return candidate.fitness if candidate.evaluated else math.inf


def tournament_select(
    candidates: Sequence[Candidate], size: int, rng: np.random.Generator
) -> Candidate:
    picks = rng.choice(len(candidates), size, replace=False)
    return min((candidates[int(i)] for i in picks), key=_rank_key)


def uniform_crossover(
    first: np.ndarray, second: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    return np.where(rng.random(first.size) < 0.5, first, second)


def gaussian_mutation(
    genome: np.ndarray, rate: float, sigma: float, bounds: Bounds, rng: np.random.Generator
) -> np.ndarray:
    """Each gene is perturbed with probability ``rate`` by a normal step of
    ``sigma`` times its range."""
    mask = rng.random(genome.size) < rate
    step = rng.normal(0.0, 1.0, genome.size) * sigma * bounds.span
    return bounds.clip(genome + mask * step)


def ga_run(
    cfg: GAConfig, obj: Objective, max_evaluations: Optional[int] = None
) -> OptimizationResult:
    rng = np.random.default_rng(cfg.seed)
    evaluator = _Evaluator(obj, max_evaluations)
    pop = _start(
        evaluator, uniform_genomes(cfg.population, obj.bounds, rng), obj.bounds, "ga"
    )
    history = [pop.best.fitness]
    offspring_count = cfg.population - cfg.elitism

    while pop.generation < cfg.generations:
        if not evaluator.can_afford(offspring_count):
            break
        ranked = sorted(pop.candidates, key=_rank_key)
        elites = ranked[: cfg.elitism]
        children = []
        for _ in range(offspring_count):
            first = tournament_select(pop.candidates, cfg.tournament_size, rng)
            second = tournament_select(pop.candidates, cfg.tournament_size, rng)
            if rng.random() < cfg.crossover_rate:
                child = uniform_crossover(first.genome, second.genome, rng)
            else:
                child = first.genome.copy()
            children.append(
                gaussian_mutation(
                    child, cfg.mutation_rate, cfg.mutation_sigma, obj.bounds, rng
                )
            )
        pop.candidates = elites + evaluator(children)
        pop.generation += 1
        history.append(pop.update_best().fitness)
        logger.debug("ga generation %d: best %.6g", pop.generation, pop.best.fitness)

    return _result("ga", pop, history, evaluator)


# Particle swarm


def pso_step(
    x: np.ndarray,
    v: np.ndarray,
    pbest: np.ndarray,
    gbest: np.ndarray,
    cfg: PSOConfig,
    bounds: Bounds,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """One canonical velocity/position update for a swarm (rows are
    particles). Velocities are clamped to ``velocity_clamp`` of the range,
    positions to the bounds.
    """
    r1 = rng.random(x.shape)
    r2 = rng.random(x.shape)
    v = cfg.w * v + cfg.c1 * r1 * (pbest - x) + cfg.c2 * r2 * (gbest - x)
    limit = cfg.velocity_clamp * bounds.span
    v = np.clip(v, -limit, limit)
    return bounds.clip(x + v), v


def pso_run(
    cfg: PSOConfig, obj: Objective, max_evaluations: Optional[int] = None
) -> OptimizationResult:
    rng = np.random.default_rng(cfg.seed)
    evaluator = _Evaluator(obj, max_evaluations)
    pop = _start(
        evaluator, uniform_genomes(cfg.swarm_size, obj.bounds, rng), obj.bounds, "pso"
    )
    history = [pop.best.fitness]
    x = pop.genomes()
    v = np.zeros_like(x)
    personal = [Candidate(c.genome.copy(), c.fitness) for c in pop.candidates]

    while pop.generation < cfg.iterations:
        if not evaluator.can_afford(cfg.swarm_size):
            break
        pbest = np.array([p.genome for p in personal])
        x, v = pso_step(x, v, pbest, pop.best.genome, cfg, obj.bounds, rng)
        pop.candidates = evaluator(list(x))
        for i, candidate in enumerate(pop.candidates):
            if candidate.evaluated and (
                not personal[i].evaluated or candidate.fitness < personal[i].fitness
            ):
                personal[i] = Candidate(candidate.genome.copy(), candidate.fitness)
        pop.generation += 1
        history.append(pop.update_best().fitness)
        logger.debug("pso iteration %d: best %.6g", pop.generation, pop.best.fitness)

    return _result("pso", pop, history, evaluator)


# Random search


def random_run(
    cfg: RandomSearchConfig, obj: Objective, max_evaluations: Optional[int] = None
) -> OptimizationResult:
    rng = np.random.default_rng(cfg.seed)
    evaluator = _Evaluator(obj, max_evaluations)
    samples = cfg.samples
    if max_evaluations is not None:
        samples = min(samples, max_evaluations)
    if samples < 1:
        raise ConfigurationError("random search needs a budget of at least one evaluation")
    first = min(cfg.batch_size, samples)
    pop = _start(evaluator, uniform_genomes(first, obj.bounds, rng), obj.bounds, "random")
    history = [pop.best.fitness]

    while evaluator.evaluations < samples:
        count = min(cfg.batch_size, samples - evaluator.evaluations)
        pop.candidates = evaluator(uniform_genomes(count, obj.bounds, rng))
        pop.generation += 1
        history.append(pop.update_best().fitness)

    return _result("random", pop, history, evaluator)
