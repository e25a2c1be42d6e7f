"""Memetic evolutionary search over genomes against a fitness oracle.

One generation: mutate the current parent, hill-climb the mutant over
one-slot neighbors, let the two compete, insert the winner, drop the
worst member, and pick the next parent by tournament.  There is no
crossover.  Fitness values are memoized by canonical genome text, so the
oracle-call budget counts distinct architectures actually evaluated.
"""

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from evonas.errors import ContractError
from evonas.searchspace import SearchSpace, encode

log = logging.getLogger(__name__)


@dataclass
class Individual:
    genome: object
    fitness: float
    birth_generation: int = 0


@dataclass(frozen=True)
class SearchConfig:
    population_size: int = 100
    generations: int = 2000
    mutation_p: float = 0.1
    local_search_neighbors: int = 5
    local_search_steps: int = 2
    tournament_size: int = 10
    seed: int = 0
    max_evaluations: int = None

    def __post_init__(self):
        if self.population_size < 2:
            raise ContractError(
                f"population size must be >= 2, got {self.population_size}")
        if self.tournament_size > self.population_size:
            raise ContractError(
                f"tournament size {self.tournament_size} exceeds population "
                f"{self.population_size}")
        if not 0.0 <= self.mutation_p <= 1.0:
            raise ContractError(f"mutation_p must be in [0,1], got {self.mutation_p}")


@dataclass
class GenerationRecord:
    generation: int
    evals_used: int          # oracle calls made during this generation
    best_fitness: float      # best over everything evaluated so far
    mean_fitness: float      # mean over the current population
    best_genome: str
    population_size: int


@dataclass
class SearchResult:
    best: Individual
    history: list = field(default_factory=list)
    total_evaluations: int = 0
    init_evaluations: int = 0
    budget_exhausted: bool = False
    evaluated: list = field(default_factory=list)  # (encoding, fitness) per call


class _BudgetExhausted(Exception):
    pass


class _Evaluator:
    """Memoizing, budget-counting wrapper around the fitness oracle."""

    def __init__(self, space, oracle, budget=None):
        self.space = space
        self.oracle = oracle
        self.budget = budget
        self.cache = {}
        self.calls = 0
        self.evaluated = []
        self.best = None

    def fitness(self, genome):
        violations = self.space.validate(genome)
        if violations:
            raise ContractError(
                f"invalid genome reached the oracle: {violations}; "
                f"genome={encode(genome)}")
        key = encode(genome)
        if key in self.cache:
            return self.cache[key]
        if self.budget is not None and self.calls >= self.budget:
            raise _BudgetExhausted
        self.calls += 1
        value = float(self.oracle(genome))
        self.cache[key] = value
        self.evaluated.append((key, value))
        if self.best is None or value > self.best.fitness:
            self.best = Individual(genome, value)
        return value


def mutate(space, genome, p, rng):
    """Independently redraw each slot with probability p, always different."""
    out = genome
    for slot in range(space.n_slots):
        if rng.random() < p:
            out = space.redraw_slot(out, slot, rng)
    return out


def local_search(space, genome, fitness_fn, k_n, steps, rng):
    """Hill-climb over sampled one-slot-changed neighbors.

    Each step draws k_n neighbors (slot chosen uniformly per neighbor,
    duplicate draws within the step rejected so the batch holds distinct
    neighbors where possible), moves to the best one only if strictly
    fitter, and stops early otherwise.  Returns (genome, fitness);
    fitness never decreases.
    """
    current = genome
    current_fit = fitness_fn(current)
    for _ in range(steps):
        best_neighbor = None
        best_fit = current_fit
        seen = set()
        draws = 0
        while len(seen) < k_n and draws < 4 * k_n:
            draws += 1
            slot = int(rng.integers(0, space.n_slots))
            neighbor = space.redraw_slot(current, slot, rng)
            key = (slot, neighbor.blocks[slot] if neighbor.blocks
                   else neighbor.windows[slot])
            if key in seen:
                continue
            seen.add(key)
            f = fitness_fn(neighbor)
            if f > best_fit:
                best_fit = f
                best_neighbor = neighbor
        if best_neighbor is None:
            break
        current, current_fit = best_neighbor, best_fit
    return current, current_fit


def compete(a, b):
    """Higher fitness wins; an exact tie goes to b (the local-search side)."""
    return b if b.fitness >= a.fitness else a


def tournament_select(population, k_t, rng):
    """Best of k_t members sampled without replacement (ties: oldest)."""
    if k_t > len(population):
        raise ContractError(
            f"tournament size {k_t} exceeds population {len(population)}")
    idx = rng.choice(len(population), size=k_t, replace=False)
    chosen = [population[i] for i in idx]
    return max(chosen, key=lambda ind: (ind.fitness, -ind.birth_generation))


def _remove_worst(population):
    worst = min(population, key=lambda ind: (ind.fitness, ind.birth_generation))
    population.remove(worst)


def initialize(space, evaluator, size, rng):
    population = []
    for _ in range(size):
        g = space.uniform_sample(rng)
        population.append(Individual(g, evaluator.fitness(g), 0))
    return population


def evolve(space, oracle, config):
    """Run the full memetic loop; returns the best individual and a log.

    On oracle-budget exhaustion the best-so-far result is returned with
    budget_exhausted set.
    """
    rng = np.random.default_rng(config.seed)
    evaluator = _Evaluator(space, oracle, config.max_evaluations)
    result = SearchResult(best=None)
    population = []
    try:
        population = initialize(space, evaluator, config.population_size, rng)
        result.init_evaluations = evaluator.calls
        parent = population[int(rng.integers(0, len(population)))]
        for gen in range(1, config.generations + 1):
            calls_before = evaluator.calls
            mutant = mutate(space, parent.genome, config.mutation_p, rng)
            mutant_ind = Individual(mutant, evaluator.fitness(mutant), gen)
            searched, searched_fit = local_search(
                space, mutant, evaluator.fitness,
                config.local_search_neighbors, config.local_search_steps, rng)
            winner = compete(mutant_ind, Individual(searched, searched_fit, gen))
            population.append(Individual(winner.genome, winner.fitness, gen))
            _remove_worst(population)
            parent = tournament_select(population, config.tournament_size, rng)
            result.history.append(GenerationRecord(
                generation=gen,
                evals_used=evaluator.calls - calls_before,
                best_fitness=evaluator.best.fitness,
                mean_fitness=float(np.mean([i.fitness for i in population])),
                best_genome=encode(evaluator.best.genome),
                population_size=len(population),
            ))
    except _BudgetExhausted:
        result.budget_exhausted = True
        log.warning("oracle budget exhausted after %d evaluations",
                    evaluator.calls)
    result.best = evaluator.best
    result.total_evaluations = evaluator.calls
    result.evaluated = evaluator.evaluated
    return result


def random_search(space, oracle, budget, seed=0):
    """Uniform-sampling baseline at the same oracle-call budget."""
    rng = np.random.default_rng(seed)
    evaluator = _Evaluator(space, oracle, budget)
    result = SearchResult(best=None)
    try:
        while True:
            g = space.uniform_sample(rng)
            evaluator.fitness(g)
    except _BudgetExhausted:
        pass
    result.best = evaluator.best
    result.total_evaluations = evaluator.calls
    result.evaluated = evaluator.evaluated
    return result


class MatchCountLandscape:
    """Closed-form benchmark oracle: fraction of slots matching a target."""

    def __init__(self, target, space):
        self.target = target
        self.space = space

    def __call__(self, genome):
        if self.space.mode.value == "auto_vector":
            hits = sum(a == b for a, b in zip(genome.blocks, self.target.blocks))
            return hits / len(self.target.blocks)
        hits = sum(a == b for a, b in zip(genome.windows, self.target.windows))
        return hits / len(self.target.windows)


def write_history(path, history):
    """CSV log: generation,evals_used,best_fitness,mean_fitness,best_genome."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "evals_used", "best_fitness",
                         "mean_fitness", "best_genome"])
        for rec in history:
            writer.writerow([rec.generation, rec.evals_used,
                             f"{rec.best_fitness!r}", f"{rec.mean_fitness!r}",
                             rec.best_genome])


def write_result(path, result, seed):
    """Final-result JSON: genome, fitness, eer, total_evaluations, seed."""
    payload = {
        "genome": encode(result.best.genome),
        "fitness": result.best.fitness,
        "eer": 1.0 - result.best.fitness,
        "total_evaluations": result.total_evaluations,
        "seed": seed,
        "budget_exhausted": result.budget_exhausted,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
    return payload
