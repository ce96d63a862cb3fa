"""Genetic algorithm over integer chromosomes (one gene per location and phase).

Gene value 0 means no tag; ``i > 0`` selects tag size ``i``. Operators are
plain functions; :func:`run` applies :func:`repair` after every operator so
only feasible, within-budget chromosomes are ever scored. All randomness is
drawn from one ``numpy.random.Generator`` on the calling thread.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

CROSSOVER_KINDS = ("single_point", "two_point", "uniform")
MUTATION_KINDS = ("flip", "shuffle")
SHUFFLE_WINDOW = 8


@dataclass(frozen=True)
class GaParams:
    population: int = 50
    max_iters: int = 5000
    crossover_kind: str = "single_point"
    mutation_kind: str = "flip"
    mutation_rate: float | None = None  # None -> 1 / n_genes
    elitism: int = 2
    stall_window: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be at least 2")
        if not 0 <= self.elitism < self.population:
            raise ValueError("elitism must be in [0, population)")
        if (self.population - self.elitism) % 2:
            raise ValueError("population - elitism must be even")
        if self.crossover_kind not in CROSSOVER_KINDS:
            raise ValueError(f"crossover_kind must be one of {CROSSOVER_KINDS}")
        if self.mutation_kind not in MUTATION_KINDS:
            raise ValueError(f"mutation_kind must be one of {MUTATION_KINDS}")
        if self.mutation_rate is not None and not 0 <= self.mutation_rate <= 1:
            raise ValueError("mutation_rate must lie in [0, 1]")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.stall_window is not None and self.stall_window < 1:
            raise ValueError("stall_window must be positive")


class Generation(NamedTuple):
    iteration: int
    best: float
    mean: float
    evaluations: int
    cache_hit_rate: float


class GaResult(NamedTuple):
    best: np.ndarray
    best_score: float
    history: list[Generation]


def _phase_view(genes: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return genes.reshape(np.asarray(mask).shape)


def repair(c: np.ndarray, mask: np.ndarray, max_tags_per_phase: int | None, rng: np.random.Generator) -> np.ndarray:
    """Zero infeasible genes, then randomly drop actives over the per-phase budget.

    ``mask`` has shape (n_phases, n_slots); ``c`` is flat, phase-major.
    """
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask.reshape(-1), c, 0).astype(c.dtype)
    if max_tags_per_phase is None:
        return out
    view = _phase_view(out, mask)
    counts = np.count_nonzero(view, axis=1)
    for j in np.nonzero(counts > max_tags_per_phase)[0]:
        active = np.nonzero(view[j])[0]
        drop = rng.choice(active, size=len(active) - max_tags_per_phase, replace=False)
        view[j, drop] = 0
    return out


def random_population(
    mask: np.ndarray,
    n_sizes: int,
    size: int,
    max_tags_per_phase: int | None,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    mask = np.asarray(mask, dtype=bool)
    n = mask.size
    pop = []
    for _ in range(size):
        on = rng.random(n) < 0.5
        sizes = rng.integers(1, n_sizes + 1, size=n)
        c = np.where(on, sizes, 0).astype(np.int8)
        pop.append(repair(c, mask, max_tags_per_phase, rng))
    return pop


def roulette_weights(scores: Sequence[float]) -> np.ndarray:
    """Selection probabilities from min-shifted scores."""
    s = np.asarray(scores, dtype=float)
    lo, hi = s.min(), s.max()
    w = s - lo + 1e-9 * (hi - lo + 1.0)
    return w / w.sum()


def select_pair(population: Sequence[np.ndarray], scores: Sequence[float], rng: np.random.Generator, p=None):
    """Two independent roulette draws over min-shifted scores.

    ``p`` may carry precomputed :func:`roulette_weights` for these scores.
    """
    p = roulette_weights(scores) if p is None else p
    i, j = rng.choice(len(population), size=2, replace=True, p=p)
    return population[i], population[j]


def crossover(a: np.ndarray, b: np.ndarray, kind: str, rng: np.random.Generator):
    if a.shape != b.shape:
        raise ValueError("parents must have equal length")
    n = len(a)
    c1, c2 = a.copy(), b.copy()
    if kind == "single_point":
        cut = int(rng.integers(0, n + 1))
        c1[cut:], c2[cut:] = b[cut:], a[cut:]
    elif kind == "two_point":
        i, j = sorted(int(x) for x in rng.integers(0, n + 1, size=2))
        c1[i:j], c2[i:j] = b[i:j], a[i:j]
    elif kind == "uniform":
        swap = rng.random(n) < 0.5
        c1[swap], c2[swap] = b[swap], a[swap]
    else:
        raise ValueError(f"unknown crossover kind {kind!r}")
    return c1, c2


def mutate(c: np.ndarray, kind: str, rate: float, n_sizes: int, rng: np.random.Generator) -> np.ndarray:
    out = c.copy()
    n = len(c)
    if kind == "flip":
        hit = np.nonzero(rng.random(n) < rate)[0]
        if len(hit):
            # uniform over {0..n_sizes} minus the current value
            shift = rng.integers(1, n_sizes + 1, size=len(hit))
            out[hit] = (out[hit].astype(np.int64) + shift) % (n_sizes + 1)
    elif kind == "shuffle":
        if rng.random() < min(1.0, rate * n) and n > 1:
            w = int(rng.integers(2, min(SHUFFLE_WINDOW, n) + 1))
            start = int(rng.integers(0, n - w + 1))
            out[start : start + w] = rng.permutation(out[start : start + w])
    else:
        raise ValueError(f"unknown mutation kind {kind!r}")
    return out


def _ranked(population: Sequence[np.ndarray], scores: Sequence[float]) -> list[int]:
    """Indices by descending score; ties broken by lexicographic gene order."""
    return sorted(range(len(population)), key=lambda i: (-scores[i], population[i].tolist()))


def run(
    mask: np.ndarray,
    n_sizes: int,
    fitness: Callable[[list[np.ndarray]], list[float]],
    params: GaParams,
    max_tags_per_phase: int | None = None,
    initial: Sequence[np.ndarray] = (),
    cache_stats: Callable[[], tuple[int, int]] | None = None,
) -> GaResult:
    """Evolve a population and return the best chromosome found.

    ``fitness`` maps a list of chromosomes to their scores (it may fan out
    over threads; it must be order preserving and RNG free). ``initial``
    chromosomes seed the first population (repaired, then topped up with
    random ones).
    """
    mask = np.asarray(mask, dtype=bool)
    rng = np.random.default_rng(params.seed)
    n_genes = mask.size
    rate = params.mutation_rate if params.mutation_rate is not None else 1.0 / max(n_genes, 1)

    pop = [repair(np.asarray(c, dtype=np.int8), mask, max_tags_per_phase, rng) for c in initial][: params.population]
    pop += random_population(mask, n_sizes, params.population - len(pop), max_tags_per_phase, rng)

    history: list[Generation] = []
    best, best_score = None, -np.inf
    stall = 0
    evaluations = 0
    for it in range(params.max_iters + 1):
        scores = list(fitness(pop))
        evaluations += len(pop)
        order = _ranked(pop, scores)
        top = order[0]
        if scores[top] > best_score:
            best, best_score = pop[top].copy(), scores[top]
            stall = 0
        else:
            stall += 1
        hit_rate = 0.0
        if cache_stats is not None:
            hits, total = cache_stats()
            hit_rate = hits / total if total else 0.0
        history.append(Generation(it, float(best_score), float(np.mean(scores)), evaluations, hit_rate))
        if it == params.max_iters or (params.stall_window is not None and stall >= params.stall_window):
            break

        nxt = [pop[i].copy() for i in order[: params.elitism]]
        p = roulette_weights(scores)
        while len(nxt) < params.population:
            a, b = select_pair(pop, scores, rng, p)
            c1, c2 = crossover(a, b, params.crossover_kind, rng)
            for child in (c1, c2):
                child = repair(child, mask, max_tags_per_phase, rng)
                child = mutate(child, params.mutation_kind, rate, n_sizes, rng)
                nxt.append(repair(child, mask, max_tags_per_phase, rng))
        pop = nxt[: params.population]
    log.debug("GA finished after %d generations, best %.6g", len(history), best_score)
    return GaResult(best, float(best_score), history)
