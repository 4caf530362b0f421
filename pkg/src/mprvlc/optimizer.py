"""
Memetic IWO-DE search for the throughput-maximizing access vector.

Each candidate ("weed") is scored on two minimized objectives: the
reciprocal throughput ``f = 1/eta(p)`` and the total constraint violation
``omega(p)``. A generation runs invasive weed reproduction with spatial
dispersion, Pareto-based competitive exclusion down to ``max_population``
survivors, and then DE/best/1 mutation, binomial crossover and
dominance-based selection on the survivors.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .qos import (VIOLATION_PENALTY, effective_bandwidth_poisson, effective_capacities,
                  qos_violation)
from .states import FeasibleStateTable, TrafficSpec

ZERO_THROUGHPUT_OBJECTIVE = 1e12  # f assigned when eta(p) = 0


@dataclass(frozen=True)
class OptimizerParams:
    initial_population: int = 60
    max_population: int = 50
    max_offspring: int = 6
    min_offspring: int = 1
    modulation_index: float = 3.0
    sigma_initial: float = 0.15
    sigma_final: float = 1e-6
    max_generations: int = 300
    scaling_factor: float = 0.75
    crossover_prob: float = 0.9
    rng_seed: int = 0

    def __post_init__(self):
        if self.initial_population < 1 or self.max_population < 1:
            raise ValueError("population sizes must be >= 1")
        if not 0 <= self.min_offspring <= self.max_offspring:
            raise ValueError(f"need 0 <= S_min <= S_max, got {self.min_offspring}, {self.max_offspring}")
        if not 0 <= self.sigma_final <= self.sigma_initial:
            raise ValueError(f"need 0 <= sigma_final <= sigma_initial, "
                             f"got {self.sigma_final}, {self.sigma_initial}")
        if self.max_population > self.initial_population * (1 + self.max_offspring):
            raise ValueError("max_population exceeds the largest possible parent+offspring pool")
        if self.max_generations < 1:
            raise ValueError("max_generations must be >= 1")
        if not 0.0 <= self.crossover_prob <= 1.0:
            raise ValueError(f"crossover probability must be in [0, 1], got {self.crossover_prob}")
        if self.modulation_index <= 0:
            raise ValueError("modulation index must be > 0")


@dataclass(frozen=True)
class Candidate:
    p: np.ndarray
    objective: float  # 1/eta
    violation: float
    fitness: float = math.nan

    @property
    def feasible(self) -> bool:
        return self.violation == 0.0

    @property
    def throughput(self) -> float:
        return 0.0 if self.objective >= ZERO_THROUGHPUT_OBJECTIVE else 1.0 / self.objective


class AccessProblem:
    """Objective and violation evaluator over a fixed rate table.

    Throughput and effective capacity are evaluated at ``p`` projected
    onto [0, 1]^N (the state probabilities are meaningless outside it);
    the box violation terms use the raw ``p``.
    """

    def __init__(self, table: FeasibleStateTable, traffic: TrafficSpec, slot_duration: float):
        self.table = table
        self.beta = traffic.beta
        self.theta = traffic.theta
        self.slot_duration = slot_duration
        self.eb = effective_bandwidth_poisson(traffic.arrival_rate, traffic.packet_length,
                                              self.theta, slot_duration)
        self._sum_rate = table.rates.sum(axis=1)
        self.evaluations = 0

    @property
    def num_devices(self) -> int:
        return self.table.num_devices

    def evaluate(self, P) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(objective, violation, throughput)`` for a batch (K, N)."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        self.evaluations += len(P)
        Pc = np.clip(P, 0.0, 1.0)
        pi = self.table.probabilities(Pc, self.beta)
        eta = pi @ self._sum_rate
        ec = effective_capacities(self.table, Pc, self.beta, self.theta, self.slot_duration, pi=pi)
        omega = (qos_violation(ec, self.eb).sum(axis=1)
                 + np.maximum(0.0, -P).sum(axis=1) + np.maximum(0.0, P - 1.0).sum(axis=1))
        omega = np.minimum(omega, VIOLATION_PENALTY)
        with np.errstate(divide="ignore"):
            f = np.where(eta > 0, 1.0 / eta, ZERO_THROUGHPUT_OBJECTIVE)
        return f, omega, eta

    def candidates(self, P) -> list[Candidate]:
        P = np.atleast_2d(np.asarray(P, dtype=float))
        f, omega, _ = self.evaluate(P)
        return [Candidate(P[k].copy(), float(f[k]), float(omega[k])) for k in range(len(P))]


def initialize(params: OptimizerParams, num_devices: int, rng: np.random.Generator) -> np.ndarray:
    """``W0`` access vectors uniform on (0, 1]^N."""
    if num_devices < 1:
        raise ValueError("need at least one device")
    return 1.0 - rng.random((params.initial_population, num_devices))


def _normalized(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def fitness(objective, violation) -> np.ndarray:
    """Adaptive weighted-sum fitness; smaller is better.

    The weight is the feasible fraction of the population, and both
    objectives are min-max normalized over the population (0 when all
    values coincide).
    """
    objective = np.asarray(objective, dtype=float)
    violation = np.asarray(violation, dtype=float)
    w = float(np.mean(violation == 0.0))
    return np.sqrt(w * _normalized(objective) ** 2 + (1.0 - w) * _normalized(violation) ** 2)


def offspring_count(fit, fit_min: float, fit_max: float, s_max: int, s_min: int):
    """Offspring per weed: ``s_max`` at the best fitness, ``s_min`` at the worst.

    Rounded half-up and clamped; a degenerate range gives ``s_max`` to all.
    """
    fit = np.asarray(fit, dtype=float)
    if fit_max == fit_min:
        out = np.full(fit.shape, s_max, dtype=int)
    else:
        raw = s_max - (s_max - s_min) * (fit - fit_min) / (fit_max - fit_min)
        out = np.clip(np.floor(raw + 0.5), s_min, s_max).astype(int)
    return out if out.ndim else int(out)


def dispersion_std(generation: int, params: OptimizerParams) -> float:
    z_max = params.max_generations
    if not 0 <= generation <= z_max:
        raise ValueError(f"generation must be in [0, {z_max}], got {generation}")
    frac = ((z_max - generation) / z_max) ** params.modulation_index
    return frac * (params.sigma_initial - params.sigma_final) + params.sigma_final


def reproduce_and_disperse(P: np.ndarray, fit: np.ndarray, generation: int,
                           params: OptimizerParams, rngs) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian offspring around each weed, no clipping.

    ``rngs`` holds one generator per parent. Returns ``(children, parent_index)``.
    """
    counts = offspring_count(fit, fit.min(), fit.max(), params.max_offspring, params.min_offspring)
    sigma = dispersion_std(generation, params)
    children, parents = [], []
    for i, (n_i, rng) in enumerate(zip(np.atleast_1d(counts), rngs)):
        if n_i == 0:
            continue
        children.append(P[i] + sigma * rng.standard_normal((n_i, P.shape[1])))
        parents.append(np.full(n_i, i))
    if not children:
        return np.empty((0, P.shape[1])), np.empty(0, dtype=int)
    return np.vstack(children), np.concatenate(parents)


def pareto_dominates(a: Candidate, b: Candidate) -> bool:
    """Strict Pareto dominance of ``a`` over ``b`` on (1/eta, omega), minimized."""
    return (a.objective <= b.objective and a.violation <= b.violation
            and (a.objective < b.objective or a.violation < b.violation))


def dominance_matrix(objective, violation) -> np.ndarray:
    """``D[i, k]`` is True when item i dominates item k."""
    f = np.asarray(objective, dtype=float)
    o = np.asarray(violation, dtype=float)
    le = (f[:, None] <= f[None, :]) & (o[:, None] <= o[None, :])
    lt = (f[:, None] < f[None, :]) | (o[:, None] < o[None, :])
    return le & lt


def nondominated_fronts(objective, violation) -> np.ndarray:
    """Front index (0 = non-dominated) of each item, by repeated peeling."""
    D = dominance_matrix(objective, violation)
    n = D.shape[0]
    front = np.full(n, -1)
    remaining = np.ones(n, dtype=bool)
    level = 0
    while remaining.any():
        dominated = (D[remaining][:, remaining]).any(axis=0)
        idx = np.flatnonzero(remaining)[~dominated]
        front[idx] = level
        remaining[idx] = False
        level += 1
    return front


def exclusion_order(objective, violation) -> np.ndarray:
    """Pool indices ranked by (front, violation, objective, insertion index)."""
    f = np.asarray(objective, dtype=float)
    o = np.asarray(violation, dtype=float)
    fronts = nondominated_fronts(f, o)
    return np.lexsort((np.arange(len(f)), f, o, fronts))


def competitive_exclusion(objective, violation, max_population: int) -> np.ndarray:
    """Indices of the survivors, best first; keeps everything if the pool is small."""
    return exclusion_order(objective, violation)[:max_population]


def de_mutate(P: np.ndarray, best: int, scaling: float, rng: np.random.Generator):
    """DE/best/1 mutants, one per row of ``P``; None when fewer than 3 weeds."""
    W = P.shape[0]
    if W < 3:
        return None
    r = np.array([rng.choice(W, size=2, replace=False) for _ in range(W)])
    return P[best] + scaling * (P[r[:, 0]] - P[r[:, 1]])


def de_crossover(P: np.ndarray, mutants: np.ndarray, crossover_prob: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Binomial crossover; coordinate ``j_rand`` always comes from the mutant."""
    P = np.atleast_2d(P)
    mutants = np.atleast_2d(mutants)
    K, N = P.shape
    take = rng.random((K, N)) < crossover_prob  # draws lie in [0, 1)
    take[np.arange(K), rng.integers(0, N, size=K)] = True
    return np.where(take, mutants, P)


def de_select(incumbent: Candidate, trial: Candidate) -> Candidate:
    return trial if pareto_dominates(trial, incumbent) else incumbent


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_eta: float  # nan when no feasible weed
    best_fitness: float
    feasible_fraction: float
    population_hash: str


@dataclass
class OptimizationResult:
    best: Candidate
    feasible: bool
    trace: list[GenerationRecord] = field(default_factory=list)
    first_all_feasible: int | None = None  # first generation with feasible fraction 1
    evaluations: int = 0

    @property
    def throughput(self) -> float:
        return self.best.throughput


def _population_hash(P: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(P).tobytes()).hexdigest()[:16]


def _best_index(f: np.ndarray, omega: np.ndarray) -> int:
    feasible = np.flatnonzero(omega == 0.0)
    if feasible.size:
        return int(feasible[np.lexsort((feasible, f[feasible]))[0]])
    return int(np.lexsort((np.arange(len(f)), f, omega))[0])


def optimize(problem: AccessProblem, params: OptimizerParams = OptimizerParams(),
             callback=None) -> OptimizationResult:
    """Run ``params.max_generations`` IWO-DE generations.

    Returns the best weed of the final population (feasible first, then
    highest throughput; smallest violation when nothing is feasible) and
    the per-generation trace. ``callback(record)`` is invoked once per
    generation if given.
    """
    master = np.random.SeedSequence(params.rng_seed)
    init_seq, *gen_seqs = master.spawn(params.max_generations + 1)
    P = initialize(params, problem.num_devices, np.random.default_rng(init_seq))
    f, omega, _ = problem.evaluate(P)
    result = OptimizationResult(best=None, feasible=False)  # type: ignore[arg-type]

    for gen in range(params.max_generations):
        streams = [np.random.default_rng(s) for s in gen_seqs[gen].spawn(len(P) + 1)]
        fit = fitness(f, omega)
        children, _ = reproduce_and_disperse(P, fit, gen, params, streams[:-1])
        cf, co, _ = problem.evaluate(children) if len(children) else (np.empty(0), np.empty(0), None)
        pool_P = np.vstack([P, children])
        pool_f = np.concatenate([f, cf])
        pool_o = np.concatenate([omega, co])
        keep = competitive_exclusion(pool_f, pool_o, params.max_population)
        P, f, omega = pool_P[keep], pool_f[keep], pool_o[keep]

        de_rng = streams[-1]
        mutants = de_mutate(P, 0, params.scaling_factor, de_rng)
        if mutants is not None:
            U = de_crossover(P, mutants, params.crossover_prob, de_rng)
            uf, uo, _ = problem.evaluate(U)
            wins = (uf <= f) & (uo <= omega) & ((uf < f) | (uo < omega))
            P = np.where(wins[:, None], U, P)
            f = np.where(wins, uf, f)
            omega = np.where(wins, uo, omega)

        feasible = omega == 0.0
        ratio = float(feasible.mean())
        best_eta = float(1.0 / f[feasible].min()) if feasible.any() else math.nan
        record = GenerationRecord(gen, best_eta, float(fitness(f, omega).min()), ratio,
                                  _population_hash(P))
        result.trace.append(record)
        if result.first_all_feasible is None and ratio == 1.0:
            result.first_all_feasible = gen
        if callback is not None:
            callback(record)

    k = _best_index(f, omega)
    result.best = Candidate(P[k].copy(), float(f[k]), float(omega[k]),
                            float(fitness(f, omega)[k]))
    result.feasible = bool(omega[k] == 0.0)
    result.evaluations = problem.evaluations
    return result
