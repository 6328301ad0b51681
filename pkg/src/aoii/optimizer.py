"""Multi-start Nelder-Mead search over transmission strategies.

Free parameters of a strategy class are mapped to ``(0, 1)`` through the
logistic function so the simplex search is unconstrained.  Each start runs
repeated Nelder-Mead passes from its incumbent; the simplex of a restart
pulls saturated coordinates back towards the middle of the logistic, where
the objective is not flat.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import minimize

from .analysis import AnalysisError, analyze, objective_value
from .channel import DEFAULT_MODEL, DecodingModel, epsilon_vector
from .model import AOII, PenaltySpec, Scenario, Strategy, StrategyClass, check, strategy_free_parameters

log = logging.getLogger(__name__)

Z_MAX = 20.0
DEFAULT_STARTS = 10
DEFAULT_BUDGET = 2000
XATOL = 1e-6
START_SPREAD = 5.0
SNAP_TOL = 1e-4


def to_prob(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -Z_MAX, Z_MAX)))


def to_logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=float), 1.0 / (1.0 + math.exp(Z_MAX)), 1.0 / (1.0 + math.exp(-Z_MAX)))
    return np.log(p) - np.log1p(-p)


@dataclass
class Objective:
    """Average penalty (or AoII when ``penalty`` is the default) of a strategy class."""

    scenario: Scenario
    strategy_class: StrategyClass
    penalty: PenaltySpec = AOII
    model: DecodingModel = DEFAULT_MODEL
    evaluations: int = field(default=0, init=False)

    def __post_init__(self):
        self.strategy_class = StrategyClass(self.strategy_class)
        check(self.scenario)
        self._eps = epsilon_vector(self.scenario, self.model)
        self.dimension, _ = strategy_free_parameters(self.strategy_class, self.scenario.battery_capacity)

    def strategy(self, params) -> Strategy:
        return Strategy.from_params(self.strategy_class, self.scenario.battery_capacity, params)

    def evaluate(self, strategy: Strategy) -> float:
        """Objective of a full strategy; any numerical failure counts as ``+inf``."""
        if strategy.strategy_class is not self.strategy_class:
            raise ValueError(f"strategy class {strategy.strategy_class.value} != {self.strategy_class.value}")
        check(None, strategy)
        self.evaluations += 1
        try:
            value = objective_value(self.scenario, strategy, self.penalty, self.model, eps=self._eps)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            log.debug("objective failed: %s", exc)
            return math.inf
        return value if math.isfinite(value) else math.inf

    def __call__(self, params) -> float:
        return self.evaluate(self.strategy(params))


@dataclass
class StartTrace:
    start: int
    iterations: int
    evaluations: int
    restarts: int
    final_value: float
    converged: bool
    initial: str

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class OptResult:
    strategy: Strategy
    value: float
    traces: list[StartTrace]
    best_start: int
    seed: int
    best_history: list[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.traces[self.best_start].converged

    def to_dict(self) -> dict[str, Any]:
        return {
            "value": self.value,
            "strategy": self.strategy.to_dict(),
            "best_start": self.best_start,
            "seed": self.seed,
            "converged": self.converged,
            "best_history": self.best_history,
            "starts": [t.to_dict() for t in self.traces],
        }


def restart_simplex(z: np.ndarray, step: float = 2.0, saturated: float = 3.0) -> np.ndarray:
    """Simplex around ``z``; saturated coordinates get a vertex near the logistic midpoint."""
    k = z.shape[0]
    steps = np.where(np.abs(z) > saturated, np.sign(z) - z, np.where(z >= 0, -step, step))
    return np.vstack([z, z + np.diag(steps)])


def _run_start(f: Callable[[np.ndarray], float], z0: np.ndarray, budget: int) -> tuple[np.ndarray, float, StartTrace]:
    k = z0.shape[0]
    pass_cap = 40 * k + 200
    z, fz = z0, f(z0)
    used, iterations, restarts = 1, 0, 0
    converged = False
    while used < budget:
        maxfev = min(pass_cap, budget - used)
        res = minimize(
            f,
            z,
            method="Nelder-Mead",
            options=dict(maxfev=maxfev, xatol=XATOL, fatol=math.inf, initial_simplex=restart_simplex(z)),
        )
        used += res.nfev
        iterations += res.nit
        improved = res.fun < fz and not math.isclose(res.fun, fz, rel_tol=1e-12, abs_tol=0.0)
        if res.fun < fz:
            z, fz = np.clip(res.x, -Z_MAX, Z_MAX), float(res.fun)
        if res.status == 0 and not improved:
            converged = True
            break
        restarts += 1
    return z, fz, StartTrace(-1, iterations, used, restarts, fz, converged, "")


def snap(objective: Objective, params: np.ndarray, value: float, tol: float = SNAP_TOL) -> tuple[np.ndarray, float]:
    """Round near-0 and near-1 probabilities to exactly 0 and 1 if that does not hurt."""
    candidate = np.where(params < tol, 0.0, np.where(params > 1.0 - tol, 1.0, params))
    if np.array_equal(candidate, params):
        return params, value
    v = objective(candidate)
    if v <= value:
        return candidate, v
    return params, value


def optimize(
    objective: Objective,
    starts: int = DEFAULT_STARTS,
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
    initial: Sequence[Strategy] | Iterable[Strategy] = (),
) -> OptResult:
    """Minimize ``objective`` from ``starts`` seeded initial points plus any ``initial`` strategies.

    The first seeded start is the midpoint (all free probabilities 0.5), the
    rest are uniform in ``[-5, 5]`` in logistic space.  ``budget`` caps the
    objective evaluations of each start.
    """
    if starts < 1:
        raise ValueError("need at least one start")
    rng = np.random.default_rng(seed)
    k = objective.dimension
    points: list[tuple[np.ndarray, str]] = [(np.zeros(k), "midpoint")]
    points += [(rng.uniform(-START_SPREAD, START_SPREAD, size=k), "random") for _ in range(starts - 1)]
    for st in initial:
        if st.strategy_class is not objective.strategy_class:
            st = project(st, objective.strategy_class)
        points.append((to_logit(st.free_params()), "warm"))

    f = lambda z: objective(to_prob(z))  # noqa: E731
    best_z, best_val, best_start = None, math.inf, 0
    traces, history = [], []
    for i, (z0, kind) in enumerate(points):
        z, fz, trace = _run_start(f, z0, budget)
        trace.start, trace.initial = i, kind
        traces.append(trace)
        if best_z is None or fz < best_val:
            best_z, best_val, best_start = z, fz, i
        history.append(best_val)
        log.info("start %d (%s): %.6g after %d evaluations (best %.6g)", i, kind, fz, trace.evaluations, best_val)

    params, value = snap(objective, to_prob(best_z), best_val)
    if value < history[-1]:
        history.append(value)
    return OptResult(objective.strategy(params), value, traces, best_start, seed, history)


def project(strategy: Strategy, strategy_class) -> Strategy:
    """Closest member of ``strategy_class`` in the least-squares sense over tied cells."""
    strategy_class = StrategyClass(strategy_class)
    E = strategy.battery_capacity
    _, index_map = strategy_free_parameters(strategy_class, E)
    params = [float(np.mean([strategy.pi[c] for c in cells])) for cells in index_map]
    return Strategy.from_params(strategy_class, E, params)


@dataclass
class SweepRow:
    total_rate: float
    strategy_class: str
    objective: float
    mep: float
    average_aoii: float
    evaluations: int
    converged: bool
    best_start: int
    strategy: Strategy | None = None
    error: str = ""
    note: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


def evaluate_strategy_table(
    scenarios: Sequence[tuple[float, Scenario]],
    classes: Sequence[str | StrategyClass] = ("reactive", "random", "hybrid"),
    penalty: PenaltySpec = AOII,
    model: DecodingModel = DEFAULT_MODEL,
    *,
    starts: int = DEFAULT_STARTS,
    budget: int | dict = DEFAULT_BUDGET,
    seed: int = 0,
    nested_warm_start: bool = True,
) -> list[SweepRow]:
    """Optimize every ``(grid point, class)`` cell; failed cells are recorded, not raised.

    With ``nested_warm_start`` the optimized reactive and random strategies of
    the same grid point seed the hybrid search (hybrid contains both classes).
    """
    if not scenarios:
        raise ValueError("empty grid")
    classes = [StrategyClass(c) for c in classes]
    order = sorted(classes, key=lambda c: c is StrategyClass.HYBRID)
    rows: list[SweepRow] = []
    for rate, scenario in scenarios:
        found: dict[StrategyClass, Strategy] = {}
        cell_rows = {}
        for cls in order:
            cell_budget = budget.get(cls.value, DEFAULT_BUDGET) if isinstance(budget, dict) else budget
            try:
                obj = Objective(scenario, cls, penalty, model)
                warm = list(found.values()) if (nested_warm_start and cls is StrategyClass.HYBRID) else []
                res = optimize(obj, starts=starts, budget=cell_budget, seed=seed, initial=warm)
                if not math.isfinite(res.value):
                    raise ArithmeticError("no start produced a finite objective")
                found[cls] = res.strategy
                note = ""
                try:
                    rep = analyze(scenario, res.strategy, penalty, model)
                except AnalysisError as exc:
                    # e.g. the estimate never returns to 0, so no critical period can start
                    rep = analyze(scenario, res.strategy, penalty, model, with_mep=False)
                    note = f"mep undefined: {exc}"
                cell_rows[cls] = SweepRow(
                    rate, cls.value, res.value, rep.mep, rep.average_aoii,
                    sum(t.evaluations for t in res.traces), res.converged, res.best_start, res.strategy,
                    note=note,
                )
            except Exception as exc:  # noqa: BLE001 - a failed cell must not abort the sweep
                log.warning("cell (%g, %s) failed: %s", rate, cls.value, exc)
                cell_rows[cls] = SweepRow(rate, cls.value, math.nan, math.nan, math.nan, 0, False, -1, None, repr(exc))
        rows.extend(cell_rows[c] for c in classes)
    return rows
