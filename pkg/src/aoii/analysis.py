"""Closed-form average penalty, AoII and misdetection probability.

The profile of the other devices is treated as drawn afresh each slot from its
stationary multinomial law.  A tagged device then evolves as the chain
``(X, X_hat, B)`` whose updates succeed with the averaged probability
``omega_bar[b]``.  Wrong- and correct-estimate durations are absorption times
of that chain restricted to the mismatch / match states, and the average
penalty follows from a renewal-reward argument::

    F_bar = Gamma / (E[W] + E[Y])

where ``Gamma`` is the expected penalty accumulated over one wrong-estimate
period.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb
from typing import Any

import numpy as np

from .channel import DEFAULT_MODEL, DecodingModel, epsilon_vector, omega_bar_vector
from .device_chain import battery_matrices, estimate_kernel, process_battery_chain
from .markov import (
    ChainError,
    PhaseType,
    ReducibleChainError,
    absorption_split,
    limiting_distribution,
    stationary_distribution,
)
from .model import AOII, PenaltySpec, Scenario, Strategy

# (x, x_hat) blocks of the reduced chain, in index order.
CORRECT_BLOCKS = ((0, 0), (1, 1))
WRONG_BLOCKS = ((0, 1), (1, 0))


class AnalysisError(ChainError):
    pass


@lru_cache(maxsize=None)
def bernoulli_plus(n: int) -> tuple[Fraction, ...]:
    """Bernoulli numbers ``B_0..B_n`` with ``B_1 = +1/2`` (Akiyama-Tanigawa)."""
    out = []
    a = [Fraction(0)] * (n + 1)
    for m in range(n + 1):
        a[m] = Fraction(1, m + 1)
        for j in range(m, 0, -1):
            a[j - 1] = j * (a[j - 1] - a[j])
        out.append(a[0])
    return tuple(out)


def faulhaber_coefficients(alpha: int) -> list[tuple[int, Fraction]]:
    """``(power, coefficient)`` pairs with ``sum_{j=1}^{n} j^alpha = sum coef * n^power``."""
    B = bernoulli_plus(alpha)
    return [(alpha - k + 1, Fraction(comb(alpha + 1, k)) * B[k] / (alpha + 1)) for k in range(alpha + 1)]


def faulhaber_sum(alpha: int, n: int) -> Fraction:
    return sum((c * Fraction(n) ** p for p, c in faulhaber_coefficients(alpha)), Fraction(0))


def _block(x: int, xh: int, n: int) -> slice:
    i = 2 * x + xh
    return slice(i * n, (i + 1) * n)


def _indices(blocks, n: int) -> np.ndarray:
    return np.concatenate([np.arange((2 * x + xh) * n, (2 * x + xh + 1) * n) for x, xh in blocks])


@dataclass(frozen=True, eq=False)
class ReducedChain:
    """The ``(X, X_hat, B)`` chain with its long-run law ``p``.

    State ``(x, x_hat, b)`` sits at index ``(2 x + x_hat) (E + 1) + b``.
    """

    scenario: Scenario
    strategy: Strategy
    P: np.ndarray
    p: np.ndarray
    omega_bar: np.ndarray
    nu: np.ndarray
    reducible: bool = False

    @property
    def n_battery(self) -> int:
        return self.scenario.battery_capacity + 1

    def p_grid(self) -> np.ndarray:
        """``p`` reshaped to ``[x, x_hat, b]``."""
        return self.p.reshape(2, 2, self.n_battery)


def canonical_initial(scenario: Scenario) -> np.ndarray:
    """Start law used when the chain is reducible: x stationary, correct estimate, full battery."""
    n = scenario.battery_capacity + 1
    init = np.zeros(4 * n)
    px = scenario.process_stationary
    init[(2 * 0 + 0) * n + n - 1] = px[0]
    init[(2 * 1 + 1) * n + n - 1] = px[1]
    return init


def build_reduced_chain(
    scenario: Scenario,
    strategy: Strategy,
    model: DecodingModel = DEFAULT_MODEL,
    eps: np.ndarray | None = None,
) -> ReducedChain:
    """Solve the single-device ``(X, B)`` law, average the decoding probability, fill the kernel.

    When some strategy cannot ever correct the estimate (e.g. it never
    transmits) the chain splits into several closed classes; ``p`` is then the
    limiting law from :func:`canonical_initial` and ``reducible`` is set.
    """
    pb = process_battery_chain(scenario, strategy)
    wbar = omega_bar_vector(scenario, strategy, pb.nu_grid, model, eps=eps)
    P = estimate_kernel(scenario, strategy, wbar)
    reducible = False
    try:
        p = stationary_distribution(P)
    except ReducibleChainError:
        reducible = True
        p = limiting_distribution(P, canonical_initial(scenario))
    return ReducedChain(scenario, strategy, P, p, wbar, pb.nu, reducible)


def entry_flows(chain: ReducedChain, blocks) -> np.ndarray:
    """Long-run probability per slot of entering each state of ``blocks`` from outside ``blocks``.

    The flow into ``(x, x_hat, b)`` is weighted by the steady-state mass of the
    predecessor state.  A jump between two blocks of the same class, such as
    ``(0,0) -> (1,1)`` when the change is delivered in the slot it happens, stays
    inside the current period and does not start a new one.
    """
    n = chain.n_battery
    outside = np.ones(4 * n, dtype=bool)
    for x, xh in blocks:
        outside[_block(x, xh, n)] = False
    inflow = chain.p[outside] @ chain.P[outside]
    return np.concatenate([inflow[_block(x, xh, n)] for x, xh in blocks])


@dataclass(frozen=True)
class EntryDistribution:
    """Initial laws of wrong- and correct-estimate periods.

    ``tau_we`` is ordered ``(0,1,0..E), (1,0,0..E)``; ``tau_ce`` is ordered
    ``(0,0,0..E), (1,1,0..E)``.
    """

    tau_we: np.ndarray
    tau_ce: np.ndarray | None = None

    @property
    def prob_wrong_state(self) -> np.ndarray:
        """``P[X_tilde = x]``: process state during a wrong-estimate period."""
        n = self.tau_we.shape[0] // 2
        return np.array([self.tau_we[:n].sum(), self.tau_we[n:].sum()])


def _phasetype(chain: ReducedChain, transient_blocks, absorbing_blocks) -> tuple[PhaseType, np.ndarray]:
    n = chain.n_battery
    tr = _indices(transient_blocks, n)
    ab = _indices(absorbing_blocks, n)
    flows = entry_flows(chain, transient_blocks)
    total = flows.sum()
    if not total > 0:
        raise AnalysisError(f"no probability flow into {list(transient_blocks)} states")
    tau = flows / total
    T = chain.P[np.ix_(tr, tr)]
    a = chain.P[np.ix_(tr, ab)].sum(axis=1)
    return PhaseType(tau, T, a), tau


def wed_phasetype(chain: ReducedChain) -> tuple[PhaseType, EntryDistribution]:
    """Wrong-estimate duration ``W``.  Transient states ``(0,1,b), (1,0,b)``; the correct states absorb."""
    ph, tau = _phasetype(chain, WRONG_BLOCKS, CORRECT_BLOCKS)
    return ph, EntryDistribution(tau)


def ced_phasetype(chain: ReducedChain) -> PhaseType:
    """Correct-estimate duration ``Y``.  Transient states ``(0,0,b), (1,1,b)``."""
    ph, _ = _phasetype(chain, CORRECT_BLOCKS, WRONG_BLOCKS)
    return ph


def conditional_wed_moments(wed: PhaseType, entry: EntryDistribution, x: int, max_order: int) -> list[float]:
    """``E[W_x^m]`` for ``m = 1..max_order``, given the process sits in ``x`` during the period."""
    n = wed.size // 2
    sl = slice(n * x, n * (x + 1))
    weights = entry.tau_we[sl]
    mass = weights.sum()
    if not mass > 0:
        return [0.0] * max_order
    return [float(weights @ wed.moment_vector(m)[sl]) / mass for m in range(1, max_order + 1)]


def gamma_power(wed: PhaseType, entry: EntryDistribution, penalty: PenaltySpec) -> float:
    """Expected penalty over one wrong-estimate period for ``f_x(j) = j ** alpha_x``.

    Uses Faulhaber's formula on the conditional moments of ``W_x``.
    """
    px = entry.prob_wrong_state
    total = 0.0
    for x in (0, 1):
        if px[x] <= 0:
            continue
        alpha = penalty.alpha(x)
        moments = conditional_wed_moments(wed, entry, x, alpha + 1)
        s = sum(float(c) * moments[p - 1] for p, c in faulhaber_coefficients(alpha))
        total += px[x] * s
    return total


def gamma_linear(wed: PhaseType, entry: EntryDistribution, slopes) -> float:
    """Expected penalty over one wrong-estimate period for ``f_x(j) = slope_x * j``."""
    slopes = np.asarray(slopes, dtype=float)
    if slopes.shape != (2,) or np.any(slopes < 0):
        raise ValueError("need two nonnegative slopes")
    n = wed.size // 2
    N = wed.fundamental
    per_state = N @ N.sum(axis=1)
    weights = np.repeat(slopes, n)
    return float(np.sum(entry.tau_we * weights * per_state))


def gamma_aoii(wed: PhaseType) -> float:
    """``(E[W] + E[W^2]) / 2``."""
    return 0.5 * (wed.moment(1) + wed.moment(2))


def average_penalty(gamma: float, mean_wed: float, mean_ced: float) -> float:
    if not (mean_wed > 0 and mean_ced > 0):
        raise ValueError("mean durations must be positive")
    return gamma / (mean_wed + mean_ced)


def average_aoii(wed: PhaseType, mean_ced: float) -> float:
    return average_penalty(gamma_aoii(wed), wed.mean(), mean_ced)


def misdetection_probability(chain: ReducedChain) -> float:
    """Probability that a whole critical-state period passes without any delivered update.

    Combines the battery law right after an unnotified ``0 -> 1`` transition
    (from a correctly estimated state 0) with the probability that the
    mismatch ``(1, 0)`` is absorbed back into ``(0, 0)`` rather than ``(1, 1)``.
    """
    n = chain.n_battery
    p00 = chain.p[_block(0, 0, n)]
    mass = p00.sum()
    if not mass > 0:
        raise AnalysisError("no steady-state mass on correctly estimated state 0")
    pi01 = chain.strategy.pi[1][:, None]
    w = chain.omega_bar[:, None]
    trans, no_trans = battery_matrices(chain.scenario, 1)
    unnoticed = p00 @ (pi01 * (1.0 - w) * trans + (1.0 - pi01) * no_trans) / mass
    noticed = float(p00 @ (pi01 * w * trans).sum(axis=1)) / mass
    s10 = _block(1, 0, n)
    T_miss = chain.P[s10, s10]
    A = np.column_stack([chain.P[s10, _block(0, 0, n)].sum(axis=1), chain.P[s10, _block(1, 1, n)].sum(axis=1)])
    split = absorption_split(T_miss, A)
    direct = float(unnoticed @ split[:, 0])
    if direct >= 0.5:
        # near 1 the complement is the accurate form; it is exactly 1 when nothing is ever delivered
        direct = 1.0 - noticed - float(unnoticed @ split[:, 1])
    return float(np.clip(direct, 0.0, 1.0))


@dataclass
class AnalysisReport:
    mean_wed: float
    second_moment_wed: float
    mean_ced: float
    gamma: float
    average_penalty: float
    average_aoii: float
    mep: float
    prob_wrong_state: np.ndarray
    penalty: PenaltySpec = AOII
    wed_moments: dict[int, float] = field(default_factory=dict)
    wed: PhaseType | None = field(default=None, repr=False)
    ced: PhaseType | None = field(default=None, repr=False)
    entry: EntryDistribution | None = field(default=None, repr=False)
    chain: ReducedChain | None = field(default=None, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "mean_wed": self.mean_wed,
            "second_moment_wed": self.second_moment_wed,
            "wed_moments": {str(k): v for k, v in sorted(self.wed_moments.items())},
            "mean_ced": self.mean_ced,
            "gamma": self.gamma,
            "average_penalty": self.average_penalty,
            "average_aoii": self.average_aoii,
            "mep": self.mep,
            "prob_wrong_state": [float(v) for v in self.prob_wrong_state],
            "alpha0": self.penalty.alpha0,
            "alpha1": self.penalty.alpha1,
            "omega_bar": [float(v) for v in self.chain.omega_bar] if self.chain is not None else None,
            "reducible_chain": bool(self.chain.reducible) if self.chain is not None else None,
        }


def analyze(
    scenario: Scenario,
    strategy: Strategy,
    penalty: PenaltySpec = AOII,
    model: DecodingModel = DEFAULT_MODEL,
    *,
    with_mep: bool = True,
) -> AnalysisReport:
    chain = build_reduced_chain(scenario, strategy, model)
    wed, entry = wed_phasetype(chain)
    ced = ced_phasetype(chain)
    mean_w = wed.mean()
    mean_y = ced.mean()
    max_order = max(2, penalty.alpha0 + 1, penalty.alpha1 + 1)
    moments = {m: wed.moment(m) for m in range(1, max_order + 1)}
    g = gamma_power(wed, entry, penalty)
    aoii = average_penalty(0.5 * (moments[1] + moments[2]), mean_w, mean_y)
    return AnalysisReport(
        mean_wed=mean_w,
        second_moment_wed=moments[2],
        mean_ced=mean_y,
        gamma=g,
        average_penalty=average_penalty(g, mean_w, mean_y),
        average_aoii=aoii,
        mep=misdetection_probability(chain) if with_mep else float("nan"),
        prob_wrong_state=entry.prob_wrong_state,
        penalty=penalty,
        wed_moments=moments,
        wed=wed,
        ced=ced,
        entry=entry,
        chain=chain,
    )


def objective_value(
    scenario: Scenario,
    strategy: Strategy,
    penalty: PenaltySpec = AOII,
    model: DecodingModel = DEFAULT_MODEL,
    eps: np.ndarray | None = None,
) -> float:
    """Average penalty only; the optimizer's inner loop."""
    chain = build_reduced_chain(scenario, strategy, model, eps=eps)
    wed, entry = wed_phasetype(chain)
    mean_y = ced_phasetype(chain).mean()
    if penalty.is_aoii:
        g = gamma_aoii(wed)
    else:
        g = gamma_power(wed, entry, penalty)
    return average_penalty(g, wed.mean(), mean_y)


__all__ = [
    "AnalysisError",
    "AnalysisReport",
    "EntryDistribution",
    "ReducedChain",
    "analyze",
    "average_aoii",
    "average_penalty",
    "bernoulli_plus",
    "build_reduced_chain",
    "ced_phasetype",
    "entry_flows",
    "epsilon_vector",
    "faulhaber_sum",
    "gamma_linear",
    "gamma_power",
    "misdetection_probability",
    "objective_value",
    "wed_phasetype",
]
