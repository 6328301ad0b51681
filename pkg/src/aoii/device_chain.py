"""Markov chains describing one device and, at tiny scale, the whole network.

* ``(X, B)``: process state and battery level of a single device.
* profile chain: counts of the other ``U - 1`` devices per ``(x, b)`` category.
* full chain ``G = (X, X_hat, B, profile)``: the exact model of a tagged device.

The profile and full chains grow combinatorially and are only meant as exact
oracles for small ``U`` and ``E``.

Indexing: ``(x, b) -> x * (E + 1) + b`` and
``(x, x_hat, b) -> (2 * x + x_hat) * (E + 1) + b``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .channel import DEFAULT_MODEL, DecodingModel, epsilon_vector, transmit_profile
from .markov import check_stochastic, stationary_distribution
from .model import Scenario, Strategy

MAX_OTHER_DEVICES = 6
MAX_BATTERY = 2


class SizeGuardError(ValueError):
    pass


def battery_kernels(x: int, b_prev: int, b: int, transmitted: bool, scenario: Scenario) -> float:
    """Probability of ending a slot with battery ``b`` from ``b_prev`` in process state ``x``.

    A transmission drains the battery, after which one unit may be harvested;
    otherwise one unit is harvested unless the battery is already full.
    """
    g = scenario.gamma(x)
    if transmitted:
        return (1.0 - g) * (b == 0) + g * (b == 1)
    E = scenario.battery_capacity
    return (1.0 - g * (b_prev != E)) * (b == b_prev) + g * (b == b_prev + 1)


def battery_matrices(scenario: Scenario, x: int) -> tuple[np.ndarray, np.ndarray]:
    """``(trans, no_trans)`` battery kernels as ``(E+1) x (E+1)`` matrices indexed ``[b_prev, b]``."""
    E = scenario.battery_capacity
    g = scenario.gamma(x)
    trans = np.zeros((E + 1, E + 1))
    trans[:, 0] = 1.0 - g
    trans[:, 1] = g
    no_trans = np.diag(np.full(E + 1, 1.0 - g))
    no_trans[E, E] = 1.0
    idx = np.arange(E)
    no_trans[idx, idx + 1] = g
    return trans, no_trans


def process_battery_transition(
    x_prev: int, b_prev: int, x: int, b: int, scenario: Scenario, strategy: Strategy
) -> float:
    p = strategy.prob(x_prev, x, b_prev)
    return scenario.q(x_prev, x) * (
        p * battery_kernels(x, b_prev, b, True, scenario)
        + (1.0 - p) * battery_kernels(x, b_prev, b, False, scenario)
    )


def process_battery_matrix(scenario: Scenario, strategy: Strategy) -> np.ndarray:
    """Transition matrix of ``(X, B)`` over ``2 (E + 1)`` states."""
    E = scenario.battery_capacity
    n = E + 1
    P = np.zeros((2 * n, 2 * n))
    for x in (0, 1):
        trans, no_trans = battery_matrices(scenario, x)
        for xp in (0, 1):
            p = strategy.pi[2 * xp + x][:, None]
            P[xp * n:(xp + 1) * n, x * n:(x + 1) * n] = scenario.q(xp, x) * (p * trans + (1.0 - p) * no_trans)
    return P


@dataclass(frozen=True, eq=False)
class ProcessBatteryChain:
    P: np.ndarray
    nu: np.ndarray

    @property
    def nu_grid(self) -> np.ndarray:
        """``nu`` reshaped to ``[x, b]``."""
        return self.nu.reshape(2, -1)


def process_battery_chain(scenario: Scenario, strategy: Strategy) -> ProcessBatteryChain:
    P = process_battery_matrix(scenario, strategy)
    return ProcessBatteryChain(P, stationary_distribution(P))


def estimate_kernel(scenario: Scenario, strategy: Strategy, omega: np.ndarray) -> np.ndarray:
    """Transition matrix of ``(X, X_hat, B)`` when a ``b``-energy update is decoded w.p. ``omega[b]``.

    Written case by case: whether the process keeps its state, and how the old
    and new estimates relate to the previous process state.
    """
    E = scenario.battery_capacity
    n = E + 1
    omega = np.asarray(omega, dtype=float)[:, None]
    P = np.zeros((4 * n, 4 * n))
    for x in (0, 1):
        trans, no_trans = battery_matrices(scenario, x)
        for xp in (0, 1):
            q = scenario.q(xp, x)
            pi = strategy.pi[2 * xp + x][:, None]
            keep = q * (pi * trans + (1.0 - pi) * no_trans)
            failed = q * (pi * (1.0 - omega) * trans + (1.0 - pi) * no_trans)
            delivered = q * pi * omega * trans
            for xhp, xh in itertools.product((0, 1), (0, 1)):
                if x == xp:
                    if xh != xp and xp != xhp:
                        block = failed
                    elif xh == xp and xp == xhp:
                        block = keep
                    elif xh == xp and xp != xhp:
                        block = delivered
                    else:
                        continue
                else:
                    if xh == xp and xp == xhp:
                        block = failed
                    elif xh != xp and xp == xhp:
                        block = delivered
                    elif xh != xp and xp != xhp:
                        block = keep
                    else:
                        continue
                r = (2 * xp + xhp) * n
                c = (2 * x + xh) * n
                P[r:r + n, c:c + n] = block
    return P


# --- profile chain -----------------------------------------------------------


def enumerate_profiles(num_others: int, num_categories: int) -> list[tuple[int, ...]]:
    """All count vectors of length ``num_categories`` summing to ``num_others``, lexicographic."""
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(prefix + (remaining,))
            return
        for k in range(remaining, -1, -1):
            rec(prefix + (k,), remaining - k, slots - 1)

    rec((), num_others, num_categories)
    return out


def profile_count(num_devices: int, E: int) -> int:
    """Number of profiles of ``U - 1`` devices over ``2E + 2`` categories."""
    return math.comb(num_devices + 2 * E, 2 * E + 1)


def _check_guard(scenario: Scenario):
    if scenario.num_devices - 1 > MAX_OTHER_DEVICES or scenario.battery_capacity > MAX_BATTERY:
        raise SizeGuardError(
            f"profile chain limited to U - 1 <= {MAX_OTHER_DEVICES} and E <= {MAX_BATTERY} "
            f"(got U - 1 = {scenario.num_devices - 1}, E = {scenario.battery_capacity})"
        )


def _flow_distribution(count: int, row: np.ndarray) -> list[tuple[tuple[int, ...], float]]:
    """Destinations of ``count`` devices leaving one category: every composition with its multinomial weight."""
    K = row.shape[0]
    out = []
    for u in enumerate_profiles(count, K):
        coef = math.factorial(count)
        prob = 1.0
        for k, uk in enumerate(u):
            if uk:
                coef //= math.factorial(uk)
                prob *= row[k] ** uk
        if prob > 0.0:
            out.append((u, coef * prob))
    return out


def _profile_matrix(profiles, rows: np.ndarray) -> np.ndarray:
    """Sum over flow matrices ``u[j, k]`` with per-device kernel ``rows`` (possibly substochastic)."""
    K = rows.shape[0]
    index = {p: i for i, p in enumerate(profiles)}
    M = np.zeros((len(profiles), len(profiles)))
    for i, src in enumerate(profiles):
        dist = {(0,) * K: 1.0}
        for j, count in enumerate(src):
            if count == 0:
                continue
            flows = _flow_distribution(count, rows[j])
            new = {}
            for partial, w in dist.items():
                for u, wu in flows:
                    key = tuple(a + c for a, c in zip(partial, u))
                    new[key] = new.get(key, 0.0) + w * wu
            dist = new
        for dst, w in dist.items():
            M[i, index[dst]] += w
    return M


def profile_transition_matrix(scenario: Scenario, strategy: Strategy) -> tuple[np.ndarray, list[tuple[int, ...]]]:
    """Transition matrix of the profile of the other ``U - 1`` devices.

    Sums over all flow matrices ``u[j, k]`` (devices moving from category
    ``j`` to ``k``) built one source category at a time.
    """
    _check_guard(scenario)
    profiles = enumerate_profiles(scenario.num_devices - 1, 2 * (scenario.battery_capacity + 1))
    return _profile_matrix(profiles, process_battery_matrix(scenario, strategy)), profiles


def silent_process_battery_matrix(scenario: Scenario, strategy: Strategy) -> np.ndarray:
    """Part of the single-device kernel in which the device does not transmit."""
    E = scenario.battery_capacity
    n = E + 1
    Q = scenario.transition_matrix
    P = np.zeros((2 * n, 2 * n))
    for xp, bp, x, b in itertools.product((0, 1), range(n), (0, 1), range(n)):
        stay = 1.0 - strategy.pi[2 * xp + x, bp]
        P[xp * n + bp, x * n + b] = Q[xp, x] * stay * battery_kernels(x, bp, b, False, scenario)
    return P


def profile_transition(ell_prev, ell, scenario: Scenario, strategy: Strategy) -> float:
    ell_prev = tuple(int(v) for v in np.ravel(ell_prev))
    ell = tuple(int(v) for v in np.ravel(ell))
    if sum(ell_prev) != scenario.num_devices - 1 or sum(ell) != scenario.num_devices - 1:
        raise ValueError("profiles must count U - 1 devices")
    M, profiles = profile_transition_matrix(scenario, strategy)
    index = {p: i for i, p in enumerate(profiles)}
    return float(M[index[ell_prev], index[ell]])


@dataclass(frozen=True, eq=False)
class FullChainG:
    """Exact chain ``(X, X_hat, B, profile)``; state ``s * L + l`` with ``s`` the ``(x, x_hat, b)`` index."""

    P: np.ndarray
    profiles: list[tuple[int, ...]]
    battery_capacity: int

    @property
    def num_profiles(self) -> int:
        return len(self.profiles)

    def device_marginal(self, dist: np.ndarray) -> np.ndarray:
        """Collapse a distribution over G to ``[x, x_hat, b]``."""
        n = self.battery_capacity + 1
        return dist.reshape(2, 2, n, self.num_profiles).sum(axis=3)

    def process_battery_marginal(self, dist: np.ndarray) -> np.ndarray:
        """Collapse to ``[x, b]``; compare with the single-device law."""
        return self.device_marginal(dist).sum(axis=1)


def full_chain_G(
    scenario: Scenario, strategy: Strategy, model: DecodingModel = DEFAULT_MODEL, *, factorized: bool = False
) -> FullChainG:
    """Network chain ``(X, X_hat, B, profile)``.

    The tagged device can only be decoded when all others stay silent, and a
    device that transmits ends the slot with battery 0 or 1, so the delivery
    and the next profile are dependent.  The exact kernel keeps that
    dependence.  ``factorized=True`` instead multiplies the profile transition
    by the delivery kernel given the previous profile, which drops it; both
    agree once the next profile is summed out.
    """
    PL, profiles = profile_transition_matrix(scenario, strategy)
    eps = epsilon_vector(scenario, model)
    n_dev = 4 * (scenario.battery_capacity + 1)
    L = len(profiles)
    if factorized:
        t = transmit_profile(scenario, strategy).reshape(-1)
        C = np.empty((L, n_dev, n_dev))
        for i, ell in enumerate(profiles):
            silent = float(np.prod((1.0 - t) ** np.asarray(ell)))
            C[i] = estimate_kernel(scenario, strategy, (1.0 - eps) * silent)
        G = np.einsum("iab,ij->aibj", C, PL)
    else:
        PS = _profile_matrix(profiles, silent_process_battery_matrix(scenario, strategy))
        K_ok = estimate_kernel(scenario, strategy, 1.0 - eps)
        K_fail = estimate_kernel(scenario, strategy, np.zeros_like(eps))
        G = np.einsum("ab,ij->aibj", K_ok, PS) + np.einsum("ab,ij->aibj", K_fail, PL - PS)
    G = G.reshape(n_dev * L, n_dev * L)
    check_stochastic(G, name="G")
    return FullChainG(G, profiles, scenario.battery_capacity)


def multinomial_pmf(profiles, n: int, probs: np.ndarray) -> np.ndarray:
    probs = np.ravel(probs)
    out = np.empty(len(profiles))
    for i, ell in enumerate(profiles):
        coef = math.factorial(n)
        p = 1.0
        for k, c in enumerate(ell):
            coef //= math.factorial(c)
            p *= probs[k] ** c
        out[i] = coef * p
    return out
