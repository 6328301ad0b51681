"""Per-packet decoding probabilities on the slotted AWGN channel.

A packet is decoded only if it is alone in its slot (collisions destroy every
packet) and the single-user decoder succeeds.  The single-user failure
probability ``epsilon(b)`` of a packet sent with ``b`` energy units comes from
a pluggable :class:`DecodingModel`.
"""

from __future__ import annotations

import math
from typing import Protocol

import numpy as np
from scipy.special import ndtr

from .model import Scenario, Strategy

LOG2E = math.log2(math.e)


class DecodingModel(Protocol):
    def epsilon(self, b: int, scenario: Scenario) -> float:
        """Single-user decoding failure probability for energy ``b``."""
        ...


class NormalApproximation:
    """Normal approximation of the finite-blocklength error on a real AWGN channel.

    ``eps = Q((N C(s) - N R + log2(N)/2) / sqrt(N V(s)))`` with SNR
    ``s = b / (N sigma^2)``, capacity ``C(s) = log2(1 + s) / 2`` and
    dispersion ``V(s) = s (s + 2) / (2 (1 + s)^2) log2(e)^2``.
    """

    def epsilon(self, b: int, scenario: Scenario) -> float:
        if b < 1:
            raise ValueError("no transmission possible with an empty battery")
        N = scenario.slot_channel_uses
        s = b / (N * scenario.noise_variance)
        capacity = 0.5 * math.log2(1.0 + s)
        dispersion = s * (s + 2.0) / (2.0 * (1.0 + s) ** 2) * LOG2E**2
        arg = (N * capacity - N * scenario.rate_bits + 0.5 * math.log2(N)) / math.sqrt(N * dispersion)
        return min(1.0, max(0.0, float(ndtr(-arg))))

    def __repr__(self) -> str:
        return "NormalApproximation()"


class ConstantError:
    """Energy-independent failure probability; handy for controlled experiments."""

    def __init__(self, eps: float = 0.0):
        if not 0.0 <= eps <= 1.0:
            raise ValueError("eps must lie in [0, 1]")
        self.eps = float(eps)

    def epsilon(self, b: int, scenario: Scenario) -> float:
        if b < 1:
            raise ValueError("no transmission possible with an empty battery")
        return self.eps

    def __repr__(self) -> str:
        return f"ConstantError({self.eps})"


DEFAULT_MODEL = NormalApproximation()


def epsilon_normal_approx(b: int, scenario: Scenario) -> float:
    return DEFAULT_MODEL.epsilon(b, scenario)


def epsilon_vector(scenario: Scenario, model: DecodingModel = DEFAULT_MODEL) -> np.ndarray:
    """``eps[b]`` for ``b`` in ``[0:E]``; ``eps[0] = 1`` since nothing can be sent."""
    E = scenario.battery_capacity
    return np.array([1.0] + [model.epsilon(b, scenario) for b in range(1, E + 1)])


def transmit_profile(scenario: Scenario, strategy: Strategy) -> np.ndarray:
    """Per-slot transmit probability ``t[x, b]`` of a device that ended the previous slot in ``(x, b)``.

    The device's own next process transition is marginalized out:
    ``t[x, b] = sum_j q_{xj} pi_b^{(xj)}``.
    """
    pi = strategy.pi
    t = np.empty((2, pi.shape[1]))
    t[0] = scenario.q00 * pi[0] + scenario.q01 * pi[1]
    t[1] = scenario.q10 * pi[2] + scenario.q11 * pi[3]
    return t


def omega_given_profile(
    b: int,
    profile: np.ndarray,
    scenario: Scenario,
    strategy: Strategy,
    model: DecodingModel = DEFAULT_MODEL,
) -> float:
    """Decoding probability of a ``b``-energy packet when the other devices have ``profile``.

    ``profile[x, b']`` (or its flattened ``x * (E + 1) + b'`` form) counts the
    other ``U - 1`` devices in each process-battery category.
    """
    E = scenario.battery_capacity
    ell = np.asarray(profile).reshape(-1)
    if ell.shape[0] != 2 * (E + 1):
        raise ValueError(f"profile must have {2 * (E + 1)} entries, got {ell.shape[0]}")
    if ell.sum() != scenario.num_devices - 1:
        raise ValueError(f"profile must count U - 1 = {scenario.num_devices - 1} devices, got {ell.sum()}")
    t = transmit_profile(scenario, strategy).reshape(-1)
    silent = float(np.prod((1.0 - t) ** ell))
    return (1.0 - model.epsilon(b, scenario)) * silent


def silence_probability(nu: np.ndarray, t: np.ndarray, num_others: int) -> float:
    """Probability that ``num_others`` i.i.d. devices with category law ``nu`` all stay silent."""
    return float(np.dot(np.ravel(nu), 1.0 - np.ravel(t))) ** num_others


def omega_bar(
    b: int,
    scenario: Scenario,
    strategy: Strategy,
    nu: np.ndarray,
    model: DecodingModel = DEFAULT_MODEL,
) -> float:
    """Decoding probability averaged over the multinomial stationary profile.

    The profile is a sum of ``U - 1`` i.i.d. categorical draws, so the
    expectation of the product factorizes into a power.
    """
    t = transmit_profile(scenario, strategy)
    return (1.0 - model.epsilon(b, scenario)) * silence_probability(nu, t, scenario.num_devices - 1)


def omega_bar_vector(
    scenario: Scenario,
    strategy: Strategy,
    nu: np.ndarray,
    model: DecodingModel = DEFAULT_MODEL,
    eps: np.ndarray | None = None,
) -> np.ndarray:
    """``omega_bar[b]`` for ``b`` in ``[0:E]`` (``omega_bar[0] = 0``)."""
    if eps is None:
        eps = epsilon_vector(scenario, model)
    t = transmit_profile(scenario, strategy)
    return (1.0 - eps) * silence_probability(nu, t, scenario.num_devices - 1)
