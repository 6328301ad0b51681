"""Scenario, strategy and penalty configuration shared by every other module.

A device tracks a two-state Markov process, harvests energy into a battery of
capacity ``E`` and transmits over slotted ALOHA.  The transmission strategy is
a table ``pi[ij, b]`` giving the probability of sending an update with battery
level ``b`` when the process moved from state ``i`` to state ``j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np

# Row order of the strategy table: transitions 00, 01, 10, 11.
PAIRS = ((0, 0), (0, 1), (1, 0), (1, 1))


def pair_index(i: int, j: int) -> int:
    return 2 * i + j


class ValidationError(ValueError):
    """Raised when a configuration violates one or more invariants.

    ``errors`` holds one ``(field, message)`` tuple per violation.
    """

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = list(errors)
        super().__init__("; ".join(f"{f}: {m}" for f, m in self.errors))


class StrategyClass(str, Enum):
    REACTIVE = "reactive"
    RANDOM = "random"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class Scenario:
    num_devices: int
    battery_capacity: int
    q01: float
    q10: float
    gamma0: float
    gamma1: float
    slot_channel_uses: int = 100
    rate_bits: float = 0.8
    noise_variance: float = 1e-2

    @property
    def q00(self) -> float:
        return 1.0 - self.q01

    @property
    def q11(self) -> float:
        return 1.0 - self.q10

    def q(self, i: int, j: int) -> float:
        """Process transition probability from state ``i`` to ``j``."""
        if i == 0:
            return self.q01 if j == 1 else 1.0 - self.q01
        return self.q10 if j == 0 else 1.0 - self.q10

    def gamma(self, x: int) -> float:
        return self.gamma1 if x else self.gamma0

    @property
    def transition_matrix(self) -> np.ndarray:
        return np.array([[1.0 - self.q01, self.q01], [self.q10, 1.0 - self.q10]])

    @property
    def process_stationary(self) -> np.ndarray:
        s = self.q01 + self.q10
        return np.array([self.q10 / s, self.q01 / s])

    @classmethod
    def from_transition_rate(
        cls,
        total_rate: float,
        num_devices: int = 1000,
        ratio: float = 1.0,
        **kwargs: Any,
    ) -> "Scenario":
        """Build a scenario from the network-wide transition rate ``U * q_bar``.

        ``ratio`` is ``q01 / q10``; ``ratio=1`` gives a symmetric process.
        """
        q_bar = total_rate / num_devices
        # q_bar = 2 r q10^2 / ((1 + r) q10)  =>  q10 = q_bar (1 + r) / (2 r)
        q10 = q_bar * (1.0 + ratio) / (2.0 * ratio)
        return cls(num_devices=num_devices, q01=ratio * q10, q10=q10, **kwargs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_devices": self.num_devices,
            "battery_capacity": self.battery_capacity,
            "q01": self.q01,
            "q10": self.q10,
            "gamma0": self.gamma0,
            "gamma1": self.gamma1,
            "slot_channel_uses": self.slot_channel_uses,
            "rate_bits": self.rate_bits,
            "noise_variance": self.noise_variance,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Scenario":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError([(k, "unknown field") for k in sorted(unknown)])
        missing = [k for k in ("num_devices", "battery_capacity", "q01", "q10", "gamma0", "gamma1") if k not in d]
        if missing:
            raise ValidationError([(k, "missing field") for k in missing])
        return cls(**d)


@dataclass(frozen=True)
class PenaltySpec:
    """Power penalty ``f_x(j) = j ** alpha_x``; integer exponents only."""

    alpha0: int = 1
    alpha1: int = 1

    def __post_init__(self):
        errors = []
        for name in ("alpha0", "alpha1"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                errors.append((name, "penalty exponent must be an integer"))
            elif v < 0:
                errors.append((name, "penalty exponent must be nonnegative"))
        if errors:
            raise ValidationError(errors)

    def alpha(self, x: int) -> int:
        return self.alpha1 if x else self.alpha0

    @property
    def is_aoii(self) -> bool:
        return self.alpha0 == 1 and self.alpha1 == 1


AOII = PenaltySpec(1, 1)


@dataclass(frozen=True, eq=False)
class Strategy:
    """Transmission probabilities ``pi[pair_index(i, j), b]`` for ``b`` in ``[0:E]``."""

    pi: np.ndarray
    strategy_class: StrategyClass = StrategyClass.HYBRID

    def __post_init__(self):
        arr = np.array(self.pi, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != 4:
            raise ValidationError([("pi", f"expected shape (4, E+1), got {arr.shape}")])
        arr.setflags(write=False)
        object.__setattr__(self, "pi", arr)
        object.__setattr__(self, "strategy_class", StrategyClass(self.strategy_class))

    @property
    def battery_capacity(self) -> int:
        return self.pi.shape[1] - 1

    def prob(self, i: int, j: int, b: int) -> float:
        return float(self.pi[2 * i + j, b])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Strategy):
            return NotImplemented
        return self.strategy_class == other.strategy_class and np.array_equal(self.pi, other.pi)

    def __hash__(self) -> int:
        return hash((self.strategy_class, self.pi.tobytes()))

    @classmethod
    def zeros(cls, E: int, strategy_class=StrategyClass.HYBRID) -> "Strategy":
        return cls(np.zeros((4, E + 1)), strategy_class)

    @classmethod
    def constant(cls, E: int, p: float, strategy_class=StrategyClass.HYBRID) -> "Strategy":
        pi = np.full((4, E + 1), float(p))
        pi[:, 0] = 0.0
        if StrategyClass(strategy_class) is StrategyClass.REACTIVE:
            pi[0] = pi[3] = 0.0
        return cls(pi, strategy_class)

    @classmethod
    def from_params(cls, strategy_class, E: int, params) -> "Strategy":
        """Expand the free parameters of a strategy class into a full table."""
        strategy_class = StrategyClass(strategy_class)
        _, index_map = strategy_free_parameters(strategy_class, E)
        params = np.asarray(params, dtype=float)
        if params.shape != (len(index_map),):
            raise ValidationError([("params", f"expected {len(index_map)} values, got {params.shape}")])
        pi = np.zeros((4, E + 1))
        for value, cells in zip(params, index_map):
            for pair, b in cells:
                pi[pair, b] = value
        return cls(pi, strategy_class)

    def free_params(self) -> np.ndarray:
        _, index_map = strategy_free_parameters(self.strategy_class, self.battery_capacity)
        return np.array([self.pi[cells[0]] for cells in index_map])

    def to_dict(self) -> dict[str, Any]:
        return {"class": self.strategy_class.value, "pi": self.pi.tolist()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Strategy":
        if "pi" not in d:
            raise ValidationError([("pi", "missing field")])
        cls_name = d.get("class", "hybrid")
        try:
            sc = StrategyClass(cls_name)
        except ValueError:
            raise ValidationError([("class", f"unknown strategy class {cls_name!r}")]) from None
        try:
            pi = np.array(d["pi"], dtype=float)
        except (TypeError, ValueError):
            raise ValidationError([("pi", "must be a 4 x (E+1) numeric matrix")]) from None
        return cls(pi, sc)


def mean_change_probability(scenario: Scenario) -> float:
    """Average per-slot probability that the process changes state."""
    return 2.0 * scenario.q01 * scenario.q10 / (scenario.q01 + scenario.q10)


def strategy_free_parameters(strategy_class, E: int) -> tuple[int, list[list[tuple[int, int]]]]:
    """Count the free parameters of a strategy class and map each to its table cells.

    Returns ``(count, index_map)`` where ``index_map[k]`` lists the
    ``(pair_index, b)`` cells tied to free parameter ``k``.
    """
    if E < 1:
        raise ValueError("battery capacity must be at least 1")
    strategy_class = StrategyClass(strategy_class)
    index_map: list[list[tuple[int, int]]] = []
    if strategy_class is StrategyClass.REACTIVE:
        for pair in (1, 2):
            index_map.extend([[(pair, b)] for b in range(1, E + 1)])
    elif strategy_class is StrategyClass.RANDOM:
        index_map.extend([[(pair, b) for pair in range(4)] for b in range(1, E + 1)])
    else:
        for pair in range(4):
            index_map.extend([[(pair, b)] for b in range(1, E + 1)])
    return len(index_map), index_map


def _check_prob(errors, name, v, *, positive=False):
    if not isinstance(v, (int, float, np.floating, np.integer)) or isinstance(v, bool) or math.isnan(v):
        errors.append((name, "must be a number"))
    elif not 0.0 <= v <= 1.0:
        errors.append((name, f"probability must lie in [0, 1], got {v}"))
    elif positive and v <= 0.0:
        errors.append((name, "must be > 0"))


def validate(scenario: Scenario | None = None, strategy: Strategy | None = None) -> list[tuple[str, str]]:
    """Collect every invariant violation as ``(field, message)`` pairs; empty means valid."""
    errors: list[tuple[str, str]] = []
    if scenario is not None:
        s = scenario
        for name in ("num_devices", "battery_capacity", "slot_channel_uses"):
            v = getattr(s, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                errors.append((name, "must be a positive integer"))
        for name in ("q01", "q10"):
            v = getattr(s, name)
            _check_prob(errors, name, v)
            if v == 0:
                errors.append((name, "process must be irreducible (q01 > 0 and q10 > 0)"))
        for name in ("gamma0", "gamma1"):
            _check_prob(errors, name, getattr(s, name), positive=True)
        for name in ("rate_bits", "noise_variance"):
            v = getattr(s, name)
            if not isinstance(v, (int, float, np.floating, np.integer)) or isinstance(v, bool) or not v > 0:
                errors.append((name, "must be a positive real"))
    if strategy is not None:
        pi = strategy.pi
        if not np.all(np.isfinite(pi)) or pi.min() < 0.0 or pi.max() > 1.0:
            errors.append(("pi", "probabilities must lie in [0, 1]"))
        if np.any(pi[:, 0] != 0.0):
            errors.append(("pi", "battery-0 transmission must be 0"))
        sc = strategy.strategy_class
        if sc is StrategyClass.REACTIVE and (np.any(pi[0] != 0.0) or np.any(pi[3] != 0.0)):
            errors.append(("pi", "reactive strategy must not transmit without a state change"))
        if sc is StrategyClass.RANDOM and not np.all(pi == pi[0]):
            errors.append(("pi", "random strategy must use identical probabilities for every transition"))
        if scenario is not None and isinstance(scenario.battery_capacity, (int, np.integer)):
            if strategy.battery_capacity != scenario.battery_capacity:
                errors.append(
                    ("pi", f"strategy has {strategy.battery_capacity + 1} battery levels, "
                           f"scenario needs {scenario.battery_capacity + 1}")
                )
    return errors


def check(scenario: Scenario | None = None, strategy: Strategy | None = None) -> None:
    """Raise :class:`ValidationError` if :func:`validate` finds anything."""
    errors = validate(scenario, strategy)
    if errors:
        raise ValidationError(errors)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def paper_scenario(total_rate: float, *, asymmetric: bool = False) -> Scenario:
    """Evaluation setups used for the figure reproductions.

    Symmetric: gamma0 = gamma1 = 0.005.  Asymmetric: q01/q10 = 0.01,
    gamma0 = 0.005, gamma1 = 0.05.  Both use U=1000, E=8, N=100, R=0.8 and
    a noise variance of -20 dB.
    """
    common = dict(battery_capacity=8, slot_channel_uses=100, rate_bits=0.8, noise_variance=db_to_linear(-20.0))
    if asymmetric:
        return Scenario.from_transition_rate(total_rate, 1000, ratio=0.01, gamma0=0.005, gamma1=0.05, **common)
    return Scenario.from_transition_rate(total_rate, 1000, ratio=1.0, gamma0=0.005, gamma1=0.005, **common)
