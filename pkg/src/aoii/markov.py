"""Dense finite Markov chain numerics.

Stationary and limiting distributions, fundamental matrices of absorbing
chains and discrete phase-type distributions.  Matrices are row-stochastic
("from row state to column state").  Dimensions stay in the tens to low
thousands, so everything is dense LU.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

STOCHASTIC_TOL = 1e-12


class ChainError(ArithmeticError):
    """Base class for numerical failures on a Markov chain."""


class ReducibleChainError(ChainError):
    """The chain has more than one closed (recurrent) class."""

    def __init__(self, classes: list[list[int]]):
        self.classes = classes
        desc = "; ".join("{" + ", ".join(map(str, c[:8])) + (", ..." if len(c) > 8 else "") + "}" for c in classes)
        super().__init__(f"chain has {len(classes)} disconnected recurrent classes: {desc}")


class NonTerminatingChainError(ChainError):
    def __init__(self, msg: str = "chain does not terminate (I - T is singular)"):
        super().__init__(msg)


def check_stochastic(P: np.ndarray, tol: float = STOCHASTIC_TOL, name: str = "matrix") -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"{name} must be square, got shape {P.shape}")
    if P.size and (P.min() < -tol or P.max() > 1.0 + tol):
        raise ValueError(f"{name} has entries outside [0, 1]")
    dev = np.abs(P.sum(axis=1) - 1.0)
    if P.size and dev.max() > tol:
        raise ValueError(f"{name} row {int(dev.argmax())} sums to {P.sum(axis=1)[dev.argmax()]!r}, not 1")
    return P


def recurrent_classes(P: np.ndarray) -> list[list[int]]:
    """Closed communicating classes of the support graph of ``P``."""
    support = np.asarray(P) > 0
    n = support.shape[0]
    if n <= 256:
        # Transitive closure by repeated squaring; state i is recurrent iff
        # every state it reaches can reach it back.
        R = (support | np.eye(n, dtype=bool)).astype(np.float64)
        for _ in range(max(1, int(np.ceil(np.log2(max(n, 2)))))):
            R = np.minimum(R @ R, 1.0)
        R = R > 0
        recurrent = np.all(~R | R.T, axis=1)
        classes: dict[bytes, list[int]] = {}
        for i in np.flatnonzero(recurrent):
            classes.setdefault(R[i].tobytes(), []).append(int(i))
        return list(classes.values())
    n_comp, labels = connected_components(csr_matrix(support), directed=True, connection="strong")
    leaves = np.zeros(n_comp, dtype=bool)
    rows, cols = np.nonzero(support)
    leaves[labels[rows][labels[rows] != labels[cols]]] = True
    return [np.flatnonzero(labels == c).tolist() for c in range(n_comp) if not leaves[c]]


def _solve_closed_class(P: np.ndarray, states: list[int]) -> np.ndarray:
    Q = P[np.ix_(states, states)]
    n = len(states)
    # Balance equations pi^T (P - I) = 0 with the last one replaced by sum(pi) = 1.
    A = (Q - np.eye(n)).T
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = scipy.linalg.solve(A, rhs, check_finite=False)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Unique stationary law of a chain with a single recurrent class.

    Transient states get probability zero.  Raises :class:`ReducibleChainError`
    when several closed classes make the answer ambiguous.
    """
    P = check_stochastic(P)
    classes = recurrent_classes(P)
    if len(classes) != 1:
        raise ReducibleChainError(classes)
    pi = np.zeros(P.shape[0])
    pi[classes[0]] = _solve_closed_class(P, classes[0])
    return pi


def limiting_distribution(P: np.ndarray, initial: np.ndarray) -> np.ndarray:
    """Long-run occupancy of the chain started from ``initial``.

    Equals :func:`stationary_distribution` when there is a single recurrent
    class; otherwise mixes the class laws by their absorption probabilities.
    """
    P = check_stochastic(P)
    initial = np.asarray(initial, dtype=float)
    classes = recurrent_classes(P)
    pi = np.zeros(P.shape[0])
    if len(classes) == 1:
        pi[classes[0]] = _solve_closed_class(P, classes[0])
        return pi
    recurrent = np.concatenate([np.asarray(c, dtype=int) for c in classes])
    transient = np.setdiff1d(np.arange(P.shape[0]), recurrent)
    weights = np.array([initial[c].sum() for c in classes])
    if transient.size:
        A = np.column_stack([P[np.ix_(transient, c)].sum(axis=1) for c in classes])
        split = absorption_split(P[np.ix_(transient, transient)], A)
        weights = weights + initial[transient] @ split
    for w, c in zip(weights, classes):
        if w > 0:
            pi[c] = w * _solve_closed_class(P, c)
    return pi / pi.sum()


def power_iteration(P: np.ndarray, tol: float = 1e-14, max_iter: int = 10_000_000) -> np.ndarray:
    """Stationary law by repeated multiplication; slow, used as a cross-check."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    # Lazy chain has the same stationary law and no periodicity.
    L = 0.5 * (P + np.eye(n))
    v = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        for _ in range(64):
            v = v @ L
        w = v @ L
        if np.abs(w - v).max() < tol:
            return w / w.sum()
        v = w
    raise ChainError("power iteration did not converge")


def fundamental_matrix(T: np.ndarray) -> np.ndarray:
    """``(I - T)^{-1}`` for a substochastic transient block ``T``."""
    T = np.asarray(T, dtype=float)
    n = T.shape[0]
    try:
        with warnings.catch_warnings():
            # singularity is detected below and reported as a non-terminating chain
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(np.eye(n) - T, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NonTerminatingChainError() from exc
    if n and np.min(np.abs(np.diag(lu[0]))) <= 1e-300:
        raise NonTerminatingChainError()
    with np.errstate(all="raise"):
        try:
            N = scipy.linalg.lu_solve(lu, np.eye(n), check_finite=False)
        except FloatingPointError as exc:
            raise NonTerminatingChainError() from exc
    if not np.all(np.isfinite(N)):
        raise NonTerminatingChainError()
    return N


def absorption_split(T: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Absorption probabilities ``(I - T)^{-1} A``; row ``i`` starts in transient state ``i``."""
    T = np.asarray(T, dtype=float)
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.shape[0] != T.shape[0]:
        raise ValueError("T and A must have the same number of rows")
    return fundamental_matrix(T) @ A


@lru_cache(maxsize=None)
def stirling2(m: int, k: int) -> int:
    """Stirling numbers of the second kind."""
    if m == k:
        return 1
    if k == 0 or k > m:
        return 0
    return k * stirling2(m - 1, k) + stirling2(m - 1, k - 1)


@dataclass(frozen=True, eq=False)
class PhaseType:
    """Discrete phase-type law: absorption time of a terminating chain.

    ``tau`` is the initial distribution over transient states, ``T`` the
    transient block and ``a`` the one-step absorption probabilities.
    """

    tau: np.ndarray
    T: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        T = np.asarray(self.T, dtype=float)
        a = np.asarray(self.a, dtype=float)
        n = tau.shape[0]
        if T.shape != (n, n) or a.shape != (n,):
            raise ValueError(f"inconsistent shapes tau {tau.shape}, T {T.shape}, a {a.shape}")
        if tau.min(initial=0.0) < -STOCHASTIC_TOL or abs(tau.sum() - 1.0) > 1e-10:
            raise ValueError("tau must be a probability vector")
        check_stochastic(np.block([[T, a[:, None]], [np.zeros((1, n)), np.ones((1, 1))]]), name="[T | a]")
        for name, v in (("tau", tau), ("T", T), ("a", a)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def size(self) -> int:
        return self.tau.shape[0]

    @property
    def fundamental(self) -> np.ndarray:
        N = self.__dict__.get("_N")
        if N is None:
            N = fundamental_matrix(self.T)
            N.setflags(write=False)
            object.__setattr__(self, "_N", N)
        return N

    def pmf(self, w: int) -> float:
        if w < 1:
            raise ValueError("phase-type support starts at 1")
        v = self.tau @ np.linalg.matrix_power(self.T, w - 1)
        return float(v @ self.a)

    def pmf_range(self, w_max: int) -> np.ndarray:
        """``P[W = w]`` for ``w = 1..w_max``."""
        out = np.empty(w_max)
        v = self.tau.copy()
        for w in range(w_max):
            out[w] = v @ self.a
            v = v @ self.T
        return out

    def factorial_moment_vector(self, k: int) -> np.ndarray:
        """Per-start-state ``E[W (W-1) ... (W-k+1)] = k! T^{k-1} N^k 1`` with ``N = (I - T)^{-1}``."""
        if k < 1:
            raise ValueError("order must be >= 1")
        v = self.fundamental.sum(axis=1)
        for _ in range(k - 1):
            v = self.fundamental @ v
        for _ in range(k - 1):
            v = self.T @ v
        return factorial(k) * v

    def moment_vector(self, m: int) -> np.ndarray:
        """Per-start-state raw moments ``E[W^m | start in s]``."""
        if m < 1:
            raise ValueError("order must be >= 1")
        return sum(stirling2(m, k) * self.factorial_moment_vector(k) for k in range(1, m + 1))

    def factorial_moment(self, k: int) -> float:
        return float(self.tau @ self.factorial_moment_vector(k))

    def moment(self, m: int) -> float:
        """Raw moment ``E[W^m]`` via factorial moments and Stirling numbers."""
        return float(self.tau @ self.moment_vector(m))

    def mean(self) -> float:
        return float(self.tau @ self.fundamental.sum(axis=1))

    def conditional(self, s: int) -> "PhaseType":
        """Same chain started deterministically in transient state ``s``."""
        if not 0 <= s < self.size:
            raise IndexError(f"transient state {s} out of range [0, {self.size})")
        tau = np.zeros(self.size)
        tau[s] = 1.0
        return PhaseType(tau, self.T, self.a)

    def restricted(self, states) -> "PhaseType":
        """Start law restricted to ``states`` and renormalized."""
        tau = np.zeros(self.size)
        idx = np.asarray(states, dtype=int)
        tau[idx] = self.tau[idx]
        total = tau.sum()
        if total <= 0:
            raise ValueError("no initial mass on the requested states")
        return PhaseType(tau / total, self.T, self.a)


def phasetype_pmf(ph: PhaseType, w: int) -> float:
    return ph.pmf(w)


def phasetype_moment(ph: PhaseType, m: int) -> float:
    return ph.moment(m)


def phasetype_conditional(ph: PhaseType, s: int) -> PhaseType:
    return ph.conditional(s)
