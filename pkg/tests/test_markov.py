import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as hst

from aoii.markov import (
    NonTerminatingChainError,
    PhaseType,
    ReducibleChainError,
    absorption_split,
    check_stochastic,
    fundamental_matrix,
    limiting_distribution,
    phasetype_conditional,
    phasetype_moment,
    phasetype_pmf,
    power_iteration,
    recurrent_classes,
    stationary_distribution,
    stirling2,
)


def random_phasetype(rng, n, exit_scale=0.3) -> PhaseType:
    M = rng.uniform(size=(n, n + 1))
    M[:, n] *= exit_scale
    M /= M.sum(axis=1, keepdims=True)
    tau = rng.dirichlet(np.ones(n))
    return PhaseType(tau, M[:, :n], M[:, n])


def pmf_until_tail(ph: PhaseType, tail=1e-12):
    probs = []
    v = ph.tau.copy()
    mass = 0.0
    w = 0
    while 1.0 - mass > tail:
        w += 1
        p = float(v @ ph.a)
        probs.append(p)
        mass += p
        v = v @ ph.T
        if w > 10**6:
            raise AssertionError("tail did not vanish")
    return np.arange(1, w + 1), np.array(probs)


# --- stationary laws -----------------------------------------------------------


def test_stationary_symmetric():
    np.testing.assert_allclose(stationary_distribution(np.array([[0.9, 0.1], [0.1, 0.9]])), [0.5, 0.5], atol=1e-15)


@given(hst.floats(1e-4, 1.0), hst.floats(1e-4, 1.0))
def test_stationary_two_state(q01, q10):
    P = np.array([[1 - q01, q01], [q10, 1 - q10]])
    expected = np.array([q10, q01]) / (q01 + q10)
    np.testing.assert_allclose(stationary_distribution(P), expected, rtol=1e-10)


@given(hst.integers(2, 30), hst.integers(0, 2**31))
def test_stationary_fixed_point(n, seed):
    rng = np.random.default_rng(seed)
    P = rng.uniform(size=(n, n)) * (rng.uniform(size=(n, n)) < 0.5)
    P[np.arange(n), (np.arange(n) + 1) % n] += 0.1  # keep it irreducible
    P /= P.sum(axis=1, keepdims=True)
    pi = stationary_distribution(P)
    assert pi.min() >= 0
    assert abs(pi.sum() - 1) < 1e-12
    assert np.abs(pi @ P - pi).max() <= 1e-10


def test_stationary_transient_states_get_zero():
    P = np.array([[0.5, 0.5, 0.0], [0.0, 0.3, 0.7], [0.0, 0.6, 0.4]])
    pi = stationary_distribution(P)
    assert pi[0] == 0.0
    np.testing.assert_allclose(pi[1:], [6 / 13, 7 / 13], rtol=1e-12)


def test_reducible_chain_names_classes():
    P = np.array([[1.0, 0.0, 0.0], [0.2, 0.6, 0.2], [0.0, 0.0, 1.0]])
    with pytest.raises(ReducibleChainError) as exc:
        stationary_distribution(P)
    assert sorted(exc.value.classes) == [[0], [2]]
    assert "2 disconnected recurrent classes" in str(exc.value)


def test_limiting_distribution_mixes_classes():
    P = np.array([[1.0, 0.0, 0.0], [0.2, 0.6, 0.2], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(limiting_distribution(P, np.array([0.0, 1.0, 0.0])), [0.5, 0.0, 0.5])
    np.testing.assert_allclose(limiting_distribution(P, np.array([0.5, 0.5, 0.0])), [0.75, 0.0, 0.25])


def test_recurrent_classes_large_graph_path():
    # above the dense-closure threshold the sparse component search is used
    n = 300
    P = np.zeros((n, n))
    P[np.arange(n - 1), np.arange(1, n)] = 1.0
    P[n - 1, 150] = 1.0
    classes = recurrent_classes(P)
    assert classes == [list(range(150, n))]


def test_power_iteration_matches(paper_sym):
    from aoii import Strategy
    from aoii.analysis import build_reduced_chain

    chain = build_reduced_chain(paper_sym, Strategy.constant(8, 0.5))
    np.testing.assert_allclose(stationary_distribution(chain.P), power_iteration(chain.P), atol=1e-9)


def test_check_stochastic_rejects():
    with pytest.raises(ValueError, match="row 1"):
        check_stochastic(np.array([[1.0, 0.0], [0.5, 0.6]]))
    with pytest.raises(ValueError, match="square"):
        check_stochastic(np.ones((2, 3)) / 3)


# --- fundamental matrix and absorption --------------------------------------------


def test_fundamental_trivial():
    np.testing.assert_allclose(fundamental_matrix(np.array([[0.5]])), [[2.0]])
    np.testing.assert_array_equal(fundamental_matrix(np.zeros((3, 3))), np.eye(3))


@given(hst.integers(0, 2**31))
def test_fundamental_neumann_series(seed):
    rng = np.random.default_rng(seed)
    T = rng.uniform(size=(6, 6))
    T *= 0.6 / T.sum(axis=1, keepdims=True)
    N = fundamental_matrix(T)
    S, term = np.eye(6), np.eye(6)
    for _ in range(200):
        term = term @ T
        S += term
    np.testing.assert_allclose(N, S, atol=1e-8)
    assert np.abs((np.eye(6) - T) @ N - np.eye(6)).max() <= 1e-10
    assert np.all(np.diag(N) >= 1.0) and N.min() >= 0.0


def test_fundamental_non_terminating():
    with pytest.raises(NonTerminatingChainError, match="does not terminate"):
        fundamental_matrix(np.array([[1.0, 0.0], [0.3, 0.7]]))


def test_absorption_trivial():
    np.testing.assert_allclose(absorption_split(np.zeros((1, 1)), np.array([[0.3, 0.7]])), [[0.3, 0.7]])


def test_gamblers_ruin():
    T = np.array([[0.0, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.0]])
    A = np.array([[0.5, 0.0], [0.0, 0.0], [0.0, 0.5]])
    split = absorption_split(T, A)
    np.testing.assert_allclose(split[:, 0], [0.75, 0.5, 0.25], rtol=1e-12)
    np.testing.assert_allclose(split.sum(axis=1), 1.0, atol=1e-10)


def test_absorption_monte_carlo():
    rng = np.random.default_rng(11)
    n, k = 5, 2
    M = rng.uniform(size=(n, n + k))
    M /= M.sum(axis=1, keepdims=True)
    T, A = M[:, :n], M[:, n:]
    split = absorption_split(T, A)
    runs = 20_000
    hits = 0
    cum = np.cumsum(M, axis=1)
    for _ in range(runs):
        s = 0
        while s < n:
            s = int(np.searchsorted(cum[s], rng.uniform(), side="right"))
        hits += s == n
    p = hits / runs
    se = np.sqrt(split[0, 0] * (1 - split[0, 0]) / runs)
    assert abs(p - split[0, 0]) < 3 * se


# --- phase-type ---------------------------------------------------------------------


def geometric(t):
    return PhaseType(np.array([1.0]), np.array([[t]]), np.array([1 - t]))


def test_geometric_pmf_and_moments():
    ph = geometric(0.5)
    assert phasetype_pmf(ph, 3) == pytest.approx(0.125)
    assert phasetype_moment(ph, 1) == pytest.approx(2.0)
    assert phasetype_moment(ph, 2) == pytest.approx(6.0)
    with pytest.raises(ValueError):
        ph.pmf(0)


def test_geometric_conditional_is_itself():
    ph = geometric(0.3)
    c = phasetype_conditional(ph, 0)
    assert c.mean() == ph.mean() and c.moment(3) == ph.moment(3)
    with pytest.raises(IndexError):
        phasetype_conditional(ph, 1)


def test_phasetype_validation():
    with pytest.raises(ValueError):
        PhaseType(np.array([0.5, 0.4]), np.eye(2) * 0.5, np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        PhaseType(np.array([1.0]), np.array([[0.5]]), np.array([0.4]))


def test_stirling_numbers():
    assert [stirling2(4, k) for k in range(5)] == [0, 1, 7, 6, 1]
    assert stirling2(0, 0) == 1


@given(hst.integers(1, 10), hst.integers(0, 2**31))
def test_pmf_normalization_and_mean_identity(n, seed):
    ph = random_phasetype(np.random.default_rng(seed), n)
    w, p = pmf_until_tail(ph)
    assert p.sum() == pytest.approx(1.0, abs=1e-11)  # truncated at tail 1e-12, plus summation rounding
    N = np.linalg.inv(np.eye(n) - ph.T)
    one = np.ones(n)
    # first two moments against the fundamental-matrix closed forms
    ew = ph.tau @ N @ one
    ew2 = 2 * ph.tau @ N @ N @ one - ew
    assert ph.moment(1) == pytest.approx(ew, rel=1e-12)
    assert ph.moment(2) == pytest.approx(ew2, rel=1e-12)
    assert ph.moment(2) >= ph.moment(1) ** 2


@given(hst.integers(1, 10), hst.integers(0, 2**31))
def test_conditional_law_of_total_expectation(n, seed):
    ph = random_phasetype(np.random.default_rng(seed), n)
    total = sum(ph.tau[s] * ph.conditional(s).mean() for s in range(n))
    assert total == pytest.approx(ph.mean(), rel=1e-12)
    s = n - 1
    _, p = pmf_until_tail(ph.conditional(s))
    assert p.sum() == pytest.approx(1.0, abs=1e-11)  # truncated at tail 1e-12, plus summation rounding


def test_third_moment_against_pmf():
    ph = random_phasetype(np.random.default_rng(3), 6, exit_scale=0.1)
    w, p = pmf_until_tail(ph)
    for m in (1, 2, 3):
        assert ph.moment(m) == pytest.approx(float(np.sum(w**m * p)), rel=1e-8)


def test_pmf_monte_carlo():
    rng = np.random.default_rng(8)
    ph = random_phasetype(rng, 4)
    cum = np.cumsum(np.column_stack([ph.T, ph.a]), axis=1)
    runs = 20_000
    counts = np.zeros(8)
    for _ in range(runs):
        s = int(rng.choice(4, p=ph.tau))
        w = 1
        while True:
            s = int(np.searchsorted(cum[s], rng.uniform(), side="right"))
            if s == 4:
                break
            w += 1
        if w <= 8:
            counts[w - 1] += 1
    for w in range(1, 9):
        p = ph.pmf(w)
        assert abs(counts[w - 1] / runs - p) < 3 * np.sqrt(p * (1 - p) / runs) + 1e-12


def test_pmf_range_agrees():
    ph = random_phasetype(np.random.default_rng(2), 3)
    np.testing.assert_allclose(ph.pmf_range(10), [ph.pmf(w) for w in range(1, 11)], rtol=1e-12)


def test_restricted_renormalizes():
    ph = PhaseType(np.array([0.25, 0.75]), np.array([[0.5, 0.0], [0.0, 0.2]]), np.array([0.5, 0.8]))
    r = ph.restricted([0])
    np.testing.assert_array_equal(r.tau, [1.0, 0.0])
    with pytest.raises(ValueError):
        PhaseType(np.array([1.0, 0.0]), ph.T, ph.a).restricted([1])
