import math

import numpy as np
import pytest

import aoii.optimizer as opt_mod
from aoii import PenaltySpec, Scenario, Strategy, paper_scenario, validate
from aoii.channel import ConstantError
from aoii.device_chain import process_battery_chain
from aoii.optimizer import (
    Objective,
    evaluate_strategy_table,
    optimize,
    project,
    restart_simplex,
    to_logit,
    to_prob,
)

from conftest import random_strategy


def small_objective(cls="random", E=1, **kw):
    sc = Scenario(num_devices=20, battery_capacity=E, q01=0.02, q10=0.03, gamma0=0.2, gamma1=0.2)
    return Objective(sc, cls, model=ConstantError(0.1), **kw)


def test_logistic_roundtrip():
    p = np.array([0.0, 1e-3, 0.5, 0.999, 1.0])
    back = to_prob(to_logit(p))
    np.testing.assert_allclose(back[1:4], p[1:4], rtol=1e-12)
    assert back[0] < 3e-9 and back[-1] > 1 - 3e-9


def test_one_dimensional_grid_scan():
    obj = small_objective()
    assert obj.dimension == 1
    grid = np.linspace(0.0, 1.0, 1001)
    values = [obj(np.array([p])) for p in grid]
    best = min(values)
    res = optimize(obj, starts=3, budget=400, seed=0)
    assert res.value <= best + 1e-3
    assert res.value == pytest.approx(best, abs=1e-3)


def test_reactive_symmetric_fast_rate():
    res = optimize(Objective(paper_scenario(1.0), "reactive"), starts=1, budget=2000, seed=0)
    assert res.value == pytest.approx(404.67, rel=0.10)


def test_hybrid_asymmetric_prefers_falling_edge():
    sc = paper_scenario(1.0, asymmetric=True)
    res = optimize(Objective(sc, "hybrid", PenaltySpec(1, 2)), starts=1, budget=3000, seed=0)
    assert res.value == pytest.approx(7.5687, rel=0.15)
    # transmit probability on a 1 -> 0 and on a 0 -> 1 change, averaged over the battery law
    nu = process_battery_chain(sc, res.strategy).nu_grid
    pi = res.strategy.pi
    p10 = nu[1] @ pi[2] / nu[1].sum()
    p01 = nu[0] @ pi[1] / nu[0].sum()
    assert p10 > 0.3 and p10 > 10 * p01


def test_bookkeeping():
    obj = small_objective("hybrid", E=2)
    res = optimize(obj, starts=4, budget=300, seed=5)
    assert len(res.traces) == 4
    assert all(np.diff(res.best_history) <= 0)
    assert res.value <= min(t.final_value for t in res.traces)
    assert res.traces[0].initial == "midpoint"
    assert res.traces[res.best_start].final_value == min(t.final_value for t in res.traces)
    assert all(t.evaluations <= 300 for t in res.traces)
    assert res.value == pytest.approx(obj.evaluate(res.strategy), rel=0, abs=0)


def test_every_candidate_respects_its_class():
    seen = []

    class Spy(Objective):
        def evaluate(self, strategy):
            seen.append(strategy)
            return super().evaluate(strategy)

    sc = Scenario(num_devices=10, battery_capacity=2, q01=0.05, q10=0.05, gamma0=0.3, gamma1=0.3)
    for cls in ("reactive", "random"):
        seen.clear()
        optimize(Spy(sc, cls, model=ConstantError(0.1)), starts=2, budget=100, seed=1)
        assert seen and all(validate(None, s) == [] for s in seen)
        assert all(s.strategy_class.value == cls for s in seen)


def test_wrong_class_rejected():
    obj = small_objective("reactive")
    with pytest.raises(ValueError, match="class"):
        obj.evaluate(Strategy.constant(1, 0.5))


def test_failures_count_as_infinite(monkeypatch):
    def broken(*args, **kwargs):
        raise ArithmeticError("degenerate chain")

    monkeypatch.setattr(opt_mod, "objective_value", broken)
    obj = small_objective()
    assert obj(np.array([0.3])) == math.inf
    res = optimize(obj, starts=2, budget=50, seed=0)
    assert res.value == math.inf


def test_objective_is_pure():
    obj = small_objective("hybrid", E=2)
    st = random_strategy(np.random.default_rng(2), 2)
    assert obj.evaluate(st) == obj.evaluate(st)


def test_optimizer_determinism():
    a = optimize(small_objective("hybrid", E=2), starts=3, budget=200, seed=11)
    b = optimize(small_objective("hybrid", E=2), starts=3, budget=200, seed=11)
    assert a.to_dict() == b.to_dict()


def test_starts_required():
    with pytest.raises(ValueError):
        optimize(small_objective(), starts=0)


def test_warm_start_is_used():
    obj = small_objective("hybrid", E=2)
    warm = project(random_strategy(np.random.default_rng(0), 2, "random"), "hybrid")
    res = optimize(obj, starts=1, budget=100, seed=0, initial=[warm])
    assert [t.initial for t in res.traces] == ["midpoint", "warm"]


def test_project_to_class():
    st = random_strategy(np.random.default_rng(4), 3)
    r = project(st, "random")
    np.testing.assert_allclose(r.pi[0, 1:], st.pi[:, 1:].mean(axis=0))
    reactive = project(st, "reactive")
    assert not reactive.pi[[0, 3]].any()
    np.testing.assert_array_equal(reactive.pi[[1, 2]], st.pi[[1, 2]])


def test_restart_simplex_pulls_saturated_coordinates():
    S = restart_simplex(np.array([0.5, 15.0, -12.0]))
    assert S.shape == (4, 3)
    assert S[2, 1] == 1.0 and S[3, 2] == -1.0
    assert S[1, 0] == -1.5


def test_sweep_marks_failed_cells(monkeypatch):
    sc = Scenario(num_devices=10, battery_capacity=1, q01=0.05, q10=0.05, gamma0=0.3, gamma1=0.3)
    real = opt_mod.optimize

    def flaky(objective, **kw):
        if objective.strategy_class.value == "random":
            raise RuntimeError("boom")
        return real(objective, **kw)

    monkeypatch.setattr(opt_mod, "optimize", flaky)
    rows = evaluate_strategy_table([(0.5, sc), (1.0, sc)], starts=1, budget=60, model=ConstantError(0.1))
    assert [(r.total_rate, r.strategy_class) for r in rows] == [
        (0.5, "reactive"), (0.5, "random"), (0.5, "hybrid"),
        (1.0, "reactive"), (1.0, "random"), (1.0, "hybrid"),
    ]
    for r in rows:
        assert r.failed == (r.strategy_class == "random")
        if r.failed:
            assert "boom" in r.error and math.isnan(r.objective)
        else:
            assert math.isfinite(r.objective) and 0 <= r.mep <= 1


def test_sweep_rejects_empty_grid():
    with pytest.raises(ValueError):
        evaluate_strategy_table([])


def test_nested_warm_start_never_loses_to_subclasses():
    sc = Scenario(num_devices=10, battery_capacity=2, q01=0.05, q10=0.02, gamma0=0.3, gamma1=0.2)
    rows = {r.strategy_class: r for r in evaluate_strategy_table([(1.0, sc)], starts=1, budget=150, model=ConstantError(0.1))}
    assert not any(r.failed for r in rows.values())
    assert rows["hybrid"].objective <= min(rows["reactive"].objective, rows["random"].objective)


def test_sweep_keeps_cells_with_undefined_mep():
    # the reactive optimum here only ever reports rising edges, so the estimate
    # sticks at 1 and no critical period starts from a correct state 0
    sc = Scenario(num_devices=10, battery_capacity=2, q01=0.05, q10=0.02, gamma0=0.3, gamma1=0.2)
    row = evaluate_strategy_table([(1.0, sc)], classes=["reactive"], starts=1, budget=150, model=ConstantError(0.1))[0]
    assert not row.failed and math.isfinite(row.objective)
    assert math.isnan(row.mep) and row.note.startswith("mep undefined")
