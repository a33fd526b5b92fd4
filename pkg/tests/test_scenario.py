import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from uscx import gallery as g
from uscx import quantile as q
from uscx.grid import CompactProbe, Domain
from uscx.scenario import (ExceptionPoint, Expr, Patch, Realization, Scenario, ScenarioError,
                           Segment, const, is_usc_trajectory, realize, realize_with,
                           trajectories_differ, usc_violations, var)
from uscx.transform import apply

UNIF = q.Uniform(0.0, 1.0)


def _op(name, *args):
    return Expr.parse({"op": name, "args": [a.to_dict() for a in args]})


def simple(exc_value=None, loc=1.0):
    exceptions = () if exc_value is None else (ExceptionPoint(const(loc), exc_value),)
    return Scenario((0.0, 2.0), (("X", UNIF), ("Y", UNIF)), var("X"), exceptions)


# -- oracles -------------------------------------------------------------------

def test_oracle_lsc_margins_two_thirds():
    val, _ = integrate.quad(math.sqrt, 0, 1)
    assert val == pytest.approx(2 / 3, abs=1e-12)
    rng = np.random.default_rng(2024)
    x, y = rng.random(10 ** 6), rng.random(10 ** 6)
    assert abs(np.mean(y ** 2 < x) - 2 / 3) < 0.003


def test_oracle_frechet_window_one_sixth():
    val, _ = integrate.quad(lambda u: math.exp(-u) * (math.exp(-u / 2) - math.exp(-u)), 0, math.inf)
    assert val == pytest.approx(1 / 6, abs=1e-12)
    rng = np.random.default_rng(99)
    x = -1 / np.log(rng.random(10 ** 6))
    y = -1 / np.log(rng.random(10 ** 6))
    assert abs(np.mean((x < y) & (y < 2 * x)) - 1 / 6) < 0.002
    # the full non-usc event of the standardized field is {(X v Y)/2 < X} = {Y < 2X}
    assert abs(np.mean(y < 2 * x) - 2 / 3) < 0.003


# -- expressions and realizations ---------------------------------------------

def test_expression_grammar():
    e = Expr.parse({"op": "add", "args": [{"var": "X"}, {"op": "mul", "args": ["s", 2.0]}]})
    assert e.uses_s and e.variables == frozenset({"X"})
    assert e.eval(0.5, {"X": 1.0}) == 2.0
    assert Expr.parse(e.to_dict()).eval(0.25, {"X": 0.0}) == 0.5
    with pytest.raises((ValueError, ScenarioError)):
        Expr.parse({"op": "floor", "args": ["s"]})
    with pytest.raises((ValueError, ScenarioError, KeyError)):
        Expr.parse({"code": "import os"})


def test_realize_deterministic():
    sc = Scenario((0.0, 1.0), (("X", UNIF),), var("X"))
    assert realize(sc, 11).assignment == realize(sc, 11).assignment
    assert realize(sc, 11).assignment != realize(sc, 12).assignment


def test_unknown_distribution():
    with pytest.raises(ScenarioError):
        Scenario.from_dict({"domain": [0, 1], "variables": [{"name": "X", "family": "cauchy"}],
                            "base": {"var": "X"}})


def test_scenario_json_round_trip():
    sc = g.GALLERY["b_not_necessary"].scenario
    back = Scenario.from_dict(sc.to_dict())
    for seed in range(5):
        r1, r2 = realize(sc, seed), realize(back, seed)
        assert not trajectories_differ(r1, r2)


def test_usc_examples():
    ex = simple(_op("max", var("X"), var("Y")))
    for seed in range(50):
        assert is_usc_trajectory(realize(ex, seed))
    sq = simple(_op("square", _op("max", var("X"), var("Y"))))
    for seed in range(200):
        r = realize(sq, seed)
        x, y = r.assignment["X"], r.assignment["Y"]
        assert is_usc_trajectory(r) == (not max(x, y) ** 2 < x)
    assert is_usc_trajectory(realize(simple(), 3))


def test_usc_violation_reports_witness():
    sc = simple(_op("sub", var("X"), const(0.5)))
    r = realize(sc, 0)
    assert not is_usc_trajectory(r)
    (s0, v, lim), = usc_violations(r)
    assert s0 == 1.0 and v == pytest.approx(lim - 0.5)


def test_coincident_exceptions_are_degenerate():
    sc = Scenario((0.0, 1.0), (("X", UNIF),), const(0.0),
                  (ExceptionPoint(var("X"), const(1.0)), ExceptionPoint(var("X"), const(2.0))))
    with pytest.raises(ScenarioError, match="degenerate scenario draw"):
        realize(sc, 0)


def test_exception_equal_to_base_is_neutral():
    for seed in range(30):
        plain = realize(simple(), seed)
        same = realize_with(simple(var("X")), plain.assignment)
        assert is_usc_trajectory(same) == is_usc_trajectory(plain)


def test_realization_sup_and_hits():
    r = realize(simple(const(5.0)), 1)
    assert r.sup_on(0.0, 2.0) == 5.0
    assert r.sup_on(0.0, 0.9) == pytest.approx(r.assignment["X"])
    assert r.hits(CompactProbe([([(0.5, 1.5)], 4.0)]))
    assert not r.hits(CompactProbe([([(0.0, 0.5)], 4.0)]))
    grid = r.to_grid(Domain([(0.0, 2.0)], 5))
    assert grid.values[2] == 5.0


def test_patch_open_and_closed():
    sc = Scenario((0.0, 1.0), (("V", UNIF),), const(0.0),
                  patches=(Patch(const(0.25), const(0.75), const(1.0), (True, False)),))
    r = realize(sc, 0)
    assert r(0.25) == 1.0 and r(0.75) == 0.0 and r(0.5) == 1.0
    assert not is_usc_trajectory(r)  # the open right end is a usc failure
    sc2 = Scenario((0.0, 1.0), (("V", UNIF),), const(0.0),
                   patches=(Patch(const(0.25), const(0.75), const(1.0), (True, True)),))
    assert is_usc_trajectory(realize(sc2, 0))


def test_segment_limit_removable_singularity():
    seg = Segment(lambda s, side=0: math.nan if s == 0 else math.sin(s) / s)
    assert seg.limit(0.0, +1, 1.0) == pytest.approx(1.0)
    r = Realization([0.0, 1.0], [1.0, math.sin(1.0)], [seg])
    assert is_usc_trajectory(r)


# -- gallery ---------------------------------------------------------------------

def test_gallery_ids():
    assert set(g.GALLERY) == set(g.ENTRY_IDS)
    assert len(g.ENTRY_IDS) == 6
    with pytest.raises(ValueError):
        g.get_entry("nope")


@pytest.mark.parametrize("entry", g.ENTRY_IDS)
def test_untransformed_scenarios_are_usc(entry):
    sc = g.GALLERY[entry].scenario
    assert all(is_usc_trajectory(realize(sc, s)) for s in range(300))


def test_lsc_margins_small_sample():
    est, hw = g.estimate_nonusc_probability("lsc_margins", 3000, 5)
    assert abs(est - 2 / 3) < 3 * hw


def test_theta_discontinuous_rates():
    est, hw = g.estimate_nonusc_probability("theta_discontinuous", 3000, 5)
    assert abs(est - 2 / 3) < 3 * hw
    window = g.event_frequency("theta_discontinuous", lambda a: a["X"] < a["Y"] < 2 * a["X"], 3000, 5)
    assert abs(window - 1 / 6) < 0.03


def test_theta_discontinuous_standardized_value():
    e = g.GALLERY["theta_discontinuous"]
    for seed in range(20):
        r = realize(e.scenario, seed)
        z = apply(e.transform, r)
        x, y = r.assignment["X"], r.assignment["Y"]
        assert z(1.0) == pytest.approx(max(x, y) / 2, rel=1e-12)
        assert z(0.5) == pytest.approx(x, rel=1e-12)
        assert is_usc_trajectory(z) == (not y < 2 * x)


def test_b_not_necessary_always_usc():
    est, hw = g.estimate_nonusc_probability("b_not_necessary", 1000, 3)
    assert est == 0.0 and hw == 0.0


def test_atom_margin_at_zero():
    e = g.GALLERY["atom"]
    for seed in range(200):
        r = realize(e.scenario, seed)
        z = apply(e.transform, r)
        assert z(0.0) == 1.0
        assert is_usc_trajectory(z)
        assert z(-0.5) == pytest.approx(r.assignment["X"])
        assert z(0.5) == pytest.approx(r.assignment["Y"])
    assert g.gallery_record("atom", 100, 0)["estimate"] == 1.0


def test_law_mismatch_1_capacities():
    probe = CompactProbe([([(0.0, 1.0)], 2.5)])
    assert g.capacities_differ("law_mismatch_1", probe, 500, 0) == (0.0, 1.0)
    low = CompactProbe([([(0.0, 1.0)], -1e300)])
    assert g.capacities_differ("law_mismatch_1", low, 200, 0) == (1.0, 1.0)
    assert g.capacities_differ("law_mismatch_2", low, 200, 0) == (1.0, 1.0)
    with pytest.raises(ValueError):
        g.capacities_differ("lsc_margins", probe, 10, 0)


def test_law_mismatch_1_coupled_domination():
    e = g.GALLERY["law_mismatch_1"]
    for seed in range(100):
        r = realize(e.scenario, seed)
        t = apply(e.transform, r)
        for c in r.cuts:
            assert t(c) >= r(c)
        assert t(r.assignment["Y"]) == math.inf


def test_law_mismatch_2_difference_rate():
    est, hw = g.hypograph_difference_rate("law_mismatch_2", 3000, 8)
    assert abs(est - 0.5) < 3 * hw


def test_estimates_are_deterministic():
    assert g.estimate_nonusc_probability("lsc_margins", 200, 1) == \
        g.estimate_nonusc_probability("lsc_margins", 200, 1)
    with pytest.raises(ValueError):
        g.estimate_nonusc_probability("lsc_margins", 99, 1)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(-2.0, 2.0))
def test_usc_decision_matches_direct_comparison(x, y, shift):
    sc = simple(_op("add", _op("max", var("X"), var("Y")), const(shift)))
    r = realize_with(sc, {"X": x, "Y": y})
    assert is_usc_trajectory(r) == (max(x, y) + shift >= x or
                                    max(x, y) + shift >= x - 1e-12 * max(1.0, abs(x)))
