import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uscx import quantile as q
from uscx.gev import UNIT_FRECHET, AffineTheta, ConstantTheta, ExceptionalTheta, GevParams
from uscx.grid import CompactProbe, Domain
from uscx.maxstable import (ConstantOne, MaxStableSampler, PlateauModel, Storm, StoppingRuleStarved,
                            capacity_closed_form, capacity_empirical, check_simple_max_stability,
                            destandardized_max_stability, model_from_dict, simulate_batch,
                            simulate_simple, simulate_with_atoms, trajectory_from_atoms)
from uscx.scenario import is_usc_trajectory

D1 = Domain([(0.0, 1.0)], 101)
D2 = Domain([(0.0, 1.0), (0.0, 1.0)], (11, 11))
FRECHET = q.Gev(UNIT_FRECHET)


def storm_capacity(a, b, r, x):
    """Hit probability of ``[a, b] x {x}``: 1 - exp(-(b - a + 2r) / (2 r x))."""
    return 1.0 - math.exp(-(b - a + 2 * r) / (2 * r * x))


def probe(a, b, x):
    return CompactProbe([([(a, b)], x)])


# -- models -------------------------------------------------------------------------

def test_storm_mean():
    m = Storm(D1.bounds, 0.1, 2.0)
    assert m.f == pytest.approx(2.0 * 0.2 / 1.2)
    assert m.w_max == pytest.approx(1.2 / 0.2)
    m2 = Storm(D2.bounds, 0.2)
    assert m2.f == pytest.approx((0.4 / 1.4) ** 2)


def test_plateau_mean_matches_monte_carlo():
    m = PlateauModel(D1.bounds, [(0.05, 3.0), (0.2, 1.0)])
    rng = np.random.default_rng(0)
    P = m.draw(rng, 200000)
    V = m.w_nodes(P, np.array([[0.3], [0.9]])) * m.f
    assert np.allclose(V.mean(axis=0), m.f, rtol=0.02)


def test_model_from_dict():
    assert isinstance(model_from_dict({"family": "constant_one"}, D1), ConstantOne)
    s = model_from_dict({"family": "storm", "r": 0.1}, D1)
    assert model_from_dict(s.to_dict(), D1).to_dict() == s.to_dict()
    p = model_from_dict({"family": "staircase", "steps": [[0.1, 1], [0.3, 0.5]]}, D1)
    assert p.steps == ((0.1, 1.0), (0.3, 0.5))
    with pytest.raises(ValueError, match="radius"):
        model_from_dict({"family": "storm"}, D1)
    with pytest.raises(ValueError, match="steps"):
        model_from_dict({"family": "staircase"}, D1)
    with pytest.raises(ValueError):
        model_from_dict({"family": "brown_resnick"}, D1)
    with pytest.raises(ValueError):
        PlateauModel(D1.bounds, [(0.1, -1.0)])
    with pytest.raises(ValueError):
        MaxStableSampler(Storm([(0.0, 2.0)], 0.1), D1)


# -- simulation ------------------------------------------------------------------------

def test_constant_one_field_is_constant_frechet():
    s = MaxStableSampler(ConstantOne(D1.bounds), D1)
    fields, atoms = simulate_batch(s, 20000, 3)
    assert (fields == fields[:, :1]).all()
    assert (atoms == 1).all()
    assert q.ks_distance(fields[:, 0], FRECHET) < q.ks_band(20000)
    # the first Poisson point 1/E is the whole field
    rng = np.random.Generator(np.random.Philox(key=3))
    assert fields[0, 0] == pytest.approx(1.0 / rng.standard_exponential(64)[0], rel=1e-15)


@pytest.mark.parametrize("model,domain", [(Storm(D1.bounds, 0.1), D1),
                                          (Storm(D2.bounds, 0.2), D2),
                                          (PlateauModel(D1.bounds, [(0.05, 2.0), (0.15, 1.0)]), D1)])
def test_margins_unit_frechet(model, domain):
    s = MaxStableSampler(model, domain)
    n = 20000 if domain.dim == 1 else 8000
    fields, _ = simulate_batch(s, n, 17)
    for j in [0, domain.size // 2, domain.size - 1]:
        assert q.ks_distance(fields[:, j], FRECHET) < q.ks_band(n)


def test_simulation_is_exact_poisson_max():
    model = Storm(D1.bounds, 0.1)
    s = MaxStableSampler(model, D1)
    field, atoms = simulate_with_atoms(s, 42)
    Y = np.array([y for y, _ in atoms])
    assert (np.diff(Y) < 0).all()
    P = np.array([p for _, p in atoms])
    direct = (Y[:, None] * model.w_nodes(P, s.coords)).max(axis=0)
    assert np.array_equal(direct, field.values)
    # the next atom could not have changed the field
    assert Y[-1] * model.w_max >= field.values.min() or len(atoms) == 1
    assert field == simulate_simple(s, 42)


def test_determinism_and_blocking():
    s = MaxStableSampler(Storm(D1.bounds, 0.1), D1)
    a, ca = simulate_batch(s, 300, 5)
    b, cb = simulate_batch(s, 300, 5, block=7)
    assert np.array_equal(a, b) and np.array_equal(ca, cb)
    c, _ = simulate_batch(s, 300, 6)
    assert np.array_equal(a[1:], c[:-1])


def test_threads_do_not_change_results():
    s = MaxStableSampler(Storm(D1.bounds, 0.1), D1)
    a, ca = simulate_batch(s, 1200, 9, threads=1)
    b, cb = simulate_batch(s, 1200, 9, threads=2)
    assert np.array_equal(a, b) and np.array_equal(ca, cb)


def test_atom_counts_and_starvation():
    s = MaxStableSampler(Storm(D2.bounds, 0.1), D2)
    _, counts = simulate_batch(s, 500, 1)
    assert counts.max() < 10 ** 6
    assert counts.min() >= 1
    tiny = MaxStableSampler(Storm(D2.bounds, 0.05), D2, atom_budget=5)
    with pytest.raises(StoppingRuleStarved, match="stopping rule starved"):
        simulate_batch(tiny, 10, 1)


def test_trajectory_from_atoms():
    model = Storm(D1.bounds, 0.1)
    s = MaxStableSampler(model, D1)
    for seed in range(20):
        field, atoms = simulate_with_atoms(s, seed)
        r = trajectory_from_atoms(model, atoms)
        assert is_usc_trajectory(r)
        assert len(r.cuts) > 2
        nodes = D1.axes()[0]
        assert np.allclose([r(x) for x in nodes], field.values, rtol=0, atol=0)
    with pytest.raises(ValueError):
        trajectory_from_atoms(Storm(D2.bounds, 0.1), atoms)


# -- capacities ------------------------------------------------------------------------

SETTINGS = [(0.2, 0.5, 0.1, 2.0), (0.3, 0.3, 0.1, 1.5), (0.0, 1.0, 0.05, 5.0),
            (0.4, 0.6, 0.2, 0.8), (0.5, 0.5, 0.3, 0.5), (0.1, 0.9, 0.1, 3.0)]


@pytest.mark.parametrize("a,b,r,x", SETTINGS)
def test_storm_closed_form(a, b, r, x):
    got = 1.0 - capacity_closed_form(Storm(D1.bounds, r), probe(a, b, x))
    assert got == pytest.approx(storm_capacity(a, b, r, x), abs=1e-12)
    if a == b:
        assert 1.0 - got == pytest.approx(math.exp(-1.0 / x), abs=1e-12)


def test_closed_form_matches_expectation_monte_carlo():
    m = PlateauModel(D2.bounds, [(0.05, 3.0), (0.2, 1.0)])
    pr = CompactProbe([([(0.1, 0.3), (0.2, 0.6)], 2.0), ([(0.7, 0.9), (0.0, 1.0)], 4.0)])
    exact = capacity_closed_form(m, pr)
    mc = capacity_closed_form(m, pr, n_expectation_samples=400000, seed=1, method="monte_carlo")
    assert mc == pytest.approx(exact, abs=0.003)
    # independent brute force: integrate the miss exponent over a fine grid of centers
    u = np.linspace(m.u_bounds[0][0], m.u_bounds[0][1], 801)
    uu = np.stack(np.meshgrid(u, u, indexing="ij"), axis=-1).reshape(-1, 2)
    vals = np.maximum(m.w_box_sup(uu, [(0.1, 0.3), (0.2, 0.6)]) / 2.0,
                      m.w_box_sup(uu, [(0.7, 0.9), (0.0, 1.0)]) / 4.0)
    assert math.exp(-vals.mean()) == pytest.approx(exact, abs=0.003)


def test_closed_form_edge_cases():
    m = Storm(D1.bounds, 0.1)
    assert capacity_closed_form(m, probe(0.2, 0.4, 0.0)) == 0.0
    assert capacity_closed_form(m, probe(0.2, 0.4, -1.0)) == 0.0
    assert capacity_closed_form(m, probe(0.2, 0.4, math.inf)) == 1.0
    assert capacity_closed_form(ConstantOne(D1.bounds), probe(0.0, 1.0, 2.0)) == pytest.approx(
        math.exp(-0.5))
    with pytest.raises(ValueError):
        capacity_closed_form(m, probe(0.2, 0.4, 1.0), method="magic")


@pytest.mark.parametrize("a,b,r,x", SETTINGS[:3])
def test_capacity_empirical_vs_closed_form(a, b, r, x):
    s = MaxStableSampler(Storm(D1.bounds, r), D1)
    p, hw, atoms = capacity_empirical(s, probe(a, b, x), 8000, 100)
    target = storm_capacity(a, b, r, x)
    assert abs(p - target) < 3 * math.sqrt(target * (1 - target) / 8000)
    assert hw == pytest.approx(1.96 * math.sqrt(p * (1 - p) / 8000))
    assert atoms >= 1
    with pytest.raises(ValueError):
        capacity_empirical(s, probe(a, b, x), 50, 0)


def test_hits_are_monotone_in_level():
    s = MaxStableSampler(Storm(D1.bounds, 0.1), D1)
    fields, _ = simulate_batch(s, 2000, 4)
    part = D1.box_mask([(0.2, 0.5)]).reshape(-1)
    sup = fields[:, part].max(axis=1)
    prev = np.ones(len(sup), dtype=bool)
    for x in [0.1, 0.5, 1.0, 2.0, 10.0]:
        now = sup >= x
        assert not (now & ~prev).any()
        prev = now


# -- max-stability --------------------------------------------------------------------

def test_max_stability_n1_is_exact():
    s = MaxStableSampler(Storm(D1.bounds, 0.1), D1)
    rep = check_simple_max_stability(s, 1, [probe(0.2, 0.5, 2.0)], 500, 0)
    r = rep["results"][0]
    assert r["p_maxfold"] == r["p_scaled"] and r["z_score"] == 0.0
    assert r["miss_pow"] == r["miss_scaled"] and r["product_z"] == 0.0
    assert rep["passed"]


def test_max_stability_small_sample():
    s = MaxStableSampler(Storm(D1.bounds, 0.1), D1)
    probes = [probe(0.2, 0.5, 2.0), CompactProbe([([(0.0, 0.1)], 1.0), ([(0.8, 1.0)], 3.0)])]
    rep = check_simple_max_stability(s, 3, probes, 4000, 21)
    assert rep["passed"], rep
    assert rep["n_samples"] == 4000 and rep["seed"] == 21


def test_max_stability_detects_wrong_scaling():
    # a constant field that is not max-stable: compare against a non-stable surrogate
    s = MaxStableSampler(ConstantOne(D1.bounds), D1)
    rep = check_simple_max_stability(s, 2, [probe(0.0, 1.0, 1.0)], 4000, 2)
    assert rep["passed"]
    fields, _ = simulate_batch(s, 8000, 2)
    # sqrt of a Frechet field is not simple max-stable
    root = np.sqrt(fields).reshape(4000, 2, -1)
    p_max = np.mean(root.max(axis=1)[:, 0] >= 1.5)
    p_scaled = np.mean(2 * root[:, 0, 0] >= 1.5)
    assert abs(p_max - p_scaled) > 0.1


def test_destandardized_max_stability():
    s = MaxStableSampler(Storm(D1.bounds, 0.1), D1)
    theta = AffineTheta(GevParams(0.1, 0.0, 1.0), [(0.2, 1.0, 0.5)], bounds=[(0.0, 1.0)])
    rep = destandardized_max_stability(s, theta, 2, [probe(0.2, 0.5, 2.0)], 4000, 8)
    assert rep["passed"], rep
    exc = ExceptionalTheta(ConstantTheta(UNIT_FRECHET), {0.5: GevParams(1.0, 2.0, 2.0)})
    with pytest.raises(ValueError, match="continuous"):
        destandardized_max_stability(s, exc, 2, [probe(0.2, 0.5, 2.0)], 100, 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.9), st.floats(0.0, 0.1), st.floats(0.02, 0.5), st.floats(0.1, 10.0))
def test_storm_closed_form_property(a, width, r, x):
    b = a + width
    m = Storm(D1.bounds, r)
    miss = capacity_closed_form(m, probe(a, b, x))
    assert 1 - miss == pytest.approx(storm_capacity(a, b, r, x), abs=1e-12)
    # union with a higher-level copy of the same box changes nothing
    both = CompactProbe([([(a, b)], x), ([(a, b)], 2 * x)])
    assert capacity_closed_form(m, both) == pytest.approx(miss, abs=1e-14)
