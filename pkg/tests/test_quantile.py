import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uscx import quantile as q
from uscx.gev import GevParams

FAMILIES = {
    "uniform": q.Uniform(0.0, 1.0),
    "normal": q.Normal(1.0, 2.0),
    "exponential": q.Exponential(1.5),
    "gev": q.Gev(GevParams(0.3, 0.0, 1.0)),
    "uniform_union": q.UniformUnion(((0.0, 1.0), (2.0, 3.0))),
    "empirical": q.Empirical([1.0, 2.0, 2.0]),
    "point_mass": q.PointMass(1.5),
    "mixture": q.Mixture((q.Normal(-1.0, 1.0), q.PointMass(0.5)), (0.7, 0.3)),
}
ATOMLESS = ["uniform", "normal", "exponential", "gev", "uniform_union"]


def brute_force_quantile(cdf, p, grid):
    """sup{x in grid : F(x) <= p} with the infinite conventions."""
    ok = grid[np.asarray(cdf.cdf(grid)) <= p]
    if ok.size == 0:
        return -math.inf
    if ok[-1] == grid[-1]:
        return math.inf
    return float(ok[-1])


def test_uniform_quantile_examples():
    u = FAMILIES["uniform"]
    assert u.quantile(0.0) == 0.0
    assert u.quantile(0.3) == pytest.approx(0.3, abs=1e-15)
    assert u.quantile(1.0) == math.inf


def test_empirical_quantile_against_brute_force():
    e = FAMILIES["empirical"]
    grid = np.linspace(-1, 4, 50001)
    for p in [0.0, 0.2, 1 / 3, 0.5, 2 / 3, 0.9, 1.0]:
        bf = brute_force_quantile(e, p, grid)
        got = e.quantile(p)
        assert got == pytest.approx(bf, abs=2e-4) or (math.isinf(got) and got == bf)
    # frozen oracle values
    assert [e.quantile(p) for p in (0.0, 0.5, 1.0)] == [1.0, 2.0, math.inf]
    assert e.quantile(1 / 3) == 2.0


def test_point_mass_quantile():
    pm = FAMILIES["point_mass"]
    assert [pm.quantile(p) for p in (0.0, 0.4, 0.999)] == [1.5, 1.5, 1.5]
    assert pm.quantile(1.0) == math.inf


def test_quantile_rejects_bad_p():
    for fam in FAMILIES.values():
        with pytest.raises(ValueError):
            fam.quantile(1.1)
        with pytest.raises(ValueError):
            fam.quantile(-0.1)


def test_galois_examples():
    assert q.galois_check(FAMILIES["uniform"], 0.3, 0.3)
    assert q.galois_check(FAMILIES["empirical"], 2.0, 1 / 3)
    for fam in FAMILIES.values():
        assert q.galois_check(fam, -math.inf, 0.37)


@pytest.mark.parametrize("name", list(FAMILIES))
def test_galois_on_grid(name):
    fam = FAMILIES[name]
    lo, hi = {"uniform_union": (-0.5, 3.5), "empirical": (0.0, 3.0)}.get(name, (-4.0, 6.0))
    xs = list(np.linspace(lo, hi, 50)) + [-math.inf, math.inf] + list(fam.atoms)
    ps = list(np.linspace(0, 1, 50))
    assert all(q.galois_check(fam, x, p) for x in xs for p in ps)


@pytest.mark.parametrize("name", list(FAMILIES))
def test_monotone_right_continuous(name):
    fam = FAMILIES[name]
    ps = np.linspace(0, 0.99, 100)
    vals = np.asarray(fam.quantile(ps))
    assert (np.diff(vals) >= 0).all()
    for p in [0.1, 0.5, 1 / 3, 0.75]:
        base = fam.quantile(p)
        approach = fam.quantile(p + 1e-9)
        assert approach - base < 1e-5 * max(1.0, abs(base))


@pytest.mark.parametrize("name", ATOMLESS)
def test_quantile_inverts_cdf_inside_support(name):
    fam = FAMILIES[name]
    rng = np.random.default_rng(0)
    xs = fam.sample(rng, 500)
    back = np.asarray(fam.quantile(np.asarray(fam.cdf(xs))))
    assert np.max(np.abs(back - xs)) < 1e-9 * max(1.0, np.max(np.abs(xs)))


def test_pushforward_ks():
    band = q.ks_band(10 ** 5)
    assert band == pytest.approx(1.63 / math.sqrt(1e5))
    assert q.quantile_of_uniform_pushforward(q.RcQuantile(FAMILIES["uniform"]), 10 ** 5, 1) < 0.01
    assert q.quantile_of_uniform_pushforward(FAMILIES["empirical"], 10 ** 5, 2) < 0.01
    assert q.quantile_of_uniform_pushforward(FAMILIES["point_mass"], 10 ** 4, 3) == 0.0
    with pytest.raises(ValueError):
        q.quantile_of_uniform_pushforward(FAMILIES["uniform"], 999, 0)


def test_ks_distance_detects_wrong_law():
    rng = np.random.default_rng(5)
    assert q.ks_distance(rng.random(20000) ** 2, FAMILIES["uniform"]) > 0.2


def test_limsup_bound():
    u = FAMILIES["uniform"]
    assert q.limsup_quantile_bound([u, u], u)
    p = np.round(np.arange(100) * 0.01, 12)
    assert np.allclose(q.UniformMax(2).quantile(p), np.sqrt(p))
    assert q.limsup_quantile_bound([u, u], q.UniformMax(2))
    assert not q.limsup_quantile_bound([q.UniformMax(2)], u)
    assert q.limsup_quantile_bound([q.PointMass(1.0), q.PointMass(2.0)], q.PointMass(2.0))


def test_csv_and_dict_loading():
    e = q.empirical_from_csv("x\n1\n+inf\n2\n-inf\n")
    assert e.quantile(0.0) == -math.inf
    assert e.cdf(2.0) == 0.75
    for fam in FAMILIES.values():
        assert q.cdf_from_dict(fam.to_dict()).to_dict() == fam.to_dict()
    with pytest.raises(ValueError):
        q.cdf_from_dict({"family": "cauchy"})


def test_uniform_union_sampling_is_fair():
    rng = np.random.default_rng(1)
    x = FAMILIES["uniform_union"].sample(rng, 40000)
    assert abs(np.mean(x > 1.5) - 0.5) < 0.01
    assert FAMILIES["uniform_union"].quantile(0.5) == 2.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=20), st.floats(0, 1),
       st.floats(-101, 101))
def test_empirical_galois_property(sample, p, x):
    e = q.Empirical(sample)
    assert q.galois_check(e, x, p)
    # the quantile is attained by a sample point below 1
    if p < 1:
        assert e.quantile(p) in sample


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 5), st.floats(0.001, 0.999))
def test_normal_quantile_matches_closed_form(mu, sigma, p):
    from scipy.stats import norm
    assert q.Normal(mu, sigma).quantile(p) == pytest.approx(norm.ppf(p, mu, sigma), abs=1e-9)


def test_bisection_matches_closed_form():
    u = q.Uniform(0.0, 2.0)
    ps = np.linspace(0.01, 0.99, 7)
    assert np.allclose(q.bisect_quantile(u, ps), 2 * ps, atol=1e-11)
    assert q.bisect_quantile(u, 1.0) == math.inf
