"""Executable counterexamples for marginal standardization of usc processes.

Each :class:`GalleryEntry` pairs a scenario (an exact random usc
trajectory) with the pointwise transform that the standardization
procedure would apply to it. Estimators run the transform on realizations
drawn with seeds ``seed, seed + 1, ...`` and decide usc or hit events
exactly on the resulting trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import quantile as _q
from .gev import ConstantTheta, ExceptionalTheta, GevParams
from .scenario import (ExceptionPoint, Expr, Patch, Scenario, const, is_usc_trajectory,
                       realize, trajectories_differ, var)
from .transform import (CdfMap, Compose, ConstantFamily, GevStandardize, MarginalFamily,
                        PointExceptionFamily, PointwiseMap, QuantileMap, SplitFamily, apply)

ENTRY_IDS = ("atom", "lsc_margins", "b_not_necessary", "law_mismatch_1", "law_mismatch_2",
             "theta_discontinuous")


@dataclass(frozen=True)
class GalleryEntry:
    id: str
    scenario: Scenario
    transform: PointwiseMap
    description: str
    claim: str


class _ScaledUniformFamily(MarginalFamily):
    """``F_s`` uniform on ``[0, |s|]`` for ``s != 0`` and a point mass at 0 for ``s = 0``.

    The one-sided families at ``s = 0`` degenerate; they evaluate to NaN so
    that one-sided limits of transformed trajectories are taken numerically.
    """

    sections_usc = True
    atomless = False

    def at(self, s, side=0):
        s = float(np.atleast_1d(s)[0])
        if s == 0:
            if side:
                raise ValueError("no one-sided margin at 0")
            return _q.PointMass(0.0)
        return _q.Uniform(0.0, abs(s))

    def cdf(self, s, x, side=0):
        s = float(np.atleast_1d(s)[0])
        if s == 0:
            if side:
                return math.nan
            return 1.0 if x >= 0 else 0.0
        return min(max(x / abs(s), 0.0), 1.0)

    def breakpoints(self):
        return [0.0]


def _normal_mixture(s):
    # law of xi(s) for 0 < s <= 1: X - 1 with prob 1 - s, X with prob s
    return _q.Mixture((_q.Normal(-1.0, 1.0), _q.Normal(0.0, 1.0)), (1.0 - s, s))


def _op(name, *args):
    return Expr.parse({"op": name, "args": [a.to_dict() for a in args]})


def _entries() -> dict:
    X, Y, V = var("X"), var("Y"), var("V")
    unif = _q.Uniform(0.0, 1.0)
    out = {}

    s = Expr.parse("s")
    base = _op("add", _op("mul", _op("max", _op("neg", s), const(0)), X),
               _op("mul", _op("max", s, const(0)), Y))
    out["atom"] = GalleryEntry(
        "atom",
        Scenario((-1.0, 1.0), (("X", unif), ("Y", unif)), base),
        CdfMap(_ScaledUniformFamily()),
        "xi(s) = |s| X left of 0, s Y right of 0; the margin at 0 is a point mass",
        "Z(0) = 1 on every sample, so Z(0) is not uniform")

    out["lsc_margins"] = GalleryEntry(
        "lsc_margins",
        Scenario((0.0, 2.0), (("X", unif), ("Y", unif)), X,
                 (ExceptionPoint(const(1.0), _op("max", X, Y)),)),
        CdfMap(PointExceptionFamily(ConstantFamily(unif), {1.0: _q.UniformMax(2)},
                                    sections_usc=False)),
        "xi = X off s = 1 and X v Y at s = 1; margins x and x^2",
        "Z is not usc with probability 2/3")

    out["b_not_necessary"] = GalleryEntry(
        "b_not_necessary",
        Scenario((-1.0, 1.0), (("X", _q.Normal(0.0, 1.0)), ("V", unif)), X,
                 patches=(Patch(const(0.0), V, _op("sub", X, const(1.0)), (False, False)),)),
        CdfMap(SplitFamily([0.0], [lambda s: _q.Normal(0.0, 1.0), _normal_mixture],
                           closed_left=True, sections_usc=False, atomless=True)),
        "xi = X - 1 on (0, V) and X elsewhere, X standard normal",
        "Z is usc on every sample although s -> F_s(x) is not usc")

    out["law_mismatch_1"] = GalleryEntry(
        "law_mismatch_1",
        Scenario((0.0, 1.0), (("X", unif), ("Y", unif)), X,
                 (ExceptionPoint(Y, _op("add", X, const(1.0))),)),
        Compose(QuantileMap(ConstantFamily(unif)), CdfMap(ConstantFamily(unif))),
        "xi = X + 1(s = Y) mapped through Q_s(F_s(.)) with uniform margins",
        "hit probabilities of [0,1] x {x}, x > 2, are 0 for xi and 1 for the transform")

    union = _q.UniformUnion(((0.0, 1.0), (2.0, 3.0)))
    out["law_mismatch_2"] = GalleryEntry(
        "law_mismatch_2",
        Scenario((0.0, 1.0), (("X", union), ("Y", unif)), X,
                 (ExceptionPoint(Y, _op("max", X, const(1.5))),)),
        Compose(QuantileMap(ConstantFamily(union)), CdfMap(ConstantFamily(union))),
        "xi = X v 1.5 1(s = Y), X uniform on [0,1] u [2,3]",
        "hypographs of xi and its transform differ with probability 1/2")

    frechet = _q.unit_frechet()
    theta = ExceptionalTheta(ConstantTheta(GevParams(1.0, 1.0, 1.0)), {1.0: GevParams(1.0, 2.0, 2.0)})
    out["theta_discontinuous"] = GalleryEntry(
        "theta_discontinuous",
        Scenario((0.0, 2.0), (("X", frechet), ("Y", frechet)), X,
                 (ExceptionPoint(const(1.0), _op("max", X, Y)),)),
        GevStandardize(theta),
        "unit-Frechet X v (Y 1_{1}(s)) standardized with theta = (1,2,2) at s = 1",
        "xi* = X off 1 and (X v Y)/2 at 1; not usc whenever Y < 2X")
    return out


GALLERY = _entries()


def get_entry(entry) -> GalleryEntry:
    if isinstance(entry, GalleryEntry):
        return entry
    try:
        return GALLERY[entry]
    except KeyError:
        raise ValueError(f"unknown gallery entry {entry!r}; expected one of {ENTRY_IDS}") from None


def _halfwidth(p: float, n: int) -> float:
    return 1.96 * math.sqrt(max(p * (1.0 - p), 0.0) / n)


def estimate_nonusc_probability(entry, n_samples: int, seed: int):
    """Fraction of transformed realizations that are not usc, with a 95% half-width."""
    e = get_entry(entry)
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    bad = 0
    for i in range(n_samples):
        r = realize(e.scenario, seed + i)
        bad += not is_usc_trajectory(apply(e.transform, r))
    p = bad / n_samples
    return p, _halfwidth(p, n_samples)


def _check_mismatch(e):
    if e.id not in ("law_mismatch_1", "law_mismatch_2"):
        raise ValueError("capacity comparisons are defined for the law-mismatch entries only")


def capacities_differ(entry, probe, n_samples: int, seed: int):
    """Coupled hit probabilities ``(p_original, p_transformed)`` of ``probe``."""
    e = get_entry(entry)
    _check_mismatch(e)
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    hits = np.zeros(2, dtype=np.int64)
    for i in range(n_samples):
        r = realize(e.scenario, seed + i)
        hits += (r.hits(probe), apply(e.transform, r).hits(probe))
    return float(hits[0] / n_samples), float(hits[1] / n_samples)


def hypograph_difference_rate(entry, n_samples: int, seed: int):
    """Fraction of samples on which the original and transformed trajectories differ."""
    e = get_entry(entry)
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    diff = 0
    for i in range(n_samples):
        r = realize(e.scenario, seed + i)
        diff += trajectories_differ(r, apply(e.transform, r))
    p = diff / n_samples
    return p, _halfwidth(p, n_samples)


def event_frequency(entry, event, n_samples: int, seed: int) -> float:
    """Frequency of ``event(assignment)`` over the variable draws of ``entry``."""
    e = get_entry(entry)
    count = 0
    for i in range(n_samples):
        count += bool(event(realize(e.scenario, seed + i).assignment))
    return count / n_samples


def gallery_record(entry, n_samples: int, seed: int) -> dict:
    """JSON record ``{entry, n_samples, seed, estimate, halfwidth}`` with the entry's headline statistic."""
    e = get_entry(entry)
    if e.id in ("law_mismatch_2",):
        est, hw = hypograph_difference_rate(e, n_samples, seed)
        stat = "hypograph_difference_rate"
    elif e.id == "law_mismatch_1":
        from .grid import CompactProbe, ProbePart
        probe = CompactProbe((ProbePart(((0.0, 1.0),), 2.5),))
        p0, p1 = capacities_differ(e, probe, n_samples, seed)
        rec = {"entry": e.id, "n_samples": n_samples, "seed": seed, "estimate": p1 - p0,
               "halfwidth": 0.0, "statistic": "hit_probability_gap",
               "p_original": p0, "p_transformed": p1}
        return rec
    elif e.id == "atom":
        vals = [apply(e.transform, realize(e.scenario, seed + i))(0.0) for i in range(n_samples)]
        est, hw = float(np.mean(np.asarray(vals) == 1.0)), 0.0
        stat = "fraction_z0_equal_1"
    else:
        est, hw = estimate_nonusc_probability(e, n_samples, seed)
        stat = "nonusc_rate"
    return {"entry": e.id, "n_samples": n_samples, "seed": seed, "estimate": est,
            "halfwidth": hw, "statistic": stat}
