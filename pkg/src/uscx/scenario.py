"""Exact symbolic usc trajectories on an interval.

A :class:`Scenario` describes a random trajectory on ``[lo, hi]`` by

* named random variables (distribution families from :mod:`uscx.quantile`),
* a base expression, continuous in ``s`` by construction of the grammar,
* optional patches overriding the base on (half-)open or closed intervals
  with random endpoints,
* finitely many exceptional points with their own values.

A realized trajectory is therefore piecewise continuous: a sorted list of
cut points carrying point values, with a continuous segment function
between consecutive cuts. Upper semicontinuity is decided at the cuts
alone: each point value must dominate the one-sided limits of its two
neighboring segments. Comparisons allow a relative rounding slack of
``ROUNDING`` and nothing more.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .grid import Domain, GridField, parse_ext
from .quantile import RcCdf, cdf_from_dict

ROUNDING = 1e-12


class ScenarioError(ValueError):
    pass


# -- expression grammar ----------------------------------------------------

def _floatify(v):
    return float(v) if np.ndim(v) == 0 else v


_UNARY = {
    "neg": lambda a: -a,
    "abs": np.abs,
    "exp": np.exp,
    "sqrt": lambda a: np.sqrt(np.maximum(a, 0.0)),
    "square": lambda a: a * a,
    "pos": lambda a: np.maximum(a, 0.0),
    "norm_cdf": ndtr,
    "log": lambda a: np.log(a),
}
_NARY = {
    "add": lambda args: sum(args[1:], args[0]),
    "mul": lambda args: math.prod(args[1:], start=args[0]),
    "sub": lambda args: args[0] - args[1],
    "min": lambda args: _reduce(np.minimum, args),
    "max": lambda args: _reduce(np.maximum, args),
}


def _reduce(fn, args):
    out = args[0]
    for a in args[1:]:
        out = fn(out, a)
    return out


class Expr:
    """Node of the continuity-preserving expression grammar."""

    def eval(self, s, env: dict):
        raise NotImplementedError

    @property
    def uses_s(self) -> bool:
        return False

    @property
    def variables(self) -> frozenset:
        return frozenset()

    @staticmethod
    def parse(obj) -> "Expr":
        """Build from JSON: numbers, "s"/"s1"/"s2", ``{"var": n}``, ``{"op": f, "args": [...]}``."""
        if isinstance(obj, Expr):
            return obj
        if isinstance(obj, (int, float)) and not isinstance(obj, bool):
            return Const(float(obj))
        if isinstance(obj, str):
            if obj in ("s", "s1"):
                return S(0)
            if obj == "s2":
                return S(1)
            try:
                return Const(parse_ext(obj))
            except ValueError:
                raise ScenarioError(f"unknown expression token {obj!r}") from None
        if isinstance(obj, dict):
            if "const" in obj:
                return Const(parse_ext(obj["const"]))
            if "var" in obj:
                return Var(str(obj["var"]))
            if "op" in obj:
                return Op(obj["op"], tuple(Expr.parse(a) for a in obj["args"]))
        raise ScenarioError(f"cannot parse expression {obj!r}")


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def eval(self, s, env):
        return self.value

    def to_dict(self):
        return self.value if math.isfinite(self.value) else {"const": "+inf" if self.value > 0 else "-inf"}


@dataclass(frozen=True)
class S(Expr):
    axis: int = 0

    def eval(self, s, env):
        if isinstance(s, tuple):
            return s[self.axis]
        if self.axis:
            raise ScenarioError("second coordinate requested on a 1-D point")
        return s

    @property
    def uses_s(self):
        return True

    def to_dict(self):
        return "s" if self.axis == 0 else "s2"


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def eval(self, s, env):
        try:
            return env[self.name]
        except KeyError:
            raise ScenarioError(f"unbound variable {self.name!r}") from None

    @property
    def variables(self):
        return frozenset([self.name])

    def to_dict(self):
        return {"var": self.name}


@dataclass(frozen=True)
class Op(Expr):
    name: str
    args: tuple

    def __post_init__(self):
        if self.name in _UNARY:
            if len(self.args) != 1:
                raise ScenarioError(f"{self.name} takes one argument")
        elif self.name in _NARY:
            need = 2 if self.name == "sub" else None
            if (need and len(self.args) != need) or not self.args:
                raise ScenarioError(f"bad arity for {self.name}")
        else:
            raise ScenarioError(f"{self.name!r} is not a continuity-preserving constructor")

    def eval(self, s, env):
        vals = [a.eval(s, env) for a in self.args]
        if self.name in _UNARY:
            return _floatify(_UNARY[self.name](vals[0]))
        return _floatify(_NARY[self.name](vals))

    @property
    def uses_s(self):
        return any(a.uses_s for a in self.args)

    @property
    def variables(self):
        return frozenset().union(*(a.variables for a in self.args))

    def to_dict(self):
        return {"op": self.name, "args": [a.to_dict() for a in self.args]}


def var(name):
    return Var(name)


def const(v):
    return Const(float(v))


# -- scenario --------------------------------------------------------------

@dataclass(frozen=True)
class ExceptionPoint:
    location: Expr
    value: Expr


@dataclass(frozen=True)
class Patch:
    """``value`` replaces the base on the interval between ``lo`` and ``hi``."""

    lo: Expr
    hi: Expr
    value: Expr
    closed: tuple = (False, False)

    def contains(self, s, lo, hi) -> bool:
        left = s >= lo if self.closed[0] else s > lo
        right = s <= hi if self.closed[1] else s < hi
        return left and right


@dataclass(frozen=True)
class Scenario:
    domain: tuple
    variables: tuple  # ((name, RcCdf), ...) in draw order
    base: Expr
    exceptions: tuple = ()
    patches: tuple = ()

    def __post_init__(self):
        lo, hi = (float(v) for v in self.domain)
        if not lo < hi:
            raise ScenarioError("scenario domain must be a nondegenerate interval")
        object.__setattr__(self, "domain", (lo, hi))
        names = [n for n, _ in self.variables]
        if len(set(names)) != len(names):
            raise ScenarioError("duplicate variable names")
        for n, dist in self.variables:
            if not isinstance(dist, RcCdf):
                raise ScenarioError(f"variable {n!r} needs a supported distribution")
        for e in self.exceptions:
            if e.location.uses_s:
                raise ScenarioError("exception locations may not depend on s")
        for p in self.patches:
            if p.lo.uses_s or p.hi.uses_s:
                raise ScenarioError("patch endpoints may not depend on s")

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        variables = []
        for item in d["variables"]:
            spec = dict(item)
            name = spec.pop("name")
            try:
                variables.append((name, cdf_from_dict(spec)))
            except (KeyError, ValueError) as exc:
                raise ScenarioError(f"unsupported distribution for {name!r}: {exc}") from None
        exceptions = tuple(ExceptionPoint(Expr.parse(e["location"]), Expr.parse(e["value"]))
                           for e in d.get("exceptions", []))
        patches = tuple(Patch(Expr.parse(p["lo"]), Expr.parse(p["hi"]), Expr.parse(p["value"]),
                              tuple(p.get("closed", (False, False))))
                        for p in d.get("patches", []))
        return cls(tuple(d["domain"]), tuple(variables), Expr.parse(d["base"]), exceptions, patches)

    def to_dict(self) -> dict:
        out = {"domain": list(self.domain),
               "variables": [dict(name=n, **dist.to_dict()) for n, dist in self.variables],
               "base": self.base.to_dict()}
        if self.exceptions:
            out["exceptions"] = [{"location": e.location.to_dict(), "value": e.value.to_dict()}
                                 for e in self.exceptions]
        if self.patches:
            out["patches"] = [{"lo": p.lo.to_dict(), "hi": p.hi.to_dict(), "value": p.value.to_dict(),
                               "closed": list(p.closed)} for p in self.patches]
        return out


# -- realizations ----------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    """Continuous function on the closure of an open interval between two cuts.

    ``fn(s, side)`` evaluates at ``s``; ``side`` (-1/+1) picks the branch of
    any piecewise ingredient active just left/right of ``s``. ``constant``
    marks functions that do not depend on ``s``.
    """

    fn: Callable
    constant: bool = False

    def at(self, s, side=0):
        return self.fn(s, side)

    def limit(self, c: float, side: int, width: float) -> float:
        """One-sided limit at the endpoint ``c`` approached from ``side`` (+1: from the right)."""
        v = self.fn(c, side)
        if not math.isnan(v):
            return float(v)
        # removable singularity: approach numerically
        last = v
        for k in (20, 30, 40, 48):
            w = self.fn(c + side * width * 2.0 ** -k, 0)
            if not math.isnan(w):
                last = w
        if math.isnan(last):
            raise ScenarioError(f"segment has no limit at {c}")
        return float(last)


class Realization:
    """One trajectory: sorted cuts with point values and segments in between."""

    def __init__(self, cuts, values, segments, assignment=None, usc_safe=True):
        self.cuts = tuple(float(c) for c in cuts)
        self.values = tuple(float(v) for v in values)
        self.segments = tuple(segments)
        self.assignment = dict(assignment or {})
        self.usc_safe = usc_safe
        if len(self.values) != len(self.cuts) or len(self.segments) != len(self.cuts) - 1:
            raise ScenarioError("inconsistent realization layout")
        for a, b in zip(self.cuts, self.cuts[1:]):
            if not a < b:
                raise ScenarioError("degenerate scenario draw")
        for v in self.values:
            if math.isnan(v):
                raise ScenarioError("NaN trajectory value")

    @property
    def domain(self):
        return self.cuts[0], self.cuts[-1]

    def segment_index(self, s: float) -> int:
        import bisect
        k = bisect.bisect_right(self.cuts, s) - 1
        return min(max(k, 0), len(self.segments) - 1)

    def __call__(self, s: float) -> float:
        s = float(s)
        lo, hi = self.domain
        if not lo <= s <= hi:
            raise ValueError(f"{s} outside the domain")
        k = self.segment_index(s)
        if s == self.cuts[k]:
            return self.values[k]
        if s == self.cuts[k + 1]:
            return self.values[k + 1]
        return float(self.segments[k].at(s))

    def left_limit(self, k: int) -> float:
        a, b = self.cuts[k - 1], self.cuts[k]
        return self.segments[k - 1].limit(b, -1, b - a)

    def right_limit(self, k: int) -> float:
        a, b = self.cuts[k], self.cuts[k + 1]
        return self.segments[k].limit(a, +1, b - a)

    def sup_on(self, a: float, b: float, n_interior: int = 63) -> float:
        """Supremum over the closed interval ``[a, b]``.

        Exact when the segments meeting ``[a, b]`` are constant in ``s``;
        otherwise the segment part is sampled at ``n_interior`` points plus
        the endpoint limits.
        """
        lo, hi = self.domain
        a, b = max(a, lo), min(b, hi)
        if a > b:
            raise ValueError("empty interval")
        if a == b:
            return self(a)
        best = -math.inf
        for c, v in zip(self.cuts, self.values):
            if a <= c <= b:
                best = max(best, v)
        for k, seg in enumerate(self.segments):
            u, w = max(self.cuts[k], a), min(self.cuts[k + 1], b)
            if not u < w:
                continue
            if seg.constant:
                best = max(best, seg.limit(self.cuts[k], +1, self.cuts[k + 1] - self.cuts[k]))
                continue
            pts = [seg.limit(u, +1, w - u) if u == self.cuts[k] else seg.at(u),
                   seg.limit(w, -1, w - u) if w == self.cuts[k + 1] else seg.at(w)]
            pts += [seg.at(t) for t in np.linspace(u, w, n_interior + 2)[1:-1]]
            best = max(best, max(pts))
        return best

    def hits(self, probe) -> bool:
        return any(self.sup_on(p.box[0][0], p.box[0][1]) >= p.level for p in probe.parts)

    def to_grid(self, domain: Domain) -> GridField:
        if domain.dim != 1:
            raise ValueError("scenario trajectories live on 1-D domains")
        return GridField(domain, [self(s) for s in domain.axes()[0]])


def _at_least(v: float, lim: float) -> bool:
    if v >= lim:
        return True
    if math.isinf(lim) or math.isinf(v):
        return False
    return v >= lim - ROUNDING * max(1.0, abs(lim))


def is_usc_trajectory(r: Realization) -> bool:
    """Exact usc decision: every cut value dominates both adjacent segment limits."""
    for k in range(len(r.cuts)):
        v = r.values[k]
        if k > 0 and not _at_least(v, r.left_limit(k)):
            return False
        if k < len(r.cuts) - 1 and not _at_least(v, r.right_limit(k)):
            return False
    return True


def usc_violations(r: Realization) -> list:
    """Cuts where the trajectory fails upper semicontinuity, as ``(s, value, limsup)``."""
    out = []
    for k in range(len(r.cuts)):
        lims = []
        if k > 0:
            lims.append(r.left_limit(k))
        if k < len(r.cuts) - 1:
            lims.append(r.right_limit(k))
        lim = max(lims)
        if not _at_least(r.values[k], lim):
            out.append((r.cuts[k], r.values[k], lim))
    return out


def sample_rng(seed: int) -> np.random.Generator:
    """Counter-based generator for one sample; sample ``i`` of a run uses ``base_seed + i``."""
    return np.random.Generator(np.random.Philox(key=int(seed) % 2 ** 64))


def draw_variables(scenario: Scenario, seed: int) -> dict:
    rng = sample_rng(seed)
    env = {}
    for name, dist in scenario.variables:
        env[name] = float(np.asarray(dist.sample(rng, 1))[0])
    return env


def realize(scenario: Scenario, seed: int) -> Realization:
    """Draw the variables with ``seed`` and build the exact trajectory."""
    env = draw_variables(scenario, seed)
    return realize_with(scenario, env)


def realize_with(scenario: Scenario, env: dict) -> Realization:
    lo, hi = scenario.domain
    random_locs = []
    exc_at = {}
    for e in scenario.exceptions:
        loc = float(e.location.eval(None, env))
        if not lo <= loc <= hi:
            continue
        if loc in exc_at:
            raise ScenarioError("degenerate scenario draw")
        exc_at[loc] = e
        if e.location.variables:
            random_locs.append(loc)
    patch_bounds = []
    for p in scenario.patches:
        a, b = float(p.lo.eval(None, env)), float(p.hi.eval(None, env))
        patch_bounds.append((a, b))
        for expr, v in ((p.lo, a), (p.hi, b)):
            if expr.variables and lo < v < hi:
                random_locs.append(v)
    interior_fixed = {c for c in exc_at if c not in random_locs and lo < c < hi}
    for p, (a, b) in zip(scenario.patches, patch_bounds):
        for expr, v in ((p.lo, a), (p.hi, b)):
            if not expr.variables and lo < v < hi:
                interior_fixed.add(v)
    if len(set(random_locs)) != len(random_locs) or set(random_locs) & interior_fixed:
        raise ScenarioError("degenerate scenario draw")
    cuts = {lo, hi} | set(exc_at) | interior_fixed | {v for v in random_locs if lo < v < hi}
    cuts = sorted(cuts)

    def active_expr(s, on_cut):
        for p, (a, b) in zip(reversed(scenario.patches), reversed(patch_bounds)):
            inside = p.contains(s, a, b) if on_cut else a < s < b
            if inside:
                return p.value
        return scenario.base

    values = []
    for c in cuts:
        expr = exc_at[c].value if c in exc_at else active_expr(c, True)
        values.append(expr.eval(c, env))
    segments = []
    for a, b in zip(cuts, cuts[1:]):
        expr = active_expr(0.5 * (a + b), False)
        segments.append(Segment(_expr_fn(expr, env), constant=not expr.uses_s))
    return Realization(cuts, values, segments, assignment=env)


def _expr_fn(expr: Expr, env: dict):
    def fn(s, side=0):
        return float(expr.eval(s, env))
    return fn


def trajectories_differ(r1: Realization, r2: Realization, tol: float = 1e-9) -> bool:
    """Whether two trajectories (hence their hypographs) differ beyond ``tol``.

    Point values are compared on the union of cuts; segments at both ends
    and at the midpoint of each piece of the common refinement.
    """
    def close(u, v):
        if u == v:
            return True
        if math.isinf(u) or math.isinf(v):
            return False
        return abs(u - v) <= tol * max(1.0, abs(u), abs(v))

    cuts = sorted(set(r1.cuts) | set(r2.cuts))
    for c in cuts:
        if not close(r1(c), r2(c)):
            return True
    for a, b in zip(cuts, cuts[1:]):
        for t in (a + (b - a) * 1e-6, 0.5 * (a + b), b - (b - a) * 1e-6):
            if not close(r1(t), r2(t)):
                return True
    return False
