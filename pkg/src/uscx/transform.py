"""Pointwise transforms ``U(s, x)`` and the induced maps ``z -> U(s, z(s))``.

Each node of the grammar is non-decreasing and right-continuous in ``x``
and has usc sections ``s -> U(s, x)`` whenever its ingredients do (usc
shift, continuous positive scale, families with usc sections). Nodes
compose; the composite acts as the composition of the induced maps.

A transform acts on a :class:`~uscx.grid.GridField` node by node and on a
:class:`~uscx.scenario.Realization` cut by cut and segment by segment. The
s-breakpoints of a transform (where a marginal family or a parameter field
jumps) are merged into the realization's cuts so that usc can still be
decided exactly afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import gev as _gev
from . import quantile as _q
from .grid import Domain, GridField
from .scenario import Expr, Realization, ROUNDING, ScenarioError, Segment


def _clamp01(x):
    return min(max(x, 0.0), 1.0)


# -- marginal families -----------------------------------------------------

class MarginalFamily:
    """Family ``s -> F_s`` of right-continuous cdfs.

    ``sections_usc`` records whether ``s -> F_s(x)`` is usc for every ``x``,
    ``atomless`` whether every ``F_s`` is continuous. Breakpoints are the
    1-D locations where the family changes branch.
    """

    sections_usc = True
    atomless = True

    def at(self, s, side: int = 0) -> _q.RcCdf:
        raise NotImplementedError

    def cdf(self, s, x, side=0) -> float:
        return float(self.at(s, side)._cdf(x)) if x != math.inf else 1.0

    def quantile(self, s, p, side=0) -> float:
        return float(self.at(s, side)._quantile(np.asarray(p, dtype=float)))

    def cdf_nodes(self, coords, x):
        return np.array([self.cdf(_pt(c), xi) for c, xi in zip(coords, x)])

    def quantile_nodes(self, coords, p):
        return np.array([self.quantile(_pt(c), pi) for c, pi in zip(coords, p)])

    def breakpoints(self) -> list:
        return []

    @property
    def piecewise_constant(self) -> bool:
        return False


def _pt(c):
    return float(c[0]) if len(c) == 1 else tuple(float(v) for v in c)


class ConstantFamily(MarginalFamily):
    def __init__(self, cdf: _q.RcCdf):
        self.dist = cdf
        self.atomless = cdf.atomless

    def at(self, s, side=0):
        return self.dist

    def cdf_nodes(self, coords, x):
        x = np.asarray(x, dtype=float)
        return np.where(x == math.inf, 1.0, self.dist._cdf(x))

    def quantile_nodes(self, coords, p):
        return self.dist._quantile(np.asarray(p, dtype=float))

    @property
    def piecewise_constant(self):
        return True

    def to_dict(self):
        return {"kind": "constant", "cdf": self.dist.to_dict()}


class GevFamily(MarginalFamily):
    """GEV margins driven by a parameter field; quantiles follow the right-continuous convention."""

    def __init__(self, theta: _gev.ThetaField):
        self.theta = theta
        self.sections_usc = theta.continuous

    def at(self, s, side=0):
        return _q.Gev(self.theta(s, side))

    def cdf(self, s, x, side=0):
        return float(_gev._cdf(x, *self.theta(s, side).as_tuple()))

    def quantile(self, s, p, side=0):
        if p >= 1:
            return math.inf
        return float(_gev._quantile(p, *self.theta(s, side).as_tuple()))

    def cdf_nodes(self, coords, x):
        return _gev._cdf(x, *self.theta.arrays(coords))

    def quantile_nodes(self, coords, p):
        p = np.asarray(p, dtype=float)
        return np.where(p >= 1, math.inf, _gev._quantile(p, *self.theta.arrays(coords)))

    def breakpoints(self):
        return self.theta.breakpoints()

    @property
    def piecewise_constant(self):
        return isinstance(self.theta, (_gev.ConstantTheta, _gev.ExceptionalTheta)) and (
            not isinstance(self.theta, _gev.ExceptionalTheta)
            or isinstance(self.theta.base, _gev.ConstantTheta))

    def to_dict(self):
        return {"kind": "gev", "theta": self.theta.to_dict()}


class PointExceptionFamily(MarginalFamily):
    """A base family replaced by other cdfs at finitely many points of a 1-D domain."""

    def __init__(self, base: MarginalFamily, exceptions: dict, sections_usc: bool):
        self.base = base
        self.exceptions = {float(k): v for k, v in exceptions.items()}
        self.sections_usc = sections_usc
        self.atomless = base.atomless and all(c.atomless for c in self.exceptions.values())

    def at(self, s, side=0):
        if side == 0 and float(np.atleast_1d(s)[0]) in self.exceptions:
            return self.exceptions[float(np.atleast_1d(s)[0])]
        return self.base.at(s, side)

    def breakpoints(self):
        return sorted(set(self.exceptions) | set(self.base.breakpoints()))

    @property
    def piecewise_constant(self):
        return self.base.piecewise_constant


class SplitFamily(MarginalFamily):
    """Piecewise family on a 1-D domain: ``branches`` is a list of ``(upper_cut, fn)``.

    ``fn(s) -> RcCdf`` applies on the interval ending at ``upper_cut``; the
    value at a cut belongs to the branch on its left when ``closed_left`` is
    true and to the right branch otherwise.
    """

    def __init__(self, cuts, branches, closed_left=True, sections_usc=True, atomless=True):
        self.cuts = [float(c) for c in cuts]
        self.branches = list(branches)
        if len(self.branches) != len(self.cuts) + 1:
            raise ValueError("need one branch more than cuts")
        self.closed_left = closed_left
        self.sections_usc = sections_usc
        self.atomless = atomless

    def _branch(self, s, side):
        s = float(np.atleast_1d(s)[0])
        for k, c in enumerate(self.cuts):
            if s < c or (s == c and (side < 0 or (side == 0 and self.closed_left))):
                return self.branches[k]
        return self.branches[-1]

    def at(self, s, side=0):
        return self._branch(s, side)(float(np.atleast_1d(s)[0]))

    def breakpoints(self):
        return list(self.cuts)


def family_from_dict(d: dict) -> MarginalFamily:
    kind = d.get("kind", "constant")
    if kind == "constant":
        return ConstantFamily(_q.cdf_from_dict(d["cdf"]))
    if kind == "gev":
        return GevFamily(_gev.ThetaField.from_dict(d["theta"]))
    raise ValueError(f"unknown marginal family kind {kind!r}")


# -- s-functions (shift, scale, envelope ingredients) ------------------------

def _sfun_scalar(y, s, side=0):
    if isinstance(y, (int, float)):
        return float(y)
    if isinstance(y, Expr):
        if y.variables:
            raise ValueError("s-functions may not contain random variables")
        return float(y.eval(s, {}))
    if isinstance(y, GridField):
        pt = np.atleast_1d(np.asarray(s, dtype=float))
        idx = []
        for k, ax in enumerate(y.domain.axes()):
            i = int(np.argmin(np.abs(ax - pt[k])))
            if abs(ax[i] - pt[k]) > 1e-9 * y.domain.steps[k]:
                raise ValueError("tabulated s-function evaluated off its grid")
            idx.append(i)
        return float(y.values[tuple(idx)])
    raise TypeError(f"unsupported s-function {y!r}")


def _sfun_nodes(y, coords):
    if isinstance(y, (int, float)):
        return np.full(len(coords), float(y))
    if isinstance(y, Expr):
        s = tuple(coords[:, k] for k in range(coords.shape[1]))
        return np.broadcast_to(np.asarray(y.eval(s if len(s) > 1 else s[0], {}), dtype=float),
                               (len(coords),)).copy()
    if isinstance(y, GridField):
        if len(coords) != y.domain.size:
            raise ValueError("tabulated s-function needs the same grid")
        return y.values.reshape(-1).astype(float)
    raise TypeError(f"unsupported s-function {y!r}")


def _sfun_to_dict(y):
    if isinstance(y, (int, float)):
        return float(y)
    if isinstance(y, Expr):
        return {"expr": y.to_dict()}
    if isinstance(y, GridField):
        return {"grid": {"domain": y.domain.to_dict(), "values": y.values.reshape(-1).tolist()}}
    raise TypeError


def _sfun_from_dict(d):
    if isinstance(d, (int, float)):
        return float(d)
    if "expr" in d:
        return Expr.parse(d["expr"])
    if "grid" in d:
        g = d["grid"]
        return GridField(Domain.from_dict(g["domain"]), g["values"])
    raise ValueError(f"cannot parse s-function {d!r}")


def _s_constant(y) -> bool:
    return isinstance(y, (int, float)) or (isinstance(y, Expr) and not y.uses_s)


# -- monotone right-continuous functions of x ------------------------------

def _frechet_cdf(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)


def _neg_inv_log(x):
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore"):
        return np.where(x >= 1, math.inf, np.where(x <= 0, 0.0, -1.0 / np.log(np.where(x > 0, x, 0.5))))


MONOTONE = {
    "identity": lambda x, **k: x,
    "clamp": lambda x, lo=0.0, hi=1.0: np.clip(x, lo, hi),
    "floor": lambda x, **k: np.floor(x),
    "exp": lambda x, **k: np.exp(x),
    "affine": lambda x, a=1.0, b=0.0: a * x + b,
    "square_pos": lambda x, **k: np.maximum(x, 0.0) ** 2,
    "neg_inv_log": lambda x, **k: _neg_inv_log(x),
    "unit_frechet_cdf": lambda x, **k: _frechet_cdf(x),
}


# -- transform nodes ---------------------------------------------------------

class PointwiseMap:
    """Base class of the transform grammar."""

    #: whether U(s, .) only changes with s at its breakpoints
    piecewise_constant = True
    #: whether a tabulated ingredient makes section checks approximate
    tabulated = False

    def __call__(self, s, x: float, side: int = 0) -> float:
        raise NotImplementedError

    def on_nodes(self, coords: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.array([self(_pt(c), float(v)) for c, v in zip(coords, x)])

    def breakpoints(self) -> list:
        return []

    @property
    def sections_usc(self) -> bool:
        return True

    def to_dict(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_dict(d: dict) -> "PointwiseMap":
        return map_from_dict(d)


@dataclass(frozen=True)
class MonotoneRc(PointwiseMap):
    name: str
    params: tuple = ()

    def __post_init__(self):
        if self.name not in MONOTONE:
            raise ValueError(f"unknown monotone function {self.name!r}")
        if self.name == "affine" and not dict(self.params).get("a", 1.0) > 0:
            raise ValueError("affine slope must be positive")

    def _f(self, x):
        return MONOTONE[self.name](x, **dict(self.params))

    def __call__(self, s, x, side=0):
        with np.errstate(invalid="ignore", over="ignore"):
            return float(self._f(np.float64(x)))

    def on_nodes(self, coords, x):
        with np.errstate(invalid="ignore", over="ignore"):
            return np.asarray(self._f(np.asarray(x, dtype=float)), dtype=float)

    def to_dict(self):
        return {"node": "monotone", "name": self.name, "params": dict(self.params)}


def monotone(name, **params):
    return MonotoneRc(name, tuple(sorted(params.items())))


@dataclass(frozen=True)
class MaxWith(PointwiseMap):
    y: object

    def __call__(self, s, x, side=0):
        return max(x, _sfun_scalar(self.y, s, side))

    def on_nodes(self, coords, x):
        return np.maximum(x, _sfun_nodes(self.y, coords))

    @property
    def piecewise_constant(self):
        return _s_constant(self.y)

    @property
    def tabulated(self):
        return isinstance(self.y, GridField)

    def to_dict(self):
        return {"node": "max_with", "y": _sfun_to_dict(self.y)}


@dataclass(frozen=True)
class MinWith(PointwiseMap):
    y: object

    def __call__(self, s, x, side=0):
        return min(x, _sfun_scalar(self.y, s, side))

    def on_nodes(self, coords, x):
        return np.minimum(x, _sfun_nodes(self.y, coords))

    @property
    def piecewise_constant(self):
        return _s_constant(self.y)

    @property
    def tabulated(self):
        return isinstance(self.y, GridField)

    def to_dict(self):
        return {"node": "min_with", "y": _sfun_to_dict(self.y)}


@dataclass(frozen=True)
class Scale(PointwiseMap):
    """``x -> a(s) x`` with ``a`` continuous and positive."""

    a: object

    def __call__(self, s, x, side=0):
        a = _sfun_scalar(self.a, s, side)
        if not a > 0:
            raise ValueError("scale must be positive")
        return a * x

    def on_nodes(self, coords, x):
        a = _sfun_nodes(self.a, coords)
        if not (a > 0).all():
            raise ValueError("scale must be positive")
        return a * x

    @property
    def piecewise_constant(self):
        return _s_constant(self.a)

    @property
    def tabulated(self):
        return isinstance(self.a, GridField)

    def to_dict(self):
        return {"node": "scale", "a": _sfun_to_dict(self.a)}


@dataclass(frozen=True)
class Shift(PointwiseMap):
    """``x -> x + b(s)`` with ``b`` usc and finite."""

    b: object

    def __call__(self, s, x, side=0):
        b = _sfun_scalar(self.b, s, side)
        if not math.isfinite(b):
            raise ValueError("shift must be finite")
        return x + b

    def on_nodes(self, coords, x):
        b = _sfun_nodes(self.b, coords)
        if not np.isfinite(b).all():
            raise ValueError("shift must be finite")
        return x + b

    @property
    def piecewise_constant(self):
        return _s_constant(self.b)

    @property
    def tabulated(self):
        return isinstance(self.b, GridField)

    def to_dict(self):
        return {"node": "shift", "b": _sfun_to_dict(self.b)}


@dataclass(frozen=True)
class QuantileMap(PointwiseMap):
    """``x -> Q_s((x v 0) ^ 1)``."""

    family: MarginalFamily

    def __call__(self, s, x, side=0):
        return self.family.quantile(s, _clamp01(x), side)

    def on_nodes(self, coords, x):
        return self.family.quantile_nodes(coords, np.clip(x, 0.0, 1.0))

    def breakpoints(self):
        return self.family.breakpoints()

    @property
    def sections_usc(self):
        return self.family.sections_usc

    @property
    def piecewise_constant(self):
        return self.family.piecewise_constant

    def to_dict(self):
        return {"node": "quantile", "family": self.family.to_dict()}


@dataclass(frozen=True)
class CdfMap(PointwiseMap):
    """``x -> F_s(x)``."""

    family: MarginalFamily

    def __call__(self, s, x, side=0):
        return self.family.cdf(s, x, side)

    def on_nodes(self, coords, x):
        return self.family.cdf_nodes(coords, x)

    def breakpoints(self):
        return self.family.breakpoints()

    @property
    def sections_usc(self):
        return self.family.sections_usc

    @property
    def piecewise_constant(self):
        return self.family.piecewise_constant

    def to_dict(self):
        return {"node": "cdf", "family": self.family.to_dict()}


def frechet_pivot(x, gamma, mu, sigma):
    """``-1/log F(x; theta)`` with ``F = 0 -> 0`` and ``F = 1 -> +inf``."""
    x, gamma, mu, sigma = np.broadcast_arrays(*(np.asarray(a, dtype=float)
                                                for a in (x, gamma, mu, sigma)))
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        w = (x - mu) / sigma
        z = 1.0 + gamma * w
        below = ((gamma > 0) & (z <= 0)) | (x == -math.inf)
        above = ((gamma < 0) & (z <= 0)) | (x == math.inf)
        # -1/log F = (1 + gamma w)^(1/gamma)
        out = np.exp(_gev._log1p_over(gamma, np.where(below | above, 0.0, w)))
    out = np.where(below, 0.0, out)
    return np.where(above, math.inf, out)


def frechet_unpivot(x, gamma, mu, sigma):
    """``Q(Phi(x); theta)`` for ``x`` in ``[-inf, inf]``; ``x <= 0`` maps to the lower endpoint."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        logp = np.where(x > 0, -1.0 / np.where(x > 0, x, 1.0), -math.inf)
    logp = np.where(x == math.inf, 0.0, logp)
    return _gev._quantile_from_logp(logp, gamma, mu, sigma)


@dataclass(frozen=True)
class GevStandardize(PointwiseMap):
    theta: _gev.ThetaField

    def __call__(self, s, x, side=0):
        return float(frechet_pivot(x, *self.theta(s, side).as_tuple()))

    def on_nodes(self, coords, x):
        return frechet_pivot(x, *self.theta.arrays(coords))

    def breakpoints(self):
        return self.theta.breakpoints()

    @property
    def sections_usc(self):
        return self.theta.continuous

    @property
    def piecewise_constant(self):
        return isinstance(self.theta, (_gev.ConstantTheta, _gev.ExceptionalTheta))

    @property
    def tabulated(self):
        return isinstance(self.theta, _gev.TableTheta)

    def to_dict(self):
        return {"node": "gev_standardize", "theta": self.theta.to_dict()}


@dataclass(frozen=True)
class GevDestandardize(PointwiseMap):
    theta: _gev.ThetaField

    def __call__(self, s, x, side=0):
        return float(frechet_unpivot(x, *self.theta(s, side).as_tuple()))

    def on_nodes(self, coords, x):
        return frechet_unpivot(x, *self.theta.arrays(coords))

    def breakpoints(self):
        return self.theta.breakpoints()

    @property
    def sections_usc(self):
        return self.theta.continuous

    @property
    def piecewise_constant(self):
        return isinstance(self.theta, (_gev.ConstantTheta, _gev.ExceptionalTheta))

    @property
    def tabulated(self):
        return isinstance(self.theta, _gev.TableTheta)

    def to_dict(self):
        return {"node": "gev_destandardize", "theta": self.theta.to_dict()}


@dataclass(frozen=True)
class Compose(PointwiseMap):
    """``(s, x) -> outer(s, inner(s, x))``."""

    outer: PointwiseMap
    inner: PointwiseMap

    def __call__(self, s, x, side=0):
        return self.outer(s, self.inner(s, x, side), side)

    def on_nodes(self, coords, x):
        return self.outer.on_nodes(coords, self.inner.on_nodes(coords, x))

    def breakpoints(self):
        return sorted(set(self.outer.breakpoints()) | set(self.inner.breakpoints()))

    @property
    def sections_usc(self):
        return self.outer.sections_usc and self.inner.sections_usc

    @property
    def piecewise_constant(self):
        return self.outer.piecewise_constant and self.inner.piecewise_constant

    @property
    def tabulated(self):
        return self.outer.tabulated or self.inner.tabulated

    def to_dict(self):
        return {"node": "compose", "outer": self.outer.to_dict(), "inner": self.inner.to_dict()}


IDENTITY = MonotoneRc("identity")


def compose(V: PointwiseMap, U: PointwiseMap) -> PointwiseMap:
    """The transform acting as ``V`` after ``U``."""
    return Compose(V, U)


def map_from_dict(d: dict) -> PointwiseMap:
    node = d["node"]
    if node == "monotone":
        return monotone(d["name"], **d.get("params", {}))
    if node == "max_with":
        return MaxWith(_sfun_from_dict(d["y"]))
    if node == "min_with":
        return MinWith(_sfun_from_dict(d["y"]))
    if node == "scale":
        return Scale(_sfun_from_dict(d["a"]))
    if node == "shift":
        return Shift(_sfun_from_dict(d["b"]))
    if node == "quantile":
        return QuantileMap(family_from_dict(d["family"]))
    if node == "cdf":
        return CdfMap(family_from_dict(d["family"]))
    if node == "gev_standardize":
        return GevStandardize(_gev.ThetaField.from_dict(d["theta"]))
    if node == "gev_destandardize":
        return GevDestandardize(_gev.ThetaField.from_dict(d["theta"]))
    if node == "compose":
        return Compose(map_from_dict(d["outer"]), map_from_dict(d["inner"]))
    raise ValueError(f"unknown transform node {node!r}")


# -- application ---------------------------------------------------------------

def apply(U: PointwiseMap, z):
    """Apply ``U`` pointwise to a grid field or a scenario realization."""
    if isinstance(z, GridField):
        coords = z.domain.coords().reshape(-1, z.domain.dim)
        out = U.on_nodes(coords, z.values.reshape(-1))
        return GridField(z.domain, np.asarray(out, dtype=float).reshape(z.domain.shape))
    if isinstance(z, Realization):
        return _apply_realization(U, z)
    raise TypeError(f"cannot apply a transform to {type(z).__name__}")


def _apply_realization(U: PointwiseMap, r: Realization) -> Realization:
    lo, hi = r.domain
    extra = [c for c in U.breakpoints() if lo < c < hi]
    cuts = sorted(set(r.cuts) | set(extra))
    values = []
    for c in cuts:
        if c in r.cuts:
            v = r.values[r.cuts.index(c)]
        else:
            v = float(r.segments[r.segment_index(c)].at(c))
        values.append(U(c, v, 0))
    segments = []
    for a, b in zip(cuts, cuts[1:]):
        old = r.segments[r.segment_index(0.5 * (a + b))]
        segments.append(Segment(_composed(U, old.fn), constant=old.constant and U.piecewise_constant))
    return Realization(cuts, values, segments, assignment=r.assignment,
                       usc_safe=r.usc_safe and U.sections_usc)


def _composed(U, fn):
    def out(s, side=0):
        inner = fn(s, side)
        if isinstance(inner, float) and math.isnan(inner):
            return inner
        return U(s, inner, side)
    return out


# -- membership validation -----------------------------------------------------

@dataclass
class MembershipReport:
    monotone_rc_ok: bool
    usc_sections_ok: bool
    witnesses: list = field(default_factory=list)

    @property
    def ok(self):
        return self.monotone_rc_ok and self.usc_sections_ok


RC_OFFSETS = (1e-3, 1e-6, 1e-9)


def validate_membership(U: PointwiseMap, domain: Domain, x_probe_grid, s_probe_grid) -> MembershipReport:
    """Check monotone right-continuity in ``x`` and usc sections in ``s``.

    Right-continuity is sampled with offsets 1e-3, 1e-6, 1e-9 (an
    approximation for analytic nodes). Sections are checked exactly at the
    transform's breakpoints, where one-sided branches are available, and
    by the isolated-dip rule on grid nodes for tabulated ingredients.
    """
    xs = sorted(set(float(x) for x in x_probe_grid))
    ss = list(s_probe_grid)
    if not xs or not ss:
        raise ValueError("probe grids must be nonempty")
    witnesses = []
    mono_ok = True
    for s in ss:
        vals = [U(s, x) for x in xs]
        for (x0, v0), (x1, v1) in zip(zip(xs, vals), zip(xs[1:], vals[1:])):
            if v1 < v0 - ROUNDING * max(1.0, abs(v0) if math.isfinite(v0) else 1.0):
                mono_ok = False
                witnesses.append({"kind": "not_monotone", "s": s, "x": (x0, x1)})
                break
        for x, v in zip(xs, vals):
            if not math.isfinite(x):
                continue
            diffs = []
            for d in RC_OFFSETS:
                w = U(s, x + d * max(1.0, abs(x)))
                diffs.append(abs(w - v) if math.isfinite(w) or w != v else (0.0 if w == v else math.inf))
            scale = 1.0 + (abs(v) if math.isfinite(v) else 0.0)
            d1, d2, d3 = diffs
            # logarithmically slow approach (GEV quantiles near p = 0) keeps shrinking;
            # a jump stalls at its height
            slow = d1 > d2 > d3 and (d2 - d3) >= 0.1 * (d1 - d2)
            if not (d3 <= 1e-6 * scale or d3 <= 0.01 * d1 or slow):
                mono_ok = False
                witnesses.append({"kind": "not_right_continuous", "s": s, "x": x})
    sec_ok = True
    xs_sec = [x for x in xs if x != -math.inf] + ([math.inf] if math.inf not in xs else [])
    for c in U.breakpoints():
        for x in xs_sec:
            v = U(c, x, 0)
            lim = max(U(c, x, -1), U(c, x, +1))
            if v < lim and not (math.isfinite(v) and math.isfinite(lim)
                                and v >= lim - ROUNDING * max(1.0, abs(lim))):
                sec_ok = False
                witnesses.append({"kind": "section_not_usc", "s": c, "x": x})
    if U.tabulated:
        coords = domain.coords().reshape(-1, domain.dim)
        for x in xs_sec:
            sec = U.on_nodes(coords, np.full(len(coords), x)).reshape(domain.shape)
            dips = _grid_usc_failures(sec)
            for idx in zip(*np.nonzero(dips)):
                sec_ok = False
                witnesses.append({"kind": "section_not_usc", "s": _pt(coords[np.ravel_multi_index(idx, domain.shape)]),
                                  "x": x})
    return MembershipReport(mono_ok, sec_ok, witnesses)


def _shifted(values, axis, k):
    """``values`` moved by ``k`` steps along ``axis``; vacated nodes are NaN."""
    out = np.full(values.shape, np.nan)
    n = values.shape[axis]
    if abs(k) >= n:
        return out
    src = [slice(None)] * values.ndim
    dst = [slice(None)] * values.ndim
    if k > 0:
        src[axis], dst[axis] = slice(0, n - k), slice(k, n)
    else:
        src[axis], dst[axis] = slice(-k, n), slice(0, n + k)
    out[tuple(dst)] = values[tuple(src)]
    return out


def _grid_usc_failures(values: np.ndarray) -> np.ndarray:
    """Nodes lying below both one-sided limits estimated from their grid neighbours.

    Along an axis each one-sided limit is extrapolated linearly from the two
    nearest nodes on that side, ``2 f(t+-1) - f(t+-2)``, with a tolerance of
    the local step and curvature variation. A node is flagged when, on some
    axis, it falls below both estimates. One-sided jumps cannot be told apart
    from steep slopes on a grid, so only such isolated dips are reported and
    nodes without two neighbours on each side are never flagged.
    """
    values = np.asarray(values, dtype=float)
    bad = np.zeros(values.shape, dtype=bool)
    scale = 1e-9 * np.maximum(1.0, np.abs(np.where(np.isfinite(values), values, 0.0)))
    with np.errstate(invalid="ignore", over="ignore"):
        for axis in range(values.ndim):
            both = np.ones(values.shape, dtype=bool)
            for side in (1, -1):
                f1 = _shifted(values, axis, side)
                f2 = _shifted(values, axis, 2 * side)
                f3 = _shifted(values, axis, 3 * side)
                curv = np.nan_to_num(np.abs(f1 - 2 * f2 + f3), nan=0.0, posinf=0.0)
                step = np.nan_to_num(np.abs(f2 - f3), nan=0.0, posinf=0.0)
                est = 2 * f1 - f2
                tol = 2 * np.abs(f1 - f2) + step + 2 * curv + scale
                above = np.isfinite(est) & np.isfinite(tol) & (values < est - tol)
                # a finite node between infinite neighbours
                above |= (f1 == np.inf) & (f2 == np.inf) & (values < np.inf)
                both &= above
            bad |= both
    return bad


# -- Sklar-type operators ------------------------------------------------------

def _mark(out, U):
    if isinstance(out, Realization):
        out.usc_safe = out.usc_safe and U.sections_usc
    return out


def sklar_forward(family: MarginalFamily, xi):
    """Probability integral transform ``Z(s) = F_s(xi(s))``.

    Realizations stay flagged ``usc_safe`` only when the family is atomless
    with usc sections; otherwise callers should re-check with
    :func:`uscx.scenario.is_usc_trajectory`.
    """
    out = apply(CdfMap(family), xi)
    if isinstance(out, Realization):
        out.usc_safe = xi.usc_safe and family.atomless and family.sections_usc
    return out


def sklar_backward(family: MarginalFamily, Z):
    """``xi(s) = Q_s((Z(s) v 0) ^ 1)``."""
    return _mark(apply(QuantileMap(family), Z), QuantileMap(family))


def _as_theta(theta):
    if isinstance(theta, _gev.GevParams):
        return _gev.ConstantTheta(theta)
    return theta


def gev_standardize(theta, xi):
    """``xi*(s) = -1/log F(xi(s); theta(s))`` (unit-Frechet margins)."""
    U = GevStandardize(_as_theta(theta))
    return _mark(apply(U, xi), U)


def _min_value(z):
    if isinstance(z, GridField):
        return float(z.values.min())
    return min(min(z.values), *(seg.limit(a, +1, b - a) for seg, a, b in
                                zip(z.segments, z.cuts, z.cuts[1:])))


def gev_destandardize(theta, xi_star):
    """``xi(s) = Q(Phi(xi*(s)); theta(s))``; ``xi*`` must be nonnegative."""
    if _min_value(xi_star) < 0:
        raise ValueError("standardized field has negative values")
    U = GevDestandardize(_as_theta(theta))
    return _mark(apply(U, xi_star), U)


def gev_normalize(theta, n: int, z):
    """``a_{n,theta(s)} z(s) + b_{n,theta(s)}`` on a grid field (needs continuous theta)."""
    theta = _as_theta(theta)
    if not theta.continuous:
        raise ValueError("normalization is only defined for continuous theta fields")
    coords = z.domain.coords().reshape(-1, z.domain.dim)
    g, m, s = theta.arrays(coords)
    a, b = _gev._norming_arrays(n, g, m, s)
    vals = z.values.reshape(-1)
    with np.errstate(invalid="ignore"):
        out = a * vals + b
    return GridField(z.domain, out.reshape(z.domain.shape))


def lower_bound_field(family: MarginalFamily, domain: Domain) -> GridField:
    """``l(s) = Q_s(0)``, the lower end of the support of each margin."""
    coords = domain.coords().reshape(-1, domain.dim)
    return GridField(domain, family.quantile_nodes(coords, np.zeros(len(coords))).reshape(domain.shape))


def clamp_below(xi, ell: GridField):
    """``xi v l``."""
    return apply(MaxWith(ell), xi)
