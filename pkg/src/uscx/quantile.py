"""Right-continuous distribution and quantile functions.

The quantile is ``Q(p) = sup{x in R : F(x) <= p}`` with ``sup {} = -inf`` and
``sup R = +inf``; hence ``Q(1) = +inf`` for every supported family and
``Q(0)`` is the lower end of the support.

Empirical cdfs are handled exactly. Analytic families use their closed-form
quantile when they have one and otherwise fall back to
:func:`bisect_quantile`, which is also exposed as an independent check of
the closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from . import gev as _gev
from .grid import check_ext, parse_ext

BISECTION_TOL = 1e-12


def _prob_array(p):
    arr = np.asarray(p, dtype=float)
    if np.isnan(arr).any() or (arr < 0).any() or (arr > 1).any():
        raise ValueError("probability outside [0, 1]")
    return arr


def _scalar(out):
    return float(out) if np.ndim(out) == 0 else out


class RcCdf:
    """Right-continuous distribution function on ``[-inf, inf]``.

    Subclasses implement ``_cdf`` (vectorized). ``lower`` is the lower end of
    the support, ``atoms`` the locations of point masses.
    """

    lower = -math.inf
    atoms: tuple = ()
    atomless = True

    def cdf(self, x):
        x = check_ext(x)
        out = np.where(x == math.inf, 1.0, self._cdf(x))
        return _scalar(out)

    def cdf_left(self, x):
        """Left limit ``Pr[X < x]``."""
        x = check_ext(x)
        if self.atomless:
            out = np.where(x == -math.inf, 0.0, self._cdf(x))
        else:
            out = self._cdf_left(x)
        return _scalar(out)

    def _cdf_left(self, x):
        # shrinking-epsilon left limit for families without a formula
        x = np.asarray(x, dtype=float)
        prev = None
        for k in range(10, 60, 5):
            eps = np.maximum(np.abs(x), 1.0) * 2.0 ** -k
            cur = self._cdf(np.where(np.isfinite(x), x - eps, x))
            if prev is not None and np.all(cur == prev):
                break
            prev = cur
        return np.where(x == -math.inf, 0.0, np.where(x == math.inf, 1.0, cur))

    def quantile(self, p):
        p = _prob_array(p)
        return _scalar(self._quantile(p))

    def _quantile(self, p):
        return bisect_quantile(self, p)

    def sample(self, rng: np.random.Generator, size):
        return self._quantile(rng.random(size))

    def to_dict(self) -> dict:
        raise NotImplementedError


def bisect_quantile(cdf: RcCdf, p, tol: float = BISECTION_TOL):
    """Vectorized monotone bisection for ``sup{x : F(x) <= p}``.

    Brackets are expanded geometrically; a bracket that escapes past 1e300
    resolves to the corresponding infinity. Returns the upper end of the
    final bracket (the smallest point found with ``F > p``).
    """
    scalar = np.ndim(p) == 0
    p = np.atleast_1d(np.asarray(p, dtype=float))
    out = np.empty_like(p)
    out[p >= 1] = math.inf
    at0 = p <= 0
    out[at0] = cdf.lower
    idx = np.flatnonzero(~at0 & (p < 1))
    if idx.size:
        pp = p[idx]
        lo = np.full(pp.shape, -1.0)
        hi = np.full(pp.shape, 1.0)
        if math.isfinite(cdf.lower):
            lo[:] = cdf.lower
        for _ in range(1100):
            bad = cdf._cdf(lo) > pp
            if not bad.any():
                break
            lo[bad] = np.where(lo[bad] < 0, lo[bad] * 2.0, -1.0)
            if np.all(np.abs(lo[bad]) > 1e300):
                break
        for _ in range(1100):
            bad = cdf._cdf(hi) <= pp
            if not bad.any():
                break
            hi[bad] = np.where(hi[bad] > 0, hi[bad] * 2.0, 1.0)
            if np.all(np.abs(hi[bad]) > 1e300):
                break
        lo_inf = cdf._cdf(lo) > pp
        hi_inf = cdf._cdf(hi) <= pp
        for _ in range(2200):
            width = hi - lo
            active = width > np.maximum(tol, 4 * np.spacing(np.abs(hi)))
            if not active.any():
                break
            mid = lo + 0.5 * width
            le = cdf._cdf(mid) <= pp
            lo = np.where(active & le, mid, lo)
            hi = np.where(active & ~le, mid, hi)
        res = hi.copy()
        res[lo_inf] = -math.inf
        res[hi_inf] = math.inf
        out[idx] = res
    return out[0] if scalar else out


# -- analytic families -----------------------------------------------------

@dataclass(frozen=True)
class Uniform(RcCdf):
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("uniform needs a < b")

    @property
    def lower(self):
        return self.a

    def _cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def _quantile(self, p):
        return np.where(p >= 1, math.inf, self.a + p * (self.b - self.a))

    def to_dict(self):
        return {"family": "uniform", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Normal(RcCdf):
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def _cdf(self, x):
        return ndtr((np.asarray(x, dtype=float) - self.mu) / self.sigma)

    def _quantile(self, p):
        with np.errstate(divide="ignore"):
            q = self.mu + self.sigma * ndtri(p)
        return np.where(p >= 1, math.inf, np.where(p <= 0, -math.inf, q))

    def to_dict(self):
        return {"family": "normal", "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Exponential(RcCdf):
    rate: float = 1.0

    lower = 0.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")

    def _cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, -np.expm1(-self.rate * np.maximum(x, 0.0)), 0.0)

    def _quantile(self, p):
        with np.errstate(divide="ignore"):
            return np.where(p >= 1, math.inf, -np.log1p(-p) / self.rate)

    def to_dict(self):
        return {"family": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class Gev(RcCdf):
    theta: _gev.GevParams = _gev.UNIT_FRECHET

    @property
    def lower(self):
        return self.theta.lower

    def _cdf(self, x):
        return _gev._cdf(x, *self.theta.as_tuple())

    def _quantile(self, p):
        q = _gev._quantile(p, *self.theta.as_tuple())
        # right-continuous convention: F never exceeds 1 before +inf
        return np.where(p >= 1, math.inf, q)

    def to_dict(self):
        return {"family": "gev", "theta": list(self.theta.as_tuple())}


def unit_frechet() -> Gev:
    return Gev(_gev.UNIT_FRECHET)


@dataclass(frozen=True)
class PointMass(RcCdf):
    c: float = 0.0

    atomless = False

    @property
    def lower(self):
        return self.c

    @property
    def atoms(self):
        return (self.c,)

    def _cdf(self, x):
        return np.where(np.asarray(x, dtype=float) >= self.c, 1.0, 0.0)

    def _cdf_left(self, x):
        return np.where(np.asarray(x, dtype=float) > self.c, 1.0, 0.0)

    def _quantile(self, p):
        return np.where(p >= 1, math.inf, self.c)

    def to_dict(self):
        return {"family": "point_mass", "c": self.c}


@dataclass(frozen=True)
class UniformUnion(RcCdf):
    """Uniform on a finite union of disjoint intervals (interval chosen proportionally to length)."""

    intervals: tuple = ((0.0, 1.0), (2.0, 3.0))

    def __post_init__(self):
        iv = tuple(sorted((float(a), float(b)) for a, b in self.intervals))
        for (a, b), nxt in zip(iv, iv[1:] + ((math.inf, math.inf),)):
            if not a < b or b > nxt[0]:
                raise ValueError("intervals must be nonempty and disjoint")
        object.__setattr__(self, "intervals", iv)

    @property
    def lower(self):
        return self.intervals[0][0]

    @property
    def _weights(self):
        lengths = np.array([b - a for a, b in self.intervals])
        return lengths / lengths.sum()

    def _cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for w, (a, b) in zip(self._weights, self.intervals):
            out = out + w * np.clip((x - a) / (b - a), 0.0, 1.0)
        return np.minimum(out, 1.0)

    def _quantile(self, p):
        p = np.asarray(p, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self._weights)])
        out = np.full(p.shape, math.inf)
        # walk intervals from the top so that flat stretches resolve to their right end
        for k in reversed(range(len(self.intervals))):
            a, b = self.intervals[k]
            sel = (p >= cum[k]) & (p < cum[k + 1]) if k else (p < cum[1])
            out = np.where(sel, a + (p - cum[k]) / (cum[k + 1] - cum[k]) * (b - a), out)
        return np.where(p >= 1, math.inf, out)

    def sample(self, rng, size):
        # interval first (a fair coin for two equal intervals), then a uniform position
        w = self._weights
        k = rng.choice(len(w), size=size, p=w)
        u = rng.random(size)
        a = np.array([iv[0] for iv in self.intervals])[k]
        b = np.array([iv[1] for iv in self.intervals])[k]
        return a + u * (b - a)

    def to_dict(self):
        return {"family": "uniform_union", "intervals": [list(iv) for iv in self.intervals]}


@dataclass(frozen=True)
class UniformMax(RcCdf):
    """Law of the maximum of ``k`` iid standard uniforms, ``F(x) = x^k`` on ``[0, 1]``."""

    k: int = 2

    lower = 0.0

    def _cdf(self, x):
        return np.clip(np.asarray(x, dtype=float), 0.0, 1.0) ** self.k

    def _quantile(self, p):
        return np.where(p >= 1, math.inf, p ** (1.0 / self.k))

    def to_dict(self):
        return {"family": "uniform_max", "k": self.k}


@dataclass(frozen=True)
class Mixture(RcCdf):
    """Finite mixture; the quantile goes through :func:`bisect_quantile`."""

    components: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.components) != len(w) or not len(w):
            raise ValueError("one weight per component expected")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")

    @property
    def lower(self):
        return min(c.lower for c, w in zip(self.components, self.weights) if w > 0)

    @property
    def atomless(self):
        return all(c.atomless for c, w in zip(self.components, self.weights) if w > 0)

    @property
    def atoms(self):
        return tuple(a for c, w in zip(self.components, self.weights) if w > 0 for a in c.atoms)

    def _cdf(self, x):
        return sum(w * c._cdf(x) for c, w in zip(self.components, self.weights))

    def _cdf_left(self, x):
        x = np.asarray(x, dtype=float)
        return sum(w * np.asarray(c.cdf_left(x)) for c, w in zip(self.components, self.weights))

    def to_dict(self):
        return {"family": "mixture", "components": [c.to_dict() for c in self.components],
                "weights": list(self.weights)}


class Empirical(RcCdf):
    """Step cdf of a finite sample; cdf and quantile are exact."""

    atomless = False

    def __init__(self, sample):
        arr = np.sort(check_ext(np.atleast_1d(np.asarray(sample, dtype=float))))
        if arr.size < 1:
            raise ValueError("empirical cdf needs at least one sample")
        arr.setflags(write=False)
        self.sample_sorted = arr

    @property
    def n(self):
        return self.sample_sorted.size

    @property
    def lower(self):
        return float(self.sample_sorted[0])

    @property
    def atoms(self):
        return tuple(np.unique(self.sample_sorted))

    def _cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.searchsorted(self.sample_sorted, x, side="right") / self.n

    def cdf(self, x):
        return _scalar(self._cdf(check_ext(x)))

    def _cdf_left(self, x):
        return np.searchsorted(self.sample_sorted, np.asarray(x, dtype=float), side="left") / self.n

    def _quantile(self, p):
        p = np.asarray(p, dtype=float)
        n = self.n
        # k = largest count with k/n <= p, computed the same way F is
        k = np.floor(p * n).astype(int)
        k = np.where((k + 1) / n <= p, k + 1, k)
        k = np.where(k / n > p, k - 1, k)
        out = np.full(p.shape, math.inf)
        ok = k < n
        out[ok] = self.sample_sorted[np.clip(k[ok], 0, n - 1)]
        return out

    def sample(self, rng, size):
        return rng.choice(self.sample_sorted, size=size)

    def to_dict(self):
        from .grid import format_ext
        return {"family": "empirical", "sample": [format_ext(v) for v in self.sample_sorted]}

    def __eq__(self, other):
        return isinstance(other, Empirical) and np.array_equal(self.sample_sorted, other.sample_sorted)

    def __hash__(self):
        return hash(self.sample_sorted.tobytes())


def empirical_from_csv(text: str) -> Empirical:
    """Single-column CSV of samples, optional header; "+inf"/"-inf" allowed."""
    vals = []
    for line in text.splitlines():
        t = line.strip().split(",")[0].strip()
        if not t or t.startswith("#"):
            continue
        try:
            vals.append(parse_ext(t))
        except ValueError:
            if vals:
                raise
    return Empirical(vals)


def cdf_from_dict(d: dict) -> RcCdf:
    fam = d["family"]
    if fam == "uniform":
        return Uniform(d.get("a", 0.0), d.get("b", 1.0))
    if fam == "normal":
        return Normal(d.get("mu", 0.0), d.get("sigma", 1.0))
    if fam == "exponential":
        return Exponential(d.get("rate", 1.0))
    if fam == "gev":
        return Gev(_gev.GevParams(*d["theta"]))
    if fam == "unit_frechet":
        return unit_frechet()
    if fam == "point_mass":
        return PointMass(d["c"])
    if fam == "uniform_union":
        return UniformUnion(tuple(tuple(iv) for iv in d["intervals"]))
    if fam == "uniform_max":
        return UniformMax(int(d["k"]))
    if fam == "mixture":
        return Mixture(tuple(cdf_from_dict(c) for c in d["components"]), tuple(d["weights"]))
    if fam == "empirical":
        return Empirical([parse_ext(v) for v in d["sample"]])
    raise ValueError(f"unknown distribution family {fam!r}")


@dataclass(frozen=True)
class RcQuantile:
    source: RcCdf

    def __call__(self, p):
        return eval_quantile(self, p)


def eval_quantile(q, p):
    """Evaluate a right-continuous quantile (``q`` may be an RcQuantile or an RcCdf)."""
    src = q.source if isinstance(q, RcQuantile) else q
    return src.quantile(p)


def galois_check(cdf: RcCdf, x: float, p: float) -> bool:
    """Whether ``x <= Q(p)`` and ``Pr[X < x] <= p`` agree at this ``(x, p)``."""
    if not 0 <= p <= 1:
        raise ValueError("probability outside [0, 1]")
    x = parse_ext(x)
    lhs = x <= cdf.quantile(p)
    if p == 0:
        # Pr[X < x] = 0 exactly up to the lower end of the support; the cdf
        # itself underflows to 0 slightly above it for some families
        rhs = x <= cdf.lower
    else:
        rhs = cdf.cdf_left(x) <= p
    return bool(lhs == rhs)


def ks_distance(values, cdf: RcCdf) -> float:
    """Kolmogorov-Smirnov distance between the empirical cdf of ``values`` and ``cdf``.

    Both step functions are compared at every sample point and atom, from
    both sides; infinite values count towards the tail masses at +-inf.
    """
    v = np.sort(check_ext(values))
    n = v.size
    finite = v[np.isfinite(v)]
    pts = np.unique(np.concatenate([finite, np.asarray(cdf.atoms, dtype=float)]))
    pts = pts[np.isfinite(pts)]
    emp_r = np.searchsorted(v, pts, side="right") / n
    emp_l = np.searchsorted(v, pts, side="left") / n
    th_r = np.asarray(cdf.cdf(pts), dtype=float)
    th_l = np.asarray(cdf.cdf_left(pts), dtype=float)
    d = 0.0
    if pts.size:
        d = max(float(np.max(np.abs(emp_r - th_r))), float(np.max(np.abs(emp_l - th_l))))
    # mass at -inf and the defect at +inf
    d = max(d, abs(np.count_nonzero(v == -math.inf) / n - float(cdf.cdf(-math.inf))))
    d = max(d, abs(np.count_nonzero(v == math.inf) / n))
    return d


def ks_band(n: int, coefficient: float = 1.63) -> float:
    """Asymptotic 99% Kolmogorov band ``1.63 / sqrt(n)``."""
    return coefficient / math.sqrt(n)


def quantile_of_uniform_pushforward(q, n_samples: int, seed: int) -> float:
    """KS distance between the empirical law of ``Q(V)``, ``V`` uniform, and ``F``."""
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")
    src = q.source if isinstance(q, RcQuantile) else q
    rng = np.random.Generator(np.random.Philox(key=seed % 2 ** 64))
    v = rng.random(n_samples)
    return ks_distance(src._quantile(v), src)


def limsup_quantile_bound(cdfs, tail_max_cdf: RcCdf, p_grid=None) -> bool:
    """Finite-tail surrogate of ``Q(p) >= limsup Q_n(p)``.

    ``tail_max_cdf`` is the law of ``max_k X_k`` over the tail; its quantile
    must dominate every ``Q_n`` on the p-grid ``{0, 0.01, ..., 0.99}``.
    """
    p = np.round(np.arange(100) * 0.01, 12) if p_grid is None else np.asarray(p_grid, dtype=float)
    qmax = np.asarray(tail_max_cdf.quantile(p), dtype=float)
    tail = np.max([np.asarray(c.quantile(p), dtype=float) for c in cdfs], axis=0)
    return bool(np.all(qmax >= tail - 1e-12))
