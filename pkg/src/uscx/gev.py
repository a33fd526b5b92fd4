"""Generalized extreme-value distributions.

Parameters are ``theta = (gamma, mu, sigma)`` with shape ``gamma``,
location ``mu`` and scale ``sigma > 0``. The closed forms are 0/0 at
``gamma = 0``; for ``|gamma| < GAMMA_SERIES`` the functions switch to
second-order series in ``gamma`` around the Gumbel case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

GAMMA_SERIES = 1e-8
GAMMA_BRACKET = (-10.0, 10.0)
DEFAULT_RECOVERY_PROBS = (math.exp(-1.0), 0.25, 0.75)


@dataclass(frozen=True)
class GevParams:
    gamma: float
    mu: float
    sigma: float

    def __post_init__(self):
        for name in ("gamma", "mu", "sigma"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def as_tuple(self) -> tuple:
        return (self.gamma, self.mu, self.sigma)

    @property
    def lower(self) -> float:
        return self.mu - self.sigma / self.gamma if self.gamma > 0 else -math.inf

    @property
    def upper(self) -> float:
        return self.mu - self.sigma / self.gamma if self.gamma < 0 else math.inf


UNIT_FRECHET = GevParams(1.0, 1.0, 1.0)


def _expm1_over(g, t):
    """``(exp(g*t) - 1) / g`` with the series branch near ``g = 0``."""
    g = np.asarray(g, dtype=float)
    t = np.asarray(t, dtype=float)
    small = np.abs(g) < GAMMA_SERIES
    safe_g = np.where(small, 1.0, g)
    with np.errstate(over="ignore", invalid="ignore"):
        exact = np.expm1(safe_g * t) / safe_g
        series = t + g * t * t / 2.0 + g * g * t ** 3 / 6.0
    return np.where(small, series, exact)


def _log1p_over(g, w):
    """``log(1 + g*w) / g`` with the series branch near ``g = 0``; nan off-support."""
    g = np.asarray(g, dtype=float)
    w = np.asarray(w, dtype=float)
    small = np.abs(g) < GAMMA_SERIES
    safe_g = np.where(small, 1.0, g)
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = np.log1p(safe_g * w) / safe_g
        series = w - g * w * w / 2.0 + g * g * w ** 3 / 3.0
    return np.where(small, series, exact)


def _cdf(x, gamma, mu, sigma):
    x, gamma, mu, sigma = np.broadcast_arrays(*(np.asarray(a, dtype=float)
                                                for a in (x, gamma, mu, sigma)))
    with np.errstate(invalid="ignore", over="ignore"):
        w = (x - mu) / sigma
        z = 1.0 + gamma * w
        below = (gamma > 0) & ((z <= 0) | (x == -np.inf))
        above = (gamma < 0) & ((z <= 0) | (x == np.inf))
        # -log F = exp(-log(1 + gamma w) / gamma)
        t = np.exp(-_log1p_over(gamma, np.where(below | above, 0.0, w)))
        out = np.exp(-t)
    out = np.where(below, 0.0, out)
    out = np.where(above, 1.0, out)
    out = np.where(x == np.inf, 1.0, out)
    out = np.where(x == -np.inf, 0.0, out)
    return out


def gev_cdf(x, theta: GevParams):
    """GEV distribution function; total on ``[-inf, inf]``."""
    out = _cdf(x, theta.gamma, theta.mu, theta.sigma)
    return float(out) if out.ndim == 0 else out


def _quantile_from_logp(logp, gamma, mu, sigma):
    """Quantile at ``p = exp(logp)``, with ``logp`` in ``[-inf, 0]``."""
    logp, gamma, mu, sigma = np.broadcast_arrays(*(np.asarray(a, dtype=float)
                                                   for a in (logp, gamma, mu, sigma)))
    interior = (logp > -np.inf) & (logp < 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        # log y with y = -1/log p
        logy = -np.log(np.where(interior, -logp, 1.0))
        out = mu + sigma * _expm1_over(gamma, logy)
    with np.errstate(over="ignore"):
        endpoint = np.where(gamma != 0, mu - sigma / np.where(gamma != 0, gamma, 1.0), np.nan)
    at0 = np.where(gamma > 0, endpoint, -np.inf)
    at1 = np.where(gamma < 0, endpoint, np.inf)
    out = np.where(logp == -np.inf, at0, out)
    out = np.where(logp == 0, at1, out)
    return out


def _quantile(p, gamma, mu, sigma):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    return _quantile_from_logp(logp, gamma, mu, sigma)


def _check_prob(p):
    arr = np.asarray(p, dtype=float)
    if np.isnan(arr).any() or (arr < 0).any() or (arr > 1).any():
        raise ValueError("probability outside [0, 1]")
    return arr


def gev_quantile(p, theta: GevParams):
    """GEV quantile; ``Q(0)`` and ``Q(1)`` are the support endpoints (possibly infinite)."""
    out = _quantile(_check_prob(p), theta.gamma, theta.mu, theta.sigma)
    return float(out) if out.ndim == 0 else out


def norming(n: int, theta: GevParams) -> tuple:
    """Norming constants ``(a_n, b_n)`` with ``F^n(a_n x + b_n) = F(x)``."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    ln = math.log(n)
    a = math.exp(theta.gamma * ln)
    if theta.gamma == 0:
        b = theta.sigma * ln
    else:
        b = (theta.sigma - theta.gamma * theta.mu) * float(_expm1_over(theta.gamma, ln))
    return a, b


def _norming_arrays(n: int, gamma, mu, sigma):
    ln = math.log(n)
    gamma = np.asarray(gamma, dtype=float)
    a = np.exp(gamma * ln)
    b = (sigma - gamma * mu) * _expm1_over(gamma, ln)
    return a, b


def check_max_stability_identity(theta: GevParams, n: int, x_grid, p_grid) -> float:
    """Largest deviation in ``F^n(a_n x + b_n) = F(x)`` and ``Q(p^(1/n)) = a_n Q(p) + b_n``."""
    if n == 1:
        return 0.0
    a, b = norming(n, theta)
    x = np.asarray(x_grid, dtype=float)
    p = np.asarray(p_grid, dtype=float)
    lhs_f = _cdf(a * x + b, *theta.as_tuple()) ** n
    rhs_f = _cdf(x, *theta.as_tuple())
    lhs_q = _quantile_from_logp(np.log(p) / n, *theta.as_tuple())
    rhs_q = a * _quantile(p, *theta.as_tuple()) + b
    err = 0.0
    if x.size:
        err = max(err, float(np.max(np.abs(lhs_f - rhs_f))))
    if p.size:
        err = max(err, float(np.max(np.abs(lhs_q - rhs_q))))
    return err


def _ratio(gamma: float, la: float, lb: float) -> float:
    # (x^g - 1)/(y^g - 1) with la = log x, lb = log y; limit la/lb at g = 0
    if gamma == 0:
        return la / lb
    return float(_expm1_over(gamma, la) / _expm1_over(gamma, lb))


def params_from_quantiles(q_at_e_inv: float, q_at_p1: float, q_at_p2: float,
                          p1: float = 0.25, p2: float = 0.75) -> GevParams:
    """Recover ``theta`` from the quantiles at ``e^-1``, ``p1`` and ``p2``.

    ``mu`` is the quantile at ``e^-1``. The shape solves
    ``(Q(p1) - mu)/(Q(p2) - mu) = (x^g - 1)/(y^g - 1)`` with
    ``x = -1/log p1`` and ``y = -1/log p2``, by bisection on ``[-10, 10]``.
    """
    for p in (p1, p2):
        if not 0 < p < 1 or abs(p - math.exp(-1)) < 1e-15:
            raise ValueError("p1, p2 must lie in (0, 1) and differ from exp(-1)")
    if p1 == p2:
        raise ValueError("p1 and p2 must differ")
    mu = float(q_at_e_inv)
    d1, d2 = float(q_at_p1) - mu, float(q_at_p2) - mu
    if d1 == d2 or d1 == 0 or d2 == 0:
        raise ValueError("degenerate quantile triple")
    la = math.log(-1.0 / math.log(p1))
    lb = math.log(-1.0 / math.log(p2))
    target = d1 / d2
    lo, hi = GAMMA_BRACKET
    r_lo, r_hi = _ratio(lo, la, lb), _ratio(hi, la, lb)
    r_mid = _ratio(0.0, la, lb)
    increasing = r_lo < r_mid < r_hi
    if not (increasing or r_lo > r_mid > r_hi):
        raise ValueError("ratio is not monotone on the shape bracket")
    if not min(r_lo, r_hi) <= target <= max(r_lo, r_hi):
        raise ValueError("not a GEV quantile triple")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        r = _ratio(mid, la, lb)
        if (r < target) == increasing:
            lo = mid
        else:
            hi = mid
    gamma = 0.5 * (lo + hi)
    if abs(gamma) < 1e-15:
        gamma = 0.0
    # scale from the residual with the larger lever arm
    if abs(d1) >= abs(d2):
        sigma = d1 / float(_expm1_over(gamma, la))
    else:
        sigma = d2 / float(_expm1_over(gamma, lb))
    if not sigma > 0:
        raise ValueError("not a GEV quantile triple")
    return GevParams(gamma, mu, sigma)


# -- parameter fields ------------------------------------------------------

class ThetaField:
    """Map ``s -> GevParams``.

    ``side`` selects a one-sided branch at breakpoints (-1 left, +1 right,
    0 the value at ``s`` itself); continuous fields ignore it.
    """

    continuous = True

    def __call__(self, s, side: int = 0) -> GevParams:
        raise NotImplementedError

    def arrays(self, coords: np.ndarray, side: int = 0):
        """Parameter arrays at node coordinates of shape ``(..., dim)``."""
        flat = coords.reshape(-1, coords.shape[-1])
        ths = [self(tuple(c) if len(c) > 1 else float(c[0]), side) for c in flat]
        shape = coords.shape[:-1]
        return tuple(np.array([getattr(t, k) for t in ths]).reshape(shape)
                     for k in ("gamma", "mu", "sigma"))

    def breakpoints(self) -> list:
        return []

    @staticmethod
    def from_dict(d: dict) -> "ThetaField":
        kind = d["kind"]
        if kind == "constant":
            return ConstantTheta(GevParams(*d["theta"]))
        if kind == "affine":
            return AffineTheta(GevParams(*d["theta0"]), [tuple(v) for v in d["slopes"]],
                               d.get("bounds"))
        if kind == "table":
            from .grid import Domain
            return TableTheta(Domain.from_dict(d["domain"]), d["gamma"], d["mu"], d["sigma"],
                              continuous=bool(d.get("continuous", True)),
                              lipschitz=float(d.get("lipschitz") or math.inf))
        if kind == "exceptional":
            return ExceptionalTheta(ThetaField.from_dict(d["base"]),
                                    {float(k): GevParams(*v) for k, v in d["exceptions"]})
        raise ValueError(f"unknown theta field kind {kind!r}")


def _coord_tuple(s) -> tuple:
    return tuple(np.atleast_1d(np.asarray(s, dtype=float)))


class ConstantTheta(ThetaField):
    def __init__(self, theta: GevParams):
        self.theta = theta

    def __call__(self, s, side=0):
        return self.theta

    def arrays(self, coords, side=0):
        shape = coords.shape[:-1]
        return tuple(np.full(shape, v) for v in self.theta.as_tuple())

    def to_dict(self):
        return {"kind": "constant", "theta": list(self.theta.as_tuple())}


class AffineTheta(ThetaField):
    """``theta(s) = theta0 + sum_k slopes[k] * s_k``, one ``(dgamma, dmu, dsigma)`` per axis.

    If ``bounds`` is given, ``sigma > 0`` is verified on the box corners.
    """

    def __init__(self, theta0: GevParams, slopes, bounds=None):
        self.theta0 = theta0
        self.slopes = [tuple(float(v) for v in sl) for sl in slopes]
        self.bounds = None if bounds is None else [tuple(b) for b in bounds]
        if self.bounds is not None:
            import itertools
            for corner in itertools.product(*self.bounds):
                self(corner)

    def _raw(self, s):
        s = _coord_tuple(s)
        vals = list(self.theta0.as_tuple())
        for sk, sl in zip(s, self.slopes):
            for j in range(3):
                vals[j] += sk * sl[j]
        return vals

    def __call__(self, s, side=0):
        return GevParams(*self._raw(s))

    def arrays(self, coords, side=0):
        out = [np.full(coords.shape[:-1], v) for v in self.theta0.as_tuple()]
        for k, sl in enumerate(self.slopes):
            for j in range(3):
                out[j] = out[j] + coords[..., k] * sl[j]
        if (out[2] <= 0).any():
            raise ValueError("sigma must be positive")
        return tuple(out)

    def to_dict(self):
        d = {"kind": "affine", "theta0": list(self.theta0.as_tuple()),
             "slopes": [list(s) for s in self.slopes]}
        if self.bounds is not None:
            d["bounds"] = [list(b) for b in self.bounds]
        return d


class TableTheta(ThetaField):
    """Parameters tabulated on grid nodes, linearly interpolated in between.

    With ``continuous=True`` adjacent nodes must differ by less than
    ``lipschitz`` in every parameter.
    """

    def __init__(self, domain, gamma, mu, sigma, continuous=True, lipschitz=math.inf):
        self.domain = domain
        self.table = [np.asarray(v, dtype=float).reshape(domain.shape) for v in (gamma, mu, sigma)]
        if (self.table[2] <= 0).any():
            raise ValueError("sigma must be positive")
        self.continuous = continuous
        self.lipschitz = lipschitz
        if continuous:
            for arr in self.table:
                for ax in range(arr.ndim):
                    if arr.shape[ax] > 1 and np.max(np.abs(np.diff(arr, axis=ax))) >= lipschitz:
                        raise ValueError("tabulated theta exceeds its Lipschitz budget")

        self._interp = [RegularGridInterpolator(domain.axes(), arr) for arr in self.table]

    def __call__(self, s, side=0):
        pt = np.array([_coord_tuple(s)])
        return GevParams(*(float(f(pt)[0]) for f in self._interp))

    def arrays(self, coords, side=0):
        pts = coords.reshape(-1, coords.shape[-1])
        return tuple(f(pts).reshape(coords.shape[:-1]) for f in self._interp)

    def to_dict(self):
        return {"kind": "table", "domain": self.domain.to_dict(),
                "gamma": self.table[0].ravel().tolist(), "mu": self.table[1].ravel().tolist(),
                "sigma": self.table[2].ravel().tolist(), "continuous": self.continuous,
                "lipschitz": self.lipschitz if math.isfinite(self.lipschitz) else None}


class ExceptionalTheta(ThetaField):
    """A base field overridden at finitely many points of a 1-D domain."""

    continuous = False

    def __init__(self, base: ThetaField, exceptions: dict):
        self.base = base
        self.exceptions = {float(k): v for k, v in exceptions.items()}

    def __call__(self, s, side=0):
        s0 = float(np.atleast_1d(s)[0])
        if side == 0 and s0 in self.exceptions:
            return self.exceptions[s0]
        return self.base(s, side)

    def arrays(self, coords, side=0):
        out = [a.copy() for a in self.base.arrays(coords, side)]
        if side == 0:
            for s0, th in self.exceptions.items():
                hit = coords[..., 0] == s0
                for j, v in enumerate(th.as_tuple()):
                    out[j][hit] = v
        return tuple(out)

    def breakpoints(self):
        return sorted(set(self.exceptions) | set(self.base.breakpoints()))

    def to_dict(self):
        return {"kind": "exceptional", "base": self.base.to_dict(),
                "exceptions": [[k, list(v.as_tuple())] for k, v in self.exceptions.items()]}
