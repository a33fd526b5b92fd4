"""Exact simulation of simple max-stable usc fields and capacity checks.

The field is ``xi(s) = sup_i Y_i W_i(s)`` with ``W_i = V_i / f`` iid copies
of a normalized spectral function and ``Y_1 > Y_2 > ...`` the points of a
Poisson process on ``(0, inf)`` with intensity ``y^-2 dy``. The points are
realized as ``Y_i = 1 / Gamma_i`` where ``Gamma_i`` are partial sums of
standard exponentials: the map ``y -> 1/y`` sends a unit-rate process on
``(0, inf)`` to one with intensity ``y^-2 dy`` and reverses the order.

Because ``W <= C / min f`` surely, atom ``k`` cannot raise any node once
``Y_k C / min f`` falls below the current minimum of the running maximum,
and neither can any later (smaller) atom. The simulation stops there, so
the result is exact at every grid node.

Sample ``i`` of a run with base seed ``seed`` draws from a Philox generator
keyed by ``seed + i``; atoms are consumed in chunks of :data:`CHUNK`, each
chunk drawing its exponentials first and its spectral parameters second.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grid import CompactProbe, Domain, GridField
from .scenario import Realization, Segment

CHUNK = 64
ATOM_BUDGET = 1_000_000
BLOCK = 512


class StoppingRuleStarved(RuntimeError):
    pass


# -- spectral models -------------------------------------------------------

class SpectralModel:
    """Law of a nonnegative usc spectral function ``V`` with a sure bound.

    Subclasses give the bound ``C``, the (constant) mean ``f`` and the
    normalized draws ``W = V / f`` at grid nodes and as box suprema.
    """

    family = "abstract"
    n_params = 0

    def __init__(self, bounds):
        self.bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)

    @property
    def bound(self) -> float:
        raise NotImplementedError

    def mean(self, coords: np.ndarray) -> np.ndarray:
        return np.full(coords.shape[:-1], self.f)

    @property
    def w_max(self) -> float:
        """Sure bound of ``W``, i.e. ``C / min f``."""
        return self.bound / self.f

    def draw(self, rng: np.random.Generator, k: int) -> np.ndarray:
        return np.empty((k, 0))

    def w_nodes(self, params: np.ndarray, coords: np.ndarray) -> np.ndarray:
        """``W`` at nodes: params ``(..., n_params)``, coords ``(N, dim)`` -> ``(..., N)``."""
        raise NotImplementedError

    def w_box_sup(self, params: np.ndarray, box) -> np.ndarray:
        raise NotImplementedError

    def expected_probe_max(self, probe: CompactProbe) -> float:
        """``E[max_j max_{K_j} W / x_j]`` in closed form; levels must be positive."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def check_domain(self, domain: Domain):
        if tuple(domain.bounds) != self.bounds:
            raise ValueError("spectral model and sampler domains differ")


class ConstantOne(SpectralModel):
    """``V = W = 1``; the field is the constant ``Y_1``."""

    family = "constant_one"

    @property
    def bound(self):
        return 1.0

    @property
    def f(self):
        return 1.0

    def w_nodes(self, params, coords):
        return np.ones(params.shape[:-1] + (len(coords),))

    def w_box_sup(self, params, box):
        return np.ones(params.shape[:-1])

    def expected_probe_max(self, probe):
        return max(1.0 / p.level for p in probe.parts)

    def to_dict(self):
        return {"family": self.family}


class PlateauModel(SpectralModel):
    """Nested closed square plateaus around a uniform center.

    ``V(s) = max_k h_k 1{|s - U|_inf <= w_k}`` with ``U`` uniform on the
    domain enlarged by ``R = max_k w_k``. The enlargement makes every
    ``Pr[|s - U|_inf <= w]`` independent of ``s`` on the domain, so ``f`` is
    constant. Plateaus are closed on both sides, which keeps ``V`` usc.
    """

    family = "staircase"

    def __init__(self, bounds, steps):
        super().__init__(bounds)
        steps = tuple((float(w), float(h)) for w, h in steps)
        if not steps:
            raise ValueError("need at least one plateau")
        for w, h in steps:
            if not (w > 0 and h > 0 and math.isfinite(w) and math.isfinite(h)):
                raise ValueError("plateau half-widths and heights must be positive")
        self.steps = steps
        self.R = max(w for w, _ in steps)
        self.u_bounds = tuple((lo - self.R, hi + self.R) for lo, hi in self.bounds)
        self.u_volume = float(np.prod([hi - lo for lo, hi in self.u_bounds]))
        self.n_params = len(self.bounds)
        self._f = self._mean()

    def _p(self, w):
        return (2.0 * w) ** len(self.bounds) / self.u_volume

    def _mean(self):
        widths = sorted({w for w, _ in self.steps})
        f, prev = 0.0, 0.0
        for w in widths:
            g = max(h for wk, h in self.steps if wk >= w)
            f += g * (self._p(w) - prev)
            prev = self._p(w)
        return f

    @property
    def f(self):
        return self._f

    @property
    def bound(self):
        return max(h for _, h in self.steps)

    def draw(self, rng, k):
        lo = np.array([b[0] for b in self.u_bounds])
        hi = np.array([b[1] for b in self.u_bounds])
        return lo + (hi - lo) * rng.random((k, len(self.bounds)))

    def _layered(self, dist):
        v = np.zeros(dist.shape)
        for w, h in self.steps:
            v = np.maximum(v, np.where(dist <= w, h, 0.0))
        return v / self.f

    def w_nodes(self, params, coords):
        diff = np.abs(params[..., None, :] - coords)
        return self._layered(diff.max(axis=-1))

    def w_box_sup(self, params, box):
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])
        gap = np.maximum(np.maximum(lo - params, params - hi), 0.0)
        return self._layered(gap.max(axis=-1))

    def expected_probe_max(self, probe):
        # exact integral over U by coordinate compression of all enlarged boxes
        rects = []
        for part in probe.parts:
            for w, h in self.steps:
                rects.append(([max(lo - w, ulo) for (lo, _), (ulo, _) in zip(part.box, self.u_bounds)],
                              [min(hi + w, uhi) for (_, hi), (_, uhi) in zip(part.box, self.u_bounds)],
                              h / (self.f * part.level)))
        edges = []
        for k, (ulo, uhi) in enumerate(self.u_bounds):
            e = {ulo, uhi}
            for lo, hi, _ in rects:
                e.update((lo[k], hi[k]))
            edges.append(np.array(sorted(e)))
        mids = [0.5 * (e[1:] + e[:-1]) for e in edges]
        widths = [np.diff(e) for e in edges]
        grids = np.meshgrid(*mids, indexing="ij")
        vol = np.ones(grids[0].shape)
        for k, wd in enumerate(widths):
            shape = [1] * len(widths)
            shape[k] = -1
            vol = vol * wd.reshape(shape)
        best = np.zeros(grids[0].shape)
        for lo, hi, val in rects:
            inside = np.ones(best.shape, dtype=bool)
            for k in range(len(widths)):
                inside &= (grids[k] >= lo[k]) & (grids[k] <= hi[k])
            best = np.where(inside, np.maximum(best, val), best)
        return float((best * vol).sum() / self.u_volume)

    def to_dict(self):
        return {"family": self.family, "steps": [list(s) for s in self.steps]}


class Storm(PlateauModel):
    """``V(s) = h 1{|s - U|_inf <= r}``; ``f = h prod_k 2r / (L_k + 2r)``."""

    family = "storm"

    def __init__(self, bounds, r, h=1.0):
        super().__init__(bounds, ((r, h),))
        self.r, self.h = float(r), float(h)

    def to_dict(self):
        return {"family": self.family, "r": self.r, "h": self.h}


def model_from_dict(d: dict, domain: Domain) -> SpectralModel:
    fam = d.get("family", d.get("model"))
    if fam == "constant_one":
        return ConstantOne(domain.bounds)
    if fam == "storm":
        if "r" not in d:
            raise ValueError("storm model needs a radius 'r'")
        return Storm(domain.bounds, d["r"], d.get("h", 1.0))
    if fam == "staircase":
        if "steps" not in d:
            raise ValueError("staircase model needs 'steps' as [half_width, height] pairs")
        return PlateauModel(domain.bounds, d["steps"])
    raise ValueError(f"unknown spectral family {fam!r}")


# -- sampler -----------------------------------------------------------------

@dataclass(frozen=True)
class MaxStableSampler:
    model: SpectralModel
    domain: Domain
    atom_budget: int = ATOM_BUDGET

    def __post_init__(self):
        self.model.check_domain(self.domain)
        if not self.model.f > 0:
            raise ValueError("spectral mean must be positive")

    @property
    def coords(self) -> np.ndarray:
        return self.domain.coords().reshape(-1, self.domain.dim)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) % 2 ** 64))


def _simulate_block(sampler: MaxStableSampler, seeds, keep_atoms=False):
    """Fields ``(B, N)`` and atom counts for the given per-sample seeds."""
    model, coords = sampler.model, sampler.coords
    B, N = len(seeds), len(coords)
    gens = [_rng(s) for s in seeds]
    M = np.full((B, N), -math.inf)
    gam = np.zeros(B)
    count = np.zeros(B, dtype=np.int64)
    active = np.ones(B, dtype=bool)
    wmax = model.w_max
    atoms = [[] for _ in range(B)] if keep_atoms else None
    while active.any():
        idx = np.flatnonzero(active)
        E = np.empty((idx.size, CHUNK))
        P = np.empty((idx.size, CHUNK, model.n_params))
        for j, i in enumerate(idx):
            E[j] = gens[i].standard_exponential(CHUNK)
            P[j] = model.draw(gens[i], CHUNK)
        G = gam[idx, None] + np.cumsum(E, axis=1)
        Y = 1.0 / G
        contrib = Y[..., None] * model.w_nodes(P, coords)
        run = np.maximum.accumulate(np.concatenate([M[idx, None, :], contrib], axis=1), axis=1)
        mins_before = run[:, :-1, :].min(axis=2)
        stop = Y * wmax < mins_before
        has_stop = stop.any(axis=1)
        k = np.where(has_stop, stop.argmax(axis=1), CHUNK)
        M[idx] = run[np.arange(idx.size), k, :]
        count[idx] += k
        gam[idx] = G[:, -1]
        active[idx[has_stop]] = False
        if keep_atoms:
            for j, i in enumerate(idx):
                atoms[i].extend(zip(Y[j, :k[j]], P[j, :k[j]]))
        if (count[active] >= sampler.atom_budget).any():
            raise StoppingRuleStarved("stopping rule starved")
    return M, count, atoms


def _block_job(args):
    sampler, seeds = args
    M, count, _ = _simulate_block(sampler, seeds)
    return M, count


def simulate_batch(sampler: MaxStableSampler, n_samples: int, seed: int, threads: int = 1,
                   block: int = BLOCK):
    """Fields of samples ``seed, ..., seed + n_samples - 1`` as ``(n, N)`` plus atom counts.

    ``threads > 1`` farms blocks out to worker processes; results do not
    depend on the worker count.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    jobs = [(sampler, [seed + i for i in range(a, min(a + block, n_samples))])
            for a in range(0, n_samples, block)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(_block_job, jobs))
    else:
        parts = [_block_job(j) for j in jobs]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def simulate_simple(sampler: MaxStableSampler, seed: int) -> GridField:
    """One exact sample of the simple max-stable field on the grid."""
    M, _, _ = _simulate_block(sampler, [seed])
    return GridField(sampler.domain, M[0].reshape(sampler.domain.shape))


def simulate_with_atoms(sampler: MaxStableSampler, seed: int):
    """Sample ``seed`` together with the atoms ``(Y_i, params_i)`` that built it."""
    M, _, atoms = _simulate_block(sampler, [seed], keep_atoms=True)
    return GridField(sampler.domain, M[0].reshape(sampler.domain.shape)), atoms[0]


def trajectory_from_atoms(model: PlateauModel, atoms) -> Realization:
    """Exact 1-D trajectory ``s -> max_i Y_i W_i(s)`` over the given atoms.

    The result is piecewise constant with jumps at plateau edges; since
    plateaus are closed, each edge takes the larger of its two sides.
    It coincides with the grid sample at every node.
    """
    if len(model.bounds) != 1:
        raise ValueError("exact trajectories are one-dimensional")
    lo, hi = model.bounds[0]
    plates = []
    for y, p in atoms:
        for w, h in model.steps:
            plates.append((p[0] - w, p[0] + w, y * (h / model.f)))
    cuts = sorted({lo, hi} | {e for a, b, _ in plates for e in (a, b) if lo < e < hi})

    def value_closed(s):
        return max([v for a, b, v in plates if a <= s <= b], default=0.0)

    values = [value_closed(c) for c in cuts]
    segments = []
    for a, b in zip(cuts, cuts[1:]):
        v = max([val for u, w, val in plates if u <= a and b <= w], default=0.0)
        segments.append(Segment(lambda s, side=0, v=v: v, constant=True))
    return Realization(cuts, values, segments)


# -- capacities ------------------------------------------------------------------

def _masks(domain: Domain, probe: CompactProbe):
    probe.validate(domain)
    out = []
    for part in probe.parts:
        m = domain.box_mask(part.box).reshape(-1)
        if not m.any():
            raise ValueError("empty probe box")
        out.append(m)
    return out


def hits_matrix(fields: np.ndarray, masks, levels) -> np.ndarray:
    """Boolean hits of each row of ``fields`` against probe parts given as node masks."""
    hit = np.zeros(len(fields), dtype=bool)
    for m, x in zip(masks, levels):
        hit |= fields[:, m].max(axis=1) >= x
    return hit


def _halfwidth(p, n):
    return 1.96 * math.sqrt(max(p * (1 - p), 0.0) / n)


def capacity_closed_form(model: SpectralModel, probe: CompactProbe, n_expectation_samples: int = 0,
                         seed: int = 0, method: str = "auto") -> float:
    """Miss probability ``Pr[hypo xi n K = empty] = exp(-E[max_j max_{K_j} W / x_j])``.

    ``method="auto"`` uses the model's closed form; ``"monte_carlo"``
    estimates the expectation from ``n_expectation_samples`` draws of ``W``.
    """
    if any(p.level <= 0 for p in probe.parts):
        return 0.0
    if method == "auto":
        return math.exp(-model.expected_probe_max(probe))
    if method != "monte_carlo":
        raise ValueError(f"unknown method {method!r}")
    if n_expectation_samples < 1:
        raise ValueError("n_expectation_samples must be positive")
    P = model.draw(_rng(seed), n_expectation_samples)
    vals = np.zeros(n_expectation_samples)
    for part in probe.parts:
        if math.isfinite(part.level):
            vals = np.maximum(vals, model.w_box_sup(P, part.box) / part.level)
    return math.exp(-float(vals.mean()))


def capacity_empirical(sampler: MaxStableSampler, probe: CompactProbe, n_samples: int, seed: int,
                       threads: int = 1):
    """Empirical hit rate ``T(K)`` with a 95% half-width, plus the mean atom count."""
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    masks = _masks(sampler.domain, probe)
    fields, atoms = simulate_batch(sampler, n_samples, seed, threads)
    p = float(hits_matrix(fields, masks, [q.level for q in probe.parts]).mean())
    return p, _halfwidth(p, n_samples), float(atoms.mean())


def _two_prop_z(p1, n1, p2, n2):
    pool = (p1 * n1 + p2 * n2) / (n1 + n2)
    se = math.sqrt(pool * (1 - pool) * (1 / n1 + 1 / n2))
    if se == 0:
        return 0.0 if p1 == p2 else math.copysign(math.inf, p1 - p2)
    return (p1 - p2) / se


def _grouped_fields(sampler, n, n_samples, seed, threads):
    fields, atoms = simulate_batch(sampler, n * n_samples, seed, threads)
    return fields.reshape(n_samples, n, -1), atoms


def _product_check(fields_all, first, n, masks, levels):
    """Miss of ``xi`` from all ``n N`` fields raised to ``n`` against the miss of ``n xi``."""
    flat = fields_all.reshape(-1, fields_all.shape[-1])
    m1 = 1.0 - float(hits_matrix(flat, masks, levels).mean())
    scaled_levels = [x / n for x in levels]
    m2 = 1.0 - float(hits_matrix(first, masks, scaled_levels).mean())
    var1 = (n * m1 ** (n - 1)) ** 2 * m1 * (1 - m1) / len(flat)
    var2 = m2 * (1 - m2) / len(first)
    se = math.sqrt(var1 + var2)
    diff = m1 ** n - m2
    z = 0.0 if se == 0 and diff == 0 else (diff / se if se > 0 else math.inf)
    return m1 ** n, m2, z


def check_simple_max_stability(sampler: MaxStableSampler, n: int, probes, n_samples: int, seed: int,
                               threads: int = 1, z_threshold: float = 3.0) -> dict:
    """Compare ``max_{i<=n} xi_i`` with ``n xi`` through hit rates on each probe.

    Group ``g`` uses samples ``seed + g n, ..., seed + g n + n - 1``; the
    scaled field is ``n`` times the first member, so ``n = 1`` compares a
    field with itself.
    """
    if n < 1:
        raise ValueError("n must be positive")
    fields, atoms = _grouped_fields(sampler, n, n_samples, seed, threads)
    maxfold = fields.max(axis=1)
    first = fields[:, 0, :]
    results = []
    for probe in probes:
        masks = _masks(sampler.domain, probe)
        levels = [p.level for p in probe.parts]
        p_max = float(hits_matrix(maxfold, masks, levels).mean())
        p_scaled = float(hits_matrix(first, masks, [x / n for x in levels]).mean())
        z = _two_prop_z(p_max, n_samples, p_scaled, n_samples)
        miss_pow, miss_scaled, z_prod = _product_check(fields, first, n, masks, levels)
        results.append({"probe": probe.to_dict(), "p_maxfold": p_max, "p_scaled": p_scaled,
                        "z_score": z, "miss_pow": miss_pow, "miss_scaled": miss_scaled,
                        "product_z": z_prod})
    ok = all(abs(r["z_score"]) < z_threshold and abs(r["product_z"]) < z_threshold for r in results)
    return {"n": n, "n_samples": n_samples, "seed": seed, "atoms_mean": float(atoms.mean()),
            "results": results, "passed": ok}


def destandardized_max_stability(sampler: MaxStableSampler, theta, n: int, probes, n_samples: int,
                                 seed: int, threads: int = 1, z_threshold: float = 3.0) -> dict:
    """Max-stability of ``xi = Q(Phi(xi*); theta)`` with norming ``a_{n,theta(s)}``, ``b_{n,theta(s)}``."""
    from . import gev as _gev
    from .transform import frechet_unpivot
    if isinstance(theta, _gev.GevParams):
        theta = _gev.ConstantTheta(theta)
    if not theta.continuous:
        raise ValueError("destandardized max-stability needs a continuous theta field")
    coords = sampler.coords
    g, mu, sg = theta.arrays(coords)
    a, b = _gev._norming_arrays(n, g, mu, sg)
    fields, atoms = _grouped_fields(sampler, n, n_samples, seed, threads)
    xi = frechet_unpivot(fields, g, mu, sg)
    maxfold = xi.max(axis=1)
    with np.errstate(invalid="ignore"):
        scaled = a * xi[:, 0, :] + b
    results = []
    for probe in probes:
        masks = _masks(sampler.domain, probe)
        levels = [p.level for p in probe.parts]
        p_max = float(hits_matrix(maxfold, masks, levels).mean())
        p_scaled = float(hits_matrix(scaled, masks, levels).mean())
        z = _two_prop_z(p_max, n_samples, p_scaled, n_samples)
        results.append({"probe": probe.to_dict(), "p_maxfold": p_max, "p_scaled": p_scaled,
                        "z_score": z})
    ok = all(abs(r["z_score"]) < z_threshold for r in results)
    return {"n": n, "n_samples": n_samples, "seed": seed, "atoms_mean": float(atoms.mean()),
            "theta": theta.to_dict(), "results": results, "passed": ok}
