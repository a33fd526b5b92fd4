"""Extended-real functions sampled on rectangular grids.

A :class:`GridField` is the numeric stand-in for a usc function on a compact
rectangle. On a finite grid every function is trivially usc, so exact
semicontinuity decisions live in :mod:`uscx.scenario`; this module offers the
approximate tools (hull, hypo-convergence check) plus the exact hit-tests
used to estimate capacity functionals.

Extended reals are IEEE floats restricted to ``[-inf, +inf]``: NaN is
rejected wherever values enter the module.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_SLACK = 1e-9
DEFAULT_RADIUS = 2


def parse_ext(token) -> float:
    """Parse an extended real from a number or one of the tokens "+inf"/"-inf"."""
    if isinstance(token, str):
        t = token.strip().lower()
        if t in ("+inf", "inf", "+infinity", "infinity"):
            return math.inf
        if t in ("-inf", "-infinity"):
            return -math.inf
        value = float(t)
    else:
        value = float(token)
    if math.isnan(value):
        raise ValueError("NaN is not an extended real")
    return value


def format_ext(value: float) -> str:
    if value == math.inf:
        return "+inf"
    if value == -math.inf:
        return "-inf"
    return repr(float(value))


def check_ext(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if np.isnan(arr).any():
        raise ValueError("NaN is not an extended real")
    return arr


@dataclass(frozen=True)
class Domain:
    """Compact rectangle in dimension 1 or 2 with a uniform grid.

    ``resolution`` is the number of grid points per axis, endpoints included.
    """

    bounds: tuple
    resolution: tuple

    def __init__(self, bounds, resolution):
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        if len(bounds) not in (1, 2):
            raise ValueError("domain dimension must be 1 or 2")
        if isinstance(resolution, (int, np.integer)):
            resolution = (int(resolution),) * len(bounds)
        resolution = tuple(int(r) for r in resolution)
        if len(resolution) != len(bounds):
            raise ValueError("one resolution per axis expected")
        for (lo, hi), r in zip(bounds, resolution):
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
                raise ValueError(f"invalid axis bounds ({lo}, {hi})")
            if r < 2:
                raise ValueError("resolution must be at least 2")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "resolution", resolution)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def shape(self) -> tuple:
        return self.resolution

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def steps(self) -> tuple:
        return tuple((hi - lo) / (r - 1) for (lo, hi), r in zip(self.bounds, self.resolution))

    def axes(self) -> list:
        return [np.linspace(lo, hi, r) for (lo, hi), r in zip(self.bounds, self.resolution)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (dim,)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def box_mask(self, box) -> np.ndarray:
        """Boolean mask of grid nodes inside a closed box (node-aligned boxes are inclusive)."""
        box = _as_box(box, self.dim)
        masks = []
        for ax, (lo, hi), step in zip(self.axes(), box, self.steps):
            eps = 1e-9 * step
            masks.append((ax >= lo - eps) & (ax <= hi + eps))
        if self.dim == 1:
            return masks[0]
        return masks[0][:, None] & masks[1][None, :]

    def to_dict(self) -> dict:
        return {"dim": self.dim, "bounds": [list(b) for b in self.bounds],
                "resolution": list(self.resolution)}

    @classmethod
    def from_dict(cls, d: dict) -> "Domain":
        dom = cls(d["bounds"], d["resolution"])
        if "dim" in d and int(d["dim"]) != dom.dim:
            raise ValueError("dim does not match bounds")
        return dom


def _as_box(box, dim: int) -> tuple:
    box = tuple((float(lo), float(hi)) for lo, hi in box)
    if len(box) != dim:
        raise ValueError(f"box has {len(box)} axes, domain has {dim}")
    for lo, hi in box:
        if lo > hi:
            raise ValueError(f"invalid box side ({lo}, {hi})")
    return box


@dataclass(frozen=True)
class ProbePart:
    box: tuple
    level: float


@dataclass(frozen=True)
class CompactProbe:
    """Finite union of ``box x {level}`` compacta in ``D x R``."""

    parts: tuple = field(default_factory=tuple)

    def __init__(self, parts: Iterable):
        norm = []
        for p in parts:
            if isinstance(p, ProbePart):
                box, level = p.box, p.level
            elif isinstance(p, dict):
                box, level = p["box"], p["level"]
            else:
                box, level = p
            box = tuple((float(lo), float(hi)) for lo, hi in box)
            norm.append(ProbePart(box, parse_ext(level)))
        if not norm:
            raise ValueError("probe needs at least one part")
        object.__setattr__(self, "parts", tuple(norm))

    def scaled_levels(self, factor: float) -> "CompactProbe":
        return CompactProbe([(p.box, p.level * factor) for p in self.parts])

    def validate(self, domain: Domain) -> None:
        for p in self.parts:
            for (lo, hi), (dlo, dhi) in zip(_as_box(p.box, domain.dim), domain.bounds):
                if lo < dlo - 1e-12 or hi > dhi + 1e-12:
                    raise ValueError(f"probe box {p.box} leaves the domain")

    def to_dict(self) -> dict:
        return {"parts": [{"box": [list(b) for b in p.box], "level": format_ext(p.level)
                           if math.isinf(p.level) else p.level} for p in self.parts]}

    @classmethod
    def from_dict(cls, d: dict) -> "CompactProbe":
        return cls(d["parts"])


class GridField:
    """Extended-real values on the nodes of a :class:`Domain` (read-only)."""

    __slots__ = ("domain", "values")

    def __init__(self, domain: Domain, values):
        arr = check_ext(values).astype(float, copy=True)
        if arr.size != domain.size:
            raise ValueError(f"expected {domain.size} values, got {arr.size}")
        arr = arr.reshape(domain.shape)
        arr.setflags(write=False)
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("GridField is immutable")

    @classmethod
    def constant(cls, domain: Domain, value: float) -> "GridField":
        return cls(domain, np.full(domain.shape, parse_ext(value)))

    @classmethod
    def from_function(cls, domain: Domain, fn) -> "GridField":
        c = domain.coords()
        if domain.dim == 1:
            vals = [fn(float(s[0])) for s in c]
        else:
            vals = [[fn(float(s[0]), float(s[1])) for s in row] for row in c]
        return cls(domain, vals)

    def __eq__(self, other):
        if not isinstance(other, GridField):
            return NotImplemented
        return self.domain == other.domain and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"GridField({self.domain!r}, min={self.values.min()}, max={self.values.max()})"


def _same_domain(fields: Sequence[GridField]) -> Domain:
    dom = fields[0].domain
    for f in fields[1:]:
        if f.domain != dom:
            raise ValueError("fields live on different domains")
    return dom


def box_sup(field: GridField, box) -> float:
    mask = field.domain.box_mask(box)
    if not mask.any():
        raise ValueError("empty probe box")
    return float(field.values[mask].max())


def hypo_hits(field: GridField, probe: CompactProbe) -> bool:
    """True iff the hypograph of ``field`` meets the probe.

    A part ``(box, x)`` is hit when the maximum over grid nodes in ``box``
    reaches ``x``.
    """
    return any(box_sup(field, p.box) >= p.level for p in probe.parts)


def pointwise_max(fields: Sequence[GridField]) -> GridField:
    if not fields:
        raise ValueError("need at least one field")
    dom = _same_domain(fields)
    out = fields[0].values
    for f in fields[1:]:
        out = np.maximum(out, f.values)
    return GridField(dom, out)


def _neighborhood_max(values: np.ndarray, radius: int) -> np.ndarray:
    out = values.copy()
    for axis in range(values.ndim):
        cur = out.copy()
        n = values.shape[axis]
        for k in range(1, radius + 1):
            if k >= n:
                break
            lo = [slice(None)] * values.ndim
            hi = [slice(None)] * values.ndim
            lo[axis], hi[axis] = slice(0, n - k), slice(k, n)
            cur[tuple(lo)] = np.maximum(cur[tuple(lo)], out[tuple(hi)])
            cur[tuple(hi)] = np.maximum(cur[tuple(hi)], out[tuple(lo)])
        out = cur
    return out


def usc_hull_grid(field: GridField) -> GridField:
    """Grid usc hull: node-wise max over the closed one-step neighborhood.

    This is ``inf_eps sup_{|t - s| <= eps} z(t)`` frozen at ``eps`` equal to
    one grid step (square neighborhoods in 2-D). The output dominates the
    input. It is not idempotent: repeated application spreads maxima and
    reaches the constant global maximum after at most ``resolution - 1``
    rounds.
    """
    return GridField(field.domain, _neighborhood_max(field.values, 1))


def inf_on_box(field: GridField, box) -> float:
    mask = field.domain.box_mask(box)
    if not mask.any():
        raise ValueError("empty box")
    return float(field.values[mask].min())


def hypo_converges(sequence: Sequence[GridField], limit: GridField,
                   neighborhood_radius: int = DEFAULT_RADIUS,
                   slack: float = DEFAULT_SLACK) -> str:
    """Finite-grid check of the two-branch pointwise hypo-convergence criterion.

    Only the tail (last third) of ``sequence`` is examined. Sequences
    ``s_n -> s`` are modelled by nodes within ``neighborhood_radius`` steps.

    upper branch
        every tail value ``x_n(t)`` is at most ``limit(s) + slack`` for some
        node ``s`` near ``t``; a value that no nearby limit value can absorb
        is a point ``s_n`` with ``x_n(s_n)`` exceeding the limit.
    lower branch
        for every node ``s`` and every tail field, some node ``t`` near ``s``
        has ``x_n(t) >= limit(s) - slack``.

    Returns ``"pass"``, ``"fail_upper"`` or ``"fail_lower"`` (upper checked first).
    """
    if len(sequence) < 3:
        raise ValueError("sequence must contain at least 3 fields")
    if neighborhood_radius < 1:
        raise ValueError("neighborhood_radius must be a positive integer")
    _same_domain(list(sequence) + [limit])
    tail = sequence[(2 * len(sequence)) // 3:]
    stack = np.stack([f.values for f in tail])
    lim_reach = _neighborhood_max(limit.values, neighborhood_radius)
    if np.any(stack > lim_reach[None] + slack):
        return "fail_upper"
    for values in stack:
        if np.any(_neighborhood_max(values, neighborhood_radius) < limit.values - slack):
            return "fail_lower"
    return "pass"


# -- serialization ---------------------------------------------------------

def field_to_csv(field: GridField, header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    dom = field.domain
    w.writerow(["s1", "value"] if dom.dim == 1 else ["s1", "s2", "value"])
    coords = dom.coords().reshape(-1, dom.dim)
    for c, v in zip(coords, field.values.reshape(-1)):
        w.writerow([repr(float(x)) for x in c] + [format_ext(v)])
    return buf.getvalue()


def field_from_csv(text: str, domain: Domain) -> GridField:
    """Read a field written by :func:`field_to_csv`; rows are matched to nodes by coordinates."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    rows = list(csv.reader(lines))
    header = [h.strip() for h in rows[0]]
    expected = ["s1", "value"] if domain.dim == 1 else ["s1", "s2", "value"]
    if header != expected:
        raise ValueError(f"expected header {expected}, got {header}")
    values = np.full(domain.shape, np.nan)
    axes = domain.axes()
    for row in rows[1:]:
        idx = []
        for k in range(domain.dim):
            s = float(row[k])
            i = int(np.argmin(np.abs(axes[k] - s)))
            if abs(axes[k][i] - s) > 1e-6 * domain.steps[k]:
                raise ValueError(f"coordinate {s} is not a grid node")
            idx.append(i)
        values[tuple(idx)] = parse_ext(row[-1])
    if np.isnan(values).any():
        raise ValueError("CSV does not cover every grid node")
    return GridField(domain, values)


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
