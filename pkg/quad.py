# quad.py
"""
Integration over chart boxes and flow-parameter balls, plus C¹ bump test forms.

Tensor-grid integrals use composite Gauss–Legendre rules; the attached error
estimate is the distance to the same rule with half the nodes per panel.
Monte-Carlo integrals use a seeded generator and report the standard error.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import gamma, pi
from typing import Callable, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from config import MAX_WORKERS
from errors import QuadratureError, ShapeError, SupportError
from exterior import Variance, index_map, multi_indices, permutation_sign
from fields import CallableField, ChartDomain, Field, Jet, as_points
from models import IntegralEstimate, QuadratureSpec

# Shared pool for node evaluation; results are reassembled in submission order.
executor = ThreadPoolExecutor(max_workers=MAX_WORKERS)
CHUNK_SIZE = 16_384

Integrand = Callable[[np.ndarray], np.ndarray]


def map_chunks(fn: Callable[[np.ndarray], np.ndarray], points: np.ndarray) -> np.ndarray:
    if len(points) <= CHUNK_SIZE or MAX_WORKERS <= 1:
        return fn(points)
    chunks = [points[i:i + CHUNK_SIZE] for i in range(0, len(points), CHUNK_SIZE)]
    return np.concatenate(list(executor.map(fn, chunks)), axis=0)


def _as_integrand(f: Union[Field, Integrand]) -> Integrand:
    if isinstance(f, Field):
        if f.grade != 0:
            raise ShapeError(f"{f.label} is not a scalar field")
        return f.values
    return f


def _weighted(f: Union[Field, Integrand], density: Optional[Integrand]) -> Integrand:
    fn = _as_integrand(f)
    if density is None:
        return fn

    def weighted(pts: np.ndarray) -> np.ndarray:
        return fn(pts) * density(pts)

    return weighted


def _checked_sum(values: np.ndarray, weights: np.ndarray) -> float:
    values = np.asarray(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(values)):
        raise QuadratureError("integrand is not finite at some quadrature node")
    return float(np.dot(weights, values))


# ==========================================================
# RULES
# ==========================================================


def gauss_legendre(a: float, b: float, nodes: int, panels: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss–Legendre rule on [a, b]."""
    if nodes < 1:
        raise QuadratureError("quadrature rule with zero nodes")
    if panels < 1:
        raise QuadratureError("quadrature rule with zero panels")
    t, w = leggauss(nodes)
    edges = np.linspace(a, b, panels + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    halves = 0.5 * (edges[1:] - edges[:-1])
    x = (mids[:, None] + halves[:, None] * t[None, :]).reshape(-1)
    weights = (halves[:, None] * w[None, :]).reshape(-1)
    return x, weights


def tensor_rule(
    lower: Sequence[float], upper: Sequence[float], nodes: int, panels: int = 1
) -> Tuple[np.ndarray, np.ndarray]:
    rules = [gauss_legendre(a, b, nodes, panels) for a, b in zip(lower, upper)]
    if not rules:
        return np.zeros((1, 0)), np.ones(1)
    grids = np.meshgrid(*[x for x, _ in rules], indexing="ij")
    wgrids = np.meshgrid(*[w for _, w in rules], indexing="ij")
    points = np.stack([g.reshape(-1) for g in grids], axis=-1)
    weights = np.prod(np.stack([g.reshape(-1) for g in wgrids], axis=-1), axis=-1)
    return points, weights


def ball_volume(m: int, r: float) -> float:
    """Lebesgue measure λ_m(B_r) of the Euclidean ball."""
    return pi ** (m / 2) * r ** m / gamma(m / 2 + 1)


def ball_rule(m: int, r: float, radial_nodes: int, angular_nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Product rule on the Euclidean ball B_r ⊂ R^m, m ≤ 3."""
    if m == 1:
        x, w = gauss_legendre(-r, r, radial_nodes)
        return x[:, None], w
    radius, rw = gauss_legendre(0.0, r, radial_nodes)
    if m == 2:
        theta = 2 * pi * np.arange(angular_nodes) / angular_nodes
        rr, tt = np.meshgrid(radius, theta, indexing="ij")
        weights = (rw * radius)[:, None] * np.full(angular_nodes, 2 * pi / angular_nodes)[None, :]
        points = np.stack([rr * np.cos(tt), rr * np.sin(tt)], axis=-1)
        return points.reshape(-1, 2), weights.reshape(-1)
    if m == 3:
        cos_polar, cw = gauss_legendre(-1.0, 1.0, max(1, angular_nodes // 2))
        phi = 2 * pi * np.arange(angular_nodes) / angular_nodes
        rr, cc, pp = np.meshgrid(radius, cos_polar, phi, indexing="ij")
        ss = np.sqrt(1.0 - cc ** 2)
        points = np.stack([rr * ss * np.cos(pp), rr * ss * np.sin(pp), rr * cc], axis=-1)
        weights = (
            (rw * radius ** 2)[:, None, None]
            * cw[None, :, None]
            * np.full(angular_nodes, 2 * pi / angular_nodes)[None, None, :]
        )
        return points.reshape(-1, 3), weights.reshape(-1)
    raise QuadratureError(f"ball rules are available for m ≤ 3, got m = {m}")


# ==========================================================
# INTEGRATION
# ==========================================================


def integrate(
    f: Union[Field, Integrand],
    vs=None,
    domain: Optional[ChartDomain] = None,
    q: Optional[QuadratureSpec] = None,
) -> IntegralEstimate:
    """∫_domain f dμ, with μ = ρ·Lebesgue for a VolumeStructure `vs` (Lebesgue if None)."""
    q = q or QuadratureSpec()
    if domain is None:
        if vs is None:
            raise QuadratureError("integration needs a domain or a volume structure")
        domain = vs.domain
    integrand = _weighted(f, vs.density_values if vs is not None else None)

    if q.mode == "monte-carlo":
        if q.samples < 2:
            raise QuadratureError("monte-carlo integration needs at least two samples")
        rng = np.random.default_rng(q.seed)
        points = rng.uniform(domain.lower, domain.upper, size=(q.samples, domain.dimension))
        values = np.asarray(map_chunks(integrand, points), dtype=float)
        if not np.all(np.isfinite(values)):
            raise QuadratureError("integrand is not finite at some sample")
        volume = domain.volume
        estimate = IntegralEstimate(
            value=float(volume * values.mean()),
            error=float(volume * values.std(ddof=1) / np.sqrt(q.samples)),
            nodes=q.samples,
        )
    else:
        fine = _tensor_sum(integrand, domain, q.nodes_per_axis, q.panels)
        coarse = _tensor_sum(integrand, domain, max(1, q.nodes_per_axis // 2), q.panels)
        estimate = IntegralEstimate(
            value=fine[0], error=abs(fine[0] - coarse[0]), nodes=fine[1]
        )
    logging.debug(f"[QUAD] {q.mode}: {estimate.value:.12g} ± {estimate.error:.3g} ({estimate.nodes} nodes)")
    return estimate


def _tensor_sum(integrand: Integrand, domain: ChartDomain, nodes: int, panels: int) -> Tuple[float, int]:
    points, weights = tensor_rule(domain.lower, domain.upper, nodes, panels)
    return _checked_sum(map_chunks(integrand, points), weights), len(weights)


def integrate_product(
    f: Integrand,
    box: ChartDomain,
    m: int,
    r: float,
    q: QuadratureSpec,
) -> IntegralEstimate:
    """∫_{box × B_r} f(s, t) dt ds, points passed to f as (s, t) rows."""

    def total(nodes: int, radial: int, angular: int) -> Tuple[float, int]:
        sp, sw = tensor_rule(box.lower, box.upper, nodes, q.panels)
        tp, tw = ball_rule(m, r, radial, angular)
        points = np.concatenate(
            [np.repeat(sp, len(tp), axis=0), np.tile(tp, (len(sp), 1))], axis=1
        )
        weights = np.repeat(sw, len(tw)) * np.tile(tw, len(sw))
        return _checked_sum(map_chunks(f, points), weights), len(weights)

    fine = total(q.nodes_per_axis, q.radial_nodes, q.angular_nodes)
    coarse = total(
        max(1, q.nodes_per_axis // 2), max(1, q.radial_nodes // 2), max(1, q.angular_nodes // 2)
    )
    return IntegralEstimate(value=fine[0], error=abs(fine[0] - coarse[0]), nodes=fine[1])


# ==========================================================
# BUMPS
# ==========================================================


@dataclass(frozen=True)
class Bump:
    """C¹ hump with profile (1 − t²)².

    `euclidean` (default) uses t = |x − c| / radius, so the support is the closed
    ball. `chebyshev` multiplies one profile per axis; its support is the box of
    half-width `radius`, on which the bump is a polynomial.
    """

    center: Tuple[float, ...]
    radius: float
    metric: Literal["chebyshev", "euclidean"] = "euclidean"

    def __post_init__(self):
        if self.radius <= 0:
            raise SupportError(f"bump radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def dimension(self) -> int:
        return len(self.center)

    @property
    def support(self) -> ChartDomain:
        """Bounding box of the support; equal to it for `chebyshev`."""
        return ChartDomain(
            tuple(c - self.radius for c in self.center), tuple(c + self.radius for c in self.center)
        )

    def jet(self, points) -> Tuple[np.ndarray, np.ndarray]:
        pts = as_points(points, self.dimension)
        u = (pts - np.asarray(self.center)) / self.radius
        if self.metric == "euclidean":
            t2 = np.sum(u ** 2, axis=-1)
            inside = t2 < 1.0
            value = np.where(inside, (1.0 - t2) ** 2, 0.0)
            grad = np.where(inside[:, None], -4.0 * (1.0 - t2)[:, None] * u / self.radius, 0.0)
            return value, grad
        inside = np.abs(u) < 1.0
        profile = np.where(inside, (1.0 - u ** 2) ** 2, 0.0)
        slope = np.where(inside, -4.0 * u * (1.0 - u ** 2) / self.radius, 0.0)
        value = np.prod(profile, axis=-1)
        grad = np.empty_like(u)
        for axis in range(self.dimension):
            others = np.prod(np.delete(profile, axis, axis=-1), axis=-1)
            grad[:, axis] = slope[:, axis] * others
        return value, grad

    def values(self, points) -> np.ndarray:
        return self.jet(points)[0]


class BumpForm(CallableField):
    """Compactly supported k-form: selected components are weighted copies of one bump."""

    def __init__(self, bump: Bump, grade: int, weights: np.ndarray, domain: Optional[ChartDomain], label: str):
        self.bump = bump
        self.weights = np.asarray(weights, dtype=float)
        super().__init__(
            bump.dimension, grade, Variance.COVECTOR, self._evaluate, self._jet_of, domain, label
        )

    @property
    def support(self) -> ChartDomain:
        return self.bump.support

    def _evaluate(self, pts: np.ndarray) -> np.ndarray:
        return self.bump.values(pts)[:, None] * self.weights

    def _jet_of(self, pts: np.ndarray) -> Jet:
        value, grad = self.bump.jet(pts)
        return Jet(value[:, None] * self.weights, grad[:, :, None] * self.weights)


def make_bump_form(
    k: int,
    center: Sequence[float],
    radius: float,
    selector: Union[Mapping[Tuple[int, ...], float], Sequence[Tuple[int, ...]], None] = None,
    domain: Optional[ChartDomain] = None,
    metric: Literal["chebyshev", "euclidean"] = "euclidean",
    label: str = "",
    inflation: float = 1e-6,
) -> BumpForm:
    """Bump-based k-form; `selector` picks components (all weight 1 when given as a list)."""
    n = len(center)
    if selector is None:
        selector = {(): 1.0} if k == 0 else {tuple(range(k)): 1.0}
    if not isinstance(selector, Mapping):
        selector = {tuple(index): 1.0 for index in selector}
    weights = np.zeros(len(multi_indices(n, k)))
    lookup = index_map(n, k)
    for index, weight in selector.items():
        index = tuple(index)
        sign = permutation_sign(index)
        if len(index) != k or not sign:
            raise ShapeError(f"invalid multi-index {index} for a {k}-form in dimension {n}")
        weights[lookup[tuple(sorted(index))]] += sign * float(weight)

    bump = Bump(tuple(center), radius, metric)
    if domain is not None:
        if domain.dimension != n:
            raise ShapeError("bump center and domain disagree on dimension")
        reach = radius * (1.0 + inflation)
        lower = np.asarray(center) - reach
        upper = np.asarray(center) + reach
        if np.any(lower <= np.asarray(domain.lower)) or np.any(upper >= np.asarray(domain.upper)):
            raise SupportError(
                f"bump support around {list(center)} with radius {radius} is not interior to the domain"
            )
    return BumpForm(bump, k, weights, domain, label or f"bump{k}")
