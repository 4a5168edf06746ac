"""
Observables for dephydro
Microscopic flux, currents, empirical density and fluctuation fields, product-measure expectations
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import ConfigError, DomainError
from .lattice import Configuration, DensityProfile, Topology

Number = Union[float, Fraction]


# ============================================
# Test functions
# ============================================

class TestFunction(ABC):
    """Continuous, compactly supported function on the macroscopic line"""

    __test__ = False
    name: str = "f"

    @abstractmethod
    def __call__(self, x) -> np.ndarray:
        pass

    @property
    @abstractmethod
    def support(self) -> Tuple[float, float]:
        pass

    @property
    def lipschitz(self) -> float:
        return math.inf

    def integral(self) -> float:
        lo, hi = self.support
        return quad(lambda x: float(self(x)), lo, hi, limit=200)[0] if hi > lo else 0.0

    def l2_squared(self) -> float:
        lo, hi = self.support
        return quad(lambda x: float(self(x)) ** 2, lo, hi, limit=200)[0] if hi > lo else 0.0


@dataclass(frozen=True)
class Hat(TestFunction):
    center: float = 0.0
    half_width: float = 1.0
    name: str = "hat"

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.maximum(0.0, 1.0 - np.abs(x - self.center) / self.half_width)

    @property
    def support(self):
        return self.center - self.half_width, self.center + self.half_width

    @property
    def lipschitz(self) -> float:
        return 1.0 / self.half_width

    def integral(self) -> float:
        return self.half_width

    def l2_squared(self) -> float:
        return 2.0 * self.half_width / 3.0


@dataclass(frozen=True)
class TruncatedGaussian(TestFunction):
    """Gaussian bump lowered to vanish at `cutoff` standard deviations"""

    center: float = 0.0
    sigma: float = 0.5
    cutoff: float = 3.0
    name: str = "gaussian"

    def __call__(self, x):
        z = (np.asarray(x, dtype=np.float64) - self.center) / self.sigma
        floor = math.exp(-0.5 * self.cutoff**2)
        return np.where(np.abs(z) < self.cutoff, np.exp(-0.5 * z * z) - floor, 0.0)

    @property
    def support(self):
        w = self.cutoff * self.sigma
        return self.center - w, self.center + w

    @property
    def lipschitz(self) -> float:
        return math.exp(-0.5) / self.sigma


@dataclass(frozen=True)
class SmoothedIndicator(TestFunction):
    """1 on [a, b] with linear ramps of width `ramp` on both sides"""

    a: float = -1.0
    b: float = 1.0
    ramp: float = 0.25
    name: str = "indicator"

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        left = (x - (self.a - self.ramp)) / self.ramp
        right = ((self.b + self.ramp) - x) / self.ramp
        return np.clip(np.minimum(left, right), 0.0, 1.0)

    @property
    def support(self):
        return self.a - self.ramp, self.b + self.ramp

    @property
    def lipschitz(self) -> float:
        return 1.0 / self.ramp

    def integral(self) -> float:
        return (self.b - self.a) + self.ramp


@dataclass(frozen=True)
class ZeroFunction(TestFunction):
    name: str = "zero"

    def __call__(self, x):
        return np.zeros_like(np.asarray(x, dtype=np.float64))

    @property
    def support(self):
        return 0.0, 0.0

    @property
    def lipschitz(self) -> float:
        return 0.0


_FAMILIES: Dict[str, Callable[..., TestFunction]] = {
    "hat": Hat,
    "gaussian": TruncatedGaussian,
    "indicator": SmoothedIndicator,
    "zero": ZeroFunction,
}


def make_test_function(text: str) -> TestFunction:
    """Build a test function from 'family[:p1[:p2...]]', e.g. 'hat:0:0.5'"""
    family, *params = text.split(":")
    if family not in _FAMILIES:
        raise ConfigError(f"unknown test function '{family}', expected one of {sorted(_FAMILIES)}")
    try:
        return _FAMILIES[family](*(float(p) for p in params))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad parameters for test function '{text}': {e}") from e


# ============================================
# Microscopic flux and local expectations
# ============================================

def flux_of_pattern(m1: int, z0: int, p1: int, p2: int) -> int:
    """j evaluated on the occupancies at offsets -1, 0, 1, 2"""
    return (
        (z0 - p1)
        + (m1 * z0 * (1 - p1) - (1 - m1) * (1 - z0) * p1)
        + (z0 * p1 * (1 - p2) - (1 - z0) * (1 - p1) * p2)
    )


def micro_flux(config: Configuration, origin: int) -> int:
    """Net expected particle current across the bond (origin, origin + 1)"""
    topo = config.topology
    sites = [origin + k for k in (-1, 0, 1, 2)]
    if not topo.is_ring and not all(topo.contains(s) for s in sites):
        raise DomainError(f"flux at {origin} needs sites {sites[0]}..{sites[-1]} in {topo}")
    return flux_of_pattern(*(config.get(s) for s in sites))


@dataclass(frozen=True)
class LocalObservable:
    """Function of the occupancies at a few fixed offsets"""

    offsets: Tuple[int, ...]
    fn: Callable[..., Number]
    name: str = "local"

    def __post_init__(self):
        if max(self.offsets) - min(self.offsets) + 1 > 6:
            raise ValueError("local observables may span at most 6 consecutive sites")

    def __call__(self, *values: int) -> Number:
        return self.fn(*values)


FLUX = LocalObservable((-1, 0, 1, 2), flux_of_pattern, "flux")
PAIR = LocalObservable((0, 1), lambda a, b: a * b, "pair")


def indicator(pattern: Dict[int, int], name: str = "indicator") -> LocalObservable:
    offsets = tuple(sorted(pattern))
    wanted = tuple(pattern[k] for k in offsets)
    return LocalObservable(offsets, lambda *v: int(v == wanted), name)


def exact_product_expectation(observable: LocalObservable, rho: Number) -> Number:
    """Sum over all local patterns weighted by the Bernoulli(rho) product

    Passing rho as a Fraction keeps the result exact.
    """
    one = Fraction(1) if isinstance(rho, Fraction) else 1.0
    total = 0 * one
    for values in product((0, 1), repeat=len(observable.offsets)):
        k = sum(values)
        weight = rho**k * (one - rho) ** (len(values) - k)
        total += weight * observable(*values)
    return total


# ============================================
# Currents
# ============================================

@dataclass
class CurrentTally:
    """Signed particle crossings per bond; bond i joins sites i and i + 1 (array indices)"""

    topology: Topology
    bonds: np.ndarray

    def through(self, site: int) -> int:
        """Net crossings of the bond between `site` and `site + 1`"""
        return int(self.bonds[self.topology.index(site)])

    def mean_per_bond(self) -> float:
        return float(self.bonds.mean())

    def window_balance(self, a: int, b: int) -> int:
        """Crossings into [a, b] from the left minus crossings out of it on the right"""
        topo = self.topology
        inflow = 0
        if topo.is_ring or topo.contains(a - 1):
            inflow = self.through(a - 1)
        outflow = 0
        if topo.is_ring or topo.contains(b + 1):
            outflow = self.through(b)
        return inflow - outflow


def window_count(config: Configuration, a: int, b: int) -> int:
    first = config.topology.first_site
    occ = config.to_array()
    if config.topology.is_ring:
        idx = np.arange(a, b + 1) % config.topology.L
        return int(occ[idx].sum())
    return int(occ[a - first : b - first + 1].sum())


# ============================================
# Empirical fields
# ============================================

def _coordinates(config: Configuration, origin: int) -> np.ndarray:
    return (config.topology.sites() - origin).astype(np.float64)


def _check_support(config: Configuration, f: TestFunction, scale_eps: float, shift: float, origin: int):
    lo, hi = f.support
    if hi <= lo:
        return
    topo = config.topology
    first = scale_eps * (topo.first_site - origin)
    last = scale_eps * (topo.first_site + topo.L - 1 - origin)
    if lo + shift < first or hi + shift > last:
        raise DomainError(
            f"support [{lo + shift:.4g}, {hi + shift:.4g}] of {f.name} exceeds window [{first:.4g}, {last:.4g}]"
        )


def empirical_pairing(
    config: Configuration, f: TestFunction, scale_eps: float, shift: float = 0.0, origin: int = 0
) -> float:
    """eps * sum_x f(eps * x - shift) eta(x), with x = site - origin"""
    _check_support(config, f, scale_eps, shift, origin)
    x = _coordinates(config, origin)
    return float(scale_eps * np.dot(f(scale_eps * x - shift), config.to_array()))


@dataclass(frozen=True)
class EmpiricalField:
    scale_eps: float
    origin: int = 0

    def pairing(self, config: Configuration, f: TestFunction, shift: float = 0.0) -> float:
        return empirical_pairing(config, f, self.scale_eps, shift, self.origin)


@dataclass
class BlockProfile:
    """Block averages placed on macroscopic coordinates"""

    edges: np.ndarray
    values: np.ndarray
    block_size: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def to_density_profile(self) -> DensityProfile:
        return DensityProfile.table(list(self.edges), list(np.clip(self.values, 0.0, 1.0)))


def default_block_size(n: int) -> int:
    return max(8, n // 100)


def _blocks(values: np.ndarray, config: Configuration, b: int, scale_eps: float, origin: int,
            lo: Optional[int], hi: Optional[int]) -> BlockProfile:
    if b < 1:
        raise ValueError(f"block size must be >= 1, got {b}")
    topo = config.topology
    first = topo.first_site
    lo = first if lo is None else lo
    hi = first + topo.L - 1 if hi is None else hi
    n_blocks = (hi - lo + 1) // b
    start = lo - first
    chunk = values[start : start + n_blocks * b].reshape(n_blocks, b)
    edge_sites = lo + b * np.arange(n_blocks + 1)
    # a block covering sites [s, s + b) occupies [s - 1/2, s + b - 1/2) in lattice units
    edges = scale_eps * (edge_sites - origin - 0.5)
    return BlockProfile(edges, chunk.mean(axis=1), b)


def block_density_profile(
    config: Configuration,
    b: int,
    scale_eps: float = 1.0,
    origin: int = 0,
    lo: Optional[int] = None,
    hi: Optional[int] = None,
) -> BlockProfile:
    """Per-block particle densities over full blocks of b sites starting at lo"""
    return _blocks(config.to_array().astype(np.float64), config, b, scale_eps, origin, lo, hi)


def block_pair_frequency(
    config: Configuration,
    b: int,
    scale_eps: float = 1.0,
    origin: int = 0,
    lo: Optional[int] = None,
    hi: Optional[int] = None,
) -> BlockProfile:
    """Per-block averages of eta(x) eta(x + 1)"""
    occ = config.to_array().astype(np.float64)
    pairs = occ * np.roll(occ, -1)
    if not config.topology.is_ring:
        pairs[-1] = 0.0
    return _blocks(pairs, config, b, scale_eps, origin, lo, hi)


def jump_location(profile: BlockProfile, lo: float, hi: float) -> Optional[float]:
    """Block edge that best splits the blocks centred in [lo, hi] into two constant levels"""
    centers = profile.centers
    mask = (centers >= lo) & (centers <= hi)
    values = profile.values[mask]
    right_edges = profile.edges[1:][mask]
    m = values.size
    if m < 2:
        return None
    c1 = np.cumsum(values)
    c2 = np.cumsum(values * values)
    k = np.arange(1, m)
    left_sse = c2[k - 1] - c1[k - 1] ** 2 / k
    right_sum = c1[-1] - c1[k - 1]
    right_sse = (c2[-1] - c2[k - 1]) - right_sum**2 / (m - k)
    best = int(np.argmin(left_sse + right_sse))
    return float(right_edges[best])


# ============================================
# Fluctuations
# ============================================

@dataclass(frozen=True)
class ScalingTime:
    t: float
    eps: float
    s: float
    asymptotic: bool

    @property
    def residual(self) -> float:
        if not self.asymptotic:
            return 0.0
        return abs(self.eps**2 * self.s * math.sqrt(math.log(self.s)) - self.t) / self.t


def scaling_time(t: float, eps: float) -> ScalingTime:
    """Solve eps^2 s sqrt(log s) = t for s >= e

    When even s = e overshoots, falls back to diffusive s = t / eps^2 and
    marks the result as outside the asymptotic regime.
    """
    if t <= 0:
        raise ValueError(f"t must be positive, got {t}")
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")

    def g(s: float) -> float:
        return eps * eps * s * math.sqrt(math.log(s)) - t

    lo = math.e
    if g(lo) >= 0:
        return ScalingTime(t, eps, t / (eps * eps), False)
    hi = max(2 * lo, t / (eps * eps))
    while g(hi) < 0:
        hi *= 2.0
    s = brentq(g, lo, hi, xtol=1e-300, rtol=1e-13, maxiter=400)
    return ScalingTime(t, eps, float(s), True)


def _centered_offsets(config: Configuration, origin: int, shift: float) -> np.ndarray:
    """Lattice offsets from the moving frame; rings take the nearest periodic image"""
    x = _coordinates(config, origin) - shift
    if config.topology.is_ring:
        L = config.topology.L
        x = np.mod(x + 0.5 * L, L) - 0.5 * L
    return x


def fluctuation_pairing(
    config: Configuration, f: TestFunction, eps: float, s: float, origin: int = 0
) -> float:
    """eps^(1/2) * sum_x f(eps * x - eps * s) (eta(x) - 1/2)"""
    if not config.topology.is_ring:
        _check_support(config, f, eps, eps * s, origin)
    else:
        lo, hi = f.support
        if hi - lo > eps * config.topology.L:
            raise DomainError(f"support of {f.name} wider than the ring")
    x = _centered_offsets(config, origin, s)
    centered = config.to_array().astype(np.float64) - 0.5
    return float(math.sqrt(eps) * np.dot(f(eps * x), centered))


@dataclass(frozen=True)
class FluctuationField:
    """Y at one macroscopic time; no scaling time means s = 0"""

    scale_eps: float
    time: Optional[ScalingTime] = None
    origin: int = 0

    @property
    def s(self) -> float:
        return self.time.s if self.time is not None else 0.0

    def pairing(self, config: Configuration, f: TestFunction) -> float:
        return fluctuation_pairing(config, f, self.scale_eps, self.s, self.origin)


def interval_fluctuation(config: Configuration, length: int) -> float:
    """sum_{x=1..length} (eta(x) - 1/2)"""
    if length == 0:
        return 0.0
    topo = config.topology
    if not topo.is_ring and not topo.contains(length):
        raise DomainError(f"interval [1, {length}] exceeds {topo}")
    if topo.is_ring and length > topo.L:
        raise DomainError(f"interval [1, {length}] wraps around {topo}")
    return window_count(config, 1, length) - 0.5 * length


def fluctuation_variance_at_zero(f: TestFunction, eps: float, coords: np.ndarray) -> float:
    """(1/4) eps sum_x f(eps x)^2, the product-measure variance of the pairing"""
    return 0.25 * eps * float(np.sum(f(eps * np.asarray(coords, dtype=np.float64)) ** 2))
