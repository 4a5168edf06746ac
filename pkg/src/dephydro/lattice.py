"""
Lattice primitives for dephydro
Topologies, word-packed configurations, product-measure sampling and keyed clock streams
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .config import settings
from .errors import DomainError

MASK64 = (1 << 64) - 1
INIT_TILE_SITES = 4096

_POPCOUNT8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


# ============================================
# Topology
# ============================================

class TopologyKind(str, Enum):
    RING = "ring"
    SEGMENT = "segment"


@dataclass(frozen=True)
class Topology:
    """Ring(L) with sites 0..L-1 mod L, or Segment(L) with sites 1..L"""

    kind: TopologyKind
    L: int
    left_blocked: bool = True
    right_blocked: bool = True

    def __post_init__(self):
        if self.L < 5:
            raise DomainError(f"lattice needs at least 5 sites, got {self.L}")
        if self.kind == TopologyKind.SEGMENT and not (self.left_blocked and self.right_blocked):
            raise DomainError("only blocked segment boundaries are supported")

    @classmethod
    def ring(cls, L: int) -> "Topology":
        return cls(TopologyKind.RING, int(L))

    @classmethod
    def segment(cls, L: int) -> "Topology":
        return cls(TopologyKind.SEGMENT, int(L))

    @property
    def is_ring(self) -> bool:
        return self.kind == TopologyKind.RING

    @property
    def first_site(self) -> int:
        return 0 if self.is_ring else 1

    def sites(self) -> np.ndarray:
        return np.arange(self.first_site, self.first_site + self.L, dtype=np.int64)

    def contains(self, site: int) -> bool:
        return self.first_site <= site < self.first_site + self.L

    def index(self, site: int) -> int:
        """Array index of a site; rings wrap, segments reject outside sites"""
        if self.is_ring:
            return int(site) % self.L
        if not self.contains(site):
            raise DomainError(f"site {site} outside Segment({self.L})")
        return int(site) - 1

    def __str__(self) -> str:
        return f"{'Ring' if self.is_ring else 'Segment'}({self.L})"


# ============================================
# Configuration
# ============================================

class Configuration:
    """Occupancies over a topology, packed 64 sites per uint64 word (LSB first)"""

    __slots__ = ("topology", "words")

    def __init__(self, topology: Topology, words: Optional[np.ndarray] = None):
        n_words = (topology.L + 63) // 64
        if words is None:
            words = np.zeros(n_words, dtype="<u8")
        elif words.shape != (n_words,):
            raise ValueError(f"expected {n_words} words for {topology}, got {words.shape}")
        self.topology = topology
        self.words = words.astype("<u8", copy=False)

    @classmethod
    def zeros(cls, topology: Topology) -> "Configuration":
        return cls(topology)

    @classmethod
    def ones(cls, topology: Topology) -> "Configuration":
        return cls.from_array(topology, np.ones(topology.L, dtype=np.uint8))

    @classmethod
    def from_array(cls, topology: Topology, occ: Sequence[int]) -> "Configuration":
        occ = np.asarray(occ)
        if occ.shape != (topology.L,):
            raise ValueError(f"occupancy array must have length {topology.L}, got {occ.shape}")
        if occ.size and (occ.min() < 0 or occ.max() > 1):
            raise ValueError("occupancies must be 0 or 1")
        n_words = (topology.L + 63) // 64
        packed = np.zeros(n_words * 8, dtype=np.uint8)
        bits = np.packbits(occ.astype(np.uint8), bitorder="little")
        packed[: bits.size] = bits
        return cls(topology, packed.view("<u8").copy())

    @classmethod
    def from_string(cls, pattern: str, ring: bool = True) -> "Configuration":
        occ = [int(ch) for ch in pattern]
        topology = Topology.ring(len(occ)) if ring else Topology.segment(len(occ))
        return cls.from_array(topology, occ)

    @classmethod
    def from_sites(cls, topology: Topology, occupied: Sequence[int]) -> "Configuration":
        occ = np.zeros(topology.L, dtype=np.uint8)
        for site in occupied:
            occ[topology.index(site)] = 1
        return cls.from_array(topology, occ)

    def to_array(self) -> np.ndarray:
        bits = np.unpackbits(self.words.view(np.uint8), bitorder="little")
        return bits[: self.topology.L].copy()

    def get(self, site: int) -> int:
        i = self.topology.index(site)
        return (int(self.words[i >> 6]) >> (i & 63)) & 1

    def set(self, site: int, value: int) -> None:
        if value not in (0, 1):
            raise ValueError(f"occupancy must be 0 or 1, got {value}")
        i = self.topology.index(site)
        word = int(self.words[i >> 6])
        if value:
            word |= 1 << (i & 63)
        else:
            word &= ~(1 << (i & 63)) & MASK64
        self.words[i >> 6] = np.uint64(word)

    def count(self) -> int:
        return int(_POPCOUNT8[self.words.view(np.uint8)].sum())

    def copy(self) -> "Configuration":
        return Configuration(self.topology, self.words.copy())

    def complement(self) -> "Configuration":
        return Configuration.from_array(self.topology, 1 - self.to_array())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.topology == other.topology and np.array_equal(self.words, other.words)

    __hash__ = None

    def __repr__(self) -> str:
        if self.topology.L <= 64:
            body = "".join(str(v) for v in self.to_array())
        else:
            body = f"{self.count()} particles"
        return f"Configuration({self.topology}, {body})"


# ============================================
# Keyed random streams
# ============================================

class Purpose(IntEnum):
    INIT = 1
    CLOCK = 2
    GILLESPIE = 3
    TRIAL = 4
    PATTERN = 5


def _zigzag(v: int) -> int:
    return 2 * v if v >= 0 else -2 * v - 1


@dataclass(frozen=True)
class RngKey:
    """Address of a replayable random stream"""

    master_seed: int
    purpose: Purpose
    site: Optional[int] = None
    replica: Optional[int] = None
    block: Optional[int] = None

    def seed_sequence(self) -> np.random.SeedSequence:
        spawn_key = (
            int(self.purpose),
            0 if self.site is None else _zigzag(self.site) + 1,
            0 if self.replica is None else self.replica + 1,
            0 if self.block is None else self.block + 1,
        )
        return np.random.SeedSequence(entropy=self.master_seed & MASK64, spawn_key=spawn_key)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence()))

    def child(self, **changes) -> "RngKey":
        return replace(self, **changes)


@dataclass(frozen=True)
class ClockEvent:
    time: float
    site: int
    alpha: int


@dataclass
class EventBatch:
    """Columnar, time-ordered clock marks"""

    times: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.float64))
    sites: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    alphas: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint8))

    def __len__(self) -> int:
        return int(self.times.size)

    def sort(self) -> "EventBatch":
        order = np.lexsort((self.alphas, self.sites, self.times))
        return EventBatch(self.times[order], self.sites[order], self.alphas[order])

    def shifted(self, offset: int) -> "EventBatch":
        return EventBatch(self.times, self.sites + offset, self.alphas)

    def to_events(self) -> List[ClockEvent]:
        return [
            ClockEvent(float(t), int(x), int(a))
            for t, x, a in zip(self.times, self.sites, self.alphas)
        ]

    @classmethod
    def concat(cls, batches: Sequence["EventBatch"]) -> "EventBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            return cls()
        return cls(
            np.concatenate([b.times for b in batches]),
            np.concatenate([b.sites for b in batches]),
            np.concatenate([b.alphas for b in batches]),
        )


class ClockField:
    """Marks of the clock fields w_0, w_1 on Z x (0, inf)

    The field is cut into tiles of `tile_sites` sites by `tile_time` time units;
    each tile draws its Poisson(2 * area) marks from its own key, so any window
    sees the same marks whatever else is simulated.
    """

    def __init__(
        self,
        master_seed: int,
        replica: Optional[int] = None,
        tile_sites: Optional[int] = None,
        tile_time: Optional[float] = None,
    ):
        self.master_seed = int(master_seed)
        self.replica = replica
        self.tile_sites = int(tile_sites or settings.tile_sites)
        self.tile_time = float(tile_time or settings.tile_time)
        self.logger = logger.bind(component="ClockField")

    @classmethod
    def from_key(cls, key: RngKey, **kwargs) -> "ClockField":
        return cls(key.master_seed, key.replica, **kwargs)

    def tile(self, tx: int, tb: int) -> EventBatch:
        key = RngKey(self.master_seed, Purpose.CLOCK, site=tx, replica=self.replica, block=tb)
        rng = key.generator()
        count = rng.poisson(2.0 * self.tile_sites * self.tile_time)
        times = tb * self.tile_time + rng.random(count) * self.tile_time
        sites = tx * self.tile_sites + rng.integers(0, self.tile_sites, count, dtype=np.int64)
        alphas = rng.integers(0, 2, count, dtype=np.uint8)
        return EventBatch(times, sites, alphas)

    def events(self, lo: int, hi: int, t0: float, t1: float) -> EventBatch:
        """Sorted marks with site in [lo, hi] and time in (t0, t1]"""
        if hi < lo or t1 <= t0:
            return EventBatch()
        tx_range = range(math.floor(lo / self.tile_sites), math.floor(hi / self.tile_sites) + 1)
        tb_range = range(
            max(0, math.floor(t0 / self.tile_time)), math.ceil(t1 / self.tile_time)
        )
        pieces = []
        for tb in tb_range:
            for tx in tx_range:
                batch = self.tile(tx, tb)
                keep = (
                    (batch.sites >= lo) & (batch.sites <= hi)
                    & (batch.times > t0) & (batch.times <= t1)
                )
                pieces.append(EventBatch(batch.times[keep], batch.sites[keep], batch.alphas[keep]))
        return EventBatch.concat(pieces).sort()

    def iter_blocks(self, lo: int, hi: int, t0: float, t1: float) -> Iterator[EventBatch]:
        """Same marks as events(), delivered one time tile at a time"""
        start = t0
        while start < t1:
            stop = min(t1, (math.floor(start / self.tile_time) + 1) * self.tile_time)
            yield self.events(lo, hi, start, stop)
            start = stop


def clock_stream(key: RngKey, site: int, horizon: float) -> List[ClockEvent]:
    """Merged w_0/w_1 marks at one site on (0, horizon]"""
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    return ClockField.from_key(key).events(site, site, 0.0, horizon).to_events()


def merge_window_events(
    key: RngKey, window: Tuple[int, int], horizon: float, t_start: float = 0.0
) -> EventBatch:
    """Time-sorted marks of every site in the closed window on (t_start, horizon]"""
    lo, hi = window
    if hi < lo:
        return EventBatch()
    return ClockField.from_key(key).events(lo, hi, t_start, horizon)


def gillespie_batches(
    rng: np.random.Generator, n_sites: int, t_start: float, t_end: float, chunk: Optional[int] = None
) -> Iterator[EventBatch]:
    """Aggregate marks: total rate 2 * n_sites, uniform (site index, alpha)"""
    chunk = chunk or settings.gillespie_chunk
    rate = 2.0 * n_sites
    t = t_start
    while True:
        times = t + np.cumsum(rng.exponential(1.0 / rate, chunk))
        sites = rng.integers(0, n_sites, chunk, dtype=np.int64)
        alphas = rng.integers(0, 2, chunk, dtype=np.uint8)
        done = times[-1] > t_end
        if done:
            keep = times <= t_end
            times, sites, alphas = times[keep], sites[keep], alphas[keep]
        yield EventBatch(times, sites, alphas)
        if done:
            return
        t = float(times[-1])


# ============================================
# Density profiles
# ============================================

@dataclass(frozen=True)
class DensityProfile:
    """Piecewise-constant macroscopic density; levels[k] holds on [cuts[k-1], cuts[k])"""

    cuts: Tuple[float, ...]
    levels: Tuple[float, ...]
    kind: str = "table"

    def __post_init__(self):
        if len(self.levels) != len(self.cuts) + 1:
            raise ValueError("a profile needs exactly one more level than cuts")
        if any(not 0.0 <= v <= 1.0 for v in self.levels):
            raise ValueError(f"profile values must lie in [0, 1], got {self.levels}")
        if any(b <= a for a, b in zip(self.cuts, self.cuts[1:])):
            raise ValueError("profile breakpoints must be strictly increasing")

    @classmethod
    def constant(cls, rho: float) -> "DensityProfile":
        return cls((), (float(rho),), "constant")

    @classmethod
    def step(cls, lam: float, rho: float) -> "DensityProfile":
        return cls((0.0,), (float(lam), float(rho)), "step")

    @classmethod
    def table(cls, breakpoints: Sequence[float], values: Sequence[float]) -> "DensityProfile":
        if len(breakpoints) != len(values) + 1 or not values:
            raise ValueError("a table needs len(values) + 1 breakpoints")
        levels = (values[0],) + tuple(values) + (values[-1],)
        return cls(tuple(float(b) for b in breakpoints), tuple(float(v) for v in levels), "table")

    def __call__(self, x):
        idx = np.searchsorted(np.asarray(self.cuts), np.asarray(x, dtype=np.float64), side="right")
        return np.asarray(self.levels)[idx]

    @property
    def edge_values(self) -> Tuple[float, float]:
        return self.levels[0], self.levels[-1]

    @property
    def step_data(self) -> Optional[Tuple[float, float]]:
        """(lambda, rho) when the profile is a single jump at 0 or constant"""
        if not self.cuts:
            return self.levels[0], self.levels[0]
        if self.kind == "step":
            return self.levels
        return None

    def jumps(self) -> List[float]:
        return [c for k, c in enumerate(self.cuts) if self.levels[k] != self.levels[k + 1]]

    def antiderivative(self, x) -> np.ndarray:
        """Integral of the profile from 0 to x"""
        x = np.asarray(x, dtype=np.float64)
        levels = np.asarray(self.levels)
        if not self.cuts:
            return levels[0] * x
        cuts = np.asarray(self.cuts)
        at_cuts = np.concatenate(([0.0], np.cumsum(levels[1:-1] * np.diff(cuts))))

        def _g(y):
            k = np.searchsorted(cuts, y, side="right")
            anchor = np.where(k == 0, 0, k - 1)
            return at_cuts[anchor] + levels[k] * (y - cuts[anchor])

        return _g(x) - _g(np.float64(0.0))

    def cell_averages(self, edges: np.ndarray) -> np.ndarray:
        edges = np.asarray(edges, dtype=np.float64)
        return np.diff(self.antiderivative(edges)) / np.diff(edges)


# ============================================
# Sampling
# ============================================

def site_uniforms(key: RngKey, coords: np.ndarray) -> np.ndarray:
    """One uniform per integer coordinate, keyed by coordinate tile"""
    coords = np.asarray(coords, dtype=np.int64)
    out = np.empty(coords.size, dtype=np.float64)
    if not coords.size:
        return out
    tiles = np.floor_divide(coords, INIT_TILE_SITES)
    for tx in np.unique(tiles):
        mask = tiles == tx
        draws = key.child(site=int(tx)).generator().random(INIT_TILE_SITES)
        out[mask] = draws[coords[mask] - tx * INIT_TILE_SITES]
    return out


def sample_product(
    profile: DensityProfile,
    topology: Topology,
    key: RngKey,
    scale_eps: float,
    origin: int = 0,
) -> Configuration:
    """Independent Bernoulli(u0(eps * (site - origin))) occupancies"""
    if scale_eps <= 0:
        raise ValueError(f"scale_eps must be positive, got {scale_eps}")
    coords = topology.sites() - origin
    p = profile(scale_eps * coords)
    occ = (site_uniforms(key, coords) < p).astype(np.uint8)
    return Configuration.from_array(topology, occ)
