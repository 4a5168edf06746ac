"""
DEP dynamics
Update map Phi_x, graphical-construction evolution and exact generators on small tori
"""

import time
from dataclasses import dataclass
from enum import Enum
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sprs
from loguru import logger

from . import kernels
from .errors import DomainError
from .lattice import (
    ClockEvent,
    ClockField,
    Configuration,
    EventBatch,
    RngKey,
    gillespie_batches,
)


# ============================================
# Update map
# ============================================

class OutcomeKind(str, Enum):
    NOOP = "noop"
    SWAP_ADJACENT = "swap-adjacent"
    SWAP_LONG = "swap-long"


@dataclass(frozen=True)
class UpdateOutcome:
    kind: OutcomeKind
    site: int
    changed_sites: FrozenSet[int] = frozenset()


def _partner(config: Configuration, x: int, offset: int) -> Optional[int]:
    topo = config.topology
    if topo.is_ring:
        return (x + offset) % topo.L
    y = x + offset
    return y if topo.contains(y) else None


def phi_outcome(config: Configuration, x: int) -> Tuple[Configuration, UpdateOutcome]:
    """Apply Phi_x and describe what it did"""
    if not config.topology.contains(x):
        raise DomainError(f"site {x} outside {config.topology}")
    out = config.copy()
    x1 = _partner(config, x, 1)
    if x1 is None:
        return out, UpdateOutcome(OutcomeKind.NOOP, x)
    a, b = config.get(x), config.get(x1)
    if a != b:
        out.set(x, b)
        out.set(x1, a)
        return out, UpdateOutcome(OutcomeKind.SWAP_ADJACENT, x, frozenset((x, x1)))
    x2 = _partner(config, x, 2)
    if x2 is None:
        return out, UpdateOutcome(OutcomeKind.NOOP, x)
    c = config.get(x2)
    if c == a:
        return out, UpdateOutcome(OutcomeKind.SWAP_LONG, x)
    out.set(x, c)
    out.set(x2, a)
    return out, UpdateOutcome(OutcomeKind.SWAP_LONG, x, frozenset((x, x2)))


def phi(config: Configuration, x: int) -> Configuration:
    """Exchange (x, x+1) if they differ, else (x, x+2)"""
    return phi_outcome(config, x)[0]


def step_event(config: Configuration, event: ClockEvent) -> Configuration:
    """Apply Phi at the event site iff the occupancy there equals the event's alpha"""
    if not config.topology.contains(event.site):
        raise DomainError(f"event site {event.site} outside {config.topology}")
    if config.get(event.site) != event.alpha:
        return config.copy()
    return phi(config, event.site)


# ============================================
# Evolution
# ============================================

class EvolutionMode(str, Enum):
    KEYED_FIELD = "keyed-field"
    GILLESPIE = "gillespie"


@dataclass
class EvolutionResult:
    config: Configuration
    time: float
    n_events: int
    n_moves: int
    currents: Optional[np.ndarray] = None
    events: Optional[EventBatch] = None


class Simulation:
    """Single-copy DEP run on a finite window

    In keyed-field mode array index i reads the clock field at coordinate
    i + first_site - origin, so runs on overlapping windows share marks.
    """

    def __init__(
        self,
        config: Configuration,
        key: RngKey,
        mode: str = EvolutionMode.KEYED_FIELD,
        origin: int = 0,
        track_currents: bool = False,
        log_events: bool = False,
        field: Optional[ClockField] = None,
        t_start: float = 0.0,
    ):
        self.topology = config.topology
        self.eta = config.to_array()
        self.mode = EvolutionMode(mode)
        self.time = float(t_start)
        self.n_events = 0
        self.n_moves = 0
        self.currents = np.zeros(self.topology.L, dtype=np.int64)
        self.track_currents = track_currents
        self._log: Optional[List[EventBatch]] = [] if log_events else None
        self.z_offset = self.topology.first_site - origin
        if self.mode == EvolutionMode.KEYED_FIELD:
            self.field = field or ClockField.from_key(key)
            self.rng = None
        else:
            self.field = None
            self.rng = key.generator()
        self.logger = logger.bind(component="Simulation")

    def _batches(self, t_end: float):
        L = self.topology.L
        if self.field is not None:
            lo = self.z_offset
            for batch in self.field.iter_blocks(lo, lo + L - 1, self.time, t_end):
                yield batch.shifted(-lo)
        else:
            yield from gillespie_batches(self.rng, L, self.time, t_end)

    def advance(self, t_end: float) -> "Simulation":
        if t_end < self.time:
            raise ValueError(f"cannot advance backwards from {self.time} to {t_end}")
        ring = self.topology.is_ring
        for batch in self._batches(t_end):
            if not len(batch):
                continue
            self.n_moves += kernels.run_events(
                self.eta, batch.sites, batch.alphas, ring, self.currents, self.track_currents
            )
            self.n_events += len(batch)
            if self._log is not None:
                self._log.append(batch)
        self.time = float(t_end)
        return self

    @property
    def config(self) -> Configuration:
        return Configuration.from_array(self.topology, self.eta)

    def result(self) -> EvolutionResult:
        events = None
        if self._log is not None:
            events = EventBatch.concat(self._log)
            events = EventBatch(events.times, events.sites + self.topology.first_site, events.alphas)
        return EvolutionResult(
            config=self.config,
            time=self.time,
            n_events=self.n_events,
            n_moves=self.n_moves,
            currents=self.currents.copy() if self.track_currents else None,
            events=events,
        )


def evolve(
    config: Configuration,
    t_end: float,
    key: RngKey,
    mode: str = EvolutionMode.KEYED_FIELD,
    **kwargs,
) -> EvolutionResult:
    """Run the graphical construction from time 0 to t_end"""
    if t_end < 0:
        raise ValueError(f"t_end must be nonnegative, got {t_end}")
    started = time.perf_counter()
    sim = Simulation(config, key, mode=mode, **kwargs).advance(t_end)
    elapsed = time.perf_counter() - started
    if elapsed > 5.0:
        logger.debug(
            f"evolve {config.topology} to t={t_end}: {sim.n_events} events "
            f"in {elapsed:.1f}s ({sim.n_events / elapsed:.3g}/s)"
        )
    return sim.result()


# ============================================
# Exact generator on the torus
# ============================================

@dataclass(frozen=True)
class MoveRule:
    """Local rewrite before -> after at sites x, x+1, ..., firing at unit rate"""

    before: str
    after: str

    def __post_init__(self):
        if len(self.before) != len(self.after) or self.before == self.after:
            raise ValueError(f"bad move rule {self.before}->{self.after}")
        if self.before.count("1") != self.after.count("1"):
            raise ValueError(f"move rule {self.before}->{self.after} does not conserve particles")

    def __str__(self) -> str:
        return f"{self.before}->{self.after}"


DEP_RULES: Tuple[MoveRule, ...] = (
    MoveRule("10", "01"),
    MoveRule("01", "10"),
    MoveRule("110", "011"),
    MoveRule("001", "100"),
)
NO_LEFT_LONG_RULES: Tuple[MoveRule, ...] = DEP_RULES[:3]
FACILITATED_RULES: Tuple[MoveRule, ...] = (
    MoveRule("10", "01"),
    MoveRule("01", "10"),
    MoveRule("110", "101"),
    MoveRule("001", "100"),
)


def state_from_pattern(pattern: str) -> int:
    """Site i of the pattern is bit i of the state"""
    return sum(int(ch) << i for i, ch in enumerate(pattern))


def pattern_from_state(state: int, n: int) -> str:
    return "".join(str((state >> i) & 1) for i in range(n))


@dataclass
class RateMatrix:
    n: int
    q: sprs.csr_matrix
    rules: Tuple[MoveRule, ...] = DEP_RULES

    @property
    def out_rates(self) -> np.ndarray:
        return np.asarray(self.q.sum(axis=1)).ravel()

    @property
    def in_rates(self) -> np.ndarray:
        return np.asarray(self.q.sum(axis=0)).ravel()

    def rate(self, source: str, target: str) -> int:
        return int(self.q[state_from_pattern(source), state_from_pattern(target)])

    def out_rate(self, pattern: str) -> int:
        return int(self.out_rates[state_from_pattern(pattern)])

    def uniform_is_stationary(self) -> bool:
        """Uniform law on each particle-number sector is invariant"""
        return bool(np.array_equal(self.out_rates, self.in_rates))


def build_rate_matrix(n: int, rules: Sequence[MoveRule] = DEP_RULES) -> RateMatrix:
    """Exact integer rates on the torus of n sites"""
    if not 3 <= n <= 14:
        raise ValueError(f"torus size must be in 3..14, got {n}")
    states = np.arange(1 << n, dtype=np.int64)
    bits = [(states >> i) & 1 for i in range(n)]
    rows, cols = [], []
    for rule in rules:
        k = len(rule.before)
        if k > n:
            raise ValueError(f"rule {rule} longer than the torus")
        for x in range(n):
            match = np.ones(states.size, dtype=bool)
            target = states.copy()
            for i in range(k):
                site = (x + i) % n
                match &= bits[site] == int(rule.before[i])
                target &= ~np.int64(1 << site)
                target |= np.int64(int(rule.after[i]) << site)
            rows.append(states[match])
            cols.append(target[match])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    data = np.ones(rows.size, dtype=np.int64)
    q = sprs.coo_matrix((data, (rows, cols)), shape=(states.size, states.size)).tocsr()
    q.sum_duplicates()
    return RateMatrix(n=n, q=q, rules=tuple(rules))


@dataclass
class StationarityCheck:
    n: int
    passed: bool
    states_checked: int
    counterexample: Optional[str] = None
    out_rate: Optional[int] = None
    in_rate: Optional[int] = None

    def to_dict(self):
        return {
            "n": self.n,
            "passed": self.passed,
            "states_checked": self.states_checked,
            "counterexample": self.counterexample,
            "out_rate": self.out_rate,
            "in_rate": self.in_rate,
        }


def stationarity_identity_check(n: int, rules: Sequence[MoveRule] = DEP_RULES) -> StationarityCheck:
    """Total out-rate equals total in-rate for every configuration of the torus"""
    matrix = build_rate_matrix(n, rules)
    out_rates, in_rates = matrix.out_rates, matrix.in_rates
    bad = np.flatnonzero(out_rates != in_rates)
    if bad.size:
        s = int(bad[0])
        logger.debug(f"torus n={n}: identity fails at {pattern_from_state(s, n)}")
        return StationarityCheck(
            n, False, out_rates.size, pattern_from_state(s, n), int(out_rates[s]), int(in_rates[s])
        )
    return StationarityCheck(n, True, out_rates.size)
