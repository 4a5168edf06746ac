"""
Coupled DEP copies
Shared-clock evolution, discrepancy bookkeeping, the delta functional and attractiveness checks
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from . import kernels
from .dynamics import step_event
from .errors import AuditViolation, DomainError
from .lattice import (
    ClockEvent,
    ClockField,
    Configuration,
    DensityProfile,
    Purpose,
    RngKey,
    Topology,
    sample_product,
)


# ============================================
# Data Models
# ============================================

@dataclass
class CoupledEnsemble:
    """J >= 2 copies on one topology driven by one clock realization"""

    copies: List[Configuration]

    def __post_init__(self):
        if len(self.copies) < 2:
            raise ValueError("a coupled ensemble needs at least two copies")
        topologies = {c.topology for c in self.copies}
        if len(topologies) != 1:
            raise DomainError(f"copies live on different topologies: {topologies}")

    @property
    def topology(self) -> Topology:
        return self.copies[0].topology

    def __len__(self) -> int:
        return len(self.copies)

    def as_array(self) -> np.ndarray:
        return np.stack([c.to_array() for c in self.copies])

    @classmethod
    def from_array(cls, topology: Topology, etas: np.ndarray) -> "CoupledEnsemble":
        return cls([Configuration.from_array(topology, row) for row in etas])

    def advance(self, field: ClockField, t0: float, t1: float) -> "CoupledEnsemble":
        etas = self.as_array()
        lo = self.topology.first_site
        for batch in field.iter_blocks(lo, lo + self.topology.L - 1, t0, t1):
            if len(batch):
                kernels.run_coupled(etas, batch.sites - lo, batch.alphas, self.topology.is_ring)
        return CoupledEnsemble.from_array(self.topology, etas)


@dataclass(frozen=True)
class DiscrepancySet:
    """Signed sites where zeta and xi disagree; +1 means zeta holds the particle"""

    entries: Tuple[Tuple[int, int], ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def sites(self) -> List[int]:
        return [s for s, _ in self.entries]

    @property
    def n_positive(self) -> int:
        return sum(1 for _, sign in self.entries if sign > 0)

    @property
    def n_negative(self) -> int:
        return sum(1 for _, sign in self.entries if sign < 0)


@dataclass
class AuditReport:
    n_events: int
    times: np.ndarray
    count_series: np.ndarray
    delta_series: np.ndarray
    sign_flips: int = 0
    swaps: int = 0
    count_increases: int = 0
    delta_increases: int = 0
    order_breaks: int = 0
    violation: Optional[AuditViolation] = None

    @property
    def passed(self) -> bool:
        return self.violation is None

    def to_dict(self) -> Dict:
        return {
            "n_events": self.n_events,
            "passed": self.passed,
            "sign_flips": self.sign_flips,
            "swaps": self.swaps,
            "count_increases": self.count_increases,
            "delta_increases": self.delta_increases,
            "order_breaks": self.order_breaks,
            "violation": self.violation.to_dict() if self.violation else None,
        }


# ============================================
# Pure functions
# ============================================

def step_coupled(ensemble: CoupledEnsemble, event: ClockEvent) -> CoupledEnsemble:
    """Each copy applies Phi at the event site iff its own occupancy matches alpha"""
    return CoupledEnsemble([step_event(c, event) for c in ensemble.copies])


def _check_same_topology(zeta: Configuration, xi: Configuration) -> None:
    if zeta.topology != xi.topology:
        raise DomainError(f"topology mismatch: {zeta.topology} vs {xi.topology}")


def discrepancies(zeta: Configuration, xi: Configuration) -> DiscrepancySet:
    _check_same_topology(zeta, xi)
    diff = zeta.to_array().astype(np.int8) - xi.to_array().astype(np.int8)
    idx = np.flatnonzero(diff)
    first = zeta.topology.first_site
    return DiscrepancySet(tuple((int(i) + first, int(diff[i])) for i in idx))


def delta(zeta: Configuration, xi: Configuration) -> int:
    """Sup of |sum_{y<=x} (zeta(y) - xi(y))|

    Segments sum from the left end. Rings need equal particle numbers and use
    the best cut bond, which makes the value independent of where the ring
    is opened.
    """
    _check_same_topology(zeta, xi)
    ring = zeta.topology.is_ring
    if ring and zeta.count() != xi.count():
        raise ValueError("delta on a ring needs equal particle numbers")
    return int(kernels.delta_kernel(zeta.to_array(), xi.to_array(), ring))


def _local_patterns(etas: np.ndarray, topology: Topology, site_index: int) -> List[Dict]:
    L = topology.L
    out = []
    for j, eta in enumerate(etas):
        values = []
        for p in range(-2, 3):
            i = site_index + p
            if topology.is_ring:
                values.append(int(eta[i % L]))
            else:
                values.append(int(eta[i]) if 0 <= i < L else None)
        out.append({"copy": j, "sites": [site_index + p + topology.first_site for p in range(-2, 3)], "values": values})
    return out


def coupled_evolve_audited(
    ensemble: CoupledEnsemble,
    t_end: float,
    key: RngKey,
    raise_on_violation: bool = False,
) -> AuditReport:
    """Coupled evolution checking every pair after every event

    Audits discrepancy count, signs, relative order, delta and, for pairs
    ordered at the start, pointwise order. Series are for the pair (0, 1).
    """
    topology = ensemble.topology
    ring = topology.is_ring
    J = len(ensemble)
    etas = ensemble.as_array()
    counts = etas.sum(axis=1)

    ordered = np.zeros((J, J), dtype=np.bool_)
    delta_pairs = np.zeros((J, J), dtype=np.bool_)
    for j in range(J):
        for k in range(j + 1, J):
            ordered[j, k] = bool(np.all(etas[k] <= etas[j]))
            delta_pairs[j, k] = (not ring) or counts[j] == counts[k]

    field = ClockField.from_key(key)
    lo = topology.first_site
    times, count_parts, delta_parts = [], [], []
    n_events = 0
    info = np.zeros(3, dtype=np.int64)
    report = None

    for batch in field.iter_blocks(lo, lo + topology.L - 1, 0.0, t_end):
        if not len(batch):
            continue
        sites = batch.sites - lo
        snapshot = etas.copy()
        count_series = np.zeros(len(batch), dtype=np.int64)
        delta_series = np.zeros(len(batch), dtype=np.int64)
        status = kernels.run_audited(
            etas, sites, batch.alphas, ring, ordered, delta_pairs, count_series, delta_series, info
        )
        if status != kernels.AUDIT_OK:
            e, j, k = (int(v) for v in info)
            kernels.run_coupled(snapshot, sites[:e], batch.alphas[:e], ring)
            violation = AuditViolation(
                kind=kernels.AUDIT_NAMES[status],
                event_index=n_events + e,
                event={"time": float(batch.times[e]), "site": int(batch.sites[e]), "alpha": int(batch.alphas[e])},
                pair=(j, k),
                patterns=[
                    {"before": b, "after": a}
                    for b, a in zip(
                        _local_patterns(snapshot, topology, int(sites[e])),
                        _local_patterns(etas, topology, int(sites[e])),
                    )
                ],
            )
            logger.error(f"Coupling audit failed: {violation}")
            times.append(batch.times[:e])
            count_parts.append(count_series[:e])
            delta_parts.append(delta_series[:e])
            n_events += e + 1
            report = _audit_report(n_events, times, count_parts, delta_parts, violation, status)
            break
        times.append(batch.times)
        count_parts.append(count_series)
        delta_parts.append(delta_series)
        n_events += len(batch)

    if report is None:
        report = _audit_report(n_events, times, count_parts, delta_parts, None, kernels.AUDIT_OK)
    if raise_on_violation and report.violation is not None:
        raise report.violation
    return report


def _audit_report(n_events, times, counts, deltas, violation, status) -> AuditReport:
    def cat(parts, dtype):
        return np.concatenate(parts) if parts else np.empty(0, dtype=dtype)

    report = AuditReport(
        n_events=n_events,
        times=cat(times, np.float64),
        count_series=cat(counts, np.int64),
        delta_series=cat(deltas, np.int64),
        violation=violation,
    )
    if status == kernels.AUDIT_SIGN_FLIP:
        report.sign_flips = 1
    elif status == kernels.AUDIT_SWAP:
        report.swaps = 1
    elif status == kernels.AUDIT_COUNT_INCREASE:
        report.count_increases = 1
    elif status == kernels.AUDIT_DELTA_INCREASE:
        report.delta_increases = 1
    elif status == kernels.AUDIT_ORDER_BROKEN:
        report.order_breaks = 1
    return report


# ============================================
# Attractiveness inequalities
# ============================================

def _at(a: np.ndarray, k: int) -> np.ndarray:
    """_at(a, k)[..., y] == a[..., y + k] with periodic indexing"""
    return np.roll(a, -k, axis=-1)


def _gamma_into(eta: np.ndarray, d: int) -> np.ndarray:
    """Gamma_eta(y - d, y) as an array over y"""
    if d in (-1, 1):
        return np.ones_like(eta)
    if d == 2:
        return _at(eta, -1)
    return 1 - _at(eta, 1)


def _gamma_from(eta: np.ndarray, d: int) -> np.ndarray:
    """Gamma_eta(x, x + d) as an array over x"""
    if d in (-1, 1):
        return np.ones_like(eta)
    if d == 2:
        return _at(eta, 1)
    return 1 - _at(eta, -1)


def gs_terms(zeta: np.ndarray, xi: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Both sides of the two attractiveness inequalities at every site

    Arrays have shape (..., L) and are read periodically along the last axis.
    """
    z = zeta.astype(np.int64)
    s = xi.astype(np.int64)
    lhs1 = np.zeros_like(z)
    rhs1 = np.zeros_like(z)
    lhs2 = np.zeros_like(z)
    rhs2 = np.zeros_like(z)
    for d in (-2, -1, 1, 2):
        # first inequality at y, summing over x = y - d
        sx, zx = _at(s, -d), _at(z, -d)
        lhs1 += sx * np.maximum(_gamma_into(s, d) - _gamma_into(z, d), 0)
        rhs1 += zx * (1 - sx) * _gamma_into(z, d)
        # second inequality at x, summing over y = x + d
        zy, sy = _at(z, d), _at(s, d)
        lhs2 += (1 - zy) * np.maximum(_gamma_from(z, d) - _gamma_from(s, d), 0)
        rhs2 += zy * (1 - sy) * _gamma_from(s, d)
    return lhs1, rhs1, lhs2, rhs2


@dataclass
class GSCheck:
    sites: np.ndarray
    first_ok: np.ndarray
    second_ok: np.ndarray
    first_lhs: np.ndarray
    first_rhs: np.ndarray
    second_lhs: np.ndarray
    second_rhs: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(self.first_ok.all() and self.second_ok.all())


def check_gs_inequalities(
    xi: Configuration, zeta: Configuration, window: Optional[Tuple[int, int]] = None
) -> GSCheck:
    """Per-site check of both attractiveness inequalities for xi <= zeta

    The first inequality is tested where zeta is empty, the second where xi
    is occupied; other sites pass vacuously. Segment sites within two of an
    end are skipped.
    """
    _check_same_topology(zeta, xi)
    z, s = zeta.to_array(), xi.to_array()
    if np.any(s > z):
        raise ValueError("check_gs_inequalities needs xi <= zeta pointwise")
    topology = zeta.topology
    first = topology.first_site
    lo, hi = window if window is not None else (first, first + topology.L - 1)
    if not topology.is_ring:
        lo, hi = max(lo, first + 2), min(hi, first + topology.L - 3)
    idx = np.arange(lo - first, hi - first + 1)
    if topology.is_ring:
        idx %= topology.L
    lhs1, rhs1, lhs2, rhs2 = gs_terms(z, s)
    first_ok = (z[idx] == 1) | (lhs1[idx] <= rhs1[idx])
    second_ok = (s[idx] == 0) | (lhs2[idx] <= rhs2[idx])
    return GSCheck(idx + first, first_ok, second_ok, lhs1[idx], rhs1[idx], lhs2[idx], rhs2[idx])


def gs_sweep(n_patterns: int, key: RngKey, width: int = 9) -> Dict[str, int]:
    """Random ordered local patterns on a small ring; returns failure counts"""
    rng = key.generator()
    z = rng.integers(0, 2, size=(n_patterns, width), dtype=np.int64)
    s = z & rng.integers(0, 2, size=(n_patterns, width), dtype=np.int64)
    lhs1, rhs1, lhs2, rhs2 = gs_terms(z, s)
    first_fail = int(np.count_nonzero((z == 0) & (lhs1 > rhs1)))
    second_fail = int(np.count_nonzero((s == 1) & (lhs2 > rhs2)))
    equalities = int(np.count_nonzero((z == 0) & (lhs1 == rhs1) & (lhs1 > 0)))
    return {
        "patterns": n_patterns,
        "first_failures": first_fail,
        "second_failures": second_fail,
        "first_equalities": equalities,
    }


# ============================================
# Finite propagation and discrepancy rates
# ============================================

@dataclass
class FinitePropagationResult:
    trials: int
    agreements: int
    interval: Tuple[int, int]
    speed: float
    horizon: float

    @property
    def frequency(self) -> float:
        return self.agreements / self.trials if self.trials else 1.0


def finite_propagation_test(
    zeta0: Configuration,
    xi0: Configuration,
    agree: Tuple[int, int],
    t: float,
    v: float,
    trials: int,
    master_seed: int,
) -> FinitePropagationResult:
    """Fraction of clock realizations keeping zeta = xi on [x + vt, y - vt] up to t"""
    _check_same_topology(zeta0, xi0)
    x, y = agree
    if t <= 0 or v <= 0:
        raise DomainError("t and v must be positive")
    if t > (y - x) / (2.0 * v):
        raise DomainError(f"interval [{x}, {y}] too short for t={t}, v={v}")
    topology = zeta0.topology
    first = topology.first_site
    lo = math.ceil(x + v * t) - first
    hi = math.floor(y - v * t) - first
    z0, s0 = zeta0.to_array(), xi0.to_array()
    x0, y0 = x - first, y - first
    if x0 < 0 or y0 >= topology.L:
        raise DomainError(f"interval [{x}, {y}] outside {topology}")
    if np.any(z0[x0 : y0 + 1] != s0[x0 : y0 + 1]):
        raise DomainError(f"initial states must agree on [{x}, {y}]")

    agreements = 0
    for trial in range(trials):
        field = ClockField(master_seed, replica=trial)
        events = field.events(first, first + topology.L - 1, 0.0, t)
        z, s = z0.copy(), s0.copy()
        hit = kernels.run_until_disagree(z, s, events.sites - first, events.alphas, topology.is_ring, lo, hi)
        if hit < 0:
            agreements += 1
    return FinitePropagationResult(trials, agreements, (lo + first, hi + first), v, t)


@dataclass
class AnnihilationEstimate:
    trials: int
    annihilations: int
    exposure: float
    unresolved: int = 0

    @property
    def rate(self) -> float:
        return self.annihilations / self.exposure if self.exposure > 0 else float("nan")


def annihilation_trials(
    topology: Topology, rho: float, trials: int, master_seed: int, horizon: float = 50.0
) -> AnnihilationEstimate:
    """Time until an adjacent (+, -) discrepancy pair first changes, over many trials

    Exposure is the total waiting time; annihilations count trials where the
    first change removed both discrepancies.
    """

    x = topology.L // 2
    annihilations, exposure, unresolved = 0, 0.0, 0
    profile = DensityProfile.constant(rho)
    first = topology.first_site
    for trial in range(trials):
        init_key = RngKey(master_seed, Purpose.INIT, replica=trial)
        z = sample_product(profile, topology, init_key, 1.0).to_array()
        z[x], z[x + 1] = 1, 0
        s = z.copy()
        s[x], s[x + 1] = 0, 1
        field = ClockField(master_seed, replica=trial)
        resolved = False
        for batch in field.iter_blocks(first, first + topology.L - 1, 0.0, horizon):
            if not len(batch):
                continue
            hit = kernels.run_until_discrepancy_change(
                z, s, batch.sites - first, batch.alphas, topology.is_ring
            )
            if hit >= 0:
                exposure += float(batch.times[hit])
                if kernels.count_discrepancies(z, s) == 0:
                    annihilations += 1
                resolved = True
                break
        if not resolved:
            exposure += horizon
            unresolved += 1
    return AnnihilationEstimate(trials, annihilations, exposure, unresolved)


@dataclass
class CoexistenceStatistic:
    replicas: int
    both_signs: int
    mean_discrepancies: float
    horizon: float
    per_replica: List[int] = field(default_factory=list)

    @property
    def fraction(self) -> float:
        return self.both_signs / self.replicas if self.replicas else 0.0


def opposite_sign_coexistence(
    topology: Topology, rho: float, replicas: int, horizon: float, master_seed: int
) -> CoexistenceStatistic:
    """Two independent product states coupled on a ring: do both signs survive?"""

    profile = DensityProfile.constant(rho)
    both, counts = 0, []
    for r in range(replicas):
        zeta = sample_product(profile, topology, RngKey(master_seed, Purpose.INIT, replica=2 * r), 1.0)
        xi = sample_product(profile, topology, RngKey(master_seed, Purpose.INIT, replica=2 * r + 1), 1.0)
        final = CoupledEnsemble([zeta, xi]).advance(ClockField(master_seed, replica=r), 0.0, horizon)
        found = discrepancies(*final.copies)
        counts.append(len(found))
        if found.n_positive and found.n_negative:
            both += 1
    return CoexistenceStatistic(replicas, both, float(np.mean(counts)), horizon, counts)
