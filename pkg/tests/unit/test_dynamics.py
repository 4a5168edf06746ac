"""
Unit tests for the update map, evolution modes and exact torus generators
"""

import numpy as np
import pytest

from src.dephydro.dynamics import (
    DEP_RULES,
    FACILITATED_RULES,
    NO_LEFT_LONG_RULES,
    EvolutionMode,
    MoveRule,
    OutcomeKind,
    Simulation,
    build_rate_matrix,
    evolve,
    pattern_from_state,
    phi,
    phi_outcome,
    state_from_pattern,
    stationarity_identity_check,
    step_event,
)
from src.dephydro.errors import DomainError
from src.dephydro.lattice import (
    ClockEvent,
    ClockField,
    Configuration,
    DensityProfile,
    Purpose,
    RngKey,
    Topology,
    sample_product,
)

pytestmark = pytest.mark.unit


def _ring(pattern: str) -> Configuration:
    return Configuration.from_string(pattern)


class TestPhi:
    """Test the deterministic update map"""

    def test_adjacent_swap_when_pair_differs(self):
        assert phi(_ring("10000"), 0) == _ring("01000")
        assert phi(_ring("01000"), 0) == _ring("10000")

    def test_long_jump_right(self):
        config, outcome = phi_outcome(_ring("11000"), 0)
        assert config == _ring("01100")
        assert outcome.kind == OutcomeKind.SWAP_LONG
        assert outcome.changed_sites == frozenset({0, 2})

    def test_long_jump_left(self):
        assert phi(_ring("00100"), 0) == _ring("10000")

    def test_idle_when_three_sites_agree(self):
        config, outcome = phi_outcome(_ring("11100"), 0)
        assert config == _ring("11100")
        assert outcome.changed_sites == frozenset()

    def test_ring_wraps(self):
        assert phi(_ring("10001"), 4) == _ring("11000")

    def test_segment_right_end_is_noop(self):
        seg = Configuration.from_string("00001", ring=False)
        config, outcome = phi_outcome(seg, 5)
        assert outcome.kind == OutcomeKind.NOOP
        assert config == seg

    def test_segment_blocks_long_jump_past_end(self):
        seg = Configuration.from_string("00011", ring=False)
        config, outcome = phi_outcome(seg, 4)
        assert outcome.kind == OutcomeKind.NOOP
        assert config == seg

    def test_outside_site_rejected(self):
        with pytest.raises(DomainError):
            phi(Configuration.from_string("00011", ring=False), 0)


class TestStepEvent:
    """Test gating by the clock label"""

    def test_fires_only_when_occupancy_matches(self):
        config = _ring("10000")
        assert step_event(config, ClockEvent(0.1, 0, 1)) == _ring("01000")
        assert step_event(config, ClockEvent(0.1, 0, 0)) == config

    def test_hole_clock_moves_particle_left(self):
        assert step_event(_ring("01000"), ClockEvent(0.1, 0, 0)) == _ring("10000")

    def test_input_not_mutated(self):
        config = _ring("10000")
        step_event(config, ClockEvent(0.1, 0, 1))
        assert config == _ring("10000")

    @pytest.mark.parametrize("alpha", [0, 1])
    def test_complement_commutes_on_every_local_pattern(self, alpha):
        for state in range(32):
            config = _ring(pattern_from_state(state, 5))
            for x in range(5):
                lhs = step_event(config, ClockEvent(0.1, x, alpha)).complement()
                rhs = step_event(config.complement(), ClockEvent(0.1, x, 1 - alpha))
                assert lhs == rhs

    def test_changes_stay_local(self):
        for state in range(32):
            config = _ring(pattern_from_state(state, 5))
            for x in range(5):
                after, outcome = phi_outcome(config, x)
                assert len(outcome.changed_sites) in (0, 2)
                assert outcome.changed_sites <= {x, (x + 1) % 5, (x + 2) % 5}
                assert after.count() == config.count()


class TestEvolution:
    """Test both evolution modes"""

    @pytest.fixture
    def start(self):
        key = RngKey(1, Purpose.INIT)
        return sample_product(DensityProfile.constant(0.4), Topology.ring(200), key, 1.0)

    def test_particle_number_conserved(self, start):
        for mode in EvolutionMode:
            result = evolve(start, 5.0, RngKey(2, Purpose.CLOCK), mode=mode)
            assert result.config.count() == start.count()
            assert result.time == 5.0

    def test_keyed_field_matches_event_by_event_replay(self, start):
        key = RngKey(2, Purpose.CLOCK, replica=0)
        result = evolve(start, 3.0, key, log_events=True)
        config = start
        for event in result.events.to_events():
            config = step_event(config, event)
        assert config == result.config
        assert result.n_events == len(result.events)

    def test_keyed_field_is_reproducible(self, start):
        key = RngKey(2, Purpose.CLOCK, replica=4)
        assert evolve(start, 4.0, key).config == evolve(start, 4.0, key).config

    def test_advance_in_steps_matches_single_run(self, start):
        key = RngKey(2, Purpose.CLOCK)
        sim = Simulation(start, key)
        for t in (0.5, 1.7, 3.0):
            sim.advance(t)
        assert sim.config == evolve(start, 3.0, key).config

    def test_cannot_advance_backwards(self, start):
        sim = Simulation(start, RngKey(2, Purpose.CLOCK)).advance(1.0)
        with pytest.raises(ValueError):
            sim.advance(0.5)

    def test_overlapping_windows_share_clock_marks(self):
        """With an empty start nothing moves, so any window replays the same marks"""
        field = ClockField(5, replica=0)
        small = Simulation(Configuration.zeros(Topology.segment(41)), RngKey(5, Purpose.CLOCK),
                           origin=21, field=field, log_events=True).advance(2.0).result()
        large = Simulation(Configuration.zeros(Topology.segment(81)), RngKey(5, Purpose.CLOCK),
                           origin=41, field=field, log_events=True).advance(2.0).result()
        small_coords = small.events.sites - 21
        large_coords = large.events.sites - 41
        keep = (large_coords >= -20) & (large_coords <= 20)
        assert np.array_equal(small_coords, large_coords[keep])
        assert np.array_equal(small.events.times, large.events.times[keep])

    def test_currents_balance_particle_count(self):
        seg = Configuration.from_string("1" * 20 + "0" * 20, ring=False)
        result = evolve(seg, 10.0, RngKey(3, Purpose.CLOCK), track_currents=True)
        occ = result.config.to_array()
        # net crossings of the bond (20, 21) equal the particles now right of it
        assert result.currents[19] == occ[20:].sum()

    def test_negative_time_rejected(self, start):
        with pytest.raises(ValueError):
            evolve(start, -1.0, RngKey(2, Purpose.CLOCK))


class TestRateMatrix:
    """Test exact generators on small tori"""

    def test_pattern_state_round_trip(self):
        assert state_from_pattern("0110") == 6
        assert pattern_from_state(6, 4) == "0110"

    def test_dep_rates(self):
        matrix = build_rate_matrix(5)
        assert matrix.rate("11000", "01100") == 1
        assert matrix.rate("00100", "10000") == 1
        assert matrix.rate("10000", "01000") == 1
        assert matrix.rate("10000", "00100") == 0
        # a lone particle hops one site either way or two sites to the left
        assert matrix.rate("10000", "00010") == 1
        assert matrix.out_rate("10000") == 3

    def test_rows_bounded_and_particle_number_preserved(self):
        matrix = build_rate_matrix(4)
        assert matrix.out_rate("1100") == 4
        assert matrix.rate("1100", "0110") == 2
        assert matrix.out_rates.max() <= 8
        rows, cols = matrix.q.nonzero()
        popcount = np.array([bin(s).count("1") for s in range(16)])
        assert np.array_equal(popcount[rows], popcount[cols])

    def test_uniform_is_stationary_under_dep(self):
        assert build_rate_matrix(7).uniform_is_stationary()

    def test_size_limits(self):
        with pytest.raises(ValueError):
            build_rate_matrix(2)
        with pytest.raises(ValueError):
            build_rate_matrix(15)

    def test_bad_rules(self):
        with pytest.raises(ValueError):
            MoveRule("10", "11")
        with pytest.raises(ValueError):
            MoveRule("10", "10")


class TestStationarityIdentity:
    """Test the out-rate = in-rate identity"""

    @pytest.mark.parametrize("n", range(3, 13))
    def test_identity_holds(self, n):
        check = stationarity_identity_check(n)
        assert check.passed
        assert check.states_checked == 2**n

    def test_each_long_jump_balances_alone(self):
        assert stationarity_identity_check(8, NO_LEFT_LONG_RULES).passed

    def test_facilitated_variant_is_detected(self):
        check = stationarity_identity_check(6, FACILITATED_RULES)
        assert not check.passed
        assert check.counterexample is not None
        assert check.out_rate != check.in_rate
        assert check.to_dict()["counterexample"] == check.counterexample

    def test_default_rules(self):
        assert len(DEP_RULES) == 4
