import io

import numpy as np
import pytest

from toomsim.coupling import (
    CoupledPair,
    DiscrepancyView,
    discrepancies,
    front_speed_experiment,
    max_speed_experiment,
    run_coupled,
    sample_mu_S,
    step_coupled,
    tagged_gap_experiment,
    write_coupled_csv,
)
from toomsim.dynamics import Event, EventStream, Params, SpinConfig, apply_event
from toomsim.tagged import TaggedState


class FixedStream:
    """Stream stand-in that replays a given list of events."""

    def __init__(self, events):
        self.events = list(events)

    def next_event(self):
        return self.events.pop(0)


class TestSampleMuS:
    def test_empty_set_gives_identical_replicas(self):
        s1, s2 = sample_mu_S(Params(100, 0.5, 0.5), [], 0)
        assert s1 == s2

    def test_single_site_discrepancy_probability(self):
        p, n = 0.3, 20000
        hits = 0
        rng = np.random.default_rng(0)
        for _ in range(n):
            s1, s2 = sample_mu_S(Params(4, p, 0.5), [2], rng)
            hits += s1.spins[2] != s2.spins[2]
            assert np.array_equal(s1.spins[[0, 1, 3]], s2.spins[[0, 1, 3]])
        q = 2 * p * (1 - p)
        assert abs(hits / n - q) < 4 * np.sqrt(q * (1 - q) / n)

    def test_conditioned_single_discrepancy(self):
        s1, s2 = sample_mu_S(Params(50, 0.5, 0.5), [7], 3, condition=True)
        assert list(discrepancies(s1, s2)) == [7]


class TestStepCoupled:
    def test_identical_replicas_stay_identical(self):
        prm = Params(64, 0.5, 0.5)
        s1, s2 = sample_mu_S(prm, [], 1)
        pair = CoupledPair.create(s1, s2, EventStream.for_params(1, prm))
        for _ in range(2000):
            j1, j2 = step_coupled(pair)
            assert j1 == j2
        assert pair.view.count == 0

    def test_discrepancy_moves_to_end_of_block(self):
        s1 = SpinConfig.from_string("+++-+++++++-")
        s2 = SpinConfig.from_string("+++-+-+++++-")
        pair = CoupledPair.create(s1, s2, FixedStream([Event(0.1, 4, 1, 0.0)]))
        assert list(pair.view.signs) == [5]
        step_coupled(pair)
        assert discrepancies(pair.sigma1, pair.sigma2) == {11: 1}
        assert pair.view.signs == {11: 1}
        assert pair.view.front == 11 and pair.view.displacement == 11

    def test_far_event_leaves_discrepancies(self):
        s1 = SpinConfig.from_string("+-+---+-+--+")
        s2 = SpinConfig.from_string("+++---+-+--+")
        pair = CoupledPair.create(s1, s2, FixedStream([Event(0.1, 6, 1, 0.0)]))
        before = dict(pair.view.signs)
        step_coupled(pair)
        assert pair.view.signs == before

    def test_incremental_view_matches_recomputation(self):
        prm = Params(256, 0.5, 0.5)
        rng = np.random.default_rng(9)
        s1, s2 = sample_mu_S(prm, range(10, 60), rng)
        pair = CoupledPair.create(s1, s2, EventStream.for_params(9, prm), origin=10)
        for k in range(100_000):
            step_coupled(pair)
            if k % 500 == 0:
                assert pair.view.signs == discrepancies(pair.sigma1, pair.sigma2)
                if pair.view.signs and not pair.view.wrapped:
                    dist = min((x - pair.view.front) % 256 for x in pair.view.signs)
                    assert dist == 0
        assert pair.view.signs == discrepancies(pair.sigma1, pair.sigma2)


class TestDiscrepancyView:
    def test_front_measured_from_origin(self):
        s1 = SpinConfig.from_string("+-+-+-")
        s2 = SpinConfig.from_string("--+--+")
        v = DiscrepancyView.from_pair(s1, s2, origin=2)
        assert v.count == 3 and v.front == 4 and v.displacement == 2
        assert v.signed_total() == 1 + 1 - 1

    def test_empty(self):
        s = SpinConfig.from_string("+-+-")
        v = DiscrepancyView.from_pair(s, s.copy())
        assert v.count == 0 and v.displacement is None


def python_coupled(params, s1, s2, seed, horizon, origin, creation_limit, tagged=None):
    pair = CoupledPair.create(s1, s2, EventStream.for_params(seed, params), origin, tagged, creation_limit)
    min_gap = None
    if tagged is not None:
        min_gap = pair.view.front_unwrapped - tagged.position
    while pair.stream.peek_time() <= horizon:
        step_coupled(pair)
        if not pair.view.signs:
            break
        if tagged is not None:
            min_gap = min(min_gap, pair.view.front_unwrapped - pair.tagged.position)
    return pair, min_gap


def test_compiled_coupling_matches_python_single_discrepancy():
    prm = Params(512, 0.5, 0.5)
    for seed in range(5):
        a1, a2 = sample_mu_S(prm, [0], seed, condition=True)
        b1, b2 = a1.copy(), a2.copy()
        r = run_coupled(prm, a1, a2, seed, 30.0, origin=0, creation_limit=256)
        pair, _ = python_coupled(prm, b1, b2, seed, 30.0, 0, 256)
        assert r.front_displacement == pair.view.displacement
        assert r.count == pair.view.count
        assert r.wrapped == pair.view.wrapped
        assert a1 == pair.sigma1 and a2 == pair.sigma2


def test_compiled_coupling_matches_python_tagged_gap():
    prm = Params(256, 0.5, 0.5)
    for seed in range(3):
        a1, a2 = sample_mu_S(prm, range(1, 129), seed)
        a1.spins[0] = a2.spins[0] = 1
        a1, a2 = SpinConfig(a1.spins), SpinConfig(a2.spins)
        b1, b2 = a1.copy(), a2.copy()
        r = run_coupled(prm, a1, a2, seed, 10.0, origin=1, tag_sign=1, tag_site=0)
        pair, gap = python_coupled(prm, b1, b2, seed, 10.0, 1, None, TaggedState(0, 1, 256))
        assert r.tag_position == pair.tagged.position
        assert r.min_gap == gap
        assert r.front_displacement == pair.view.displacement


def test_front_never_moves_left_and_runs_away():
    prm = Params(1024, 0.5, 0.5)
    res = front_speed_experiment(prm, 20, 50.0, [0.0, 0.1, 1.0, 10.0], master_seed=2)
    assert res.n_wrapped == 0
    assert res.fractions[0] == 0.0
    assert np.all(np.diff(res.fractions) >= 0)
    assert res.fractions[-1] == 1.0
    assert np.all(res.displacements >= 0)


def test_max_speed_tail():
    prm = Params(1024, 0.5, 0.5)
    res = max_speed_experiment(prm, 40, 40.0, [0, 40, 80, 120, 160, 200], master_seed=1)
    assert res.tail[0] == 1.0
    assert np.all(np.diff(res.tail) <= 0)


def test_tagged_gap_stays_positive():
    prm = Params(1024, 0.5, 0.5)
    res = tagged_gap_experiment(prm, 20, 40.0, master_seed=5)
    assert res.n_wrapped == 0
    assert res.min_gaps.size + res.n_coalesced == 20
    assert np.all(res.min_gaps > 0)


def test_tagged_gap_seeding_must_avoid_origin():
    with pytest.raises(ValueError):
        tagged_gap_experiment(Params(64, 0.5, 0.5), 1, 1.0, start=0)


def test_no_discrepancy_created_left_of_the_front():
    # brute force on small rings: one coupled step from every state pair with
    # one discrepancy never produces one closer than the front to the origin,
    # unless a jump wraps around the ring or finds no target at all
    L = 7
    for code in range(1 << L):
        bits = [(code >> i) & 1 for i in range(L)]
        s1 = SpinConfig(np.where(np.array(bits) == 1, 1, -1).astype(np.int8))
        for x in range(1, L - 1):
            s2 = s1.copy()
            s2.spins[x] *= -1
            s2 = SpinConfig(s2.spins)
            for site in range(L):
                for sign in (1, -1):
                    c1, c2 = s1.copy(), s2.copy()
                    j1 = apply_event(c1, Event(0.0, site, sign, 0.0))
                    j2 = apply_event(c2, Event(0.0, site, sign, 0.0))
                    wraps = any(j.executed and j.target < j.origin for j in (j1, j2))
                    stuck = any(c.spins[site] == sign and not j.executed for c, j in ((s1, j1), (s2, j2)))
                    if stuck:
                        continue
                    if wraps:
                        continue
                    d = discrepancies(c1, c2)
                    assert not d or min(d) >= x


def test_coupled_csv():
    prm = Params(128, 0.5, 0.5)
    s1, s2 = sample_mu_S(prm, [0], 0, condition=True)
    r = run_coupled(prm, s1, s2, 0, 5.0, sample_dt=1.0, creation_limit=64)
    fh = io.StringIO()
    write_coupled_csv(fh, r)
    lines = fh.getvalue().splitlines()
    assert lines[0] == "t,front,Y,gap,discrepancyCount" and len(lines) == 6
