import io

import numpy as np
import pytest

from toomsim.dynamics import (
    BoundaryIndex,
    Event,
    EventStream,
    JumpLogWriter,
    Observer,
    Params,
    SpinConfig,
    advance,
    apply_event,
    find_target,
    read_jump_log,
    run,
    sample_initial,
    trial_seed,
)


def ev(site, sign, t=0.0):
    return Event(t, site, sign, 0.0)


class TestParams:
    def test_defaults_fill_lambda_minus(self):
        prm = Params(10, 0.5, 0.3)
        assert prm.lambda_minus == pytest.approx(0.7)

    @pytest.mark.parametrize("p", [0.0, 1.0, 1.2, -0.1])
    def test_rejects_p_outside_open_interval(self, p):
        with pytest.raises(ValueError):
            Params(10, p, 0.5)

    def test_normalizes_rates(self):
        prm = Params(10, 0.5, 2.0, 6.0)
        assert (prm.lambda_plus, prm.lambda_minus) == (0.25, 0.75)

    def test_rejects_both_rates_zero(self):
        with pytest.raises(ValueError):
            Params(10, 0.5, 0.0, 0.0)

    def test_rejects_bad_lambda_plus(self):
        with pytest.raises(ValueError):
            Params(10, 0.5, 1.5)

    def test_rejects_tiny_ring(self):
        with pytest.raises(ValueError):
            Params(1, 0.5, 0.5)


class TestSpinConfig:
    def test_string_round_trip(self):
        cfg = SpinConfig.from_string("++-+")
        assert str(cfg) == "++-+"
        assert cfg.plus_count == 3

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            SpinConfig(np.array([1, 0, -1]))
        with pytest.raises(ValueError):
            SpinConfig.from_string("+x-")

    def test_rejects_stale_count(self):
        with pytest.raises(ValueError):
            SpinConfig(np.array([1, -1], dtype=np.int8), plus_count=2)


class TestSampleInitial:
    def test_concentration(self):
        cfg = sample_initial(Params(10**6, 0.5, 0.5), np.random.default_rng(3))
        assert abs(cfg.plus_count / 10**6 - 0.5) < 0.002
        cfg.check()

    def test_deterministic(self):
        prm = Params(500, 0.3, 0.5)
        a = sample_initial(prm, np.random.default_rng(11))
        b = sample_initial(prm, np.random.default_rng(11))
        assert a == b


class TestEventStream:
    def test_lambda_plus_one_gives_only_plus(self):
        s = EventStream(1, 50, 1.0, block_size=256)
        assert all(s.next_event().sign == 1 for _ in range(2000))

    def test_time_strictly_increases_across_blocks(self):
        s = EventStream(2, 10, 0.5, block_size=64)
        times = [s.next_event().time for _ in range(500)]
        assert np.all(np.diff(times) > 0)

    def test_event_count_and_sign_fraction(self):
        L, T, lp = 200, 50.0, 0.3
        s = EventStream(5, L, lp)
        n = plus = 0
        while s.peek_time() <= T:
            e = s.next_event()
            assert 0 <= e.site < L and 0 <= e.u < 1
            n += 1
            plus += e.sign > 0
        assert abs(n - L * T) < 4 * np.sqrt(L * T)
        assert abs(plus / n - lp) < 4 * np.sqrt(lp * (1 - lp) / n)

    def test_same_seed_same_events(self):
        a = EventStream(9, 30, 0.5)
        b = EventStream(9, 30, 0.5)
        ea = [a.next_event() for _ in range(100)]
        eb = [b.next_event() for _ in range(100)]
        assert ea == eb


class TestFindTarget:
    def test_examples(self):
        assert find_target(SpinConfig.from_string("++--"), 0, 1) == 2
        assert find_target(SpinConfig.from_string("++++"), 1, 1) is None
        assert find_target(SpinConfig.from_string("-+++"), 1, 1) == 0

    def test_boundary_index_agrees(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            L = int(rng.integers(2, 40))
            cfg = sample_initial(Params(L, float(rng.uniform(0.05, 0.95)), 0.5), rng)
            idx = BoundaryIndex(cfg)
            for x in range(L):
                for sign in (1, -1):
                    if cfg.spins[x] == sign:
                        assert idx.find_target(x, sign) == find_target(cfg, x, sign)

    def test_boundary_index_stays_current(self):
        rng = np.random.default_rng(1)
        prm = Params(64, 0.8, 0.6)
        cfg = sample_initial(prm, rng)
        ref = cfg.copy()
        idx = BoundaryIndex(cfg)
        stream = EventStream(4, 64, 0.6)
        for _ in range(5000):
            e = stream.next_event()
            j1 = apply_event(cfg, e, idx)
            j2 = apply_event(ref, e)
            assert j1 == j2
        assert cfg == ref


class TestApplyEvent:
    def test_exchange(self):
        cfg = SpinConfig.from_string("++--")
        j = apply_event(cfg, ev(0, 1))
        assert str(cfg) == "-++-"
        assert j.executed and j.target == 2 and j.block_len == 1

    def test_noop_when_sign_mismatch(self):
        cfg = SpinConfig.from_string("++--")
        j = apply_event(cfg, ev(2, 1))
        assert not j.executed and str(cfg) == "++--"

    def test_adjacent_exchange(self):
        cfg = SpinConfig.from_string("--+-")
        j = apply_event(cfg, ev(2, 1))
        assert str(cfg) == "---+"
        assert j.target == 3 and j.block_len == 0

    def test_monochrome_noop(self):
        cfg = SpinConfig.from_string("----")
        assert not apply_event(cfg, ev(1, -1)).executed

    def test_wrapping_jump(self):
        cfg = SpinConfig.from_string("-++")
        j = apply_event(cfg, ev(2, 1))
        assert j.target == 0 and j.block_len == 0
        assert str(cfg) == "++-"


class TestRun:
    def test_event_count_and_conservation(self):
        prm = Params(100, 0.5, 0.5)
        cfg = sample_initial(prm, np.random.default_rng(0))
        before = cfg.plus_count
        summary = run(cfg, EventStream.for_params(0, prm), 10.0)
        assert abs(summary.n_events - 1000) < 4 * np.sqrt(1000)
        cfg.check()
        assert cfg.plus_count == before

    def test_rejects_nonpositive_horizon(self):
        cfg = SpinConfig.from_string("+-")
        with pytest.raises(ValueError):
            run(cfg, EventStream(0, 2, 0.5), 0.0)

    def test_deterministic_jump_log(self):
        prm = Params(64, 0.4, 0.7)
        logs = []
        for _ in range(2):
            cfg = sample_initial(prm, np.random.default_rng(8))
            fh = io.StringIO()
            run(cfg, EventStream.for_params(8, prm), 20.0, [JumpLogWriter(fh)])
            logs.append(fh.getvalue())
        assert logs[0] == logs[1] and logs[0]
        jumps = read_jump_log(logs[0].splitlines())
        assert all(j.executed for j in jumps)

    def test_continuation_equals_single_run(self):
        prm = Params(32, 0.5, 0.5)
        a = sample_initial(prm, np.random.default_rng(2))
        b = a.copy()
        sa = EventStream.for_params(2, prm)
        run(a, sa, 3.0)
        run(a, sa, 7.0)
        run(b, EventStream.for_params(2, prm), 7.0)
        assert a == b

    def test_observer_sees_pre_event_config_and_dt(self):
        class Probe(Observer):
            def __init__(self):
                self.total = 0.0
                self.seen_pre = True

            def on_event(self, config, jump, dt):
                self.total += dt
                if jump.executed:
                    self.seen_pre &= config.spins[jump.origin] == jump.sign

            def finish(self, config, dt):
                self.total += dt

        prm = Params(16, 0.5, 0.5)
        cfg = sample_initial(prm, np.random.default_rng(5))
        probe = Probe()
        run(cfg, EventStream.for_params(5, prm), 12.5, [probe])
        assert probe.total == pytest.approx(12.5)
        assert probe.seen_pre

    def test_observer_errors_propagate(self):
        class Boom(Observer):
            def on_event(self, config, jump, dt):
                raise RuntimeError("boom")

        with pytest.raises(RuntimeError):
            run(SpinConfig.from_string("+-+-"), EventStream(0, 4, 0.5), 5.0, [Boom()])


def test_trial_seeds_do_not_collide():
    seeds = {trial_seed(m, k) for m in range(20) for k in range(500)}
    assert len(seeds) == 20 * 500
    assert trial_seed(3, 4) == trial_seed(3, 4)


def test_compiled_advance_matches_run():
    prm = Params(300, 0.45, 0.6)
    a = sample_initial(prm, np.random.default_rng(21))
    b = a.copy()
    sa, sb = EventStream.for_params(21, prm), EventStream.for_params(21, prm)
    for horizon in (3.0, 40.0, 41.5):
        ra = run(a, sa, horizon)
        rb = advance(b, sb, horizon)
        assert (ra.n_events, ra.n_executed) == (rb.n_events, rb.n_executed)
        assert a == b and sa.current_time == sb.current_time
        assert sa.n_consumed == sb.n_consumed
