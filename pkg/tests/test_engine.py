import io
import math

import numpy as np
import pytest
from scipy import stats

from dikmc import (EVENT_DRIVEN, THINNING, EventLog, InitialCondition, Params, Stop, gamma_auto,
                   new_system, run_until, step, thinning_step)
from dikmc.engine import default_budget
from dikmc.errors import ThinningGuardError, TruncationError
from dikmc.hazard import t1_survival_array


def _heap_ok(st):
    heap, pos, fire = st.heap, st.heap_pos, st.next_fire
    n = len(heap)
    assert np.array_equal(pos[heap], np.arange(n))
    for k in range(1, n):
        p, c = heap[(k - 1) // 2], heap[k]
        assert (fire[p], p) <= (fire[c], c)


def _replay_fields(params, lam0, log, t):
    """Fields at ``t`` rebuilt from the initial values and the flip history alone."""
    n, a, two_beta = params.N, params.alpha, 2.0 * params.beta
    lam = np.asarray(lam0, dtype=float) * np.exp(-a * t)
    for s, ev in zip(log.absolute_times(), log):
        if s > t:
            break
        jump = ev.new_spin * two_beta  # old spin is -new_spin
        for k in ((ev.site - 1) % n, (ev.site + 1) % n):
            lam[k] += jump * math.exp(-a * (t - s))
    return lam


class TestParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            Params(2, 1.0, 1.0)
        with pytest.raises(ValueError):
            Params(8, 0.0, 1.0)
        with pytest.raises(ValueError):
            Params(8, 1.0, -1.0)
        with pytest.raises(ValueError):
            Params(8, 1.0, 1.0, seed=-1)

    def test_from_c(self):
        p = Params.from_c(1024, 0.5)
        assert p.beta == pytest.approx(2 * math.log(1024))
        assert p.c == pytest.approx(0.5)

    def test_gamma_auto_example(self):
        p = Params(1024, 1.0, 13.8629)
        assert -gamma_auto(p) == pytest.approx(-50.4561, abs=2e-4)
        init = InitialCondition("gamma_auto")
        assert init.resolved_lambda0(p) == pytest.approx(-50.4562, abs=1e-4)


class TestInitialCondition:
    def test_constant_and_noise(self):
        p = Params(16, 1.0, 3.0, seed=5)
        st = new_system(p, InitialCondition.constant(-12.0))
        assert np.all(st.field_value == -12.0)
        noisy = new_system(p, InitialCondition.constant(-12.0, noise_eps=0.1))
        assert np.all(np.abs(noisy.field_value + 12.0) <= 0.1)
        assert np.ptp(noisy.field_value) > 0
        assert np.all(st.spins == -1)

    def test_invalid(self):
        with pytest.raises(ValueError):
            InitialCondition("nope")
        with pytest.raises(ValueError):
            InitialCondition("constant")
        with pytest.raises(ValueError):
            InitialCondition.constant(-1.0, noise_eps=-1.0)
        with pytest.raises(ValueError):
            InitialCondition("profile")


class TestHeap:
    def test_invariant_every_step(self):
        p = Params(33, 1.0, 2.5, seed=9)
        st = new_system(p, InitialCondition.constant(-6.0, noise_eps=0.5))
        _heap_ok(st)
        for _ in range(600):
            ev = step(st)
            _heap_ok(st)
            assert ev.time == st.t

    def test_next_event_is_argmin(self):
        p = Params(20, 0.7, 2.0, seed=3)
        st = new_system(p, InitialCondition.constant(-4.0))
        for _ in range(300):
            expected = int(np.lexsort((np.arange(p.N), st.next_fire))[0])
            t_expected = st.next_fire[expected]
            ev = step(st)
            assert ev.site == expected
            assert ev.time == t_expected

    def test_invariant_after_rebase(self):
        p = Params.from_c(64, 0.5, seed=1)
        st = new_system(p, InitialCondition("gamma_auto"))
        run_until(st, Stop.half_cycles(2))
        _heap_ok(st)
        assert st.t == 0.0


class TestFields:
    def test_bookkeeping_matches_history(self):
        p = Params(24, 1.3, 2.0, seed=17)
        init = InitialCondition.constant(-5.0, noise_eps=0.3)
        st = new_system(p, init)
        lam0 = st.field_value.copy()
        log = run_until(st, Stop.event_budget(400))
        t = st.time_abs
        np.testing.assert_allclose(st.fields(), _replay_fields(p, lam0, log, t), rtol=1e-9, atol=1e-9)

    def test_field_before_matches_history(self):
        p = Params(16, 1.0, 1.5, seed=2)
        st = new_system(p, InitialCondition.constant(-3.0))
        lam0 = st.field_value.copy()
        log = run_until(st, Stop.event_budget(200))
        times = log.absolute_times()
        for k in range(0, 200, 17):
            before = EventLog(log.time[:k], log.site[:k], log.new_spin[:k], log.field_before[:k],
                              log.half_cycle[:k], log.cycle_offsets, log.initial_spins)
            ref = _replay_fields(p, lam0, before, times[k])[log.site[k]]
            assert log.field_before[k] == pytest.approx(ref, rel=1e-9, abs=1e-9)

    def test_flip_moves_neighbours(self):
        p = Params(8, 1.0, 2.0, seed=4)
        st = new_system(p, InitialCondition.constant(-3.0))
        before = st.fields()
        ev = step(st)
        after_pred = before * math.exp(-p.alpha * ev.time)
        i = ev.site
        for k in ((i - 1) % 8, (i + 1) % 8):
            assert st.field(k) == pytest.approx(after_pred[k] + 2 * p.beta, rel=1e-12, abs=0)
        assert st.field(i) == pytest.approx(after_pred[i], rel=1e-12, abs=0)
        assert ev.field_before == pytest.approx(after_pred[i], rel=1e-12, abs=0)
        assert ev.new_spin == 1 and st.spins[i] == 1


class TestDeterminism:
    @pytest.mark.parametrize("engine", [EVENT_DRIVEN, THINNING])
    def test_same_seed_same_log(self, engine):
        p = Params(16, 1.0, 1.2, seed=123)
        init = InitialCondition.constant(-2.0, noise_eps=0.2)
        a = run_until(new_system(p, init, engine), Stop.event_budget(300))
        b = run_until(new_system(p, init, engine), Stop.event_budget(300))
        np.testing.assert_array_equal(a.time, b.time)
        np.testing.assert_array_equal(a.site, b.site)
        c = run_until(new_system(p.with_seed(124), init, engine), Stop.event_budget(300))
        assert not np.array_equal(a.time, c.time)


class TestStops:
    def setup_method(self):
        self.p = Params.from_c(32, 0.5, seed=8)
        self.init = InitialCondition("gamma_auto")

    def test_first_flip(self):
        st = new_system(self.p, self.init)
        log = run_until(st, Stop.first_flip())
        assert len(log) == 1 and st.plus_count == 1

    def test_all_plus_then_all_minus(self):
        st = new_system(self.p, self.init)
        up = run_until(st, Stop.all_plus())
        assert st.plus_count == self.p.N and st.magnetization == 1.0
        assert np.all(up.final_spins() == 1)
        assert st.t == 0.0 and st.origin == pytest.approx(up.time[-1])
        down = run_until(st, Stop.all_minus())
        assert st.plus_count == 0
        assert np.all(down.final_spins() == -1)
        assert run_until(st, Stop.all_minus()).time.size == 0

    def test_half_cycles_offsets(self):
        st = new_system(self.p, self.init)
        log = run_until(st, Stop.half_cycles(3))
        assert len(log.cycle_offsets) == 3
        assert np.all(np.diff(log.cycle_offsets) > 0)
        assert np.all(np.diff(log.absolute_times()) > 0)
        sums = log.spin_sums()
        assert sums[0] == -self.p.N and sums[-1] == self.p.N
        assert st.time_abs == pytest.approx(log.absolute_times()[-1], rel=1e-15, abs=0)
        with pytest.raises(ValueError):
            Stop.half_cycles(0)

    def test_horizon(self):
        st = new_system(self.p, self.init)
        log = run_until(st, Stop.horizon(0.5))
        assert st.t == 0.5
        assert np.all(log.time <= 0.5)
        assert run_until(st, Stop.horizon(0.4)).time.size == 0

    def test_event_budget(self):
        st = new_system(self.p, self.init)
        log = run_until(st, Stop.event_budget(5))
        assert len(log) == 5

    def test_truncation_keeps_partial_log(self):
        st = new_system(self.p, self.init)
        with pytest.raises(TruncationError) as exc:
            run_until(st, Stop.all_plus(), budget=7)
        assert len(exc.value.log) == 7
        assert default_budget(100) == 6000

    def test_unknown_stop(self):
        st = new_system(self.p, self.init)
        with pytest.raises(ValueError):
            run_until(st, Stop("bogus"))


class TestThinning:
    def test_guard_on_beta(self):
        with pytest.raises(ThinningGuardError):
            new_system(Params(8, 1.0, 2.5), InitialCondition.constant(-1.0), THINNING)

    def test_guard_on_field(self):
        # a field of magnitude 6 > 4 beta breaks domination
        st = new_system(Params(8, 1.0, 1.0), InitialCondition.constant(6.0), THINNING)
        with pytest.raises(ThinningGuardError):
            thinning_step(st)

    def test_wrong_step_function(self):
        p = Params(8, 1.0, 1.0)
        with pytest.raises(ValueError):
            step(new_system(p, InitialCondition.constant(-1.0), THINNING))
        with pytest.raises(ValueError):
            thinning_step(new_system(p, InitialCondition.constant(-1.0)))

    def test_first_flip_law_agrees(self):
        p = Params(8, 1.0, 1.2)
        init = InitialCondition.constant(-3.0)
        reps = 2000
        t_ed = [step(new_system(p.with_seed(s), init)).time for s in range(reps)]
        t_th = [thinning_step(new_system(p.with_seed(10**6 + s), init, THINNING)).time
                for s in range(reps)]
        d = stats.ks_2samp(t_ed, t_th).statistic
        assert d <= 1.63 * math.sqrt(2.0 / reps)


def test_first_flip_matches_exact_survival():
    p = Params(16, 1.0, 3.0)
    reps = 3000
    t = np.sort([step(new_system(p.with_seed(s), InitialCondition.constant(-8.0))).time
                 for s in range(reps)])
    cdf = 1.0 - t1_survival_array(p.N, 8.0, p.alpha, t)
    k = np.arange(1, reps + 1)
    d = max(np.max(k / reps - cdf), np.max(cdf - (k - 1) / reps))
    assert d <= 1.63 / math.sqrt(reps)


def test_fast_flip_cap():
    # exponent above the cap: the neighbour flips at the next representable instant
    p = Params(8, 1.0, 400.0, seed=1)
    st = new_system(p, InitialCondition.constant(-1.0))
    first = step(st)
    second = step(st)
    assert second.time == np.nextafter(first.time, np.inf)
    assert second.site in ((first.site - 1) % 8, (first.site + 1) % 8)


def test_csv_roundtrip(tmp_path):
    p = Params.from_c(16, 0.5, seed=3)
    st = new_system(p, InitialCondition("gamma_auto"))
    log = run_until(st, Stop.half_cycles(2))
    path = tmp_path / "events.csv"
    log.to_csv(path, with_offsets=True)
    back = EventLog.read_csv(path, log.initial_spins)
    np.testing.assert_array_equal(back.time, log.time)
    np.testing.assert_array_equal(back.site, log.site)
    np.testing.assert_array_equal(back.new_spin, log.new_spin)
    np.testing.assert_array_equal(back.field_before, log.field_before)
    np.testing.assert_array_equal(back.absolute_times(), log.absolute_times())
    buf = io.StringIO()
    log.to_csv(buf)
    assert buf.getvalue().splitlines()[0] == "time,site,new_spin,field_before"


def test_concatenate():
    p = Params.from_c(16, 0.5, seed=4)
    st = new_system(p, InitialCondition("gamma_auto"))
    a = run_until(st, Stop.all_plus())
    b = run_until(st, Stop.all_minus())
    both = EventLog.concatenate([a, b])
    assert len(both) == len(a) + len(b)
    assert np.all(np.diff(both.absolute_times()) > 0)
    with pytest.raises(ValueError):
        EventLog.concatenate([])
