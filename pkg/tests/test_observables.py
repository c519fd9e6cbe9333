import io
import math

import numpy as np
import pytest

from dikmc import EventLog, InitialCondition, Params, new_system
from dikmc import asymptotics as asy
from dikmc.errors import RegimeError, TruncationError
from dikmc.harness import sup_distance_to_sawtooth
from dikmc.observables import (CycleRecord, DropletTracker, RescaledPath, center_T1,
                               detect_covering, detect_first_flip, post_cover_field_check,
                               post_cover_profile_residuals, ramp_r2, read_cycles_csv,
                               rescale_trajectory, run_cycles, run_cycles_detailed, track_droplet,
                               write_cycles_csv)


def _log(times, sites, spins, N, initial=-1):
    n = len(times)
    return EventLog(np.asarray(times, dtype=float), np.asarray(sites, dtype=np.int64),
                    np.asarray(spins, dtype=np.int8), np.zeros(n), np.zeros(n, dtype=np.int64),
                    np.zeros(1), np.full(N, initial, dtype=np.int8))


def _set_all(state, spin, fields):
    state.spins[:] = spin
    state._counts[0] = state.N if spin == 1 else 0
    state.field_value[:] = fields
    state.field_anchor[:] = state.t


class TestStoppingTimes:
    def test_first_flip(self):
        assert detect_first_flip(_log([0.42], [2], [1], 5)) == 0.42
        with pytest.raises(ValueError):
            detect_first_flip(_log([], [], [], 5))

    def test_first_flip_relabel_invariant(self):
        a = _log([0.3, 0.5], [1, 2], [1, 1], 6)
        b = _log([0.3, 0.5], [4, 5], [1, 1], 6)
        assert detect_first_flip(a) == detect_first_flip(b)

    def test_covering_three_sites(self):
        t = [0.5, 0.75, 1.25]
        log = _log(t, [0, 1, 2], [1, 1, 1], 3)
        assert detect_covering(log, 1) == t[2] - t[0]

    def test_covering_not_reached(self):
        with pytest.raises(TruncationError):
            detect_covering(_log([0.5, 0.7], [0, 1], [1, 1], 3), 1)
        with pytest.raises(ValueError):
            detect_covering(_log([0.5], [0], [1], 3), 0)


class TestCentering:
    def test_worked_example(self):
        # ln N = 10 to five digits; the mpmath value is for N = 22026 itself
        p = Params(22026, 1.0, 20.0)
        assert asy.t1_center(p, 30.0) == pytest.approx(1.3288731881588734586, rel=1e-14, abs=0)
        assert asy.t1_center(p, 30.0) == pytest.approx(1.328871, abs=5e-6)
        assert center_T1(1.5, p, 30.0) == pytest.approx(1.71129, abs=2e-4)

    def test_zero_at_center(self):
        p = Params(1000, 1.7, 20.0)
        assert center_T1(asy.t1_center(p, 25.0), p, 25.0) == pytest.approx(0.0, abs=1e-12)

    def test_regime_error(self):
        p = Params(1000, 1.0, 20.0)
        with pytest.raises(RegimeError):
            center_T1(1.0, p, math.log(1000))


class TestDroplet:
    def test_sequential_growth(self):
        N = 10
        order = [4, 5, 3, 6, 2, 7, 1, 8, 0, 9]
        count, single = track_droplet(_log(np.arange(N) + 1.0, order, [1] * N, N))
        assert (count, single) == (0, True)

    def test_wraps_around_ring(self):
        N = 6
        count, single = track_droplet(_log(np.arange(N) + 1.0, [0, 5, 1, 4, 2, 3], [1] * N, N))
        assert (count, single) == (0, True)

    def test_detached_nucleation(self):
        count, single = track_droplet(_log([1.0, 2.0, 3.0], [2, 4, 3], [1, 1, 1], 8))
        assert count >= 1 and not single

    def test_backward_flip(self):
        count, _ = track_droplet(_log([1.0, 2.0, 3.0], [2, 2, 2], [1, -1, 1], 8))
        assert count >= 1

    def test_tracker_interval_grows_by_one(self):
        N = 12
        tr = DropletTracker(N)
        for k, site in enumerate([11, 0, 10, 1, 9, 2]):
            tr.update(site, 1)
            left, right = tr.plus_interval
            assert (right - left) % N + 1 == k + 1
        assert tr.single_droplet
        tr.update(5, 1)
        assert not tr.single_droplet and tr.plus_interval is None

    def test_n_mismatch(self):
        with pytest.raises(ValueError):
            track_droplet(_log([1.0], [0], [1], 5), N=6)


class TestPostCoverFields:
    def test_exact_prediction_gives_zero(self):
        p = Params.from_c(256, 0.5)
        st = new_system(p, InitialCondition.constant(-1.0))
        X = 0.37
        _set_all(st, 1, asy.post_cover_prediction(p, X))
        assert post_cover_field_check(st, p, X) == pytest.approx(0.0, abs=1e-12)

    def test_unit_alpha_reduces(self):
        p = Params.from_c(256, 0.5)
        ln_n = math.log(256)
        assert asy.post_cover_prediction(p, 0.2) == pytest.approx(4 * p.beta - ln_n + math.log(ln_n) + 0.2)

    def test_minus_cover_uses_sign(self):
        p = Params.from_c(64, 0.5)
        st = new_system(p, InitialCondition.constant(-1.0))
        _set_all(st, -1, -asy.post_cover_prediction(p, -0.4))
        assert post_cover_field_check(st, p, -0.4) == pytest.approx(0.0, abs=1e-12)

    def test_profile_residuals(self):
        p = Params.from_c(128, 0.5)
        shape = asy.cosine_profile(0.25, 1024)
        st = new_system(p, InitialCondition.constant(-1.0))
        X = 0.1
        ln_n = math.log(p.N)
        level = ln_n - 1.5 * math.log(ln_n) - math.log(math.sqrt(shape.d2_min / (2 * math.pi))) - X
        _set_all(st, 1, 4 * p.beta - shape.at_sites(p.N) * level)
        st.last_site = 7
        res = post_cover_profile_residuals(st, p, shape, X)
        assert np.isnan(res[6]) and np.isnan(res[8])
        assert np.nanmax(np.abs(res)) < 1e-12


class TestCycles:
    def test_single_half_cycle(self):
        p = Params.from_c(256, 0.5, seed=5)
        run = run_cycles_detailed(p, InitialCondition("gamma_auto"), 1, keep_log=True)
        rec = run.records[0]
        log = run.log
        assert rec.j == 1 and rec.Tc > 0 and rec.undesired == 0
        assert rec.T1 == detect_first_flip(log)
        assert rec.Tc == pytest.approx(detect_covering(log, 1), rel=1e-12, abs=0)
        assert rec.T1 + rec.Tc == pytest.approx(log.time[-1], rel=1e-12, abs=0)
        assert rec.Z == pytest.approx(rec.Tc / asy.tc_scale(p), rel=1e-12, abs=0)
        lam = asy.t1_scale(p)
        assert rec.X == pytest.approx(p.alpha * math.log(p.N) * (rec.T1 - lam), rel=1e-12, abs=0)
        assert run.state.plus_count == p.N

    def test_alternating_signs_and_bookkeeping(self):
        p = Params.from_c(128, 0.5, seed=6)
        run = run_cycles_detailed(p, InitialCondition("gamma_auto"), 4, keep_log=True)
        assert [r.j for r in run.records] == [1, 2, 3, 4]
        assert run.state.plus_count == 0
        sums = run.log.spin_sums()
        assert sums[-1] == int(run.log.final_spins().astype(int).sum()) == -p.N
        assert np.all(np.abs(np.diff(sums)) == 2)

    def test_truncation_carries_records(self):
        p = Params.from_c(128, 0.5, seed=6)
        with pytest.raises(TruncationError) as exc:
            run_cycles(p, InitialCondition("gamma_auto"), 3, budget=50)
        assert isinstance(exc.value.records, list)

    def test_n_must_be_positive(self):
        with pytest.raises(ValueError):
            run_cycles(Params.from_c(32, 0.5), InitialCondition("gamma_auto"), 0)

    def test_cycles_csv_roundtrip(self):
        recs = [CycleRecord(1, 1.25, 0.5, -0.3, 0.9, 0, 0.999, 0.12),
                CycleRecord(2, 1.5, 0.25, 0.7, 1.1, 2, 0.98, float("nan"))]
        buf = io.StringIO()
        write_cycles_csv(recs, buf)
        assert buf.getvalue().splitlines()[0] == "j,T1,Tc,X,Z,undesired,ramp_r2,field_residual_max"
        back = read_cycles_csv(io.StringIO(buf.getvalue()))
        assert back[0] == recs[0]
        assert back[1].Tc == recs[1].Tc and math.isnan(back[1].field_residual_max)


class TestRescaling:
    def _synthetic(self, p, T1, Tc):
        N = p.N
        t = T1 + np.arange(N) * Tc / (N - 1)
        return _log(t, np.arange(N), [1] * N, N)

    def test_unit_plateau_and_ramp(self):
        p = Params.from_c(64, 0.5)
        path = rescale_trajectory(self._synthetic(p, asy.t1_scale(p), asy.tc_scale(p)), p)
        assert path.s[1] == pytest.approx(1.0, rel=1e-12, abs=0)
        assert path.s[-1] == pytest.approx(2.0, rel=1e-12, abs=0)
        assert path.m[0] == -1.0 and path.m[-1] == 1.0

    def test_trivial_sawtooth_floor(self):
        N = 200
        Z = 0.8
        s = np.concatenate(([0.0], 1.0 + np.arange(N) * Z / (N - 1)))
        m = -1.0 + 2.0 * np.arange(N + 1) / N
        rec = CycleRecord(1, 1.0, Z, 0.0, Z, 0, 1.0, 0.0)
        d = sup_distance_to_sawtooth([rec], RescaledPath(s, m))
        assert d <= 2.0 / N + 1e-12

    def test_step_path_is_right_continuous(self):
        path = RescaledPath(np.array([0.0, 1.0, 2.0]), np.array([-1.0, 0.0, 1.0]))
        assert path(0.999) == -1.0 and path(1.0) == 0.0 and path(5.0) == 1.0


def test_ramp_r2():
    t = np.linspace(0, 1, 50)
    assert ramp_r2(t, 3 * t - 1) == pytest.approx(1.0)
    assert ramp_r2([0, 1], [0, 5]) == 1.0
    rng = np.random.default_rng(0)
    assert ramp_r2(t, rng.normal(size=50)) < 0.5
