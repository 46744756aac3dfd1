import math

import numpy as np
import pytest

from hvo import components as comp
from hvo import maps
from hvo.errors import InvalidArgument

RPM = math.pi / 30.0


def flat_em_mapset(eta, rated=100e3, omega_max=500.0, omega_base=100.0):
    """E-machine map with spatially constant efficiency, for closed-form checks."""
    base = maps.generate_em_map(rated, omega_max, omega_base)
    grid = maps.Grid2D(base.efficiency.x_axis, base.efficiency.y_axis,
                       np.full_like(base.efficiency.values, eta))
    return maps.EmMapSet(grid, base.torque_sup, base.torque_inf, base.omega_max, base.rated_power)


@pytest.fixture(scope="module")
def battery():
    return comp.BatteryPack()


@pytest.fixture(scope="module")
def engine():
    mapset = maps.generate_engine_maps(8.7, 147e3, 2000 * RPM, 1200.0, 1100 * RPM, 600 * RPM)
    return comp.Engine(mapset, inertia=2.2)


class TestTransmission:
    def test_zero_load(self):
        tr = comp.Transmission(4.3, 0.97, 0.0)
        omega, torque = comp.transmission_input(50.0, 0.0, 0.0, tr)
        assert omega == 50.0 * 4.3
        assert torque == 0.0

    def test_forward_flow(self):
        tr = comp.Transmission(4.3, 0.97, 0.0)
        _, torque = comp.transmission_input(50.0, 1000.0, 0.0, tr)
        assert torque == pytest.approx((1000.0 / 4.3) / 0.97, rel=1e-12)

    def test_reverse_flow(self):
        tr = comp.Transmission(4.3, 0.97, 0.0)
        _, torque = comp.transmission_input(50.0, -1000.0, 0.0, tr)
        assert torque == pytest.approx((-1000.0 / 4.3) * 0.97, rel=1e-12)

    def test_zero_speed_unit_factor(self):
        tr = comp.Transmission(4.0, 0.9, 0.0)
        _, torque = comp.transmission_input(0.0, 100.0, 0.0, tr)
        assert torque == 100.0 / 4.0  # sgn(omega) = 0 -> efficiency factor 1

    def test_inertia_term(self):
        tr = comp.Transmission(4.0, 1.0, 0.5)
        _, torque = comp.transmission_input(10.0, 0.0, 2.0, tr)
        assert torque == pytest.approx(0.5 * 2.0 * 4.0)

    def test_loss_opposes_flow_both_directions(self):
        tr = comp.Transmission(4.0, 0.95, 0.0)
        rng = np.random.default_rng(11)
        for _ in range(1000):
            w = rng.uniform(1.0, 60.0)
            t = rng.uniform(-2000.0, 2000.0)
            omega_t, torque_t = comp.transmission_input(w, t, 0.0, tr)
            p_prop = w * t
            p_tran = omega_t * torque_t
            if t > 0:
                assert abs(p_tran) >= abs(p_prop) - 1e-9  # upstream supplies the loss
            elif t < 0:
                assert abs(p_tran) <= abs(p_prop) + 1e-9  # recovered power is reduced

    def test_validation(self):
        with pytest.raises(InvalidArgument):
            comp.Transmission(0.0, 0.97, 0.0)
        with pytest.raises(InvalidArgument):
            comp.Transmission(4.0, 1.5, 0.0)


class TestBattery:
    def test_pack_sizing(self, battery):
        # 70 kWh at 109 cells x 3.2 V nominal
        assert battery.capacity_as == pytest.approx(70e3 / (109 * 3.2) * 3600.0)
        assert battery.i_lim_dis == pytest.approx(3.0 * battery.capacity_as / 3600.0)
        assert battery.i_lim_ch == pytest.approx(-2.0 * battery.capacity_as / 3600.0)

    def test_curves_positive_over_full_soc(self, battery):
        soc = np.linspace(0.0, 1.0, 101)
        assert np.all(battery.v_oc(soc) > 0)
        assert np.all(battery.r_eq(soc) > 0)
        assert np.all(np.diff(battery.v_oc(soc)) > 0)  # monotone spline of monotone data

    def test_zero_power_zero_current(self, battery):
        res = comp.battery_from_power(0.0, 0.6, battery, 1.0)
        assert res.feasible
        assert res.i_b == 0.0
        assert res.soc_next == 0.6

    def test_hand_evaluated_root(self):
        i = comp.battery_current_from_power(350.0, 0.05, 35e3)
        expected = (350.0 - math.sqrt(350.0**2 - 4 * 0.05 * 35e3)) / (2 * 0.05)
        assert i == expected
        assert 350.0 * i - 0.05 * i * i == pytest.approx(35e3, rel=1e-6)

    def test_root_identity_random(self):
        rng = np.random.default_rng(5)
        for _ in range(2000):
            v = rng.uniform(100.0, 800.0)
            r = rng.uniform(0.005, 0.5)
            p = rng.uniform(-1.0, 1.0) * v * v / (4 * r)
            i = comp.battery_current_from_power(v, r, p)
            assert i is not None
            assert v * i - r * i * i == pytest.approx(p, rel=1e-9, abs=1e-6)

    def test_voltage_limited(self, battery):
        v = float(battery.v_oc(0.6))
        r = float(battery.r_eq(0.6))
        res = comp.battery_from_power(v * v / (4 * r) * 1.01, 0.6, battery, 1.0)
        assert not res.feasible and res.reason == "voltage_limit"

    def test_current_limited(self, battery):
        # just above the discharge current limit
        v = float(battery.v_oc(0.6))
        r = float(battery.r_eq(0.6))
        i = battery.i_lim_dis * 1.05
        res = comp.battery_from_power(v * i - r * i * i, 0.6, battery, 1.0)
        assert not res.feasible and res.reason == "current_limit"

    def test_soc_window(self, battery):
        res = comp.battery_from_power(50e3, battery.soc_min + 1e-6, battery, 10.0)
        assert not res.feasible and res.reason == "soc_window"

    def test_phi_zero(self, battery):
        res = comp.battery_from_current_factor(0.0, 0.6, battery, 1.0)
        assert res.feasible and res.i_b == 0.0 and res.p_b == 0.0

    def test_phi_one_is_discharge_limit(self, battery):
        res = comp.battery_from_current_factor(1.0, 0.6, battery, 1.0)
        assert res.i_b == battery.i_lim_dis

    def test_phi_minus_half_is_1c_charge(self, battery):
        res = comp.battery_from_current_factor(-0.5, 0.6, battery, 1.0)
        assert res.i_b == pytest.approx(-battery.capacity_as / 3600.0, rel=1e-12)

    def test_phi_out_of_range(self, battery):
        with pytest.raises(InvalidArgument):
            comp.battery_from_current_factor(1.5, 0.6, battery, 1.0)

    def test_round_trip_phi_power(self, battery):
        for soc in (0.4, 0.6, 0.8):
            for phi in np.linspace(-1.0, 1.0, 101):
                fwd = comp.battery_from_current_factor(phi, soc, battery, 1e-6)
                if not fwd.feasible:
                    continue
                back = comp.battery_from_power(fwd.p_b, soc, battery, 1e-6)
                assert back.feasible
                assert back.i_b == pytest.approx(fwd.i_b, rel=1e-9, abs=1e-9)

    def test_soc_monotone_in_current(self, battery):
        res_d = comp.battery_from_current_factor(0.5, 0.6, battery, 1.0)
        res_c = comp.battery_from_current_factor(-0.5, 0.6, battery, 1.0)
        assert res_d.soc_next < 0.6
        assert res_c.soc_next > 0.6

    def test_charge_coulombic_efficiency(self, battery):
        res = comp.battery_from_current_factor(-0.5, 0.6, battery, 1.0)
        expected = 0.6 - battery.eta_c_charge * res.i_b / battery.capacity_as
        assert res.soc_next == expected

    def test_with_window(self, battery):
        relaxed = battery.with_window(0.0, 1.0)
        assert relaxed.soc_min == 0.0 and relaxed.soc_max == 1.0
        assert battery.soc_min == 0.4  # original untouched
        assert relaxed.capacity_as == battery.capacity_as


class TestEMachine:
    def test_zero_torque_zero_power(self):
        em = comp.EMachine(flat_em_mapset(0.9), 0.0)
        res = comp.em_power(100.0, 0.0, em)
        assert res.feasible and res.p_el == 0.0

    def test_motoring_power(self):
        em = comp.EMachine(flat_em_mapset(0.9), 0.0)
        res = comp.em_power(100.0, 100.0, em)
        assert res.p_el == pytest.approx(10_000.0 / 0.9, rel=1e-12)

    def test_regeneration_power(self):
        em = comp.EMachine(flat_em_mapset(0.9), 0.0)
        res = comp.em_power(100.0, -100.0, em)
        assert res.p_el == pytest.approx(-9000.0, rel=1e-12)

    def test_envelope_violations(self):
        em = comp.EMachine(flat_em_mapset(0.9), 0.0)
        assert not comp.em_power(600.0, 10.0, em).feasible
        sup = float(em.maps.torque_sup(100.0))
        assert not comp.em_power(100.0, sup * 1.05, em).feasible
        assert not comp.em_power(100.0, -sup * 1.05, em).feasible

    def test_power_sign_matches_mechanical(self):
        em = comp.EMachine(maps.generate_em_map(147e3, 320.0, 157.0), 0.0)
        rng = np.random.default_rng(9)
        for _ in range(500):
            w = rng.uniform(1.0, 320.0)
            t = rng.uniform(-1.0, 1.0) * float(em.maps.torque_sup(w))
            res = comp.em_power(w, t, em)
            assert res.feasible
            assert np.sign(res.p_el) == np.sign(t * w)


class TestGenerator:
    def test_zero_power(self):
        gen = comp.Generator(flat_em_mapset(0.92, rated=125e3, omega_max=880.0, omega_base=330.0), 0.0)
        res = comp.generator_evaluate(0.0, 0.0, gen)
        assert res.feasible and res.torque == 0.0

    def test_generating_branch(self):
        gen = comp.Generator(flat_em_mapset(0.92, rated=125e3, omega_max=880.0, omega_base=330.0), 0.0)
        res = comp.generator_evaluate(46e3, 200.0, gen)
        assert res.torque == pytest.approx(46e3 / (0.92 * 200.0), rel=1e-12)

    def test_motoring_branch(self):
        gen = comp.Generator(flat_em_mapset(0.92, rated=125e3, omega_max=880.0, omega_base=330.0), 0.0)
        res = comp.generator_evaluate(-10e3, 200.0, gen)
        assert res.torque == pytest.approx(0.92 * -10e3 / 200.0, rel=1e-12)

    def test_zero_speed_with_power(self):
        gen = comp.Generator(flat_em_mapset(0.92), 0.0)
        res = comp.generator_evaluate(10e3, 0.0, gen)
        assert not res.feasible and res.reason == "zero_speed_with_power"

    def test_envelope(self):
        gen = comp.Generator(flat_em_mapset(0.92, rated=125e3, omega_max=880.0, omega_base=330.0), 0.0)
        sup = float(gen.maps.torque_sup(400.0))
        assert not comp.generator_evaluate(sup * 400.0 * 1.05, 400.0, gen).feasible


class TestEngineEvaluate:
    def test_idle_point(self, engine):
        res = comp.engine_evaluate(engine.maps.omega_idle, 0.0, engine)
        assert res.feasible
        assert res.fuel > 0.0
        assert res.nox > 0.0 and res.hc > 0.0

    def test_torque_limit(self, engine):
        w = 150.0
        t = 1.05 * float(engine.maps.torque_max(w))
        res = comp.engine_evaluate(w, t, engine)
        assert not res.feasible and res.reason == "above_torque_limit"

    def test_speed_bounds(self, engine):
        assert comp.engine_evaluate(engine.maps.omega_idle * 0.5, 0.0, engine).reason == "below_idle_speed"
        assert comp.engine_evaluate(engine.maps.omega_max * 1.1, 0.0, engine).reason == "above_max_speed"

    def test_motoring_clamps_to_zero_torque(self, engine):
        w = 150.0
        res_neg = comp.engine_evaluate(w, -200.0, engine)
        res_zero = comp.engine_evaluate(w, 0.0, engine)
        assert res_neg.feasible
        assert res_neg.fuel == res_zero.fuel
        assert res_neg.nox == res_zero.nox
