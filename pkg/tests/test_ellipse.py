import numpy as np
import pytest

from geodv import ellipse
from geodv.errors import (DegeneratePlaneError, InfeasibleSmaError,
                          PointNotOnEllipseError)
from geodv.metric import JacobiMetric, geodesic_residual
from geodv.twobody import BodyConstants, GravityKind, GravityModel

MU = 3.986e5
KEPLER = GravityModel(BodyConstants(mu=MU, r_body=6378.0), GravityKind.KEPLER)


def random_pair(rng, lo=7e3, hi=5e4):
    u = rng.normal(size=(2, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u * rng.uniform(lo, hi, size=(2, 1))


class TestAMin:
    def test_antipodal(self):
        r = 9000.0
        assert ellipse.a_min([r, 0, 0], [-r, 0, 0]) == pytest.approx(r)

    def test_same_point(self):
        r = 9000.0
        assert ellipse.a_min([r, 0, 0], [r, 0, 0]) == pytest.approx(r / 2)

    def test_feasibility_boundary(self):
        # circles of radius 2a-|p| about each endpoint intersect iff a >= a_min
        rng = np.random.default_rng(2)
        for _ in range(50):
            p0, pf = random_pair(rng)
            amin = ellipse.a_min(p0, pf)
            assert len(ellipse.solve_transfer_ellipses(MU, p0, pf, amin * 1.0001)) > 0
            with pytest.raises(InfeasibleSmaError):
                ellipse.solve_transfer_ellipses(MU, p0, pf, amin * 0.9999)


class TestEnergySma:
    def test_value(self):
        assert float(ellipse.energy_of_sma(MU, 7000.0)) == pytest.approx(
            -28.4714, abs=1e-4)

    def test_inverse_pair(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(1e3, 1e6, size=20)
        np.testing.assert_allclose(
            ellipse.sma_of_energy(MU, ellipse.energy_of_sma(MU, a)), a, rtol=1e-14)

    def test_limits_and_domain(self):
        assert float(ellipse.energy_of_sma(MU, 1e15)) == pytest.approx(0.0, abs=1e-9)
        with pytest.raises(ValueError):
            ellipse.sma_of_energy(MU, 0.0)
        with pytest.raises(ValueError):
            ellipse.energy_of_sma(MU, -1.0)


class TestSolveTransferEllipses:
    def test_tangency_gives_two_arcs(self):
        rng = np.random.default_rng(6)
        p0, pf = random_pair(rng)
        arcs = ellipse.solve_transfer_ellipses(MU, p0, pf, ellipse.a_min(p0, pf))
        assert len(arcs) == 2
        assert {t.arc for t in arcs} == {ellipse.ARC_SHORT, ellipse.ARC_LONG}

    def test_generic_gives_four_branches(self):
        rng = np.random.default_rng(7)
        p0, pf = random_pair(rng)
        arcs = ellipse.solve_transfer_ellipses(MU, p0, pf, 1.3 * ellipse.a_min(p0, pf))
        assert len(arcs) == 4

    def test_endpoints_satisfy_conic_equation(self):
        rng = np.random.default_rng(8)
        for _ in range(40):
            p0, pf = random_pair(rng)
            a = ellipse.a_min(p0, pf) * rng.uniform(1.0, 3.0)
            for t in ellipse.solve_transfer_ellipses(MU, p0, pf, a):
                assert ellipse.conic_residual(t, p0) < 1e-9
                assert ellipse.conic_residual(t, pf) < 1e-9
                assert abs(t.e_vec @ t.h_hat) < 1e-9 * max(t.e, 1e-30)
                assert 0.0 <= t.e < 1.0

    def test_same_point_circular(self):
        r = 8000.0
        p0 = np.array([r, 0.0, 0.0])
        arcs = ellipse.solve_transfer_ellipses(MU, p0, p0, r)
        assert len(arcs) == 2
        hs = {tuple(np.round(t.h_hat, 12)) for t in arcs}
        assert len(hs) == 2  # both traversal directions
        for t in arcs:
            assert t.e == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_plane_raises(self):
        p0 = np.array([8000.0, 0.0, 0.0])
        with pytest.raises(DegeneratePlaneError):
            ellipse.solve_transfer_ellipses(MU, p0, -2.0 * p0, 4.0 * 8000.0)


class TestVelocityAt:
    def test_circular_speed_and_direction(self):
        r = 8000.0
        p0 = np.array([r, 0.0, 0.0])
        for t in ellipse.solve_transfer_ellipses(MU, p0, p0, r):
            v = ellipse.velocity_at(t, MU, p0)
            assert np.linalg.norm(v) == pytest.approx(np.sqrt(MU / r), rel=1e-12)
            assert abs(v @ p0) < 1e-9

    def test_periapsis_speed(self):
        rng = np.random.default_rng(9)
        p0, pf = random_pair(rng)
        for t in ellipse.solve_transfer_ellipses(MU, p0, pf,
                                                 1.4 * ellipse.a_min(p0, pf)):
            if t.e < 1e-8:
                continue
            peri = t.p_semilatus / (1.0 + t.e) * (t.e_vec / t.e)
            v = ellipse.velocity_at(t, MU, peri)
            assert abs(v @ peri) < 1e-6 * np.linalg.norm(v) * np.linalg.norm(peri)
            assert np.linalg.norm(v) == pytest.approx(
                np.sqrt(MU / t.p_semilatus) * (1.0 + t.e), rel=1e-12)

    def test_hohmann_oracle(self):
        # coplanar, antipodal endpoints at the tangent sma reproduce the
        # classical Hohmann periapsis/apoapsis speeds
        r1, r2 = 6678.0, 42164.0
        p0 = np.array([r1, 0.0, 0.0])
        pf = np.array([-r2, 1e-6 * r2, 0.0])  # epsilon off exact collinearity
        a = (r1 + r2) / 2.0
        arcs = ellipse.solve_transfer_ellipses(MU, p0, pf, a)
        v_peri = np.sqrt(2 * MU * r2 / (r1 * (r1 + r2)))
        v_apo = np.sqrt(2 * MU * r1 / (r2 * (r1 + r2)))
        speeds0 = [np.linalg.norm(ellipse.velocity_at(t, MU, p0)) for t in arcs]
        speedsf = [np.linalg.norm(ellipse.velocity_at(t, MU, pf)) for t in arcs]
        assert min(abs(s - v_peri) for s in speeds0) < 1e-6 * v_peri
        assert min(abs(s - v_apo) for s in speedsf) < 1e-6 * v_apo

    def test_vis_viva_everywhere(self):
        rng = np.random.default_rng(10)
        for _ in range(30):
            p0, pf = random_pair(rng)
            a = ellipse.a_min(p0, pf) * rng.uniform(1.01, 2.5)
            for t in ellipse.solve_transfer_ellipses(MU, p0, pf, a):
                for pt in (p0, pf):
                    v = ellipse.velocity_at(t, MU, pt)
                    vv = MU * (2.0 / np.linalg.norm(pt) - 1.0 / a)
                    assert float(v @ v) == pytest.approx(vv, rel=1e-12)

    def test_off_ellipse_point_rejected(self):
        p0 = np.array([8000.0, 0.0, 0.0])
        pf = np.array([0.0, 12000.0, 0.0])
        t = ellipse.solve_transfer_ellipses(MU, p0, pf, 9000.0)[0]
        with pytest.raises(PointNotOnEllipseError):
            ellipse.velocity_at(t, MU, np.array([5.0e4, 5.0e4, 0.0]))


class TestDiscreteCurve:
    def test_endpoints_exact(self):
        rng = np.random.default_rng(12)
        p0, pf = random_pair(rng)
        t = ellipse.solve_transfer_ellipses(MU, p0, pf, 1.2 * ellipse.a_min(p0, pf))[0]
        curve = ellipse.to_discrete_curve(t, 25)
        np.testing.assert_array_equal(curve.nodes[0], t.p0)
        np.testing.assert_array_equal(curve.nodes[-1], t.pf)

    def test_nodes_on_conic(self):
        rng = np.random.default_rng(13)
        p0, pf = random_pair(rng)
        t = ellipse.solve_transfer_ellipses(MU, p0, pf, 1.5 * ellipse.a_min(p0, pf))[1]
        curve = ellipse.to_discrete_curve(t, 30)
        for node in curve.nodes:
            assert ellipse.conic_residual(t, node) < 1e-9

    @pytest.mark.parametrize("branch", [0, 1, 2, 3])
    def test_arcs_are_geodesics(self, branch):
        p0 = np.array([10000.0, 0.0, 1500.0])
        pf = np.array([0.0, 10000.0, -500.0])
        t = ellipse.solve_transfer_ellipses(MU, p0, pf, 1.02 * ellipse.a_min(p0, pf))[branch]
        curve = ellipse.to_discrete_curve(t, 30)
        m = JacobiMetric(KEPLER, float(ellipse.energy_of_sma(MU, t.a)))
        res = geodesic_residual(m, curve)
        cs = curve.derivative()
        scale = np.mean(np.sum(cs * cs, axis=1))
        assert np.max(np.linalg.norm(res, axis=1)) / scale < 1e-6

    def test_hard_arc_residual_decays_spectrally(self):
        # a short arc diving through a deep periapsis needs more nodes; the
        # error must vanish spectrally as resolution doubles
        p0 = np.array([9000.0, 2000.0, -1000.0])
        pf = np.array([-4000.0, 15000.0, 5000.0])
        t = ellipse.solve_transfer_ellipses(MU, p0, pf, 1.35 * ellipse.a_min(p0, pf))[1]
        m = JacobiMetric(KEPLER, float(ellipse.energy_of_sma(MU, t.a)))
        errs = []
        for n in (30, 60, 120):
            curve = ellipse.to_discrete_curve(t, n)
            res = geodesic_residual(m, curve)
            scale = np.mean(np.sum(curve.derivative() ** 2, axis=1))
            errs.append(np.max(np.linalg.norm(res, axis=1)) / scale)
        assert errs[1] < 0.2 * errs[0]
        assert errs[2] < 1e-6


class TestBatchKernel:
    def test_matches_scalar_route(self):
        # dual route: vectorized branch costs vs explicit geometry + velocity
        rng = np.random.default_rng(14)
        for _ in range(25):
            p0, pf = random_pair(rng)
            v0 = rng.normal(size=3)
            vf = rng.normal(size=3)
            a = ellipse.a_min(p0, pf) * rng.uniform(1.001, 2.0)
            batch = ellipse.transfer_dv_batch(MU, p0, v0, pf, vf, a)
            arcs = ellipse.solve_transfer_ellipses(MU, p0, pf, a)
            assert batch.shape == (4,)
            for t in arcs:
                dv = (np.linalg.norm(ellipse.velocity_at(t, MU, p0) - v0)
                      + np.linalg.norm(vf - ellipse.velocity_at(t, MU, pf)))
                assert np.min(np.abs(batch - dv)) < 1e-9 * max(dv, 1.0)

    def test_branch_ordering(self):
        rng = np.random.default_rng(15)
        p0, pf = random_pair(rng)
        v0, vf = rng.normal(size=3), rng.normal(size=3)
        a = 1.4 * ellipse.a_min(p0, pf)
        batch = ellipse.transfer_dv_batch(MU, p0, v0, pf, vf, a)
        arcs = ellipse.solve_transfer_ellipses(MU, p0, pf, a)
        # scalar route returns (short, f0), (short, f1), (long, f0), (long, f1)
        for idx, t in enumerate(arcs):
            dv = (np.linalg.norm(ellipse.velocity_at(t, MU, p0) - v0)
                  + np.linalg.norm(vf - ellipse.velocity_at(t, MU, pf)))
            assert batch[idx] == pytest.approx(dv, rel=1e-12)

    def test_infeasible_marked_inf(self):
        p0 = np.array([8000.0, 0.0, 0.0])
        pf = np.array([0.0, 9000.0, 0.0])
        out = ellipse.transfer_dv_batch(MU, p0, np.zeros(3), pf, np.zeros(3),
                                        0.5 * ellipse.a_min(p0, pf))
        assert np.all(np.isinf(out))
        out2 = ellipse.transfer_dv_batch(MU, p0, np.zeros(3), -p0, np.zeros(3),
                                         np.array(4.0 * 8000.0))
        assert np.all(np.isinf(out2))

    def test_broadcasting(self):
        rng = np.random.default_rng(16)
        p0 = rng.normal(size=(5, 1, 3)) * 1e4 + np.array([2e4, 0, 0])
        pf = rng.normal(size=(1, 4, 3)) * 1e4 + np.array([0, 3e4, 0])
        v0 = np.zeros((5, 1, 3))
        vf = np.zeros((1, 4, 3))
        amin = 0.25 * (np.linalg.norm(p0, axis=-1) + np.linalg.norm(pf, axis=-1)
                       + np.linalg.norm(pf - p0, axis=-1))
        out = ellipse.transfer_dv_batch(MU, p0, v0, pf, vf, 1.5 * amin)
        assert out.shape == (5, 4, 4)
        assert np.all(np.isfinite(out))


class TestDvContinuity:
    def test_dv_continuous_in_a_per_branch(self):
        # fine sweep of a across each branch: no jump exceeding 10x the local
        # slope estimate from neighboring differences
        rng = np.random.default_rng(17)
        p0, pf = random_pair(rng)
        v0, vf = rng.normal(size=3) * 2, rng.normal(size=3) * 2
        amin = ellipse.a_min(p0, pf)
        a = amin * (1.0 + np.linspace(1e-6, 1.0, 4000))
        dv = ellipse.transfer_dv_batch(MU, p0, v0, pf, vf, a)
        for b in range(4):
            jumps = np.abs(np.diff(dv[:, b]))
            med = np.median(jumps)
            assert np.max(jumps) < 10.0 * max(med * 10, 1e-9)


def test_time_of_flight_closed_forms():
    # half-revolution Hohmann arc: tof = pi sqrt(a^3/mu)
    r1, r2 = 7000.0, 21000.0
    p0 = np.array([r1, 0.0, 0.0])
    pf = np.array([-r2 * np.cos(1e-7), r2 * np.sin(1e-7), 0.0])
    a = (r1 + r2) / 2.0
    arcs = ellipse.solve_transfer_ellipses(MU, p0, pf, a * (1 + 1e-12))
    tofs = [ellipse.time_of_flight(t, MU) for t in arcs]
    expected = np.pi * np.sqrt(a**3 / MU)
    assert min(abs(t - expected) for t in tofs) < 1e-3 * expected
