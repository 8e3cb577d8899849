import numpy as np
import pytest

from corrmap.ode import (
    COARSE_ODE45,
    MmConstants,
    OdeOptions,
    OdeSystem,
    StiffnessError,
    integrate,
    mm_full,
    mm_reduced,
)

FIG3 = dict(k1=2.0, km1=1.0, k2=1.5, S0=60.0, P0=0.0)


def product_at(system, t):
    traj = integrate(system, t, t_eval=[0.0, t])
    return float(traj.column("P")[-1])


class TestIntegrate:
    def test_exponential_decay(self):
        sys = OdeSystem(("x",), {}, np.array([1.0]),
                        lambda t, x: -x)
        traj = integrate(sys, 1.0, t_eval=[0.0, 1.0])
        assert traj.column("x")[-1] == pytest.approx(np.exp(-1), abs=1e-6)

    def test_enzyme_complex_conservation(self):
        sys = mm_full(**FIG3, E0=10.0)
        traj = integrate(sys, 5.0)
        total = traj.column("E") + traj.column("ES")
        np.testing.assert_allclose(total, 10.0, atol=1e-6)

    def test_substrate_mass_conservation(self):
        sys = mm_full(**FIG3, E0=10.0)
        traj = integrate(sys, 5.0)
        total = traj.column("S") + traj.column("ES") + traj.column("P")
        np.testing.assert_allclose(total, 60.0, atol=1e-6)

    def test_tolerance_self_convergence(self):
        sys = mm_full(**FIG3, E0=50.0)
        coarse = integrate(sys, 1.5, OdeOptions(1e-6, 1e-6), t_eval=[1.5])
        fine = integrate(sys, 1.5, OdeOptions(5e-7, 5e-7), t_eval=[1.5])
        diff = abs(coarse.column("P")[0] - fine.column("P")[0])
        assert diff < 1e-4

    def test_blowup_raises_stiffness_error(self):
        sys = OdeSystem(("x",), {}, np.array([1.0]),
                        lambda t, x: x * x)
        with pytest.raises(StiffnessError) as err:
            integrate(sys, 2.0)
        assert 0.0 < err.value.t_fail <= 2.0

    def test_bad_t_end(self):
        sys = mm_full(**FIG3, E0=1.0)
        with pytest.raises(ValueError):
            integrate(sys, 0.0)

    def test_coarse_legacy_options_run(self):
        sys = mm_full(**FIG3, E0=10.0)
        traj = integrate(sys, 1.5, COARSE_ODE45)
        assert np.all(np.isfinite(traj.states))


class TestEnzymeModels:
    def test_total_conversion_in_the_long_run(self):
        for e0 in (1.0, 10.0):
            for build in (mm_full, mm_reduced):
                p200 = product_at(build(**FIG3, E0=e0), 200.0)
                assert p200 == pytest.approx(60.0, rel=0.01)

    def test_initial_product_is_zero(self):
        for build in (mm_full, mm_reduced):
            traj = integrate(build(**FIG3, E0=5.0), 1.0)
            assert traj.column("P")[0] == 0.0

    def test_reduction_error_grows_with_enzyme(self):
        def gap(e0):
            return abs(product_at(mm_full(**FIG3, E0=e0), 1.5)
                       - product_at(mm_reduced(**FIG3, E0=e0), 1.5))
        assert gap(100.0) >= 10.0 * gap(0.01)

    def test_product_nondecreasing(self):
        for build in (mm_full, mm_reduced):
            traj = integrate(build(**FIG3, E0=20.0), 10.0,
                             OdeOptions(1e-10, 1e-10))
            assert np.all(np.diff(traj.column("P")) >= -1e-7)

    def test_product_continuous_in_initial_enzyme(self):
        e0s = np.linspace(1.0, 100.0, 40)
        values = np.array([product_at(mm_full(**FIG3, E0=e), 1.5)
                           for e in e0s])
        slopes = np.abs(np.diff(values) / np.diff(e0s))
        assert np.max(slopes) < 10.0

    def test_constants(self):
        c = MmConstants.from_rates(k1=2.0, km1=1.0, k2=1.5, e0=10.0)
        assert c.v_max == pytest.approx(15.0)
        assert c.k_mm == pytest.approx(1.25)

    def test_nonpositive_rates_rejected(self):
        with pytest.raises(ValueError, match="k2"):
            mm_full(k1=1.0, km1=1.0, k2=0.0, E0=1.0, S0=1.0)
        with pytest.raises(ValueError, match="k1"):
            mm_reduced(k1=-1.0, km1=1.0, k2=1.0, E0=1.0, S0=1.0)

    def test_negative_initial_rejected(self):
        with pytest.raises(ValueError):
            mm_full(**FIG3, E0=-1.0)


class TestTrajectoryExport:
    def test_csv_columns(self, tmp_path):
        traj = integrate(mm_full(**FIG3, E0=2.0), 1.0, t_eval=[0.0, 0.5, 1.0])
        path = tmp_path / "traj.csv"
        traj.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,E,S,ES,P"
        assert len(lines) == 4

    def test_state_lookup(self):
        traj = integrate(mm_full(**FIG3, E0=2.0), 1.0)
        np.testing.assert_allclose(traj.state_at(0.0), [2.0, 60.0, 0.0, 0.0])
        with pytest.raises(ValueError):
            traj.state_at(2.0)
