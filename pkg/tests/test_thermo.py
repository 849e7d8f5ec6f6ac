import numpy as np
import pytest

from conftest import random_density_matrix, random_state
from tacs import kernel as kn
from tacs import shadows as sh
from tacs import spinsim as ss
from tacs import thermo as th


def dense_chi(psi, a, b, L):
    A = sum(ss.pauli_matrix({i: a}, L) for i in range(L))
    B = sum(ss.pauli_matrix({i: b}, L) for i in range(L))
    return (np.vdot(psi, A @ B @ psi) / L**2).real


class TestSusceptibility:
    def test_ghz(self):
        for L in (3, 5):
            g = ss.ghz_state(L)
            assert th.susceptibility(g, "z", "z") == pytest.approx(1.0, abs=1e-12)
            assert th.susceptibility(g, "x", "x") == pytest.approx(1.0 / L, abs=1e-12)
        # two sites: X0 X1 maps |00> to |11>, so the off-diagonal term survives
        assert th.susceptibility(ss.ghz_state(2), "x", "x") == pytest.approx(1.0, abs=1e-12)

    def test_ferro_ground_at_zero_field(self):
        psi = ss.ground_state(ss.TfimParams(4, 0.0), broken="up")
        assert th.susceptibility(psi, "z", "z") == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("a,b", [("x", "x"), ("y", "y"), ("z", "z"), ("x", "z"), ("y", "x")])
    def test_matches_dense(self, np_rng, a, b):
        psi = random_state(np_rng, 4)
        v = th.susceptibility(psi, a, b)
        A = sum(ss.pauli_matrix({i: a.upper()}, 4) for i in range(4))
        B = sum(ss.pauli_matrix({i: b.upper()}, 4) for i in range(4))
        assert v == pytest.approx((np.vdot(psi, A @ B @ psi) / 16).real, abs=1e-12)
        rho = random_density_matrix(np_rng, 4)
        assert th.susceptibility(rho, a, b) == pytest.approx((np.trace(A @ B @ rho) / 16).real, abs=1e-12)

    def test_exact_nonnegative(self, np_rng):
        for _ in range(10):
            psi = random_state(np_rng, 3)
            for a in "xyz":
                assert th.susceptibility(psi, a, a) >= 0

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            th.susceptibility(ss.ghz_state(2), "w", "x")

    def test_shadow_converges(self):
        psi = ss.ground_state(ss.TfimParams(6, 0.9), broken="up")
        exact = {a: th.susceptibility(psi, a, a) for a in "xyz"}
        for N in (1000, 10_000, 100_000):
            ds = sh.sample_cs(psi, N, N, 0.9)
            for a in "xyz":
                est = th.susceptibility(ds, a, a)
                assert abs(est.value - exact[a]) < 3 * est.stderr + 1e-12

    def test_shadow_off_diagonal_rejected(self):
        ds = sh.sample_cs(ss.ghz_state(2), 10, 0, 0.0)
        with pytest.raises(ValueError):
            th.susceptibility(ds, "x", "z")


class TestMagnetization:
    def test_examples(self):
        assert th.magnetization_z(ss.ferro_state(5)) == pytest.approx(1.0)
        assert th.magnetization_z(ss.ghz_state(5)) == pytest.approx(0.0, abs=1e-15)
        psi = ss.ground_state(ss.TfimParams(8, 100.0))
        assert abs(th.magnetization_z(psi)) < 0.05

    def test_dm_and_shadow(self, np_rng):
        rho = random_density_matrix(np_rng, 3)
        Z = sum(ss.pauli_matrix({i: "Z"}, 3) for i in range(3))
        assert th.magnetization_z(rho) == pytest.approx(np.trace(Z @ rho).real / 3)
        est = th.magnetization_z(sh.sample_cs(ss.ferro_state(4), 20000, 1, 0.0))
        assert abs(est.value - 1.0) < 3 * est.stderr


class TestTraces:
    params = ss.TfimParams(6, 1.0)

    def test_ghz_z_locked(self):
        tr = th.equilibration_trace(ss.ghz_state(6), self.params)
        assert np.max(np.abs(tr.values["Z"])) < 1e-10
        assert tr.times.size == 256 and tr.times[-1] == 25.0

    def test_ferro_and_ghz_differ_by_cat_coherence(self):
        # GHZ = (u + Pu)/sqrt2 with P the global flip; P commutes with H, X and ZZ, so
        # <O>_ghz(t) = <O>_u(t) + Re <u(t)| O P |u(t)>
        L = 6
        spec = ss.diagonalize(self.params)
        times = np.linspace(0, 25, 30)
        a = th.equilibration_trace(ss.ghz_state(L), self.params, spec, times=times)
        b = th.equilibration_trace(ss.ferro_state(L), self.params, spec, times=times)
        P = ss.pauli_matrix("X" * L, L)
        ops = {"X": sum(ss.pauli_matrix({i: "X"}, L) for i in range(L)) / L,
               "ZZ": sum(ss.pauli_matrix({i: "Z", i + 1: "Z"}, L) for i in range(L - 1)) / (L - 1)}
        for k, O in ops.items():
            for t, va, vb in zip(times, a.values[k], b.values[k]):
                u = ss.evolve(ss.ferro_state(L), spec, t)
                assert va == pytest.approx(vb + np.vdot(u, O @ P @ u).real, abs=1e-10)
        np.testing.assert_allclose(a.values["X"][0], b.values["X"][0], atol=1e-12)

    def test_ferro_ghz_gap_shrinks_with_size(self):
        gaps = []
        for L in (4, 8, 12):
            p = ss.TfimParams(L, 1.0)
            a = th.equilibration_trace(ss.ghz_state(L), p, times=np.linspace(0, 25, 64))
            b = th.equilibration_trace(ss.ferro_state(L), p, times=np.linspace(0, 25, 64))
            gaps.append(np.abs(a.values["X"] - b.values["X"]).max())
        assert gaps[0] > gaps[1] > gaps[2]

    @pytest.mark.xfail(strict=True, reason="cat-state coherence keeps the traces apart at finite L")
    def test_ferro_and_ghz_coincide_literally(self):
        a = th.equilibration_trace(ss.ghz_state(6), self.params)
        b = th.equilibration_trace(ss.ferro_state(6), self.params)
        for k in ("X", "ZZ"):
            np.testing.assert_allclose(a.values[k], b.values[k], atol=1e-9)

    def test_initial_values_and_energy(self, np_rng):
        psi = random_state(np_rng, 6)
        tr = th.equilibration_trace(psi, self.params, times=np.linspace(0, 10, 40))
        H = ss.build_hamiltonian(self.params)
        assert tr.values["energy"][0] == pytest.approx(np.vdot(psi, H @ psi).real, abs=1e-10)
        assert tr.values["X"][0] == pytest.approx(
            np.mean([ss.expectation(psi, {i: "X"}, 6) for i in range(6)]), abs=1e-12)
        assert tr.values["ZZ"][0] == pytest.approx(
            np.mean([ss.expectation(psi, {i: "Z", i + 1: "Z"}, 6) for i in range(5)]), abs=1e-12)
        assert np.ptp(tr.values["energy"]) < 1e-9

    def test_matches_explicit_evolution(self, np_rng):
        psi = random_state(np_rng, 6)
        spec = ss.diagonalize(self.params)
        tr = th.equilibration_trace(psi, self.params, spec, observables=["Y"], times=[0.0, 1.3, 7.0])
        for t, v in zip(tr.times, tr.values["Y"]):
            phi = ss.evolve(psi, spec, t)
            assert v == pytest.approx(np.mean([ss.expectation(phi, {i: "Y"}, 6) for i in range(6)]), abs=1e-10)

    def test_validation(self):
        with pytest.raises(ValueError):
            th.EquilibrationTrace(np.array([0.0, 0.0]), {"Z": np.zeros(2)})
        with pytest.raises(ValueError):
            th.EquilibrationTrace(np.array([0.0, 1.0]), {"Z": np.zeros(3)})
        with pytest.raises(ValueError):
            th.equilibration_trace(ss.ghz_state(6), self.params, observables=["Q"])

    def test_csv(self, tmp_path):
        tr = th.equilibration_trace(ss.ghz_state(4), ss.TfimParams(4, 1.0), times=[0.0, 1.0],
                                    initial_state="ghz")
        lines = th.write_trace_csv(tr, tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "# initial_state=ghz"
        assert lines[1] == "time,Z,X,ZZ,energy"
        assert len(lines) == 4


class TestKernelDiagnostics:
    def test_constant_kernel_is_flat(self):
        K = kn.KernelMatrix(np.full((4, 4), 3.0), np.array([0.5, 1.0, 1.5, 2.0]), kn.KernelParams())
        d = th.kernel_criticality_diagnostics(K)
        assert d.argmax_h_x is None and d.half_max_region is None
        np.testing.assert_array_equal(d.log_diagonal, 3.0)

    def test_peak_and_region(self):
        h = np.array([2.0, 0.5, 1.0, 1.5, 0.1])
        diag = np.array([1.0, 3.0, 5.0, 4.0, 0.0])
        logK = np.full((5, 5), -1.0)
        np.fill_diagonal(logK, diag)
        d = th.kernel_criticality_diagnostics(kn.KernelMatrix(logK, h, kn.KernelParams()))
        np.testing.assert_array_equal(d.h_x, [0.1, 0.5, 1.0, 1.5, 2.0])
        assert d.argmax_h_x == 1.0
        assert d.half_max_region == (0.5, 1.5)
        assert d.rows["peak"][2] == 5.0 and d.rows["lowest"][0] == 0.0

    def test_csv(self, tmp_path):
        K = kn.KernelMatrix(np.eye(3), np.array([0.1, 1.0, 3.0]), kn.KernelParams())
        d = th.kernel_criticality_diagnostics(K)
        lines = th.write_kernel_diag_csv(d, tmp_path / "k.csv").read_text().splitlines()
        assert lines[0] == "# argmax_h_x=none half_max_region=none"
        assert lines[1] == "h_x,log_diagonal,row_lowest,row_peak,row_highest"

    @staticmethod
    def _tacs_rows():
        L = 6
        hs = [0.1, 0.15, 1.0, 3.0]
        ds = []
        for i, h in enumerate(hs):
            spec = ss.diagonalize(ss.TfimParams(L, h))
            ds.append(sh.sample_tacs(ss.ghz_state(L), spec, (5, 25), 200, 40 + i, h))
        return th.kernel_criticality_diagnostics(kn.build_kernel_matrix(ds)).rows["lowest"]

    def test_ordered_phase_row_decays(self):
        row = self._tacs_rows()
        assert row[0] > row[1] > row[3]

    @pytest.mark.xfail(strict=True, reason="log-kernel rows sit on a baseline near exp(mean trace)")
    def test_ordered_phase_row_halves(self):
        row = self._tacs_rows()
        assert row[3] < 0.5 * row[1]


def test_chi_csv(tmp_path):
    t = th.SusceptibilityTable(np.array([0.5, 1.0]), {a: np.array([1.0, 2.0]) for a in "xyz"})
    lines = th.write_chi_csv(t, tmp_path / "c.csv").read_text().splitlines()
    assert lines[1] == "h_x,chi_xx,chi_yy,chi_zz"
    assert lines[2] == "0.5,1.0,1.0,1.0"
