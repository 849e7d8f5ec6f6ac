import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_density_matrix, random_state
from tacs import spinsim as ss
from tacs.errors import NumericalError, ResourceGuardError


def kron_all(mats):
    out = np.array([[1.0 + 0j]])
    for m in mats:
        out = np.kron(out, m)
    return out


PAULI = {
    "I": np.eye(2),
    "X": np.array([[0, 1], [1, 0]]),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1.0, -1.0]),
}


def dense_pauli(label):
    # site 0 is the least significant bit, so it is the last kron factor
    return kron_all([PAULI[c] for c in reversed(label)])


def dense_tfim(L, h, periodic=False):
    H = np.zeros((1 << L, 1 << L), dtype=complex)
    bonds = [(i, i + 1) for i in range(L - 1)] + ([(L - 1, 0)] if periodic and L > 2 else [])
    for i, j in bonds:
        lab = ["I"] * L
        lab[i] = lab[j] = "Z"
        H -= dense_pauli("".join(lab))
    for i in range(L):
        lab = ["I"] * L
        lab[i] = "X"
        H += h * dense_pauli("".join(lab))
    return H


class TestHamiltonian:
    def test_two_sites_no_field(self):
        E = np.linalg.eigvalsh(ss.build_hamiltonian(ss.TfimParams(2, 0.0)))
        np.testing.assert_allclose(E, [-1, -1, 1, 1], atol=1e-12)

    def test_two_sites_unit_field(self):
        E = np.linalg.eigvalsh(ss.build_hamiltonian(ss.TfimParams(2, 1.0)))
        r5 = np.sqrt(5.0)
        np.testing.assert_allclose(E, [-r5, -1, 1, r5], atol=1e-12)

    @pytest.mark.parametrize("L,h,periodic", [(3, 0.7, False), (4, 1.3, True), (2, 0.2, False)])
    def test_matches_kron_construction(self, L, h, periodic):
        p = ss.TfimParams(L, h, "periodic" if periodic else "open")
        np.testing.assert_allclose(ss.build_hamiltonian(p), dense_tfim(L, h, periodic), atol=1e-14)

    def test_real_symmetric(self):
        H = ss.build_hamiltonian(ss.TfimParams(5, 0.9))
        assert H.dtype == np.float64
        assert np.array_equal(H, H.T)

    @given(L=st.sampled_from([2, 4, 6]), h=st.floats(0.0, 5.0))
    def test_spectrum_mirror_symmetric_even_open(self, L, h):
        E = ss.diagonalize(ss.TfimParams(L, h)).eigenvalues
        np.testing.assert_allclose(np.sort(E), np.sort(-E), atol=1e-10)

    def test_parity_commutes(self):
        L = 5
        H = ss.build_hamiltonian(ss.TfimParams(L, 0.8))
        S = dense_pauli("X" * L).real
        assert np.max(np.abs(S @ H - H @ S)) < 1e-10

    def test_guards(self):
        with pytest.raises(ValueError):
            ss.TfimParams(1, 1.0)
        with pytest.raises(ResourceGuardError):
            ss.TfimParams(15, 1.0)
        with pytest.raises(ValueError):
            ss.TfimParams(3, -0.1)
        with pytest.raises(ValueError):
            ss.TfimParams(3, 1.0, "twisted")


class TestSpectralDecomposition:
    def test_identity_gives_identity_vectors(self):
        spec = ss.spectral_decompose(np.eye(4))
        np.testing.assert_allclose(spec.eigenvalues, 1.0)
        np.testing.assert_allclose(spec.eigenvectors, np.eye(4), atol=1e-12)

    def test_diagonal_degenerate_blocks_canonical(self):
        spec = ss.diagonalize(ss.TfimParams(2, 0.0))
        np.testing.assert_allclose(spec.eigenvalues, [-1, -1, 1, 1])
        expected = np.eye(4)[:, [0, 3, 1, 2]]
        np.testing.assert_allclose(spec.eigenvectors, expected, atol=1e-12)

    def test_reconstruction(self):
        H = ss.build_hamiltonian(ss.TfimParams(3, 0.8))
        spec = ss.spectral_decompose(H)
        assert np.max(np.abs(spec.reconstruct() - H)) < 1e-10
        V = spec.eigenvectors
        assert np.max(np.abs(V.conj().T @ V - np.eye(8))) < 1e-10
        assert np.all(np.diff(spec.eigenvalues) >= 0)

    def test_canonical_basis_ignores_rotation_within_block(self, np_rng):
        H = ss.build_hamiltonian(ss.TfimParams(4, 0.0))
        a = ss.spectral_decompose(H)
        for blk in a.blocks():
            Vb = a.eigenvectors[:, blk]
            m = Vb.shape[1]
            Q, _ = np.linalg.qr(np_rng.normal(size=(m, m)) + 1j * np_rng.normal(size=(m, m)))
            np.testing.assert_allclose(ss._canonical_block(Vb @ Q), Vb, atol=1e-12)
            first = np.argmax(np.abs(Vb) > 1e-8, axis=0)
            assert np.all(np.diff(first) > 0)
            assert np.all(Vb[first, np.arange(m)].real > 0)

    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            ss.spectral_decompose(np.array([[0, 1], [0, 0]], dtype=float))

    def test_blocks_cover_spectrum(self):
        spec = ss.diagonalize(ss.TfimParams(4, 0.0))
        sizes = [b.stop - b.start for b in spec.blocks()]
        assert sum(sizes) == 16
        assert max(sizes) > 1


class TestStates:
    def test_ghz(self):
        np.testing.assert_allclose(ss.ghz_state(1), [2**-0.5, 2**-0.5])
        psi = ss.ghz_state(3)
        assert set(np.flatnonzero(psi)) == {0, 7}

    @pytest.mark.parametrize("L", [2, 3, 6])
    @pytest.mark.parametrize("h", [0.0, 0.8, 3.0])
    def test_ghz_energy(self, L, h):
        psi = ss.ghz_state(L)
        H = ss.build_hamiltonian(ss.TfimParams(L, h))
        assert np.vdot(psi, H @ psi).real == pytest.approx(-(L - 1), abs=1e-12)

    def test_ferro(self):
        psi = ss.ferro_state(2)
        np.testing.assert_array_equal(psi, [1, 0, 0, 0])
        assert all(ss.expectation(ss.ferro_state(4), f"Z{i}") == 1.0 for i in range(4))

    def test_check_state(self):
        with pytest.raises(ValueError):
            ss.check_state(np.array([1.0, 1.0]))
        with pytest.raises(ValueError):
            ss.check_state(np.ones(3) / np.sqrt(3))


class TestEvolution:
    def test_t0_identity(self, np_rng):
        spec = ss.diagonalize(ss.TfimParams(3, 0.6))
        psi = random_state(np_rng, 3)
        np.testing.assert_allclose(ss.evolve(psi, spec, 0.0), psi, atol=1e-12)

    def test_matches_expm(self, np_rng):
        from scipy.linalg import expm

        p = ss.TfimParams(4, 1.1)
        spec = ss.diagonalize(p)
        psi = random_state(np_rng, 4)
        exact = expm(-1j * 2.7 * ss.build_hamiltonian(p)) @ psi
        np.testing.assert_allclose(ss.evolve(psi, spec, 2.7), exact, atol=1e-10)

    def test_eigenstate_global_phase(self):
        spec = ss.diagonalize(ss.TfimParams(3, 0.5))
        v = spec.eigenvectors[:, 2]
        out = ss.evolve(v, spec, 4.2)
        assert abs(abs(np.vdot(v, out)) - 1) < 1e-12
        assert ss.expectation(out, "XIZ") == pytest.approx(ss.expectation(v, "XIZ"), abs=1e-12)

    def test_unitarity_and_energy(self, np_rng):
        p = ss.TfimParams(5, 0.9)
        spec = ss.diagonalize(p)
        H = ss.build_hamiltonian(p)
        psi = random_state(np_rng, 5)
        e0 = np.vdot(psi, H @ psi).real
        states = ss.evolve_many(psi, spec, np.linspace(0, 100, 41))
        np.testing.assert_allclose(np.linalg.norm(states, axis=1), 1.0, atol=1e-9)
        energies = np.einsum("ti,ij,tj->t", states.conj(), H, states).real
        assert np.max(np.abs(energies - e0)) < 1e-9

    def test_ghz_magnetization_locked(self):
        spec = ss.diagonalize(ss.TfimParams(4, 0.8))
        psi = ss.evolve(ss.ghz_state(4), spec, 7.3)
        for i in range(4):
            assert abs(ss.expectation(psi, f"Z{i}")) < 1e-10
        for t in np.linspace(0, 50, 11):
            psi = ss.evolve(ss.ghz_state(4), spec, t)
            assert max(abs(ss.expectation(psi, f"Z{i}")) for i in range(4)) < 1e-10

    def test_dimension_mismatch(self):
        spec = ss.diagonalize(ss.TfimParams(3, 0.5))
        with pytest.raises(ValueError):
            ss.evolve(ss.ghz_state(2), spec, 1.0)

    def test_evolve_many_matches_evolve(self, np_rng):
        spec = ss.diagonalize(ss.TfimParams(3, 1.7))
        psi = random_state(np_rng, 3)
        ts = [0.0, 0.3, 5.0]
        many = ss.evolve_many(psi, spec, ts)
        for t, row in zip(ts, many):
            np.testing.assert_allclose(row, ss.evolve(psi, spec, t), atol=1e-12)


class TestPauli:
    def test_ghz_examples(self):
        psi = ss.ghz_state(3)
        assert ss.expectation(psi, "Z0 Z1") == pytest.approx(1.0)
        assert ss.expectation(psi, "X0") == pytest.approx(0.0)
        assert ss.expectation(psi, "X0X1X2") == pytest.approx(1.0)
        assert ss.expectation(psi, "XXX") == pytest.approx(1.0)

    @given(label=st.text(alphabet="IXYZ", min_size=4, max_size=4), seed=st.integers(0, 2**32 - 1))
    def test_matches_dense_operator(self, label, seed):
        rng = np.random.default_rng(seed)
        psi = random_state(rng, 4)
        P = dense_pauli(label)
        expected = np.vdot(psi, P @ psi).real
        assert ss.expectation(psi, label) == pytest.approx(expected, abs=1e-12)
        rho = random_density_matrix(rng, 4)
        assert ss.expectation_dm(rho, label) == pytest.approx(np.trace(rho @ P).real, abs=1e-12)
        np.testing.assert_allclose(ss.pauli_matrix(label, 4), P, atol=1e-15)

    def test_descriptor_forms_agree(self, np_rng):
        psi = random_state(np_rng, 4)
        a = ss.expectation(psi, "XIIY")
        assert ss.expectation(psi, "X0 Y3") == pytest.approx(a)
        assert ss.expectation(psi, {0: "X", 3: "Y"}) == pytest.approx(a)
        assert ss.expectation(psi, [(3, "Y"), (0, "x")]) == pytest.approx(a)

    @pytest.mark.parametrize("bad", ["XQ", "Z9", "Z0 Z0", "", "X-1"])
    def test_malformed(self, bad):
        with pytest.raises(ValueError):
            ss.parse_pauli(bad, 4)

    def test_apply_pauli_sum(self, np_rng):
        L = 3
        psi = random_state(np_rng, L)
        for axis in "XYZ":
            S = sum(dense_pauli("".join(axis if j == i else "I" for j in range(L))) for i in range(L))
            np.testing.assert_allclose(ss.apply_pauli_sum(axis, psi, L), S @ psi, atol=1e-12)


class TestEnsembles:
    def test_vn_of_eigenstate(self):
        spec = ss.diagonalize(ss.TfimParams(3, 0.7))
        v = spec.eigenvectors[:, 3]
        np.testing.assert_allclose(ss.vn_ensemble(v, spec), np.outer(v, v.conj()), atol=1e-12)

    def test_vn_ghz_in_degenerate_block(self):
        spec = ss.diagonalize(ss.TfimParams(2, 0.0))
        g = ss.ghz_state(2)
        np.testing.assert_allclose(ss.vn_ensemble(g, spec), np.outer(g, g), atol=1e-12)

    def test_vn_commutes_and_is_state(self, np_rng):
        p = ss.TfimParams(4, 0.8)
        spec = ss.diagonalize(p)
        H = ss.build_hamiltonian(p)
        w = ss.vn_ensemble(random_state(np_rng, 4), spec)
        assert np.max(np.abs(w @ H - H @ w)) < 1e-9
        assert np.trace(w).real == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.eigvalsh(w).min() > -1e-10

    def test_vn_matches_long_time_average(self):
        spec = ss.diagonalize(ss.TfimParams(4, 0.8))
        psi0 = ss.ghz_state(4)
        w = ss.vn_ensemble(psi0, spec)
        ts = np.linspace(0, 500, 20001)
        states = ss.evolve_many(psi0, spec, ts)
        zz = np.array([ss.expectation(s, "Z0 Z1") for s in states[::1]])
        avg = np.trapezoid(zz, ts) / ts[-1]
        assert ss.expectation_dm(w, "Z0 Z1") == pytest.approx(avg, abs=0.02)

    def test_vn_invariant_under_further_averaging(self, np_rng):
        spec = ss.diagonalize(ss.TfimParams(3, 1.4))
        w = ss.vn_ensemble(random_state(np_rng, 3), spec)
        V = spec.eigenvectors
        for t in (0.7, 13.0):
            U = V @ np.diag(np.exp(-1j * spec.eigenvalues * t)) @ V.conj().T
            assert np.max(np.abs(U @ w @ U.conj().T - w)) < 1e-9

    def test_window_average_matches_quadrature(self, np_rng):
        spec = ss.diagonalize(ss.TfimParams(3, 0.9))
        psi = random_state(np_rng, 3)
        ts = np.linspace(2.0, 6.0, 8001)
        states = ss.evolve_many(psi, spec, ts)
        rho_q = np.trapezoid(np.einsum("ti,tj->tij", states, states.conj()), ts, axis=0) / 4.0
        assert np.max(np.abs(ss.window_average(psi, spec, 2.0, 6.0) - rho_q)) < 1e-6
        with pytest.raises(ValueError):
            ss.window_average(psi, spec, 3.0, 3.0)

    def test_microcanonical(self):
        spec = ss.diagonalize(ss.TfimParams(3, 0.5))
        E = spec.eigenvalues
        full = ss.microcanonical_ensemble(spec, E[0] - 1, E[-1] - E[0] + 2)
        np.testing.assert_allclose(full, np.eye(8) / 8, atol=1e-12)
        one = ss.microcanonical_ensemble(spec, E[0] - 1e-6, 2e-6)
        v = spec.eigenvectors[:, 0]
        np.testing.assert_allclose(one, np.outer(v, v.conj()), atol=1e-12)
        # two levels: pick a window around E[4], E[5] if they are distinct from neighbours
        gaps = np.diff(E)
        k = next(i for i in range(1, 6) if gaps[i - 1] > 1e-6 and gaps[i] > 1e-6 and gaps[i + 1] > 1e-6)
        two = ss.microcanonical_ensemble(spec, E[k] - 1e-9, E[k + 1] - E[k] + 2e-9)
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(two))[-2:], [0.5, 0.5], atol=1e-12)
        assert np.linalg.matrix_rank(two, tol=1e-9) == 2
        with pytest.raises(ValueError):
            ss.microcanonical_ensemble(spec, E[-1] + 1, 0.1)

    def test_effective_dimension(self):
        spec = ss.diagonalize(ss.TfimParams(3, 0.7))
        assert ss.effective_dimension(spec.eigenvectors[:, 0], spec) == pytest.approx(1.0)
        assert ss.effective_dimension(ss.ghz_state(3), spec) > 1.0


class TestPartialTrace:
    def test_ghz_pair(self):
        rho = ss.partial_trace(ss.ghz_state(4), [0, 1])
        np.testing.assert_allclose(rho, np.diag([0.5, 0, 0, 0.5]), atol=1e-12)

    def test_matches_dense_for_state_and_matrix(self, np_rng):
        L = 4
        psi = random_state(np_rng, L)
        rho = np.outer(psi, psi.conj())
        for sites in ([2], [1, 3], [3, 0], [0, 1, 2]):
            a = ss.partial_trace(psi, sites)
            b = ss.partial_trace(rho, sites)
            np.testing.assert_allclose(a, b, atol=1e-12)
            # check against local Pauli expectations: Tr(a P_A) = <psi|P|psi>
            for label in ("X", "Y", "Z"):
                n = len(sites)
                local = "".join(label for _ in range(n))
                full = {s: label for s in sites}
                assert ss.expectation_dm(a, local) == pytest.approx(ss.expectation(psi, full), abs=1e-12)


class TestGroundState:
    def test_lowest_energy(self):
        p = ss.TfimParams(6, 1.3)
        spec = ss.diagonalize(p)
        g = ss.ground_state(p, spec=spec)
        H = ss.build_hamiltonian(p)
        assert np.vdot(g, H @ g).real == pytest.approx(spec.eigenvalues[0], abs=1e-10)
        assert spec.eigenvalues[0] < spec.eigenvalues[1]

    @pytest.mark.parametrize("sign,m", [("up", 1.0), ("down", -1.0)])
    def test_broken_at_zero_field(self, sign, m):
        g = ss.ground_state(ss.TfimParams(5, 0.0), broken=sign)
        idx = 0 if sign == "up" else 31
        assert abs(abs(g[idx]) - 1) < 1e-10
        mz = sum(ss.expectation(g, f"Z{i}") for i in range(5)) / 5
        assert mz == pytest.approx(m, abs=1e-10)

    def test_large_field_product_state(self):
        g = ss.ground_state(ss.TfimParams(4, 100.0))
        minus = np.array([1, -1]) / np.sqrt(2)
        target = kron_all([minus] * 4)
        assert abs(np.vdot(target, g)) ** 2 > 1 - 1e-3

    def test_bad_branch(self):
        with pytest.raises(ValueError):
            ss.ground_state(ss.TfimParams(3, 0.2), broken="left")


def test_canonical_block_failure_is_numerical():
    with pytest.raises(NumericalError):
        ss._canonical_block(np.zeros((4, 2), dtype=complex))
