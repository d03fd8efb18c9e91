import numpy as np
import pytest

from qglue.errors import DomainError
from qglue.jacobi import (ModeOperator, mode_apply, monodromy, monodromy_data,
                          indicial_roots, generators, orbit_sensitivities,
                          symplectic_pairing, CutoffSpec, deficiency_basis,
                          deficiency_gram, smooth_step)


@pytest.fixture(scope="module")
def basis05(orbit05):
    return generators(orbit05, d_eps=1e-4)


def quartic_roots(consts, lam):
    q0 = (lam ** 2 + consts.n * (consts.n - 4) / 2.0 * lam + consts.c0
          - consts.K * consts.epsBar ** (consts.p - 1))
    return np.roots([1.0, 0.0, -(2 * lam + consts.c2), 0.0, q0])


class TestModeApply:
    def test_constant_orbit_exponentials(self, orbit_cache, consts5):
        orb = orbit_cache(consts5.epsBar)
        for lam, mu in ((0.0, 0.9), (4.0, 1.1)):
            op = ModeOperator(orb, lam)
            h = 0.25
            t = h * np.arange(-14, 15)
            w = np.exp(mu * t)
            out = mode_apply(op, t, w, acc=10)
            # characteristic quartic of the linearized operator
            q0 = (lam ** 2 + 2.5 * lam + consts5.c0
                  - consts5.K * consts5.epsBar ** 8)
            expect = (mu ** 4 - (2 * lam + consts5.c2) * mu ** 2 + q0) * w
            sl = slice(7, len(t) - 7)
            assert np.max(np.abs(out[sl] - expect[sl])
                          / np.abs(expect[sl])) < 1e-8

    def test_phase_derivative_in_kernel(self, orbit05, basis05):
        op = ModeOperator(orbit05, 0.0)
        T = orbit05.period
        h = T / 128
        t = h * np.arange(-8, 128 + 9)
        w = basis05.sample_profile(0, "+", t)
        r = mode_apply(op, t, w, acc=10)
        assert np.max(np.abs(r[8:-8])) < 1e-6

    def test_translation_fields_in_kernel(self, orbit05, basis05):
        lam = float(orbit05.constants.n - 1)
        op = ModeOperator(orbit05, lam)
        T = orbit05.period
        h = T / 128
        t = h * np.arange(-8, 128 + 9)
        for sign in ("+", "-"):
            w = basis05.sample_profile(1, sign, t)
            r = mode_apply(op, t, w, acc=10)
            scale = max(1.0, np.max(np.abs(w[8:-8])))
            assert np.max(np.abs(r[8:-8])) / scale < 1e-6


class TestGenerators:
    def test_all_slots_solve_linearized_equation(self, orbit05, basis05):
        # one slot per deficiency index 0..n (n+1 = 6 in dimension 5),
        # each carrying its +/- pair; the necksize slot is checked on a half
        # period, the contamination-free window of its contiguous sampling
        assert len(basis05.slots) == orbit05.constants.n + 1
        T = orbit05.period
        h = T / 128
        full = h * np.arange(-8, 128 + 9)
        halfw = h * np.arange(-8, 64 + 9)
        for slot in basis05.slots:
            lam = orbit05.constants.lam(basis05.degree(slot))
            op = ModeOperator(orbit05, lam)
            for sign in ("+", "-"):
                t = halfw if (slot == 0 and sign == "-") else full
                w = basis05.sample_profile(slot, sign, t)
                r = mode_apply(op, t, w, acc=10)
                scale = max(1.0, np.max(np.abs(w[8:-8])))
                assert np.max(np.abs(r[8:-8])) / scale < 1e-6, (slot, sign)

    def test_phase_field_periodic(self, orbit05, basis05):
        t = np.linspace(0, orbit05.period, 40)
        a = basis05.profile(0, "+", t)
        b = basis05.profile(0, "+", t + orbit05.period)
        assert np.max(np.abs(a - b)) < 1e-7

    def test_necksize_field_grows_linearly(self, orbit05, basis05):
        # one-period increments are -dT/deps * vdot: linear growth, rate ~ 0
        T = orbit05.period
        t = np.linspace(0.2, 0.2 + T, 30)
        inc1 = basis05.profile(0, "-", t + T) - basis05.profile(0, "-", t)
        inc2 = basis05.profile(0, "-", t + 2 * T) - basis05.profile(0, "-", t + T)
        np.testing.assert_allclose(inc1, inc2, rtol=0, atol=1e-7)
        np.testing.assert_allclose(
            inc1, -basis05.dTdEps * orbit05.eval(t, 1), rtol=0, atol=1e-7)
        # small against the unit rates of the translation pair
        assert abs(basis05.measured_rate(0, "-", t0=1.0, periods=4)) < 0.1

    def test_translation_rates(self, basis05):
        assert basis05.measured_rate(1, "+") == pytest.approx(-1.0, abs=0.01)
        assert basis05.measured_rate(1, "-") == pytest.approx(+1.0, abs=0.01)

    def test_cross_validation_against_orbit_differences(self, basis05):
        assert basis05.crossValidationError < 1e-4

    def test_sensitivities_match_finite_differences(self, orbit05,
                                                    orbit_cache):
        d = 1e-5
        hi = orbit_cache(orbit05.eps + d)
        lo = orbit_cache(orbit05.eps - d)
        ds_fd = (hi.vDdot0 - lo.vDdot0) / (2 * d)
        dT_fd = (hi.period - lo.period) / (2 * d)
        assert basis_ds(orbit05) == pytest.approx(ds_fd, abs=5e-7)
        assert basis_dT(orbit05) == pytest.approx(dT_fd, abs=5e-6)

    def test_constant_orbit_rejected(self, orbit_cache, consts5):
        with pytest.raises(DomainError):
            generators(orbit_cache(consts5.epsBar))


def basis_ds(orbit):
    return orbit_sensitivities(orbit)[0]


def basis_dT(orbit):
    return orbit_sensitivities(orbit)[1]


class TestMonodromy:
    @pytest.mark.parametrize("eps", [0.3, 0.5, 0.7])
    @pytest.mark.parametrize("l", [0, 1, 2])
    def test_determinant_one(self, orbit_cache, eps, l):
        orb = orbit_cache(eps)
        data = monodromy_data(ModeOperator(orb, orb.constants.lam(l)))
        assert data.detFactored == pytest.approx(1.0, abs=1e-8)

    def test_phase_direction_is_fixed(self, orbit05):
        # multiplier-one eigenvector proportional to the vdot jet at t0;
        # measured in the backward-error scale |M| |jet| (the flow matrix
        # norm is e^{gamma T} ~ 1e8, which sets the achievable absolute size)
        M = monodromy(ModeOperator(orbit05, 0.0))
        jet = orbit05.jet(0.0, max_deriv=4)[1:5]
        r = (M - np.eye(4)) @ jet
        scale = np.linalg.norm(M, 2) * np.linalg.norm(jet)
        assert np.linalg.norm(r) / scale < 1e-10

    def test_constant_orbit_multipliers(self, orbit_cache, consts5):
        # multipliers outside the unit circle are the computable half (the
        # tiny ones drown in eps * |M|); they must match e^{mu T} and the
        # factored determinant certifies the reciprocal pairing
        orb = orbit_cache(consts5.epsBar)
        T = orb.period
        for lam in (0.0, 4.0):
            data = monodromy_data(ModeOperator(orb, lam))
            got = np.sort(np.abs(np.linalg.eigvals(data.matrix)))[2:]
            mu = quartic_roots(consts5, lam)
            expect = np.sort(np.abs(np.exp(mu * T)))[2:]
            np.testing.assert_allclose(got, expect, rtol=1e-6)
            assert data.detFactored == pytest.approx(1.0, abs=1e-8)


class TestIndicialRoots:
    def test_constant_orbit_closed_forms(self, orbit_cache, consts5):
        orb = orbit_cache(consts5.epsBar)
        spec = indicial_roots(orb, [0, 1])
        np.testing.assert_allclose(
            spec.exponents(0), [-2.8376651, 0.0, 0.0, 2.8376651], atol=1e-6)
        np.testing.assert_allclose(
            spec.exponents(1), [-3.6742346, -1.0, 1.0, 3.6742346], atol=1e-6)
        e = [x for x in spec.to_json()["modes"] if x["l"] == 0][0]
        assert e["frequencies"].count(pytest.approx(1.2459306, abs=1e-6)) >= 2

    def test_monodromy_path_matches_quartic_at_constant_orbit(
            self, orbit_cache, consts5):
        # non-circular: drive the Floquet route over the constant orbit and
        # compare against the closed-form quartic rates
        orb = orbit_cache(consts5.epsBar)
        T = orb.period
        for lam, expect in ((0.0, 2.8376651), (4.0, 3.6742346)):
            data = monodromy_data(ModeOperator(orb, lam))
            mu = np.sort(np.abs(np.linalg.eigvals(data.matrix)))[::-1]
            assert np.log(mu[0]) / T == pytest.approx(expect, abs=1e-6)
        data = monodromy_data(ModeOperator(orb, 4.0))
        mu = np.sort(np.abs(np.linalg.eigvals(data.matrix)))[::-1]
        assert np.log(mu[1]) / T == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("eps", [0.3, 0.5, 0.7])
    def test_translation_exponents_every_necksize(self, orbit_cache, eps):
        spec = indicial_roots(orbit_cache(eps), [1])
        exps = spec.exponents(1)
        assert exps[1] == pytest.approx(-1.0, abs=1e-6)
        assert exps[2] == pytest.approx(+1.0, abs=1e-6)

    def test_spectrum_symmetry(self, orbit05):
        spec = indicial_roots(orbit05, [0, 1, 2, 3, 4])
        for entry in spec.perMode:
            e = np.array(entry["exponents"])
            np.testing.assert_allclose(np.sort(e), np.sort(-e), atol=1e-9)

    def test_jordan_flag_at_interior_orbit(self, orbit05):
        spec = indicial_roots(orbit05, [0])
        entry = spec.perMode[0]
        flagged = [f for x, f in zip(entry["exponents"], entry["jordanFlags"])
                   if x == 0.0]
        assert flagged and all(flagged)

    def test_admissible_weight_window(self, orbit_cache, consts5):
        # smallest degree-2 rate bounds the weight window from above
        spec = indicial_roots(orbit_cache(consts5.epsBar), [2])
        gamma = min(x for x in spec.exponents(2) if x > 0)
        assert gamma == pytest.approx(2.3044, abs=1e-3)
        assert 1.5 < gamma


class TestPairing:
    def test_antisymmetry(self, orbit05, basis05):
        op = ModeOperator(orbit05, 0.0)
        jet = lambda t: basis05.jet(0, "+", t)[:, 0]
        assert symplectic_pairing(op, jet, jet, 0.7) == 0.0

    def test_kernel_pair_conserved(self, orbit05, basis05):
        op = ModeOperator(orbit05, 0.0)
        a = lambda t: basis05.jet(0, "-", t)[:, 0]
        b = lambda t: basis05.jet(0, "+", t)[:, 0]
        vals = np.array([symplectic_pairing(op, a, b, t)
                         for t in np.linspace(0, orbit05.period, 41)])
        assert np.max(np.abs(vals - vals[0])) < 1e-7

    def test_translation_pair_conserved(self, orbit05, basis05):
        lam = float(orbit05.constants.n - 1)
        op = ModeOperator(orbit05, lam)
        a = lambda t: basis05.jet(1, "+", t)[:, 0]
        b = lambda t: basis05.jet(1, "-", t)[:, 0]
        vals = np.array([symplectic_pairing(op, a, b, t)
                         for t in np.linspace(0, orbit05.period, 41)])
        assert np.max(np.abs(vals - vals[0])) < 1e-7

    def test_pairing_equals_energy_derivative(self, orbit05, basis05,
                                              orbit_cache):
        # finite-difference oracle for dH/deps
        d = 1e-5
        hi = orbit_cache(orbit05.eps + d)
        lo = orbit_cache(orbit05.eps - d)
        dH = (hi.hamiltonianValue - lo.hamiltonianValue) / (2 * d)
        op = ModeOperator(orbit05, 0.0)
        om = symplectic_pairing(
            op, lambda t: basis05.jet(0, "-", t)[:, 0],
            lambda t: basis05.jet(0, "+", t)[:, 0], 1.3)
        ratio = om / dH
        assert ratio == pytest.approx(1.0, abs=0.02)


class TestDeficiency:
    def test_smooth_step(self):
        x = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
        vals = smooth_step(x)
        assert vals[0] == 1.0 and vals[1] == 1.0
        assert vals[2] == pytest.approx(0.5, abs=1e-15)
        assert vals[3] == 0.0 and vals[4] == 0.0
        xs = np.linspace(-0.5, 1.5, 101)
        assert np.all(np.diff(smooth_step(xs)) <= 1e-15)

    def test_basis_size_and_tail_agreement(self, orbit05, basis05):
        n = orbit05.constants.n
        T = orbit05.period
        t = np.linspace(0.0, 4 * T, 257)
        cut = CutoffSpec(side="left", plateau=T, width=T)
        fields = deficiency_basis(basis05, cut, t)
        assert len(fields) == 2 * (n + 1)
        chi = cut.samples(t)
        plateau = chi == 1.0
        assert plateau.sum() > 10
        for f in fields:
            prof = basis05.profile(f.l, f.sign, t)
            np.testing.assert_array_equal(
                f.field.mode(f.degree).samples[plateau], prof[plateau])

    def test_gram_matrix_nonsingular(self, orbit05, basis05):
        T = orbit05.period
        t = np.linspace(0.0, 4 * T, 257)
        fields = deficiency_basis(basis05, CutoffSpec("left", T, T), t)
        G = deficiency_gram(fields)
        # normalize scales before conditioning
        d = np.sqrt(np.diag(G))
        Gn = G / np.outer(d, d)
        s = np.linalg.svd(Gn, compute_uv=False)
        assert s[-1] > 1e-6
