"""Confocal families, Ivory affinity identities, charts, L map, elliptic
coordinates.  Derived expectations are computed by independent oracles
(quadrature for the translation, polynomial expansion for elliptic roots,
finite differences for normals)."""

import numpy as np
import pytest

from confocal import quadric as qd
from confocal.errors import (ChartSingularity, DistinctZRequired,
                             IsotropicNormal, MultipleRoot,
                             NotRulingDirection, OffQuadric, SingularConfocal)
from confocal.sjcore import iso_f, resolvent_inv_sqrt, sqrt_branch


@pytest.fixture(scope="module")
def sphere():
    return qd.qc_quadric([(1.0, 1)] * 3)


@pytest.fixture(scope="module")
def parabola():
    return qd.qwc_quadric([(1.0, 1)])


class TestEvalConfocal:
    def test_sphere_point(self, sphere):
        assert qd.eval_confocal(sphere, 0.0, qd.basis_vec(0, 3)) == 0

    def test_sphere_confocal_hand_value(self, sphere):
        # (1/4)/(1/4) - 1 = 0: x = e1/2 lies on the z = 3/4 member
        v = qd.eval_confocal(sphere, 0.75, 0.5 * qd.basis_vec(0, 3))
        assert abs(v) < 1e-14

    def test_parabola(self, parabola):
        x = np.array([1.0, 0.5], dtype=complex)
        assert abs(qd.eval_confocal(parabola, 0.0, x)) < 1e-15

    def test_singular_pole(self, sphere):
        with pytest.raises(SingularConfocal):
            qd.eval_confocal(sphere, 1.0, qd.basis_vec(0, 3))


class TestTranslation:
    def test_qc_zero(self, sphere):
        assert np.all(qd.translation(sphere, 0.3 + 0.2j) == 0)

    def test_qwc_closed_form(self, parabola):
        z = 0.4 - 1.1j
        assert np.max(np.abs(qd.translation(parabola, z)
                             - (z / 2) * qd.basis_vec(1, 2))) < 1e-15

    def test_iqwc_p2_hand_series(self, iqwc2):
        z = 0.3 + 0.2j
        f1 = iso_f(1, 3)
        expected = (z / 2) * f1.conj() + (z * z / 8) * f1
        assert np.max(np.abs(qd.translation(iqwc2, z) - expected)) < 1e-15
        # endpoint coefficient: conj(f1)^T C(z) picks the top power z^p/8
        assert abs(f1.conj() @ qd.translation(iqwc2, z) - z * z / 8) < 1e-15

    @pytest.mark.parametrize("kind", ["qwc", "iqwc2", "iqwc3"])
    def test_quadrature_oracle(self, kind):
        # C(z) = -(1/2 int_0^z (sqrt R_w)^{-1} dw) B by Gauss-Legendre
        if kind == "qwc":
            q = qd.qwc_quadric([(1.2, 1), (0.6, 1)])
        elif kind == "iqwc2":
            q = qd.iqwc_quadric(2, [(1.5, 1)])
        else:
            q = qd.iqwc_quadric(3)
        z = 0.41 + 0.23j
        nodes, weights = np.polynomial.legendre.leggauss(24)
        acc = np.zeros((q.dim, q.dim), dtype=complex)
        for t, w in zip(nodes, weights):
            acc += w * resolvent_inv_sqrt(q.sj, 0.5 * z * (t + 1.0))
        integral = acc * (z / 2.0)
        expected = -0.5 * integral @ q.B
        assert np.max(np.abs(qd.translation(q, z) - expected)) < 1e-12

    @pytest.mark.parametrize("make", [
        lambda: qd.qc_quadric([(1.0, 1), (2.0, 1)]),
        lambda: qd.qwc_quadric([(1.2, 1), (0.6, 1)]),
        lambda: qd.iqwc_quadric(2, [(1.5, 1)]),
        lambda: qd.iqwc_quadric(3),
    ])
    def test_paper_identities(self, make):
        # A C(z) + (I - sqrt R_z) B = 0 = (I + sqrt R_z) C(z) + z B
        q = make()
        z = -0.27 + 0.64j
        C = qd.translation(q, z)
        S = qd.sqrt_rz(q, z)
        assert np.max(np.abs(q.A @ C + (np.eye(q.dim) - S) @ q.B)) < 1e-13
        assert np.max(np.abs((np.eye(q.dim) + S) @ C + z * q.B)) < 1e-13


class TestIvoryMap:
    def test_z_zero(self, sphere):
        x0 = qd.chart_to_ambient(sphere, None, np.array([0.3, -0.2 + 0.1j]))
        assert np.max(np.abs(qd.ivory_map(sphere, 0.0, x0) - x0)) < 1e-14

    def test_sphere_scaling(self, sphere):
        z = 0.3 - 0.4j
        x0 = qd.chart_to_ambient(sphere, None, np.array([0.5, 0.25j]))
        xz = qd.ivory_map(sphere, z, x0)
        assert np.max(np.abs(xz - sqrt_branch(1 - z) * x0)) < 1e-14

    def test_lands_on_confocal(self, iqwc2, iqwc_lmap):
        rng = np.random.default_rng(3)
        for _ in range(5):
            V = qd.random_chart_point(iqwc2, rng)
            x0 = qd.chart_to_ambient(iqwc2, iqwc_lmap, V)
            z = qd.admissible_z(iqwc2, rng)
            xz = qd.ivory_map(iqwc2, z, x0)
            assert abs(qd.eval_confocal(iqwc2, z, xz)) < 1e-11

    def test_off_quadric_raises(self, sphere):
        with pytest.raises(OffQuadric):
            qd.ivory_map(sphere, 0.2, 1.5 * qd.basis_vec(0, 3))


class TestIvoryIdentities:
    def test_coincident_points_zero(self, sphere):
        x = qd.chart_to_ambient(sphere, None, np.array([0.4, 0.1j]))
        assert qd.ivory_theorem_residual(sphere, 0.3, x, x) == 0
        assert qd.tc_symmetry_residual(sphere, 0.3, x, x) == 0

    def test_random_qc_n3(self):
        q = qd.qc_quadric([(1.0, 1), (1.5 + 0.2j, 1), (0.7, 1), (2.1 - 0.3j, 1)])
        rng = np.random.default_rng(7)
        for _ in range(10):
            xa = qd.chart_to_ambient(q, None, qd.random_chart_point(q, rng))
            xb = qd.chart_to_ambient(q, None, qd.random_chart_point(q, rng))
            z = qd.admissible_z(q, rng)
            assert qd.ivory_theorem_residual(q, z, xa, xb) < 1e-10
            assert qd.tc_symmetry_residual(q, z, xa, xb) < 1e-10

    def test_ruling_length(self):
        # hyperboloid-type quadric with real rulings through a random point
        q = qd.qc_quadric([(1.0, 1), (2.0, 1), (-1.5, 1)])
        rng = np.random.default_rng(5)
        hits = 0
        for _ in range(20):
            x0 = qd.chart_to_ambient(q, None, qd.random_chart_point(q, rng))
            w = qd.ruling_direction(q, x0, rng)
            if w is None:
                continue
            z = qd.admissible_z(q, rng)
            assert qd.ruling_length_residual(q, z, x0, w) < 1e-10
            hits += 1
        assert hits >= 10

    def test_zero_direction(self, sphere):
        x0 = qd.chart_to_ambient(sphere, None, np.array([0.4, 0.1j]))
        w = np.zeros(3, dtype=complex)
        assert qd.ruling_length_residual(sphere, 0.3, x0, w) == 0

    def test_not_ruling_raises(self, sphere):
        x0 = qd.chart_to_ambient(sphere, None, np.array([0.4, 0.1j]))
        with pytest.raises(NotRulingDirection):
            qd.ruling_length_residual(sphere, 0.3, x0, qd.basis_vec(0, 3))


class TestLame:
    def test_intersection_orthogonality(self):
        q = qd.qc_quadric([(4.0, 1), (1.0, 1)])
        rng = np.random.default_rng(11)
        found = 0
        for _ in range(20):
            z1, z2 = qd.admissible_z(q, rng), qd.admissible_z(q, rng)
            if abs(z1 - z2) < 0.1:
                continue
            x0 = qd.chart_to_ambient(q, None, qd.random_chart_point(q, rng))
            x = qd.intersect_confocal(q, z1, z2, x0)
            if x is None:
                continue
            assert qd.confocal_orthogonality_residual(q, z1, z2, x) < 1e-10
            found += 1
        assert found >= 5

    def test_equal_z_raises(self, sphere):
        with pytest.raises(DistinctZRequired):
            qd.confocal_orthogonality_residual(sphere, 0.3, 0.3,
                                               qd.basis_vec(0, 3))


class TestElliptic:
    def test_zero_root_on_quadric(self):
        q = qd.qc_quadric([(0.25, 1), (1.0, 1)])
        x = qd.chart_to_ambient(q, None, np.array([0.3 - 0.2j]))
        roots = qd.elliptic_coordinates(q, x)
        assert np.min(np.abs(roots)) < 1e-10

    def test_diagonal_expansion_oracle(self):
        # coefficients of Q_z(x) prod (1 - z a_j) expanded independently
        q = qd.qc_quadric([(0.25, 1), (1.0, 1)])
        x = np.array([1.7, 0.4 + 0.3j], dtype=complex)
        a = [0.25, 1.0]
        poly = np.polynomial.Polynomial([-1.0])  # C = -1 term
        for j in range(2):
            term = np.polynomial.Polynomial([a[j] * x[j] ** 2])
            for k in range(2):
                if k != j:
                    term *= np.polynomial.Polynomial([1.0, -a[k]])
            poly += term
        poly *= 1.0
        # Q_z * prod(1-z a_j) = sum_j a_j x_j^2 prod_{k!=j}(1-z a_k) - prod(1-z a_k)
        full = np.polynomial.Polynomial([-1.0])
        prod_all = np.polynomial.Polynomial([1.0])
        for k in range(2):
            prod_all *= np.polynomial.Polynomial([1.0, -a[k]])
        full = -prod_all
        for j in range(2):
            term = np.polynomial.Polynomial([a[j] * x[j] ** 2])
            for k in range(2):
                if k != j:
                    term *= np.polynomial.Polynomial([1.0, -a[k]])
            full += term
        expected = sorted(full.roots(), key=abs)
        got = qd.elliptic_coordinates(q, x)
        assert np.max(np.abs(np.array(expected) - got)) < 1e-9

    def test_backward_error(self, iqwc2):
        lm = qd.build_lmap(iqwc2, seed=2)
        rng = np.random.default_rng(1)
        x = qd.chart_to_ambient(iqwc2, lm, qd.random_chart_point(iqwc2, rng))
        x = x + 0.1 * (rng.standard_normal(3) + 1j * rng.standard_normal(3))
        roots = qd.elliptic_coordinates(iqwc2, x)
        for zk in roots:
            assert abs(qd.eval_confocal(iqwc2, zk, x)) < 1e-8

    def test_multiple_root_raises(self):
        # Newton onto the isotropic-normal locus Q_z = |nhat_z|^2 = 0 at z*
        q = qd.qc_quadric([(0.25, 1), (1.0, 1), (0.6, 1)])
        zs = 0.3
        rng = np.random.default_rng(4)
        x = qd.chart_to_ambient(q, None, qd.random_chart_point(q, rng))
        x = np.linalg.solve(qd.sqrt_rz(q, zs), x)  # put it near Q_{z*} = 0
        for _ in range(60):
            nh = qd.nhat(q, zs, x)
            F = np.array([qd.eval_confocal(q, zs, x), nh @ nh])
            if np.max(np.abs(F)) < 1e-13:
                break
            Rzinv = np.linalg.inv(qd.resolvent(q, zs))
            J = np.vstack([2 * nh, 2 * (Rzinv @ q.A @ nh)])
            dx, *_ = np.linalg.lstsq(J, -F, rcond=None)
            x = x + dx
        assert np.max(np.abs(F)) < 1e-12
        with pytest.raises(MultipleRoot):
            qd.elliptic_coordinates(q, x)


class TestLMap:
    def test_qwc_identity(self):
        q = qd.qwc_quadric([(1.0, 1)])
        lm = qd.build_lmap(q)
        assert np.max(np.abs(lm.L - np.eye(2))) < 1e-15

    def test_qwc_diagonal(self):
        q = qd.qwc_quadric([(4.0, 1)])
        lm = qd.build_lmap(q)
        assert np.max(np.abs(lm.L - np.diag([0.5, 1.0]))) < 1e-15

    @pytest.mark.parametrize("p,extra", [(2, [(2.0, 1)]), (3, []),
                                         (2, [(1.3 + 0.4j, 1), (0.9, 1)])])
    def test_iqwc_invariants(self, p, extra):
        q = qd.iqwc_quadric(p, extra)
        lm = qd.build_lmap(q, seed=6)
        m = q.dim
        f1 = iso_f(1, m)
        G = q.A + np.outer(f1.conj(), f1.conj())
        I1n = np.eye(m)
        I1n[m - 1, m - 1] = 0
        assert np.max(np.abs(lm.L @ qd.basis_vec(m - 1, m) - f1)) < 1e-10
        assert np.max(np.abs(lm.L.T @ G @ lm.L - np.eye(m))) < 1e-9
        assert np.max(np.abs(lm.L.T @ q.A @ lm.L - I1n)) < 1e-9
        assert np.max(np.abs(lm.L.T @ q.B + qd.basis_vec(m - 1, m))) < 1e-9
        assert np.max(np.abs(lm.Aprime - lm.Aprime.T)) < 1e-10
        assert np.max(np.abs(lm.Aprime @ qd.basis_vec(m - 1, m))) < 1e-9
        assert np.max(np.abs(lm.Aprime @ (lm.L.T @ f1))) < 1e-9

    def test_translation_identity_and_on_z(self, iqwc2, iqwc_lmap):
        # (I + sqrt R'_z) I L^{-1}C(z) = -z I L^{-1} B; L^{-1}C(z) on Z
        m = 3
        for z in (0.3 + 0.2j, -0.5 + 0.1j, 0.8j):
            S = qd.sqrt_rprime(iqwc2, iqwc_lmap, z)
            ilc = qd.embed(qd.translation_chart(iqwc2, iqwc_lmap, z), m)
            ilb = qd.embed(qd.chart_b(iqwc2, iqwc_lmap), m)
            assert np.max(np.abs((np.eye(m) + S) @ ilc + z * ilb)) < 1e-10
            lc = iqwc_lmap.L_inv @ qd.translation(iqwc2, z)
            assert abs(ilc @ ilc - 2.0 * lc[m - 1]) < 1e-10

    def test_sqrt_rprime_squares(self, iqwc2, iqwc_lmap):
        z = 0.22 - 0.35j
        S = qd.sqrt_rprime(iqwc2, iqwc_lmap, z)
        assert np.max(np.abs(S @ S - (np.eye(3) - z * iqwc_lmap.Aprime))) < 1e-12
        assert np.max(np.abs(S - S.T)) < 1e-12

    def test_seed_determinism(self, iqwc2):
        a = qd.build_lmap(iqwc2, seed=9)
        b = qd.build_lmap(iqwc2, seed=9)
        assert np.array_equal(a.L, b.L)


class TestCharts:
    def test_sphere_south_pole(self, sphere):
        x = qd.chart_to_ambient(sphere, None, np.zeros(2))
        assert np.max(np.abs(x + qd.basis_vec(2, 3))) < 1e-15

    def test_parabola_point(self, parabola):
        lm = qd.build_lmap(parabola)
        x = qd.chart_to_ambient(parabola, lm, np.array([1.0]))
        assert np.max(np.abs(x - np.array([1.0, 0.5]))) < 1e-15

    @pytest.mark.parametrize("kindflavor", ["qc", "qwc", "iqwc"])
    def test_on_quadric(self, kindflavor, sphere, parabola, iqwc2, iqwc_lmap):
        q, lm = {"qc": (sphere, None),
                 "qwc": (parabola, qd.build_lmap(parabola)),
                 "iqwc": (iqwc2, iqwc_lmap)}[kindflavor]
        rng = np.random.default_rng(8)
        for _ in range(10):
            V = qd.random_chart_point(q, rng)
            x = qd.chart_to_ambient(q, lm, V)
            assert abs(qd.eval_confocal(q, 0.0, x)) < 1e-12

    def test_chart_singularity(self, sphere):
        with pytest.raises(ChartSingularity):
            qd.chart_to_ambient(sphere, None, np.array([1.0j, 0.0]))

    def test_sphere_normal(self, sphere):
        V = np.array([0.3, -0.2])
        N0, H = qd.chart_normal_h(sphere, None, V)
        x = qd.chart_to_ambient(sphere, None, V)
        assert abs(H - 1.0) < 1e-14       # H = X^T X = 1 on the unit sphere
        assert np.max(np.abs(N0 - x)) < 1e-13

    def test_parabola_normal_hand_value(self, parabola):
        lm = qd.build_lmap(parabola)
        N0, H = qd.chart_normal_h(parabola, lm, np.zeros(1))
        assert abs(H - 1.0) < 1e-15
        assert np.max(np.abs(N0 + qd.basis_vec(1, 2))) < 1e-15

    def test_normal_unit_and_tangent(self, iqwc2, iqwc_lmap):
        rng = np.random.default_rng(2)
        V = qd.random_chart_point(iqwc2, rng)
        N0, H = qd.chart_normal_h(iqwc2, iqwc_lmap, V)
        assert abs(N0 @ N0 - 1.0) < 1e-12
        # N0 . dx0 = 0 by finite differences in V
        eps = 1e-6
        for k in range(2):
            dv = np.zeros(2, dtype=complex)
            dv[k] = eps
            dx = (qd.chart_to_ambient(iqwc2, iqwc_lmap, V + dv)
                  - qd.chart_to_ambient(iqwc2, iqwc_lmap, V - dv)) / (2 * eps)
            assert abs(N0 @ dx) < 1e-9

    def test_isotropic_normal_raises(self, parabola):
        lm = qd.build_lmap(parabola)
        with pytest.raises(IsotropicNormal):
            qd.chart_normal_h(parabola, lm, np.array([1.0j]))


class TestIvoryOnConfocalAllKinds:
    @pytest.mark.parametrize("maker", [
        lambda: (qd.qc_quadric([(1.0, 1), (1.4 + 0.2j, 1), (0.8, 1)]), None),
        lambda: (qd.qwc_quadric([(1.1, 1), (0.6 - 0.1j, 1)]), "lm"),
        lambda: (qd.iqwc_quadric(2, [(1.5, 1)]), "lm"),
    ])
    def test_image_on_confocal(self, maker):
        q, need_lm = maker()
        lm = qd.build_lmap(q, seed=1) if need_lm else None
        rng = np.random.default_rng(6)
        for _ in range(8):
            x0 = qd.chart_to_ambient(q, lm, qd.random_chart_point(q, rng))
            z = qd.admissible_z(q, rng)
            xz = qd.ivory_map(q, z, x0)
            assert abs(qd.eval_confocal(q, z, xz)) < 1e-10


class TestCanonicalize:
    def test_iqwc_block_diagonalized(self, iqwc2, iqwc_lmap):
        lm, ok = qd.canonicalize_lmap(iqwc2, iqwc_lmap)
        assert ok
        An = lm.aprime_n()
        assert np.max(np.abs(An - np.diag(np.diag(An)))) < 1e-12
        # all invariants preserved
        m = 3
        f1 = iso_f(1, m)
        G = iqwc2.A + np.outer(f1.conj(), f1.conj())
        e = qd.basis_vec(m - 1, m)
        assert np.max(np.abs(lm.L @ e - f1)) < 1e-10
        assert np.max(np.abs(lm.L.T @ G @ lm.L - np.eye(m))) < 1e-9
        assert np.max(np.abs(lm.L.T @ iqwc2.B + e)) < 1e-9

    def test_qwc_passthrough(self, qwc2, lmap2):
        lm, ok = qd.canonicalize_lmap(qwc2, lmap2)
        assert ok and lm is lmap2


class TestTranslationEndpointLaw:
    @pytest.mark.parametrize("p", [2, 3])
    def test_top_coefficient(self, p):
        # conj(f1)^T C(z) picks the top power: C(-1/2, p-1) (-z)^p / (-2p)
        q = qd.iqwc_quadric(p)
        z = 0.37 - 0.21j
        f1 = iso_f(1, q.dim)
        got = f1.conj() @ qd.translation(q, z)
        binom = 1.0
        for i in range(p - 1):
            binom *= (-0.5 - i) / (i + 1)
        expected = binom * (-z) ** p / (-2 * p)
        assert abs(got - expected) < 1e-15


class TestEllipticIsotropicFlavor:
    def test_p3_block_backward_error(self):
        # fully nilpotent quadratic part: the resolvent is polynomial in z
        q = qd.iqwc_quadric(3)
        lm = qd.build_lmap(q, seed=1)
        rng = np.random.default_rng(2)
        for _ in range(5):
            x = qd.chart_to_ambient(q, lm, qd.random_chart_point(q, rng))
            x = x + 0.05 * (rng.standard_normal(3)
                            + 1j * rng.standard_normal(3))
            roots = qd.elliptic_coordinates(q, x)
            assert len(roots) == 3
            for zk in roots:
                assert abs(qd.eval_confocal(q, zk, x)) < 1e-8
