"""Symmetric Jordan algebra: block realization, square roots, completions."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from confocal import sjcore
from confocal.errors import IsotropicEncounter, SingularConfocal, ZeroEigenvalue
from confocal.sjcore import (SJSpec, build_sj, orth_complete, random_orthogonal,
                             sqrt_branch, sqrt_resolvent, sqrt_sj)


def spec_strategy(max_dim=8, max_block=4, allow_zero=False):
    eig = st.complex_numbers(min_magnitude=0.2 if not allow_zero else 0.0,
                             max_magnitude=3.0, allow_nan=False,
                             allow_infinity=False)
    block = st.tuples(eig, st.integers(1, max_block))
    return st.lists(block, min_size=1, max_size=4).map(
        lambda bs: SJSpec(tuple(bs))).filter(lambda s: s.dim <= max_dim)


class TestBlocks:
    def test_j1_is_zero(self):
        assert np.array_equal(build_sj(SJSpec(((0.0, 1),))), np.zeros((1, 1)))

    def test_j2_hand_value(self):
        # f1 f1^T expanded by hand
        expected = 0.5 * np.array([[1.0, 1.0j], [1.0j, -1.0]])
        assert np.max(np.abs(sjcore.sj_nilpotent(2) - expected)) < 1e-15

    def test_diagonal_case(self):
        A = build_sj(SJSpec(((2.0, 1), (3.0, 1))))
        assert np.array_equal(A, np.diag([2.0 + 0j, 3.0]))

    @pytest.mark.parametrize("p", range(1, 9))
    def test_nilpotency_order(self, p):
        J = sjcore.sj_nilpotent(p)
        assert np.max(np.abs(np.linalg.matrix_power(J, p))) < 1e-13
        if p > 1:
            assert np.max(np.abs(np.linalg.matrix_power(J, p - 1))) > 1e-10

    @given(spec_strategy(allow_zero=True))
    @settings(max_examples=40, deadline=None)
    def test_exactly_symmetric(self, spec):
        A = build_sj(spec)
        assert np.array_equal(A, A.T)

    @given(spec_strategy())
    @settings(max_examples=30, deadline=None)
    def test_same_structure_commutes(self, spec):
        # polynomials in the same blocks commute
        rng = np.random.default_rng(0)
        c = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        A = build_sj(spec)
        B = build_sj(SJSpec(tuple((c[0] + c[1] * a, p) for a, p in spec.blocks)))
        B = B + 0.3 * A @ A
        assert np.max(np.abs(A @ B - B @ A)) < 1e-12


class TestSqrtBranch:
    def test_negative_axis(self):
        # -pi <= 2 theta < pi puts sqrt(-1) at -i
        assert abs(sqrt_branch(-1.0) - (-1j)) < 1e-15

    @given(st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3,
                              allow_nan=False, allow_infinity=False))
    @settings(max_examples=100, deadline=None)
    def test_square_and_halfplane(self, a):
        r = sqrt_branch(a)
        assert abs(r * r - a) < 1e-9 * max(1.0, abs(a))
        ang = np.angle(r)
        assert -np.pi / 2 <= ang + 1e-12 and ang < np.pi / 2 + 1e-12


class TestSqrtSJ:
    def test_nilpotent_binomial(self):
        spec = SJSpec(((1.0, 2),))
        S = sqrt_sj(spec)
        expected = np.eye(2) + 0.5 * sjcore.sj_nilpotent(2)
        assert np.max(np.abs(S - expected)) < 1e-14
        assert np.max(np.abs(S @ S - build_sj(spec))) < 1e-14

    def test_scalar(self):
        assert np.allclose(sqrt_sj(SJSpec(((4.0, 1),))), [[2.0]])

    def test_zero_eigenvalue_raises(self):
        with pytest.raises(ZeroEigenvalue):
            sqrt_sj(SJSpec(((0.0, 2),)))

    @given(spec_strategy())
    @settings(max_examples=50, deadline=None)
    def test_squaring_oracle(self, spec):
        S = sqrt_sj(spec)
        assert np.max(np.abs(S @ S - build_sj(spec))) < 1e-12


class TestSqrtResolvent:
    def test_z_zero_identity(self):
        spec = SJSpec(((2.0, 2), (0.5, 1)))
        assert np.max(np.abs(sqrt_resolvent(spec, 0.0) - np.eye(3))) < 1e-15

    def test_scalar_case(self):
        assert np.allclose(sqrt_resolvent(SJSpec(((1.0, 1),)), 0.75), [[0.5]])

    def test_j2_closed_form(self):
        # I - z J2 has square root I - (z/2) J2 because J2^2 = 0
        z = 0.37 - 0.81j
        spec = SJSpec(((0.0, 2),))
        expected = np.eye(2) - 0.5 * z * sjcore.sj_nilpotent(2)
        assert np.max(np.abs(sqrt_resolvent(spec, z) - expected)) < 1e-14

    def test_singular_raises(self):
        with pytest.raises(SingularConfocal):
            sqrt_resolvent(SJSpec(((2.0, 1),)), 0.5)

    @given(spec_strategy(allow_zero=True),
           st.complex_numbers(max_magnitude=0.9, allow_nan=False,
                              allow_infinity=False))
    @settings(max_examples=50, deadline=None)
    def test_square_and_commute(self, spec, z):
        A = build_sj(spec)
        if any(abs(1 - z * a) < 0.05 for a in spec.eigenvalues):
            return
        S = sqrt_resolvent(spec, z)
        assert np.max(np.abs(S @ S - (np.eye(spec.dim) - z * A))) < 1e-11
        assert np.max(np.abs(S @ A - A @ S)) < 1e-11


class TestCompletions:
    def test_prescribed_row(self):
        e1 = np.array([1.0, 0.0], dtype=complex)
        M = orth_complete([e1], 2, seed=9)
        assert np.max(np.abs(M[0] - e1)) < 1e-15
        assert sjcore.orth_defect(M) < 1e-12

    def test_empty_rows(self):
        M = orth_complete([], 3, seed=5)
        assert sjcore.orth_defect(M) < 1e-12

    def test_isotropic_row_raises(self):
        f1 = np.array([1.0, 1.0j], dtype=complex) / np.sqrt(2)
        with pytest.raises(IsotropicEncounter):
            orth_complete([f1], 2, seed=0)

    def test_deterministic(self):
        a = orth_complete([], 4, seed=13)
        b = orth_complete([], 4, seed=13)
        assert np.array_equal(a, b)

    def test_random_orthogonal(self):
        M = random_orthogonal(4, seed=2)
        assert sjcore.orth_defect(M) < 1e-12
        assert np.array_equal(M, random_orthogonal(4, seed=2))
        assert np.allclose(random_orthogonal(3, seed=1, scale=0.0), np.eye(3))
