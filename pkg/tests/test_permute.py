"""Bianchi permutability and Moebius-cube superposition."""

import numpy as np
import pytest

from confocal import backlund as bk, deform as df, permute as pm
from confocal.errors import (DistinctZRequired, SingularBox,
                             SingularSuperposition)
from confocal.sjcore import random_orthogonal


@pytest.fixture(scope="module")
def ctx_b(qwc2, lmap2):
    return bk.make_context(qwc2, -0.2 + 0.25j, lmap2)


@pytest.fixture(scope="module")
def ctx_c(qwc2, lmap2):
    return bk.make_context(qwc2, 0.12 - 0.3j, lmap2)


class TestCompose:
    def test_matches_paper_factor_form(self, ctx_a, ctx_b):
        # (D2 - D1 R2 R1^T)(D2 R2 R1^T - D1)^{-1} R0 transcribed literally
        for i in range(5):
            R0 = random_orthogonal(2, seed=i)
            R1 = random_orthogonal(2, seed=50 + i)
            R2 = random_orthogonal(2, seed=100 + i)
            K = R2 @ R1.T
            lit = (ctx_b.D - ctx_a.D @ K) @ np.linalg.inv(
                ctx_b.D @ K - ctx_a.D) @ R0
            got = pm.bpt_compose(R0, R1, R2, ctx_a.D, ctx_b.D)
            assert np.max(np.abs(lit - got)) < 1e-12

    def test_coincident_leaves(self, ctx_a, ctx_b):
        R0 = random_orthogonal(2, seed=3)
        R1 = random_orthogonal(2, seed=4)
        R3 = pm.bpt_compose(R0, R1, R1, ctx_a.D, ctx_b.D)
        assert np.max(np.abs(R3 - R0)) < 1e-12

    def test_equal_z_equal_leaves_singular(self, ctx_a):
        R0 = random_orthogonal(2, seed=3)
        R1 = random_orthogonal(2, seed=4)
        with pytest.raises(SingularSuperposition):
            pm.bpt_compose(R0, R1, R1, ctx_a.D, ctx_a.D)

    def test_random_orthogonality_and_identities(self, ctx_a, ctx_b):
        worst_o = worst_i = worst_s = 0.0
        for i in range(100):
            R0 = random_orthogonal(2, seed=3 * i)
            R1 = random_orthogonal(2, seed=3 * i + 1)
            R2 = random_orthogonal(2, seed=3 * i + 2)
            R3 = pm.bpt_compose(R0, R1, R2, ctx_a.D, ctx_b.D)
            worst_o = max(worst_o,
                          float(np.max(np.abs(R3 @ R3.T - np.eye(2)))))
            worst_i = max(worst_i, pm.bpt_orthogonality_identity(
                R1, R2, ctx_a.D, ctx_b.D))
            worst_s = max(worst_s, pm.bpt_scalar_identity(
                R0, R1, R2, R3, ctx_a.D, ctx_b.D, ctx_a.z, ctx_b.z))
        assert worst_o < 1e-10
        assert worst_i < 1e-12
        assert worst_s < 1e-10

    def test_argument_swap_invariance(self, ctx_a, ctx_b):
        R0 = random_orthogonal(2, seed=11)
        R1 = random_orthogonal(2, seed=12)
        R2 = random_orthogonal(2, seed=13)
        a = pm.bpt_compose(R0, R1, R2, ctx_a.D, ctx_b.D)
        b = pm.bpt_compose(R0, R2, R1, ctx_b.D, ctx_a.D)
        assert np.max(np.abs(a - b)) < 1e-13


class TestVerify:
    def test_soliton_square(self, qwc2, lmap2, soliton32, ctx_a, ctx_b,
                            riccati32):
        r2 = bk.integrate_backlund(soliton32, ctx_b,
                                   random_orthogonal(2, seed=4))
        R3f = pm.bpt_compose_field(soliton32.R, riccati32.R1, r2.R1,
                                   ctx_a.D, ctx_b.D)
        rep = pm.bpt_verify(soliton32, riccati32.R1, r2.R1, R3f, ctx_a, ctx_b)
        assert rep["orthogonality"] < 1e-7
        assert rep["scalar_identity"] < 1e-7
        assert rep["derivative_identity"] < 0.01          # O(h^2)
        assert rep["riccati_seed_r1"] < 0.01
        assert rep["riccati_seed_r2"] < 0.01


class TestMoebius:
    def test_degenerate_symmetric_input(self, ctx_a, ctx_b, ctx_c):
        R = random_orthogonal(2, seed=77)
        _, gap, _ = pm.m3_r7(R, R, R, R, ctx_a.D, ctx_b.D, ctx_c.D,
                             ctx_a.z, ctx_b.z, ctx_c.z)
        assert gap < 1e-12

    def test_distinct_z_required(self, ctx_a, ctx_b):
        R = random_orthogonal(2, seed=1)
        with pytest.raises(DistinctZRequired):
            pm.m3_r7(R, R, R, R, ctx_a.D, ctx_b.D, ctx_a.D,
                     ctx_a.z, ctx_b.z, ctx_a.z)

    def test_singular_box(self):
        # scalar D's tuned so the combination matrix vanishes identically
        z1, z2, z3 = 0.2, 0.3, 0.5
        c23 = 1 / z2 - 1 / z3
        c31 = 1 / z3 - 1 / z1
        c12 = 1 / z1 - 1 / z2
        d1, d2 = 1.0, 2.0
        d3 = -(c23 * d1 + c31 * d2) / c12
        I = np.eye(2, dtype=complex)
        with pytest.raises(SingularBox):
            pm.m3_r7(I, I, I, I, d1 * I, d2 * I, d3 * I, z1, z2, z3)

    def test_integrated_routes_agree(self, qwc2, lmap2, soliton32, ctx_a,
                                     ctx_b, ctx_c, riccati32):
        r2 = bk.integrate_backlund(soliton32, ctx_b,
                                   random_orthogonal(2, seed=4))
        r4 = bk.integrate_backlund(soliton32, ctx_c,
                                   random_orthogonal(2, seed=5))
        _, gap = pm.m3_r7_field(soliton32.R, riccati32.R1, r2.R1, r4.R1,
                                ctx_a, ctx_b, ctx_c)
        assert gap < 1e-8


@pytest.fixture(scope="module")
def small_soliton(qwc2, lmap2):
    from confocal import scenarios as sc
    grid = df.GridSpec(((0.0, 0.3, 16), (0.0, 0.3, 16)))
    v0, lam0 = sc.default_soliton_data(qwc2, lmap2)
    return df.zero_soliton(qwc2, lmap2, grid, v0, lam0)


class TestLattice:
    def test_row_column_agreement(self, qwc2, lmap2, small_soliton, ctx_a,
                                  ctx_b):
        ctxs = {0: ctx_a, 1: ctx_b}
        lat_a, holes_a = pm.lattice_build(small_soliton, qwc2, lmap2, ctxs,
                                          (3, 3), seed=5, order_axes=(0, 1))
        lat_b, holes_b = pm.lattice_build(small_soliton, qwc2, lmap2, ctxs,
                                          (3, 3), seed=5, order_axes=(1, 0))
        assert not holes_a and not holes_b
        gap = max(np.max(np.abs(lat_a[k].R - lat_b[k].R)) for k in lat_a)
        assert gap < 1e-9
        # every elementary square closes on the scalar identity
        for i in range(2):
            for j in range(2):
                rep = pm.bpt_verify(lat_a[(i, j)], lat_a[(i + 1, j)].R,
                                    lat_a[(i, j + 1)].R,
                                    lat_a[(i + 1, j + 1)].R, ctx_a, ctx_b)
                assert rep["scalar_identity"] < 1e-5
                assert rep["orthogonality"] < 1e-5

    def test_cube_closes(self, qwc2, lmap2, small_soliton, ctx_a, ctx_b,
                         ctx_c):
        ctxs = {0: ctx_a, 1: ctx_b, 2: ctx_c}
        lat, holes = pm.lattice_build(small_soliton, qwc2, lmap2, ctxs,
                                      (2, 2, 2), seed=5)
        assert not holes
        R7, gap = pm.m3_r7_field(small_soliton.R, lat[(1, 0, 0)].R,
                                 lat[(0, 1, 0)].R, lat[(0, 0, 1)].R,
                                 ctx_a, ctx_b, ctx_c)
        assert gap < 1e-8
        assert np.max(np.abs(lat[(1, 1, 1)].R - R7)) < 1e-8

    def test_holes_reported_not_fatal(self, qwc2, lmap2, small_soliton,
                                      ctx_a, ctx_b, monkeypatch):
        def boom(*args, **kwargs):
            raise SingularSuperposition("forced")
        monkeypatch.setattr(pm, "bpt_compose_field", boom)
        lat, holes = pm.lattice_build(small_soliton, qwc2, lmap2,
                                      {0: ctx_a, 1: ctx_b}, (2, 2), seed=5)
        assert holes == [(1, 1)]
        assert lat[(1, 1)] is None
