"""Algebraic superposition of Backlund transforms.

Two leaves R_1 (at z_1) and R_2 (at z_2) of a common seed R_0 close to a
fourth solution R_3 by pure algebra (Bianchi permutability); three leaves
close a cube whose eighth vertex R_7 is consistently defined by three
different composition routes (the Moebius configuration).  A Z^k lattice of
transforms then fills in algebraically from k Riccati integrations.
"""

from __future__ import annotations

from itertools import product

import numpy as np

from . import deform as df
from .backlund import BacklundContext, riccati_field_residual
from .errors import DistinctZRequired, SingularBox, SingularSuperposition
from .numerics import diff1

COND_LIMIT = 1e12


def _solve_right(numer: np.ndarray, denom: np.ndarray, what: str) -> np.ndarray:
    """numer @ denom^{-1} with condition monitoring."""
    if np.linalg.cond(denom) > COND_LIMIT:
        raise SingularSuperposition(f"{what}: condition number above limit")
    return np.linalg.solve(denom.T, numer.T).T


def bpt_compose(R0, R1, R2, D1, D2):
    """Fourth vertex R_3 of the Bianchi quadrilateral:

    R_3 R_0^T = (D_2 - D_1 R_2 R_1^T)(D_2 R_2 R_1^T - D_1)^{-1},
    evaluated in the equivalent factor-free form
    (D_2 R_1 - D_1 R_2)(D_2 R_2 - D_1 R_1)^{-1} R_0.
    """
    return _solve_right(D2 @ R1 - D1 @ R2, D2 @ R2 - D1 @ R1,
                        "D2 R2 - D1 R1") @ R0


def bpt_compose_field(R0, R1, R2, D1, D2):
    """bpt_compose applied nodewise over leading grid axes."""
    shape = R0.shape[:-2]
    out = np.zeros_like(R0)
    for idx in np.ndindex(*shape):
        out[idx] = bpt_compose(R0[idx], R1[idx], R2[idx], D1, D2)
    return out


def bpt_orthogonality_identity(R1, R2, D1, D2) -> float:
    """|(D2 - K D1)(D2 K - D1) - (K D2 - D1)(D2 - D1 K)| with K = R2 R1^T;
    this matrix identity is what makes R_3 orthogonal."""
    K = R2 @ R1.T
    lhs = (D2 - K @ D1) @ (D2 @ K - D1)
    rhs = (K @ D2 - D1) @ (D2 - D1 @ K)
    return float(np.max(np.abs(lhs - rhs)))


def bpt_scalar_identity(R0, R1, R2, R3, D1, D2, z1, z2) -> float:
    """|(D2 R3 R0^T + D1)(D2 R2 R1^T - D1) - (1/z2 - 1/z1) I|."""
    n = R0.shape[0]
    lhs = (D2 @ R3 @ R0.T + D1) @ (D2 @ R2 @ R1.T - D1)
    return float(np.max(np.abs(lhs - (1.0 / z2 - 1.0 / z1) * np.eye(n))))


def bpt_verify(fg_seed: df.FieldGrid, R1f, R2f, R3f,
               ctx1: BacklundContext, ctx2: BacklundContext,
               order: int = 2) -> dict:
    """Verification bundle over a grid of fields.

    (a) the closed derivative identity for K = R_3 R_0^T by finite differences,
    (b) R_3 satisfies the leaf Riccati equations with seeds (R_1, z_2) and
        (R_2, z_1),
    (c) the scalar identity (D2 R3 R0^T + D1)(D2 R2 R1^T - D1) = (1/z2 - 1/z1) I,
    (d) orthogonality of R_3.
    """
    D1, D2 = ctx1.D, ctx2.D
    shape = fg_seed.grid.shape
    hs = fg_seed.grid.h
    n = fg_seed.n
    K = np.einsum("...ij,...kj->...ik", R3f, fg_seed.R)
    om = df.omega_fields(fg_seed, order=order)

    worst_deriv = 0.0
    for k in range(fg_seed.grid.n):
        dK = diff1(K, axis=k, h=hs[k], order=order)
        Ek = np.zeros((n, n), dtype=complex)
        Ek[k, k] = 1.0
        pred = np.zeros_like(dK)
        for idx in np.ndindex(*shape):
            R0, R1 = fg_seed.R[idx], R1f[idx]
            Kx = K[idx]
            pred[idx] = (-(Kx @ R0 @ Ek @ R1.T @ (D2 @ Kx + D1))
                         + (D2 + Kx @ D1) @ R1 @ Ek @ R0.T)
        worst_deriv = max(worst_deriv, float(np.max(np.abs(dK - pred))))

    seed1 = df.FieldGrid(fg_seed.grid, fg_seed.kind, fg_seed.V, fg_seed.lam,
                         R1f, {})
    seed2 = df.FieldGrid(fg_seed.grid, fg_seed.kind, fg_seed.V, fg_seed.lam,
                         R2f, {})
    res_r1 = riccati_field_residual(R3f, seed1, ctx2, order=order)
    res_r2 = riccati_field_residual(R3f, seed2, ctx1, order=order)

    scal = 0.0
    orth = 0.0
    for idx in np.ndindex(*shape):
        scal = max(scal, bpt_scalar_identity(fg_seed.R[idx], R1f[idx],
                                             R2f[idx], R3f[idx], D1, D2,
                                             ctx1.z, ctx2.z))
        orth = max(orth, float(np.max(np.abs(
            R3f[idx] @ R3f[idx].T - np.eye(n)))))
    return {
        "derivative_identity": worst_deriv,
        "riccati_seed_r1": res_r1,
        "riccati_seed_r2": res_r2,
        "scalar_identity": scal,
        "orthogonality": orth,
    }


def _superpose(seed, leaf_a, leaf_b, Da, Db):
    """R_new with R_new seed^{-1} = (Da leaf_a - Db leaf_b)(Da ... ) pattern:
    identical to bpt_compose with the (a, b) roles as (1, 2)."""
    return bpt_compose(seed, leaf_a, leaf_b, Da, Db)


def m3_r7(R0, R1, R2, R4, D1, D2, D3, z1, z2, z3):
    """Eighth Moebius-cube vertex by the three superposition routes.

    Needs pairwise distinct z's; R_3, R_5, R_6 are first composed from the
    faces, then R_7 is evaluated from each of the three remaining faces and
    all routes must agree.  Returns (R_7, max pairwise route discrepancy,
    box condition diagnostic).
    """
    if len({complex(z1), complex(z2), complex(z3)}) < 3:
        raise DistinctZRequired("Moebius cube needs pairwise distinct z")
    R3 = bpt_compose(R0, R1, R2, D1, D2)
    R5 = bpt_compose(R0, R4, R1, D3, D1)   # B_{z1}(x^4) = x^5 = B_{z3}(x^1)
    R6 = bpt_compose(R0, R2, R4, D2, D3)   # B_{z3}(x^2) = x^6 = B_{z2}(x^4)
    box = ((1.0 / z2 - 1.0 / z3) * D1 @ R1
           + (1.0 / z3 - 1.0 / z1) * D2 @ R2
           + (1.0 / z1 - 1.0 / z2) * D3 @ R4)
    if np.linalg.cond(box) > COND_LIMIT:
        raise SingularBox("combination matrix is near singular")
    routes = [
        bpt_compose(R1, R3, R5, D2, D3),   # around x^1: z2-, z3-leaves
        bpt_compose(R2, R3, R6, D1, D3),   # around x^2: z1-, z3-leaves
        bpt_compose(R4, R5, R6, D1, D2),   # around x^4: z1-, z2-leaves
    ]
    gap = 0.0
    for a in range(3):
        for b in range(a + 1, 3):
            gap = max(gap, float(np.max(np.abs(routes[a] - routes[b]))))
    return routes[0], gap, float(np.linalg.cond(box))


def m3_r7_field(R0f, R1f, R2f, R4f, ctx1, ctx2, ctx3):
    """m3_r7 applied nodewise; returns (R7 field, max discrepancy)."""
    shape = R0f.shape[:-2]
    out = np.zeros_like(R0f)
    gap = 0.0
    for idx in np.ndindex(*shape):
        out[idx], g, _ = m3_r7(R0f[idx], R1f[idx], R2f[idx], R4f[idx],
                               ctx1.D, ctx2.D, ctx3.D,
                               ctx1.z, ctx2.z, ctx3.z)
        gap = max(gap, g)
    return out, gap


def lattice_build(fg_seed: df.FieldGrid, q, lm, contexts: dict, extent: tuple,
                  seed: int = 0, order_axes=None):
    """Fill a Z^k lattice of transform states from the seed solution.

    contexts[i] is the BacklundContext of lattice axis i (one z per axis).
    Axis chains on the coordinate rays (indices with a single nonzero entry)
    each require their own Riccati integration - a repeated transform at the
    same z is new initial data, not algebra - while every remaining cell
    closes algebraically through the permutability formula, which is the
    point of the lattice.  Cell (V, Lambda) states follow from the algebraic
    transform so that chains can restart anywhere.  Singular superpositions
    leave holes (None) that are reported, not fatal.

    Returns (lattice dict index -> FieldGrid or None, holes list).
    """
    from .backlund import algebraic_transform_qwc, integrate_backlund
    from .sjcore import random_orthogonal

    k = len(extent)
    if order_axes is None:
        order_axes = tuple(range(k))
    n = fg_seed.n
    lattice = {tuple([0] * k): fg_seed}
    holes = []

    def integrate_step(prev_key, axis, step_index):
        prev = lattice[prev_key]
        base_rot = random_orthogonal(n, seed=seed + 977 * axis + step_index)
        run = integrate_backlund(prev, contexts[axis], base_rot)
        V1, lam1 = algebraic_transform_qwc(contexts[axis], prev.V, prev.lam,
                                           prev.R, run.R1)
        return df.FieldGrid(prev.grid, prev.kind, V1, lam1, run.R1,
                            {"lattice_step": (prev_key, axis)})

    # coordinate-ray chains
    for axis in range(k):
        for step in range(1, extent[axis]):
            key = [0] * k
            key[axis] = step
            prev = list(key)
            prev[axis] = step - 1
            lattice[tuple(key)] = integrate_step(tuple(prev), axis, step)

    def compose_cell(idx):
        axes_pairs = [(a, b) for a in order_axes for b in order_axes
                      if a != b and idx[a] >= 1 and idx[b] >= 1]
        for a, b in axes_pairs:
            t0 = list(idx)
            t0[a] -= 1
            t0[b] -= 1
            ta = list(idx)
            ta[b] -= 1
            tb = list(idx)
            tb[a] -= 1
            t0, ta, tb = tuple(t0), tuple(ta), tuple(tb)
            cells = [lattice.get(t) for t in (t0, ta, tb)]
            if any(c is None for c in cells):
                continue
            base, leg_a, leg_b = cells
            try:
                Rn = bpt_compose_field(base.R, leg_a.R, leg_b.R,
                                       contexts[a].D, contexts[b].D)
            except SingularSuperposition:
                continue
            V1, lam1 = algebraic_transform_qwc(contexts[b], leg_a.V,
                                               leg_a.lam, leg_a.R, Rn)
            return df.FieldGrid(base.grid, base.kind, V1, lam1, Rn,
                                {"lattice_cell": idx})
        return None

    for idx in sorted(product(*[range(e) for e in extent]),
                      key=lambda t: (sum(t), t)):
        if tuple(idx) in lattice:
            continue
        cell = compose_cell(tuple(idx))
        if cell is None:
            holes.append(tuple(idx))
        lattice[tuple(idx)] = cell
    return lattice, holes
