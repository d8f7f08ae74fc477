"""Exact upwind numerical fluxes for (possibly dissimilar) elastic materials.

The half-space Riemann problem across a face with unit normal n (pointing
from the minus side to the plus side) is solved by characteristic matching.
With the impedance matrices Z = rho * Gamma(n)^(1/2) of each side, waves
moving back into the minus side satisfy dt = +Z dv and waves moving into the
plus side satisfy dt = -Z dv (tractions taken w.r.t. n), so enforcing
continuity of interface velocity v* and traction t* gives

    (Z- + Z+) v* = Z- v- + Z+ v+ + t(U+) - t(U-),
    t* = t(U-) + Z- (v* - v-),

and the numerical flux is F^ = (-t*, -I_n v*).  Because everything is linear
in the traces, each flux is exposed both as a pointwise evaluation and as
precomputed matrices acting on the trace states, batched over face normals.

Velocity / traction / absorbing boundary conditions reuse the same algebra
with the exterior data pinning v* or t*, or with a silent exterior state.
"""

import numpy as np

from .physics import I1, I2, N_U, N_V

_EYE2 = np.eye(2)


class DegenerateImpedance(Exception):
    """Interface impedance system singular (non-hyperbolic material pairing)."""


def _as_batch(normals):
    normals = np.asarray(normals, dtype=float)
    single = normals.ndim == 1
    return normals.reshape(-1, 2), single


def _selection(normals):
    """Batched I_n, shape (N, 3, 2)."""
    return normals[:, 0, None, None] * I1 + normals[:, 1, None, None] * I2


def _sqrt_spd(G):
    """Principal square root of batched symmetric positive 2x2 matrices."""
    det = G[:, 0, 0] * G[:, 1, 1] - G[:, 0, 1] * G[:, 1, 0]
    s = np.sqrt(np.maximum(det, 0.0))
    tau = G[:, 0, 0] + G[:, 1, 1] + 2.0 * s
    if np.any(tau <= 0.0):
        raise DegenerateImpedance("acoustic tensor is not positive definite")
    return (G + s[:, None, None] * _EYE2) / np.sqrt(tau)[:, None, None]


def _inv2(A, context):
    det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
    scale = np.abs(A).max(axis=(1, 2))
    if np.any(np.abs(det) <= 1e-14 * np.maximum(scale, 1e-300) ** 2):
        raise DegenerateImpedance(f"singular {context} matrix")
    inv = np.empty_like(A)
    inv[:, 0, 0] = A[:, 1, 1]
    inv[:, 1, 1] = A[:, 0, 0]
    inv[:, 0, 1] = -A[:, 0, 1]
    inv[:, 1, 0] = -A[:, 1, 0]
    return inv / det[:, None, None]


def _impedance(mat, In):
    G = np.einsum("nji,jk,nkl->nil", In, mat.c, In) / mat.rho
    G = 0.5 * (G + np.transpose(G, (0, 2, 1)))
    return mat.rho * _sqrt_spd(G)


def upwind_matrices(mat_minus, mat_plus, normals):
    """Matrices (Pm, Pp) with F^ = Pm U- + Pp U+, batched over normals."""
    nn, single = _as_batch(normals)
    In = _selection(nn)
    Zm = _impedance(mat_minus, In)
    Zp = _impedance(mat_plus, In)
    Tm = np.einsum("nji,jk->nik", In, mat_minus.c)
    Tp = np.einsum("nji,jk->nik", In, mat_plus.c)
    K = _inv2(Zm + Zp, "interface impedance")

    ZmK = Zm @ K
    InK = In @ K
    Pm = np.zeros((len(nn), N_U, N_U))
    Pp = np.zeros_like(Pm)
    Pm[:, :N_V, :N_V] = -(ZmK @ Zm - Zm) / mat_minus.rho
    Pm[:, :N_V, N_V:] = (ZmK - _EYE2) @ Tm
    Pm[:, N_V:, :N_V] = -(InK @ Zm) / mat_minus.rho
    Pm[:, N_V:, N_V:] = InK @ Tm
    Pp[:, :N_V, :N_V] = -(ZmK @ Zp) / mat_plus.rho
    Pp[:, :N_V, N_V:] = -(ZmK @ Tp)
    Pp[:, N_V:, :N_V] = -(InK @ Zp) / mat_plus.rho
    Pp[:, N_V:, N_V:] = -(InK @ Tp)
    if single:
        return Pm[0], Pp[0]
    return Pm, Pp


def velocity_bc_matrices(mat, normals):
    """Matrices (P_U, P_v) with F^ = P_U U- + P_v vbar for a velocity boundary."""
    nn, single = _as_batch(normals)
    In = _selection(nn)
    Z = _impedance(mat, In)
    T = np.einsum("nji,jk->nik", In, mat.c)
    P_U = np.zeros((len(nn), N_U, N_U))
    P_v = np.zeros((len(nn), N_U, N_V))
    P_U[:, :N_V, :N_V] = Z / mat.rho
    P_U[:, :N_V, N_V:] = -T
    P_v[:, :N_V, :] = -Z
    P_v[:, N_V:, :] = -In
    if single:
        return P_U[0], P_v[0]
    return P_U, P_v


def traction_bc_matrices(mat, normals):
    """Matrices (P_U, P_t) with F^ = P_U U- + P_t tbar for a traction boundary."""
    nn, single = _as_batch(normals)
    In = _selection(nn)
    Z = _impedance(mat, In)
    Zinv = _inv2(Z, "boundary impedance")
    T = np.einsum("nji,jk->nik", In, mat.c)
    P_U = np.zeros((len(nn), N_U, N_U))
    P_t = np.zeros((len(nn), N_U, N_V))
    P_U[:, N_V:, :N_V] = -In / mat.rho
    P_U[:, N_V:, N_V:] = In @ Zinv @ T
    P_t[:, :N_V, :] = -_EYE2
    P_t[:, N_V:, :] = -(In @ Zinv)
    if single:
        return P_U[0], P_t[0]
    return P_U, P_t


def absorbing_matrices(mat, normals):
    """Matrix P with F^ = P U- for a non-reflecting boundary (silent exterior)."""
    Pm, _ = upwind_matrices(mat, mat, normals)
    return Pm


# ---------------------------------------------------------------------------
# Pointwise flux evaluations.
# ---------------------------------------------------------------------------

class NormalFluxContext:
    """Inputs of one interface Riemann solve."""

    def __init__(self, n, mat_minus, mat_plus, U_minus, U_plus):
        self.n = np.asarray(n, dtype=float)
        if abs(np.linalg.norm(self.n) - 1.0) > 1e-12:
            raise ValueError("face normal must be a unit vector")
        self.mat_minus = mat_minus
        self.mat_plus = mat_plus
        self.U_minus = np.asarray(U_minus, dtype=float)
        self.U_plus = np.asarray(U_plus, dtype=float)


def upwind_flux(ctx):
    """Exact upwind flux F^_n for one interface state pair."""
    Pm, Pp = upwind_matrices(ctx.mat_minus, ctx.mat_plus, ctx.n)
    return Pm @ ctx.U_minus + Pp @ ctx.U_plus


def boundary_flux_velocity(U_minus, v_bar, n, mat):
    """Flux realizing a prescribed boundary velocity."""
    P_U, P_v = velocity_bc_matrices(mat, n)
    return P_U @ np.asarray(U_minus, dtype=float) + P_v @ np.asarray(v_bar, dtype=float)


def boundary_flux_traction(U_minus, t_bar, n, mat):
    """Flux realizing a prescribed boundary traction (t_bar = 0 is free)."""
    P_U, P_t = traction_bc_matrices(mat, n)
    return P_U @ np.asarray(U_minus, dtype=float) + P_t @ np.asarray(t_bar, dtype=float)


def absorbing_flux(U_minus, n, mat):
    """Flux of a non-reflecting boundary: outgoing characteristics only."""
    return absorbing_matrices(mat, n) @ np.asarray(U_minus, dtype=float)


def interface_state(ctx):
    """The matched interface pair (v*, t*) w.r.t. the context normal."""
    flux = upwind_flux(ctx)
    t_star = -flux[:N_V]
    In = _selection(ctx.n.reshape(1, 2))[0]
    v_star = np.linalg.lstsq(In, -flux[N_V:], rcond=None)[0]
    return v_star, t_star
