"""Material models, the momentum-strain state, physical fluxes and plane waves.

State layout in 2D: U = (m1, m2, g11, g22, g12) with momentum m and Voigt
strain g (g12 is the engineering shear strain), so N_U = 5.  The first-order
system reads dU/dt + dF_i/dx_i = S with

    F_i = (-I_i^T c g, -rho^-1 I_i m),

where c is the Voigt stiffness and the I_i are the constant 3x2 selection
matrices below.
"""

import math

import numpy as np

N_V = 2
N_SIGMA = 3
N_U = N_V + N_SIGMA

I1 = np.array([[1.0, 0.0],
               [0.0, 0.0],
               [0.0, 1.0]])
I2 = np.array([[0.0, 0.0],
               [0.0, 1.0],
               [1.0, 0.0]])


class InvalidMaterial(Exception):
    """Material parameters outside the physically admissible range."""


class SingularWaveVector(Exception):
    """Plane-wave decomposition requested for kappa = 0."""


class Material:
    """Density and symmetric positive-definite Voigt stiffness."""

    def __init__(self, rho, stiffness, name=""):
        self.rho = float(rho)
        self.c = np.asarray(stiffness, dtype=float)
        self.name = name
        if self.rho <= 0.0:
            raise InvalidMaterial(f"density must be positive, got {rho}")
        if self.c.shape != (N_SIGMA, N_SIGMA):
            raise InvalidMaterial(f"stiffness must be 3x3, got {self.c.shape}")
        if not np.allclose(self.c, self.c.T, rtol=0.0, atol=1e-12 * np.abs(self.c).max()):
            raise InvalidMaterial("stiffness matrix must be symmetric")
        if np.any(np.linalg.eigvalsh(self.c) <= 0.0):
            raise InvalidMaterial("stiffness matrix must be positive definite")

    def __repr__(self):
        label = self.name or "material"
        return f"Material({label}, rho={self.rho})"

    @property
    def flux_matrices(self):
        """The pair (A1, A2) with F_i(U) = A_i U; each is N_U x N_U."""
        if not hasattr(self, "_flux_mats"):
            mats = []
            for Ii in (I1, I2):
                A = np.zeros((N_U, N_U))
                A[:N_V, N_V:] = -Ii.T @ self.c
                A[N_V:, :N_V] = -Ii / self.rho
                mats.append(A)
            self._flux_mats = tuple(mats)
        return self._flux_mats


def i_n(n):
    """Normal selection matrix I_n = n1*I1 + n2*I2 (3x2)."""
    return n[0] * I1 + n[1] * I2


def isotropic_stiffness(young, poisson):
    """Plane-strain Voigt stiffness from Young's modulus and Poisson's ratio."""
    if not (-1.0 < poisson < 0.5) or young <= 0.0:
        raise InvalidMaterial(
            f"need Y > 0 and -1 < nu < 0.5, got Y={young}, nu={poisson}")
    lam = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
    mu = young / (2.0 * (1.0 + poisson))
    return np.array([[lam + 2.0 * mu, lam, 0.0],
                     [lam, lam + 2.0 * mu, 0.0],
                     [0.0, 0.0, mu]])


def isotropic_from_speeds(rho, c_p, c_s):
    """Isotropic stiffness from P- and S-wave speeds."""
    if c_p <= 0 or c_s <= 0 or c_p <= c_s:
        raise InvalidMaterial(f"need c_p > c_s > 0, got {c_p}, {c_s}")
    mu = rho * c_s ** 2
    lam = rho * c_p ** 2 - 2.0 * mu
    return np.array([[lam + 2.0 * mu, lam, 0.0],
                     [lam, lam + 2.0 * mu, 0.0],
                     [0.0, 0.0, mu]])


def rotate_stiffness(c, theta):
    """Voigt stiffness in a frame rotated by ``theta`` (Bond transformation)."""
    co, si = math.cos(theta), math.sin(theta)
    # strain transforms with the engineering-shear Voigt convention
    M = np.array([
        [co * co, si * si, -2.0 * co * si],
        [si * si, co * co, 2.0 * co * si],
        [co * si, -co * si, co * co - si * si],
    ])
    return M @ np.asarray(c, dtype=float) @ M.T


def physical_flux(U, mat):
    """The flux pair (F1, F2) for one state or a batch of states."""
    A1, A2 = mat.flux_matrices
    U = np.asarray(U, dtype=float)
    return U @ A1.T, U @ A2.T


def traction(U, mat, n):
    """Traction t = I_n^T c gamma for a state batch w.r.t. unit normal n."""
    U = np.asarray(U, dtype=float)
    return U[..., N_V:] @ (i_n(n).T @ mat.c).T


def traction_batch(U, mat, normals):
    """Per-node traction with per-node normals: U (N, N_U), normals (N, 2)."""
    U = np.asarray(U, dtype=float)
    normals = np.asarray(normals, dtype=float)
    stress = U[:, N_V:] @ mat.c.T
    In = normals[:, 0, None, None] * I1 + normals[:, 1, None, None] * I2
    return np.einsum("nji,nj->ni", In, stress)


def velocity(U, mat):
    return np.asarray(U, dtype=float)[..., :N_V] / mat.rho


def gamma_matrix(n, mat):
    """Acoustic tensor Gamma(n) = rho^-1 I_n^T c I_n (symmetric PSD, 2x2)."""
    In = i_n(np.asarray(n, dtype=float))
    G = In.T @ mat.c @ In / mat.rho
    return 0.5 * (G + G.T)


def _eig2x2_sym(G):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric 2x2."""
    a, b, c = G[0, 0], G[0, 1], G[1, 1]
    half_tr = 0.5 * (a + c)
    disc = math.hypot(0.5 * (a - c), b)
    lam = np.array([half_tr - disc, half_tr + disc])
    if disc <= 1e-14 * max(abs(half_tr), 1.0):
        vec = np.eye(2)
    else:
        v1 = np.array([b, lam[0] - a])
        if np.linalg.norm(v1) < 1e-14 * max(abs(a), abs(c), abs(b), 1e-300):
            v1 = np.array([lam[0] - c, b])
        v1 = v1 / np.linalg.norm(v1)
        vec = np.column_stack([v1, np.array([-v1[1], v1[0]])])
    return lam, vec


def wave_speeds(n, mat):
    """Speeds and orthonormal polarizations in direction n (ascending speed)."""
    lam, vec = _eig2x2_sym(gamma_matrix(n, mat))
    lam = np.maximum(lam, 0.0)
    return np.sqrt(lam), vec


def max_wave_speed(mat, n_angles=720):
    """Largest wave speed over all propagation directions.

    Dense angular sampling followed by golden-section polishing around the
    best sample.
    """
    def speed2(theta):
        n = (math.cos(theta), math.sin(theta))
        G = gamma_matrix(n, mat)
        half_tr = 0.5 * (G[0, 0] + G[1, 1])
        disc = math.hypot(0.5 * (G[0, 0] - G[1, 1]), G[0, 1])
        return half_tr + disc

    thetas = np.linspace(0.0, 2.0 * math.pi, n_angles, endpoint=False)
    vals = [speed2(t) for t in thetas]
    best = int(np.argmax(vals))
    step = 2.0 * math.pi / n_angles

    lo, hi = thetas[best] - step, thetas[best] + step
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, f2 = speed2(x1), speed2(x2)
    for _ in range(60):
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = speed2(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = speed2(x1)
    return math.sqrt(max(vals[best], f1, f2))


class PlaneWaveMode:
    """One eigenmode (omega, U_tilde) of the plane-wave ansatz."""

    def __init__(self, omega, shape):
        self.omega = float(omega)
        self.shape = np.asarray(shape, dtype=float)

    def __repr__(self):
        return f"PlaneWaveMode(omega={self.omega:.6g})"


def mode_matrix(kappa, mat):
    """Operator M with M u = omega u for plane-wave modes U~ sin(omega t - k.x).

    Substituting the ansatz into the homogeneous system gives
    I_k^T c g = -omega m and rho^-1 I_k m = -omega g, i.e. the negative of
    the naive flux-block matrix.
    """
    Ik = i_n(np.asarray(kappa, dtype=float))
    M = np.zeros((N_U, N_U))
    M[:N_V, N_V:] = -Ik.T @ mat.c
    M[N_V:, :N_V] = -Ik / mat.rho
    return M


def plane_wave_modes(kappa, mat):
    """All N_U plane-wave eigenmodes for wave vector kappa.

    Returns two pairs with omega = +/- |kappa|-scaled speeds from the
    acoustic tensor, with strain parts gamma~ = -omega^-1 rho^-1 I_k m~, plus
    one zero-frequency mode spanning the null space of I_k^T c.  Every mode
    shape has unit Euclidean norm, and U~ sin(omega t - kappa.x) satisfies
    the homogeneous governing equations exactly.
    """
    kappa = np.asarray(kappa, dtype=float)
    if np.linalg.norm(kappa) == 0.0:
        raise SingularWaveVector("plane-wave modes need a nonzero wave vector")
    Ik = i_n(kappa)
    G = Ik.T @ mat.c @ Ik / mat.rho
    lam, vec = _eig2x2_sym(0.5 * (G + G.T))
    modes = []
    for j in range(N_V):
        omega = math.sqrt(max(lam[j], 0.0))
        m = vec[:, j]
        for sign in (+1.0, -1.0):
            w = sign * omega
            g = -(Ik @ m) / (mat.rho * w)
            shape = np.concatenate([m, g])
            shape = shape / np.linalg.norm(shape)
            modes.append(PlaneWaveMode(w, shape))
    # zero mode: strain in the null space of I_k^T c, zero momentum
    _, _, vt = np.linalg.svd(Ik.T @ mat.c)
    null = vt[-1]
    shape = np.concatenate([np.zeros(N_V), null / np.linalg.norm(null)])
    modes.append(PlaneWaveMode(0.0, shape))
    modes.sort(key=lambda md: md.omega)
    return modes


def exact_solution(t, points, modes, kappa):
    """Superposition of plane waves: U(t, x) = sum_v U~_v sin(omega_v t - k.x).

    ``points`` has shape (..., 2); the result has shape (..., N_U).
    """
    kappa = np.asarray(kappa, dtype=float)
    points = np.asarray(points, dtype=float)
    phase = kappa[0] * points[..., 0] + kappa[1] * points[..., 1]
    U = np.zeros(points.shape[:-1] + (N_U,))
    for mode in modes:
        U = U + np.sin(mode.omega * t - phase)[..., None] * mode.shape
    return U


def omega_max(modes):
    return max(abs(m.omega) for m in modes)


# ---------------------------------------------------------------------------
# Named material presets (the 2D materials of the benchmark problems).
# ---------------------------------------------------------------------------

def material_library():
    lib = {}
    lib["isotropic_unit"] = Material(1.0, isotropic_stiffness(1.0, 0.3),
                                     name="isotropic_unit")
    lib["copper"] = Material(8.92, np.array([[168.0, 121.0, 0.0],
                                             [121.0, 168.0, 0.0],
                                             [0.0, 0.0, 75.0]]), name="copper")
    lib["aniso2d"] = Material(1.6, np.array([[0.5637, 0.2963, 0.3158],
                                             [0.2963, 0.5637, 0.3158],
                                             [0.3158, 0.3158, 0.3111]]),
                              name="aniso2d")
    lib["lamb"] = Material(2200.0, isotropic_from_speeds(2200.0, 3200.0, 1847.5),
                           name="lamb")
    theta = math.radians(10.0)
    c_alpha = np.array([[165.0, 50.0, 0.0],
                        [50.0, 62.0, 0.0],
                        [0.0, 0.0, 39.6]]) * 1e9
    c_beta = np.array([[165.0, 85.8, 0.0],
                       [85.8, 165.0, 0.0],
                       [0.0, 0.0, 39.6]]) * 1e9
    lib["interface_alpha"] = Material(7100.0, rotate_stiffness(c_alpha, theta),
                                      name="interface_alpha")
    lib["interface_beta"] = Material(7100.0, rotate_stiffness(c_beta, theta),
                                     name="interface_beta")
    lib["struct2d"] = Material(1.0, isotropic_from_speeds(1.0, 1.0, 0.56),
                               name="struct2d")
    return lib
