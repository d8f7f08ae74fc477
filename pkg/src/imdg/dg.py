"""Discontinuous Galerkin discretization: basis, mass, residual, diagnostics.

Each element carries tensor-product Legendre polynomials orthonormal on its
primary-cell box; merged small cells evaluate the primary cell's polynomials
by plain polynomial extension.  Solution coefficients are stored per element
as an (N_U, N_p) block in component-major order.

The ``Assembler`` precomputes basis traces and constant flux matrices for
every face at setup so that one residual evaluation is a handful of batched
einsum contractions plus segment-scatters for the irregular (cut / merged)
parts of the mesh.
"""

import math

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import riemann
from .geometry import NEG, POS
from .mesh import COARSE_FINE, EMBEDDED, INTERFACE, INTRAPHASE, OUTER
from .physics import N_U, N_V, exact_solution
from .quadrature import tensor_volume_rule

VELOCITY_BC = "velocity"
TRACTION_BC = "traction"
ABSORBING_BC = "absorbing"


class SingularMass(Exception):
    """Element mass matrix not positive definite (under-resolved quadrature)."""


class SourceOutsideDomain(Exception):
    """Point source located outside the requested phase."""


def legendre_table(xi, p):
    """Values and derivatives of P_0..P_p at points xi (any real xi)."""
    xi = np.asarray(xi, dtype=float)
    vals = np.empty((p + 1,) + xi.shape)
    ders = np.empty_like(vals)
    vals[0] = 1.0
    ders[0] = 0.0
    if p >= 1:
        vals[1] = xi
        ders[1] = 1.0
    for k in range(1, p):
        vals[k + 1] = ((2 * k + 1) * xi * vals[k] - k * vals[k - 1]) / (k + 1)
        ders[k + 1] = ders[k - 1] + (2 * k + 1) * vals[k]
    return vals, ders


class Basis:
    """Tensor-product Legendre basis, orthonormal on an h1 x h2 box.

    Functions are indexed k = k2*(p+1) + k1 and are evaluated at coordinates
    relative to the box lower corner; evaluation is valid outside the box as
    well (merged cells use the primary cell's polynomials).
    """

    def __init__(self, p, h1, h2):
        self.p = int(p)
        self.h1 = float(h1)
        self.h2 = float(h2)
        self.n_p = (self.p + 1) ** 2
        k = np.arange(self.p + 1)
        self._s1 = np.sqrt((2 * k + 1) / self.h1)
        self._s2 = np.sqrt((2 * k + 1) / self.h2)

    def _tables(self, rel):
        rel = np.asarray(rel, dtype=float).reshape(-1, 2)
        xi1 = 2.0 * rel[:, 0] / self.h1 - 1.0
        xi2 = 2.0 * rel[:, 1] / self.h2 - 1.0
        v1, d1 = legendre_table(xi1, self.p)
        v2, d2 = legendre_table(xi2, self.p)
        return (v1 * self._s1[:, None], d1 * self._s1[:, None] * (2.0 / self.h1),
                v2 * self._s2[:, None], d2 * self._s2[:, None] * (2.0 / self.h2))

    def eval(self, rel):
        """Basis values at relative points, shape (N, n_p)."""
        v1, _, v2, _ = self._tables(rel)
        out = v2[:, None, :] * v1[None, :, :]          # (p+1, p+1, N)
        return out.reshape(self.n_p, -1).T

    def eval_grad(self, rel):
        """Basis x1- and x2-derivatives at relative points, two (N, n_p) arrays."""
        v1, d1, v2, d2 = self._tables(rel)
        g1 = v2[:, None, :] * d1[None, :, :]
        g2 = d2[:, None, :] * v1[None, :, :]
        return g1.reshape(self.n_p, -1).T, g2.reshape(self.n_p, -1).T


def basis_eval(basis, box_lo, points):
    """Values and gradients of all basis functions at absolute points."""
    rel = np.asarray(points, dtype=float).reshape(-1, 2) - np.asarray(box_lo)
    vals = basis.eval(rel)
    g1, g2 = basis.eval_grad(rel)
    return vals, g1, g2


def mass_matrix(rule, basis, box_lo):
    """Element mass block int B^T B dV over the element's volume rule."""
    vals, _, _ = basis_eval(basis, box_lo, rule.nodes)
    return vals.T @ (rule.weights[:, None] * vals)


def ricker(t, a1, f_c, t0):
    """Ricker wavelet a1*(1/2 + a2*(t-t0)^2)*exp(a2*(t-t0)^2), a2 = -pi^2 f_c^2."""
    a2 = -(math.pi * f_c) ** 2
    s = a2 * (np.asarray(t, dtype=float) - t0) ** 2
    return a1 * (0.5 + s) * np.exp(s)


class PointSource:
    """Concentrated force R(t) * delta(x - s) * u_hat acting on one phase."""

    def __init__(self, position, direction, wavelet, phase=NEG):
        self.position = np.asarray(position, dtype=float)
        u = np.asarray(direction, dtype=float)
        self.direction = u / np.linalg.norm(u)
        self.wavelet = wavelet
        self.phase = phase


def point_source_term(source, mesh, basis, out, amplitude=1.0):
    """Add amplitude * B^T(s) u_hat to the momentum block of the owner element.

    ``out`` is the per-element residual array (E, N_U, n_p), modified in place.
    """
    s = source.position
    i = int((s[0] - mesh.rect.lo[0]) / mesh.h1)
    j = int((s[1] - mesh.rect.lo[1]) / mesh.h2)
    i = min(max(i, 0), mesh.n1 - 1)
    j = min(max(j, 0), mesh.n2 - 1)
    eid = mesh.owner.get((source.phase, (i, j)))
    if eid is None:
        raise SourceOutsideDomain(
            f"source at {tuple(s)} lies in no element of phase {source.phase}")
    elem = mesh.elements[eid]
    row = basis.eval((s - elem.box_lo).reshape(1, 2))[0]
    out[eid, :N_V, :] += amplitude * source.direction[:, None] * row[None, :]
    return eid


class _ScatterPlan:
    """Segment-sum plan: adds per-node contributions into per-element slots."""

    def __init__(self, elem_ids):
        elem_ids = np.asarray(elem_ids, dtype=int)
        self.perm = np.argsort(elem_ids, kind="stable")
        sorted_ids = elem_ids[self.perm]
        if len(sorted_ids) == 0:
            self.starts = np.zeros(0, dtype=int)
            self.targets = np.zeros(0, dtype=int)
        else:
            starts = np.nonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])[0]
            self.starts = starts
            self.targets = sorted_ids[starts]

    def add(self, out, contrib, sign):
        if len(self.perm) == 0:
            return
        seg = np.add.reduceat(contrib[self.perm], self.starts, axis=0)
        out[self.targets] += sign * seg


def _stack_rows(rows, width):
    if rows:
        return np.vstack(rows)
    return np.zeros((0, width))


class Assembler:
    """Semidiscrete residual evaluator bound to one mesh and one BC table.

    bc_table maps boundary tags ('left', 'right', 'bottom', 'top',
    'embedded') to (kind, data) pairs where kind is one of 'velocity',
    'traction', 'absorbing' and data(t, pts, normals) -> (N, 2) values for
    the first two kinds.

    ghost_fn(t, nodes, ghost_cells, ghost_offsets, phase) supplies exterior
    trace states for coarse-fine faces (AMR); plain meshes have none.
    """

    def __init__(self, mesh, p, materials, bc_table=None, sources=(),
                 ghost_fn=None):
        self.mesh = mesh
        self.p = int(p)
        self.materials = dict(materials)
        self.bc_table = dict(bc_table or {})
        self.sources = list(sources)
        self.ghost_fn = ghost_fn
        self.basis = Basis(p, mesh.h1, mesh.h2)
        self.n_p = self.basis.n_p
        self.n_elements = len(mesh.elements)
        self._setup_volume()
        self._setup_mass()
        self._setup_faces()
        self._setup_sources()

    # -- setup ------------------------------------------------------------

    def _setup_volume(self):
        mesh, basis = self.mesh, self.basis
        q = mesh.q
        ref_cell = mesh.cell(0, 0)
        rule = tensor_volume_rule(ref_cell, q)
        rel = rule.nodes - np.array(ref_cell.lo)
        self.ref_rel = rel
        self.ref_w = rule.weights
        self.ref_B = basis.eval(rel)
        self.ref_dB1, self.ref_dB2 = basis.eval_grad(rel)

        self.regular = {ph: [] for ph in mesh.phases}
        irregular = []
        for e, elem in enumerate(mesh.elements):
            if elem.is_regular:
                self.regular[elem.phase].append(e)
            else:
                irregular.append(e)
        self.regular = {ph: np.asarray(ids, dtype=int)
                        for ph, ids in self.regular.items()}
        self.irregular = np.asarray(irregular, dtype=int)

        nodes_rel, w, eids = [], [], []
        abs_nodes = []
        for e in irregular:
            elem = mesh.elements[e]
            # the elevated-order rule keeps mass and flux-divergence integrals
            # of thin cut elements consistent and near-exact (stability)
            rule = mesh.refined_rule(e)
            nodes_rel.append(rule.nodes - elem.box_lo)
            abs_nodes.append(rule.nodes)
            w.append(rule.weights)
            eids.extend([e] * len(rule))
        self.irr_nodes = _stack_rows(abs_nodes, 2)
        rel_all = _stack_rows(nodes_rel, 2)
        self.irr_w = np.concatenate(w) if w else np.zeros(0)
        self.irr_B = basis.eval(rel_all)
        self.irr_dB1, self.irr_dB2 = basis.eval_grad(rel_all)
        self.irr_eids = np.asarray(eids, dtype=int)
        self.irr_plan = _ScatterPlan(self.irr_eids)
        # the volume flux term is linear in the coefficients, so the node
        # sums collapse into per-element stiffness operators at setup
        n_irr = len(irregular)
        self.irr_S1T = np.zeros((n_irr, self.n_p, self.n_p))
        self.irr_S2T = np.zeros((n_irr, self.n_p, self.n_p))
        self.irr_A1el = np.zeros((n_irr, N_U, N_U))
        self.irr_A2el = np.zeros((n_irr, N_U, N_U))
        pos = 0
        for k, e in enumerate(irregular):
            m = len(mesh.refined_rule(e))
            sl = slice(pos, pos + m)
            wB = self.irr_w[sl, None] * self.irr_B[sl]
            self.irr_S1T[k] = (self.irr_dB1[sl].T @ wB).T
            self.irr_S2T[k] = (self.irr_dB2[sl].T @ wB).T
            a1, a2 = self.materials[mesh.elements[e].phase].flux_matrices
            self.irr_A1el[k] = a1
            self.irr_A2el[k] = a2
            pos += m

    def _setup_mass(self):
        """Mass inverses of the irregular elements from the refined rule.

        Using the same elevated-order rule for the mass, the volume flux term
        and the projection right-hand side keeps the cut-cell semidiscrete
        system quadrature-consistent; in particular L2 projection reproduces
        any degree-p polynomial exactly.
        """
        mesh, basis = self.mesh, self.basis
        minv, chol, masses = [], [], []
        for e in self.irregular:
            elem = mesh.elements[e]
            M = mass_matrix(mesh.refined_rule(e), basis, elem.box_lo)
            try:
                factor = cho_factor(M, lower=True)
            except np.linalg.LinAlgError as exc:
                raise SingularMass(
                    f"element {e} (primary {elem.primary}) mass not SPD") from exc
            chol.append(factor)
            minv.append(cho_solve(factor, np.eye(self.n_p)))
            masses.append(M)
        self.irr_minv = (np.stack(minv) if minv
                         else np.zeros((0, self.n_p, self.n_p)))
        self.irr_chol = chol
        self.irr_mass = (np.stack(masses) if masses
                         else np.zeros((0, self.n_p, self.n_p)))
        self.transfer_minv = self.irr_minv

        self._energy_Q = {}
        for ph, mat in self.materials.items():
            Q = np.zeros((N_U, N_U))
            Q[:N_V, :N_V] = np.eye(N_V) / mat.rho
            Q[N_V:, N_V:] = mat.c
            self._energy_Q[ph] = Q

    def _face_traces(self, face):
        mesh = self.mesh
        elem_m = mesh.elements[face.minus]
        Bm = self.basis.eval(face.nodes - elem_m.box_lo)
        Bp = None
        if face.plus is not None:
            elem_p = mesh.elements[face.plus]
            Bp = self.basis.eval(face.nodes + face.offset - elem_p.box_lo)
        return Bm, Bp

    def _setup_faces(self):
        mesh = self.mesh
        q = mesh.q
        h1, h2 = mesh.h1, mesh.h2
        from .quadrature import _gauss_on
        gx, gw = _gauss_on(0.0, h2, q)
        ref_x = {"nodes_m": np.column_stack([np.full(q, h1), gx]),
                 "nodes_p": np.column_stack([np.zeros(q), gx]), "w": gw}
        gy, gwy = _gauss_on(0.0, h1, q)
        ref_y = {"nodes_m": np.column_stack([gy, np.full(q, h2)]),
                 "nodes_p": np.column_stack([gy, np.zeros(q)]), "w": gwy}
        self.bulk_B = {}
        for axis, ref in ((0, ref_x), (1, ref_y)):
            self.bulk_B[axis] = (self.basis.eval(ref["nodes_m"]),
                                 self.basis.eval(ref["nodes_p"]),
                                 ref["w"].copy())

        def is_bulk_interior(face, axis):
            if face.kind != INTRAPHASE or len(face) != q:
                return False
            elem_m = mesh.elements[face.minus]
            elem_p = mesh.elements[face.plus]
            rel_m = face.nodes - elem_m.box_lo
            rel_p = face.nodes + face.offset - elem_p.box_lo
            ref = (ref_x, ref_y)[axis]
            return (np.abs(rel_m - ref["nodes_m"]).max() < 1e-9 * (h1 + h2)
                    and np.abs(rel_p - ref["nodes_p"]).max() < 1e-9 * (h1 + h2))

        def face_axis(face):
            n = face.normals[0]
            return 0 if abs(n[0]) > abs(n[1]) else 1

        bulk = {(axis, ph): {"minus": [], "plus": []}
                for axis in (0, 1) for ph in mesh.phases}
        irr_interior = []
        boundary = {}
        cf = []
        for face in mesh.faces:
            if face.kind in (INTRAPHASE, INTERFACE):
                axis = face_axis(face)
                ph = mesh.elements[face.minus].phase
                if (face.kind == INTRAPHASE and face.normals[0][axis] > 0
                        and is_bulk_interior(face, axis)):
                    bulk[(axis, ph)]["minus"].append(face.minus)
                    bulk[(axis, ph)]["plus"].append(face.plus)
                else:
                    irr_interior.append(face)
            elif face.kind in (OUTER, EMBEDDED):
                boundary.setdefault(face.btag, []).append(face)
            elif face.kind == COARSE_FINE:
                cf.append(face)
            else:
                raise ValueError(f"unknown face kind {face.kind}")

        self.bulk_groups = []
        for (axis, ph), ids in bulk.items():
            if not ids["minus"]:
                continue
            n = np.zeros(2)
            n[axis] = 1.0
            mat = self.materials[ph]
            Pm, Pp = riemann.upwind_matrices(mat, mat, n)
            self.bulk_groups.append({
                "axis": axis,
                "minus": np.asarray(ids["minus"], dtype=int),
                "plus": np.asarray(ids["plus"], dtype=int),
                "Pm": Pm, "Pp": Pp,
            })

        # irregular interior / interface faces: per-node flat arrays
        rows_m, rows_p, w_all, mi, pi = [], [], [], [], []
        Pm_all, Pp_all = [], []
        for face in irr_interior:
            Bm, Bp = self._face_traces(face)
            mat_m = self.materials[mesh.elements[face.minus].phase]
            mat_p = self.materials[mesh.elements[face.plus].phase]
            Pm, Pp = riemann.upwind_matrices(mat_m, mat_p, face.normals)
            rows_m.append(Bm)
            rows_p.append(Bp)
            w_all.append(face.weights)
            mi.extend([face.minus] * len(face))
            pi.extend([face.plus] * len(face))
            Pm_all.append(Pm.reshape(-1, N_U, N_U))
            Pp_all.append(Pp.reshape(-1, N_U, N_U))
        self.iface = {
            "Bm": _stack_rows(rows_m, self.n_p),
            "Bp": _stack_rows(rows_p, self.n_p),
            "w": np.concatenate(w_all) if w_all else np.zeros(0),
            "minus": np.asarray(mi, dtype=int),
            "plus": np.asarray(pi, dtype=int),
            "Pm": (np.vstack(Pm_all) if Pm_all else np.zeros((0, N_U, N_U))),
            "Pp": (np.vstack(Pp_all) if Pp_all else np.zeros((0, N_U, N_U))),
        }
        self.iface["plan_m"] = _ScatterPlan(self.iface["minus"])
        self.iface["plan_p"] = _ScatterPlan(self.iface["plus"])

        # boundary faces: one per-node batch per tag
        self.bc_batches = []
        for tag in sorted(boundary):
            if tag not in self.bc_table:
                raise KeyError(f"mesh has boundary tag {tag!r} with no BC entry")
            kind = self.bc_table[tag][0]
            rows, w_all, ids, nrm, pts = [], [], [], [], []
            P_U_all, P_D_all = [], []
            for face in boundary[tag]:
                Bm, _ = self._face_traces(face)
                mat = self.materials[mesh.elements[face.minus].phase]
                if kind == VELOCITY_BC:
                    P_U, P_D = riemann.velocity_bc_matrices(mat, face.normals)
                elif kind == TRACTION_BC:
                    P_U, P_D = riemann.traction_bc_matrices(mat, face.normals)
                elif kind == ABSORBING_BC:
                    P_U = riemann.absorbing_matrices(mat, face.normals)
                    P_D = np.zeros((len(face), N_U, N_V))
                else:
                    raise ValueError(f"unknown BC kind {kind!r} for tag {tag!r}")
                rows.append(Bm)
                w_all.append(face.weights)
                ids.extend([face.minus] * len(face))
                nrm.append(face.normals)
                pts.append(face.nodes)
                P_U_all.append(P_U.reshape(-1, N_U, N_U))
                P_D_all.append(P_D.reshape(-1, N_U, N_V))
            batch = {
                "tag": tag, "kind": kind,
                "B": _stack_rows(rows, self.n_p),
                "w": np.concatenate(w_all) if w_all else np.zeros(0),
                "ids": np.asarray(ids, dtype=int),
                "normals": _stack_rows(nrm, 2),
                "nodes": _stack_rows(pts, 2),
                "P_U": (np.vstack(P_U_all) if P_U_all else np.zeros((0, N_U, N_U))),
                "P_D": (np.vstack(P_D_all) if P_D_all else np.zeros((0, N_U, N_V))),
            }
            batch["plan"] = _ScatterPlan(batch["ids"])
            self.bc_batches.append(batch)

        # coarse-fine faces (AMR): exterior state supplied by ghost_fn
        rows, w_all, ids, nrm, pts, ghosts, goffs, phases = ([], [], [], [], [],
                                                             [], [], [])
        Pm_all, Pp_all = [], []
        for face in cf:
            Bm, _ = self._face_traces(face)
            ph = mesh.elements[face.minus].phase
            mat = self.materials[ph]
            Pm, Pp = riemann.upwind_matrices(mat, mat, face.normals)
            rows.append(Bm)
            w_all.append(face.weights)
            ids.extend([face.minus] * len(face))
            nrm.append(face.normals)
            pts.append(face.nodes)
            ghosts.extend([face.ghost_cell] * len(face))
            goffs.append(np.tile(face.ghost_offset, (len(face), 1)))
            phases.extend([ph] * len(face))
            Pm_all.append(Pm.reshape(-1, N_U, N_U))
            Pp_all.append(Pp.reshape(-1, N_U, N_U))
        self.cf = {
            "B": _stack_rows(rows, self.n_p),
            "w": np.concatenate(w_all) if w_all else np.zeros(0),
            "ids": np.asarray(ids, dtype=int),
            "nodes": _stack_rows(pts, 2),
            "ghost_cells": ghosts,
            "ghost_offsets": _stack_rows(goffs, 2),
            "phases": phases,
            "Pm": (np.vstack(Pm_all) if Pm_all else np.zeros((0, N_U, N_U))),
            "Pp": (np.vstack(Pp_all) if Pp_all else np.zeros((0, N_U, N_U))),
        }
        self.cf["plan"] = _ScatterPlan(self.cf["ids"])
        if len(self.cf["ids"]) and self.ghost_fn is None:
            raise ValueError("mesh has coarse-fine faces but no ghost_fn given")

    def _setup_sources(self):
        self._source_rows = []
        for src in self.sources:
            out = np.zeros((self.n_elements, N_U, self.n_p))
            eid = point_source_term(src, self.mesh, self.basis, out)
            self._source_rows.append((src, eid, out[eid, :N_V, :].copy()))

    # -- evaluation --------------------------------------------------------

    def zero_coefficients(self):
        return np.zeros((self.n_elements, N_U, self.n_p))

    def trace(self, X, B, eids):
        """Solution values at face/volume nodes: (N, N_U)."""
        return (X[eids] @ B[:, :, None])[:, :, 0]

    def residual(self, t, X):
        """The weak-form right-hand side A(t, X) per element (E, N_U, n_p)."""
        mesh = self.mesh
        R = np.zeros_like(X)

        # volume terms, regular elements (shared reference rule)
        for ph, ids in self.regular.items():
            if len(ids) == 0:
                continue
            A1, A2 = self.materials[ph].flux_matrices
            U = X[ids] @ self.ref_B.T                      # (E, N_U, nq)
            F1 = np.matmul(A1, U)
            F2 = np.matmul(A2, U)
            wdB1 = self.ref_w[:, None] * self.ref_dB1
            wdB2 = self.ref_w[:, None] * self.ref_dB2
            R[ids] += F1 @ wdB1 + F2 @ wdB2

        # volume terms, irregular elements (precomputed stiffness operators)
        if len(self.irregular):
            Xi = X[self.irregular]
            R[self.irregular] += (np.matmul(np.matmul(self.irr_A1el, Xi),
                                            self.irr_S1T)
                                  + np.matmul(np.matmul(self.irr_A2el, Xi),
                                              self.irr_S2T))

        # bulk interior faces
        for group in self.bulk_groups:
            Bm, Bp, w = self.bulk_B[group["axis"]]
            Um = X[group["minus"]] @ Bm.T                  # (F, N_U, q)
            Up = X[group["plus"]] @ Bp.T
            F = np.matmul(group["Pm"], Um) + np.matmul(group["Pp"], Up)
            contrib_m = F @ (w[:, None] * Bm)
            contrib_p = F @ (w[:, None] * Bp)
            # minus/plus ids are distinct within a group (one full edge per
            # element and side), so plain fancy-index updates are safe
            R[group["minus"]] -= contrib_m
            R[group["plus"]] += contrib_p

        # irregular interior / interface faces
        if len(self.iface["minus"]):
            fi = self.iface
            Um = self.trace(X, fi["Bm"], fi["minus"])
            Up = self.trace(X, fi["Bp"], fi["plus"])
            F = ((fi["Pm"] @ Um[:, :, None])[:, :, 0]
                 + (fi["Pp"] @ Up[:, :, None])[:, :, 0])
            wF = fi["w"][:, None] * F
            fi["plan_m"].add(R, wF[:, :, None] * fi["Bm"][:, None, :], -1.0)
            fi["plan_p"].add(R, wF[:, :, None] * fi["Bp"][:, None, :], +1.0)

        # boundary faces
        for batch in self.bc_batches:
            if len(batch["ids"]) == 0:
                continue
            Um = self.trace(X, batch["B"], batch["ids"])
            F = (batch["P_U"] @ Um[:, :, None])[:, :, 0]
            if batch["kind"] in (VELOCITY_BC, TRACTION_BC):
                data = self.bc_table[batch["tag"]][1]
                vals = data(t, batch["nodes"], batch["normals"])
                F = F + (batch["P_D"] @ vals[:, :, None])[:, :, 0]
            wF = batch["w"][:, None] * F
            batch["plan"].add(R, wF[:, :, None] * batch["B"][:, None, :], -1.0)

        # coarse-fine faces
        if len(self.cf["ids"]):
            cf = self.cf
            Um = self.trace(X, cf["B"], cf["ids"])
            Up = self.ghost_fn(t, cf["nodes"], cf["ghost_cells"],
                               cf["ghost_offsets"], cf["phases"])
            F = ((cf["Pm"] @ Um[:, :, None])[:, :, 0]
                 + (cf["Pp"] @ Up[:, :, None])[:, :, 0])
            wF = cf["w"][:, None] * F
            cf["plan"].add(R, wF[:, :, None] * cf["B"][:, None, :], -1.0)

        # point sources
        for src, eid, row in self._source_rows:
            R[eid, :N_V, :] += float(src.wavelet(t)) * row
        return R

    def apply_mass_inverse(self, R):
        """M^-1 R; regular elements have identity mass."""
        out = R.copy()
        if len(self.irregular):
            out[self.irregular] = np.einsum(
                "eij,ecj->eci", self.irr_minv, R[self.irregular], optimize=True)
        return out

    def rhs(self, t, X):
        return self.apply_mass_inverse(self.residual(t, X))

    # -- projections and functionals ----------------------------------------

    def project(self, field):
        """L2 projection of field(points (N, 2)) -> (N, N_U) onto all elements."""
        X = self.zero_coefficients()
        for ph, ids in self.regular.items():
            if len(ids) == 0:
                continue
            boxes = np.array([self.mesh.elements[e].box_lo for e in ids])
            pts = boxes[:, None, :] + self.ref_rel[None, :, :]
            vals = field(pts.reshape(-1, 2)).reshape(len(ids), -1, N_U)
            X[ids] = np.einsum("n,nk,enc->eck", self.ref_w, self.ref_B, vals,
                               optimize=True)
        if len(self.irr_eids):
            vals = field(self.irr_nodes)
            contrib = (self.irr_w[:, None, None] * vals[:, :, None]
                       * self.irr_B[:, None, :])
            tmp = np.zeros_like(X)
            self.irr_plan.add(tmp, contrib, +1.0)
            X[self.irregular] = np.einsum(
                "eij,ecj->eci", self.transfer_minv, tmp[self.irregular],
                optimize=True)
        return X

    def element_energies(self, X):
        """Per-element energy 1/2 int (rho^-1 m.m + g.c.g) dV.

        Evaluated exactly through the element mass matrices: the energy is
        1/2 sum_cd Q[c,d] (X M X^T)[c,d] with Q the material quadratic form.
        """
        E = np.zeros(self.n_elements)
        for ph, ids in self.regular.items():
            if len(ids) == 0:
                continue
            Q = self._energy_Q[ph]
            P = np.matmul(X[ids], X[ids].transpose(0, 2, 1))
            E[ids] = 0.5 * np.einsum("cd,ecd->e", Q, P)
        if len(self.irregular):
            Xi = X[self.irregular]
            P = np.matmul(np.matmul(Xi, self.irr_mass), Xi.transpose(0, 2, 1))
            Q = np.stack([self._energy_Q[self.mesh.elements[e].phase]
                          for e in self.irregular])
            E[self.irregular] = 0.5 * np.einsum("ecd,ecd->e", Q, P)
        return E

    def energy(self, X):
        """Total energy and per-phase energies."""
        E = self.element_energies(X)
        per_phase = {ph: float(sum(E[e] for e in self.mesh.elements_of(ph)))
                     for ph in self.mesh.phases}
        return float(E.sum()), per_phase

    def error_measures(self, X, exact_fn, t):
        """(e_Linf, e_L2): max-norm at quadrature points and energy-norm errors."""
        sup_err = 0.0
        sup_exact = 0.0
        err_energy = 0.0
        exact_energy = 0.0

        def accumulate(U, Uex, w, phases_mask):
            nonlocal sup_err, sup_exact, err_energy, exact_energy
            diff = U - Uex
            sup_err = max(sup_err, float(np.abs(diff).max(initial=0.0)))
            sup_exact = max(sup_exact, float(np.abs(Uex).max(initial=0.0)))
            for ph, mask in phases_mask:
                mat = self.materials[ph]
                for field, acc in ((diff[mask], "err"), (Uex[mask], "exact")):
                    dens = (np.einsum("nc,nc->n", field[:, :N_V], field[:, :N_V])
                            / mat.rho
                            + np.einsum("nc,cd,nd->n", field[:, N_V:], mat.c,
                                        field[:, N_V:], optimize=True))
                    val = 0.5 * float(dens @ w[mask])
                    if acc == "err":
                        err_energy += val
                    else:
                        exact_energy += val

        for ph, ids in self.regular.items():
            if len(ids) == 0:
                continue
            boxes = np.array([self.mesh.elements[e].box_lo for e in ids])
            pts = (boxes[:, None, :] + self.ref_rel[None, :, :]).reshape(-1, 2)
            U = np.einsum("nk,eck->enc", self.ref_B, X[ids],
                          optimize=True).reshape(-1, N_U)
            Uex = exact_fn(t, pts)
            w = np.tile(self.ref_w, len(ids))
            accumulate(U, Uex, w, [(ph, np.ones(len(U), dtype=bool))])
        if len(self.irr_eids):
            U = self.trace(X, self.irr_B, self.irr_eids)
            Uex = exact_fn(t, self.irr_nodes)
            masks = []
            for ph in self.mesh.phases:
                mask = np.array([self.mesh.elements[e].phase == ph
                                 for e in self.irr_eids], dtype=bool)
                if np.any(mask):
                    masks.append((ph, mask))
            accumulate(U, Uex, self.irr_w, masks)

        e_inf = sup_err / max(sup_exact, 1e-300)
        e_l2 = math.sqrt(err_energy / max(exact_energy, 1e-300))
        return e_inf, e_l2

    def evaluate_at(self, X, point, phase=None):
        """Solution state at one physical point (from the owning element)."""
        mesh = self.mesh
        if phase is None:
            if len(mesh.phases) == 1:
                phase = mesh.phases[0]
            else:
                val = float(mesh.ls.value(point[0], point[1]))
                phase = NEG if val <= 0.0 else POS
        i = int((point[0] - mesh.rect.lo[0]) / mesh.h1)
        j = int((point[1] - mesh.rect.lo[1]) / mesh.h2)
        i = min(max(i, 0), mesh.n1 - 1)
        j = min(max(j, 0), mesh.n2 - 1)
        eid = mesh.owner.get((phase, (i, j)))
        if eid is None:
            raise KeyError(f"no element of phase {phase} at {tuple(point)}")
        elem = mesh.elements[eid]
        row = self.basis.eval((np.asarray(point) - elem.box_lo).reshape(1, 2))[0]
        return X[eid] @ row


def project_exact(assembler, modes, kappa, t=0.0):
    """Project the plane-wave superposition at time t."""
    return assembler.project(lambda pts: exact_solution(t, pts, modes, kappa))


# ---------------------------------------------------------------------------
# Output writers.
# ---------------------------------------------------------------------------

def write_vtk(path, assembler, X, t=None):
    """Legacy ASCII VTK snapshot: per-element (p+2)^2 sampling of v and sigma."""
    mesh = assembler.mesh
    p = assembler.p
    ns = p + 2
    lin = np.linspace(0.0, 1.0, ns)
    rel = np.column_stack([a.ravel() for a in
                           np.meshgrid(lin * mesh.h1, lin * mesh.h2,
                                       indexing="ij")])
    B = assembler.basis.eval(rel)
    n_cells_per = (ns - 1) ** 2
    points, cells, data = [], [], []
    offset = 0
    for e, elem in enumerate(mesh.elements):
        pts = elem.box_lo[None, :] + rel
        U = np.einsum("nk,ck->nc", B, X[e])
        mat = assembler.materials[elem.phase]
        v = U[:, :N_V] / mat.rho
        sig = U[:, N_V:] @ mat.c.T
        points.append(pts)
        data.append(np.column_stack([v, sig]))
        for a in range(ns - 1):
            for b in range(ns - 1):
                i0 = offset + a * ns + b
                cells.append((i0, i0 + ns, i0 + ns + 1, i0 + 1))
        offset += ns * ns
    points = np.vstack(points)
    data = np.vstack(data)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"imdg snapshot t={0.0 if t is None else t}\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {len(points)} double\n")
        for x, y in points:
            fh.write(f"{x:.9g} {y:.9g} 0\n")
        fh.write(f"CELLS {len(cells)} {5 * len(cells)}\n")
        for c in cells:
            fh.write("4 " + " ".join(str(i) for i in c) + "\n")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        fh.write("\n".join(["9"] * len(cells)) + "\n")
        fh.write(f"POINT_DATA {len(points)}\n")
        for name, col in (("v1", 0), ("v2", 1), ("s11", 2), ("s22", 3),
                          ("s12", 4)):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            fh.write("\n".join(f"{v:.9g}" for v in data[:, col]) + "\n")


class ReceiverRecorder:
    """Accumulates (t, v1, v2) samples at fixed points; writes RFC-4180 CSV."""

    def __init__(self, assembler, positions, phases=None):
        self.assembler = assembler
        self.positions = [np.asarray(p, dtype=float) for p in positions]
        self.phases = phases or [None] * len(self.positions)
        self.rows = [[] for _ in self.positions]

    def sample(self, t, X):
        mesh = self.assembler.mesh
        for k, pos in enumerate(self.positions):
            ph = self.phases[k]
            if ph is None:
                if len(mesh.phases) == 1:
                    ph = mesh.phases[0]
                else:
                    val = float(mesh.ls.value(pos[0], pos[1]))
                    ph = NEG if val <= 0.0 else POS
            U = self.assembler.evaluate_at(X, pos, ph)
            rho = self.assembler.materials[ph].rho
            self.rows[k].append((t, U[0] / rho, U[1] / rho))

    def write(self, path_pattern):
        paths = []
        for k, rows in enumerate(self.rows):
            path = path_pattern.format(k)
            with open(path, "w", newline="") as fh:
                fh.write("t,v1,v2\r\n")
                for t, v1, v2 in rows:
                    fh.write(f"{t:.12g},{v1:.12g},{v2:.12g}\r\n")
            paths.append(path)
        return paths
