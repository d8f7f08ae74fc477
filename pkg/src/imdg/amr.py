"""Two-level hp adaptive mesh refinement with Galerkin transfer operators.

Level 0 covers the whole domain and is static; level 1 is rebuilt from the
tag map (the union of r x r refinements of tagged coarse cells, extended to
whole coarse elements).  Interpolation blocks are Galerkin projections

    I[e', e] = (M1[e'])^-1  int_{fine e' and coarse e}  B1^T B0 dV,

assembled from the fine element's quadrature split by parent coarse cell;
restriction is applied on the fly as M0^-1 I^T M1 (the projection of the
piecewise-fine solution onto the coarse space).  Level 0 advances everywhere
and covered coarse elements are overwritten by restriction after every step.
"""

import numpy as np

from .dg import Assembler
from .mesh import build_mesh
from .physics import max_wave_speed
from .timestepping import CflParams, global_timestep, rk_step, scheme_for_degree


class AmrLevel:
    """One mesh level: mesh, assembler and solution coefficients."""

    def __init__(self, mesh, assembler, degree):
        self.mesh = mesh
        self.assembler = assembler
        self.degree = degree


def element_signature(elem):
    return (elem.phase, elem.primary, elem.cells)


def overlap_blocks(fine_asm, coarse_asm, ratio):
    """Galerkin overlap integrals G[(fine_e, coarse_e)] = int B1^T B0 dV."""
    fine_mesh = fine_asm.mesh
    coarse_mesh = coarse_asm.mesh
    blocks = {}
    for e_fine, elem in enumerate(fine_mesh.elements):
        rule = fine_mesh.refined_rule(e_fine)
        nodes, w = rule.nodes, rule.weights
        ci = np.floor((nodes[:, 0] - fine_mesh.rect.lo[0])
                      / (fine_mesh.h1 * ratio)).astype(int)
        cj = np.floor((nodes[:, 1] - fine_mesh.rect.lo[1])
                      / (fine_mesh.h2 * ratio)).astype(int)
        ci = np.clip(ci, 0, coarse_mesh.n1 - 1)
        cj = np.clip(cj, 0, coarse_mesh.n2 - 1)
        B1 = fine_asm.basis.eval(nodes - elem.box_lo)
        for parent in {(int(a), int(b)) for a, b in zip(ci, cj)}:
            e_coarse = coarse_mesh.owner.get((elem.phase, parent))
            if e_coarse is None:
                continue
            mask = (ci == parent[0]) & (cj == parent[1])
            box0 = coarse_mesh.elements[e_coarse].box_lo
            B0 = coarse_asm.basis.eval(nodes[mask] - box0)
            G = B1[mask].T @ (w[mask, None] * B0)
            key = (e_fine, e_coarse)
            blocks[key] = blocks.get(key, 0.0) + G
    return blocks


def build_interpolation(fine_asm, coarse_asm, ratio):
    """Block-sparse interpolation operator I[(fine_e, coarse_e)]."""
    blocks = overlap_blocks(fine_asm, coarse_asm, ratio)
    interp = {}
    irr_index = {e: k for k, e in enumerate(fine_asm.irregular)}
    for (e1, e0), G in blocks.items():
        if e1 in irr_index:
            I = fine_asm.transfer_minv[irr_index[e1]] @ G
        else:
            I = G  # regular fine element: identity mass
        interp[(e1, e0)] = I
    return interp, blocks


def interpolate(interp, X0, n_fine, n_p_fine, n_u):
    """Fine coefficients X1 = I X0."""
    X1 = np.zeros((n_fine, n_u, n_p_fine))
    for (e1, e0), I in interp.items():
        X1[e1] += X0[e0] @ I.T
    return X1


def restrict(blocks, coarse_asm, X1, covered, n_u):
    """Coarse coefficients of covered elements from the fine solution.

    Applies M0^-1 I^T M1 on the fly: with G the overlap integrals this is
    X0[e] = M0[e]^-1 sum_e' G[(e', e)]^T X1[e'].
    """
    n_p0 = coarse_asm.n_p
    acc = {e: np.zeros((n_u, n_p0)) for e in covered}
    for (e1, e0), G in blocks.items():
        if e0 in acc:
            acc[e0] += X1[e1] @ G
    out = {}
    irr_index = {e: k for k, e in enumerate(coarse_asm.irregular)}
    for e0, rhs in acc.items():
        if e0 in irr_index:
            out[e0] = rhs @ coarse_asm.transfer_minv[irr_index[e0]].T
        else:
            out[e0] = rhs
    return out


def energy_tag_function(threshold):
    """Tagging by element energy: tag while max-phase energy exceeds threshold."""

    def f_tag(assembler, X):
        return assembler.element_energies(X) - threshold

    return f_tag


def tag_cells(assembler, X, f_tag):
    """Cell tag map from a per-element tag function.

    Small cells inherit the tag of the primary cell they merged into; empty
    cells are never tagged.  For bi-phase meshes a cell is tagged when any of
    its phase elements requests refinement.
    """
    mesh = assembler.mesh
    values = f_tag(assembler, X)
    tags = np.zeros((mesh.n1, mesh.n2), dtype=bool)
    for e, elem in enumerate(mesh.elements):
        if values[e] > 0.0:
            for c in elem.cells:
                tags[c] = True
    return tags


def _expand_tags(mesh, tags, buffer_cells):
    """Dilate tags, drop empty cells, then extend to whole elements."""
    t = tags.copy()
    for _ in range(buffer_cells):
        grown = t.copy()
        grown[1:, :] |= t[:-1, :]
        grown[:-1, :] |= t[1:, :]
        grown[:, 1:] |= t[:, :-1]
        grown[:, :-1] |= t[:, 1:]
        if mesh.periodic[0]:
            grown[0, :] |= t[-1, :]
            grown[-1, :] |= t[0, :]
        if mesh.periodic[1]:
            grown[:, 0] |= t[:, -1]
            grown[:, -1] |= t[:, 0]
        t = grown
    occupied = np.zeros_like(t)
    for (phase, cell) in mesh.owner:
        occupied[cell] = True
    t &= occupied
    out = np.zeros_like(t)
    for elem in mesh.elements:
        if any(t[c] for c in elem.cells):
            for c in elem.cells:
                out[c] = True
    return out


class AmrHierarchy:
    """Two-level hierarchy driving tagging, regridding and composite stepping."""

    def __init__(self, rect, dims, ls, phases, materials, fbar, p0, p1,
                 ratio, bc_table=None, sources=(), periodic=(False, False),
                 courant=0.833, buffer_cells=1, q0=None, q1=None):
        self.rect = rect
        self.dims = tuple(dims)
        self.ls = ls
        self.phases = tuple(phases)
        self.materials = dict(materials)
        self.fbar = fbar
        self.p0, self.p1 = int(p0), int(p1)
        self.ratio = int(ratio)
        self.periodic = tuple(periodic)
        self.bc_table = dict(bc_table or {})
        self.sources = list(sources)
        self.courant = courant
        self.buffer_cells = int(buffer_cells)
        self.q0 = q0 or self.p0 + 2
        self.q1 = q1 or self.p1 + 2

        mesh0 = build_mesh(rect, dims, ls, phases, fbar, self.q0, periodic)
        coarse_sources = [s for s in self.sources]
        asm0 = Assembler(mesh0, self.p0, materials, bc_table=self.bc_table,
                         sources=coarse_sources)
        self.coarse = AmrLevel(mesh0, asm0, self.p0)
        self.X0 = asm0.zero_coefficients()
        self.fine = None
        self.X1 = None
        self.tags = np.zeros(self.dims, dtype=bool)
        self.interp = {}
        self.blocks = {}
        self.covered = []
        self._ghost_plan = None
        self._stage_X0 = None
        self.max_speed = max(max_wave_speed(m) for m in self.materials.values())

    # -- transfer machinery --------------------------------------------------

    def _ghost_eval(self, t, nodes, ghost_cells, ghost_offsets, phases):
        """Coarse-side trace states for the fine level's coarse-fine faces."""
        plan = self._ghost_plan
        X0 = self._stage_X0 if self._stage_X0 is not None else self.X0
        return np.einsum("nk,nck->nc", plan["rows"], X0[plan["eids"]],
                         optimize=True)

    def _build_ghost_plan(self, fine_asm):
        cf = fine_asm.cf
        n = len(cf["ids"])
        if n == 0:
            self._ghost_plan = {"rows": np.zeros((0, self.coarse.assembler.n_p)),
                                "eids": np.zeros(0, dtype=int)}
            return
        mesh0 = self.coarse.mesh
        eids = np.empty(n, dtype=int)
        rows = np.empty((n, self.coarse.assembler.n_p))
        pts = cf["nodes"] + cf["ghost_offsets"]
        for k in range(n):
            gi, gj = cf["ghost_cells"][k]
            parent = (gi // self.ratio, gj // self.ratio)
            e0 = mesh0.owner.get((cf["phases"][k], parent))
            if e0 is None:
                raise KeyError(
                    f"coarse-fine face ghost cell {cf['ghost_cells'][k]} has no "
                    f"coarse owner in phase {cf['phases'][k]}")
            eids[k] = e0
            box = mesh0.elements[e0].box_lo
            rows[k] = self.coarse.assembler.basis.eval(
                (pts[k] - box).reshape(1, 2))[0]
        self._ghost_plan = {"rows": rows, "eids": eids}

    # -- regridding ------------------------------------------------------------

    def regrid(self, tags):
        """Rebuild level 1 from a tag map; transfer solutions both ways."""
        tags = _expand_tags(self.coarse.mesh, tags, self.buffer_cells)

        if self.fine is not None and self.covered:
            updates = restrict(self.blocks, self.coarse.assembler, self.X1,
                               self.covered, self.X0.shape[1])
            for e0, val in updates.items():
                self.X0[e0] = val

        old_fine = self.fine
        old_X1 = self.X1
        old_sig = {}
        if old_fine is not None:
            for e, elem in enumerate(old_fine.mesh.elements):
                old_sig[element_signature(elem)] = e

        self.tags = tags
        if not np.any(tags):
            self.fine = None
            self.X1 = None
            self.interp = {}
            self.blocks = {}
            self.covered = []
            self._ghost_plan = None
            return

        r = self.ratio
        active = np.repeat(np.repeat(tags, r, axis=0), r, axis=1)
        dims1 = (self.dims[0] * r, self.dims[1] * r)
        mesh1 = build_mesh(self.rect, dims1, self.ls, self.phases, self.fbar,
                           self.q1, self.periodic, active=active)
        fine_sources = [s for s in self.sources
                        if tags[min(int((s.position[0] - self.rect.lo[0])
                                        / self.coarse.mesh.h1), self.dims[0] - 1),
                                min(int((s.position[1] - self.rect.lo[1])
                                        / self.coarse.mesh.h2), self.dims[1] - 1)]]
        asm1 = Assembler(mesh1, self.p1, self.materials, bc_table=self.bc_table,
                         sources=fine_sources, ghost_fn=self._ghost_eval)
        self.fine = AmrLevel(mesh1, asm1, self.p1)
        self._build_ghost_plan(asm1)
        self.interp, self.blocks = build_interpolation(
            asm1, self.coarse.assembler, r)

        X1 = interpolate(self.interp, self.X0, len(mesh1.elements),
                         asm1.n_p, self.X0.shape[1])
        if old_fine is not None:
            for e, elem in enumerate(mesh1.elements):
                k = old_sig.get(element_signature(elem))
                if k is not None:
                    X1[e] = old_X1[k]
        self.X1 = X1
        self.covered = [e for e, elem in enumerate(self.coarse.mesh.elements)
                        if tags[elem.primary]]

    # -- stepping ----------------------------------------------------------------

    def timestep(self):
        levels = [(min(self.coarse.mesh.h1, self.coarse.mesh.h2),
                   CflParams(self.courant, self.fbar, self.p0), self.max_speed)]
        if self.fine is not None:
            levels.append((min(self.fine.mesh.h1, self.fine.mesh.h2),
                           CflParams(self.courant, self.fbar, self.p1),
                           self.max_speed))
        return global_timestep(levels)

    def state(self):
        if self.fine is None:
            return [self.X0]
        return [self.X0, self.X1]

    def set_state(self, state):
        self.X0 = state[0]
        if self.fine is not None:
            self.X1 = state[1]

    def composite_rhs(self, t, state):
        """Per-level M^-1 A with the fine level coupled to the coarse trace."""
        if self.fine is None:
            return [self.coarse.assembler.rhs(t, state[0])]
        self._stage_X0 = state[0]
        try:
            A0 = self.coarse.assembler.rhs(t, state[0])
            A1 = self.fine.assembler.rhs(t, state[1])
        finally:
            self._stage_X0 = None
        return [A0, A1]

    def advance(self, t, tau):
        scheme = scheme_for_degree(max(self.p0, self.p1))
        state = rk_step(self.state(), t, tau, self.composite_rhs, scheme)
        self.set_state(state)
        if self.fine is not None and self.covered:
            updates = restrict(self.blocks, self.coarse.assembler, self.X1,
                               self.covered, self.X0.shape[1])
            for e0, val in updates.items():
                self.X0[e0] = val

    # -- composite functionals ----------------------------------------------------

    def uncovered_coarse(self):
        covered = set(self.covered)
        return [e for e in range(len(self.coarse.mesh.elements))
                if e not in covered]

    def total_energy(self):
        E0 = self.coarse.assembler.element_energies(self.X0)
        total = sum(E0[e] for e in self.uncovered_coarse())
        if self.fine is not None:
            total += self.fine.assembler.element_energies(self.X1).sum()
        return float(total)

    def error_measures(self, exact_fn, t):
        """Composite errors: fine level plus uncovered coarse elements."""
        levels = []
        if self.fine is not None:
            levels.append((self.fine.assembler, self.X1, None))
        levels.append((self.coarse.assembler, self.X0,
                       set(self.uncovered_coarse())))
        sup_err = sup_ex = err_energy = ex_energy = 0.0
        for asm, X, keep in levels:
            mesh = asm.mesh
            for e in range(len(mesh.elements)):
                if keep is not None and e not in keep:
                    continue
                elem = mesh.elements[e]
                rule = mesh.element_rule(e)
                B = asm.basis.eval(rule.nodes - elem.box_lo)
                U = np.einsum("nk,ck->nc", B, X[e])
                Uex = exact_fn(t, rule.nodes)
                mat = asm.materials[elem.phase]
                diff = U - Uex
                sup_err = max(sup_err, float(np.abs(diff).max(initial=0.0)))
                sup_ex = max(sup_ex, float(np.abs(Uex).max(initial=0.0)))
                for field, which in ((diff, "err"), (Uex, "ex")):
                    dens = (np.einsum("nc,nc->n", field[:, :2], field[:, :2])
                            / mat.rho
                            + np.einsum("nc,cd,nd->n", field[:, 2:], mat.c,
                                        field[:, 2:], optimize=True))
                    val = 0.5 * float(dens @ rule.weights)
                    if which == "err":
                        err_energy += val
                    else:
                        ex_energy += val
        import math
        return (sup_err / max(sup_ex, 1e-300),
                math.sqrt(err_energy / max(ex_energy, 1e-300)))

    def tagged_centroid(self):
        """Centroid of tagged coarse cells (None when nothing is tagged)."""
        idx = np.argwhere(self.tags)
        if len(idx) == 0:
            return None
        mesh = self.coarse.mesh
        centers = np.column_stack([
            mesh.rect.lo[0] + (idx[:, 0] + 0.5) * mesh.h1,
            mesh.rect.lo[1] + (idx[:, 1] + 0.5) * mesh.h2,
        ])
        return centers.mean(axis=0)

    def energy_centroid(self):
        """Energy-weighted centroid of the active composite solution."""
        num = np.zeros(2)
        den = 0.0
        levels = []
        if self.fine is not None:
            levels.append((self.fine.assembler, self.X1, None))
        levels.append((self.coarse.assembler, self.X0,
                       set(self.uncovered_coarse())))
        for asm, X, keep in levels:
            E = asm.element_energies(X)
            for e, elem in enumerate(asm.mesh.elements):
                if keep is not None and e not in keep:
                    continue
                center = 0.5 * (elem.box_lo + elem.box_hi)
                num += E[e] * center
                den += E[e]
        if den == 0.0:
            return None
        return num / den
