"""Implicitly-defined meshes: cell classification, merging, elements and faces.

A structured background grid is intersected with the level-set phases.  Cells
are classified by volume fraction (entire / empty / large / small); small
cells are merged into a neighboring primary cell so every element has a
volume fraction above the threshold.  Faces carry quadrature rules restricted
to the correct phase and per-node unit normals oriented out of the minus
element.

Cell ordering is row-major with the x2 index outermost; elements are
enumerated in that order of their primary cells, which makes mesh
construction deterministic.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import NEG, POS, BackgroundRect
from .quadrature import (Cell, QuadRule, cut_face_rule, cut_surface_rule,
                         cut_volume_rule, face_gauss_rule, tensor_volume_rule)

EMPTY, SMALL, LARGE, ENTIRE = 0, 1, 2, 3
TOL_F = 1e-10

INTRAPHASE = "intraphase"
OUTER = "outer"
EMBEDDED = "embedded"
INTERFACE = "interface"
COARSE_FINE = "coarse_fine"

_EDGE_GROUP = ((-1, 0), (1, 0), (0, -1), (0, 1))
_CORNER_GROUP = ((-1, -1), (1, -1), (-1, 1), (1, 1))


class NoMergeTarget(Exception):
    """A small cell has no primary neighbor; the grid is too coarse."""


@dataclass
class Element:
    """One implicitly-defined mesh element: a primary cell plus merged smalls."""

    phase: int
    primary: tuple
    cells: tuple
    box_lo: np.ndarray
    box_hi: np.ndarray
    fractions: dict
    quad: QuadRule = None  # None means the plain tensor rule of an entire cell

    @property
    def is_regular(self):
        return self.quad is None


@dataclass
class Face:
    """Quadrature-carrying face; normals point out of the minus element."""

    kind: str
    minus: int
    nodes: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    plus: int = None
    btag: str = None
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    ghost_cell: tuple = None      # inactive fine cell behind a coarse-fine face
    ghost_offset: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __len__(self):
        return len(self.weights)

    @property
    def length(self):
        return float(np.sum(self.weights))


class ImplicitMesh:
    """Elements, faces and ownership maps of one implicitly-defined mesh."""

    def __init__(self, rect, dims, ls, phases, fbar, q, periodic,
                 elements, faces, owner, classes, fractions, active):
        self.rect = rect
        self.n1, self.n2 = dims
        self.ls = ls
        self.phases = tuple(phases)
        self.fbar = fbar
        self.q = q
        self.q_cut = q + 8
        self.periodic = tuple(periodic)
        self.elements = elements
        self.faces = faces
        self.owner = owner
        self.classes = classes      # phase -> (n1, n2) int array
        self.fractions = fractions  # phase -> (n1, n2) float array
        self.active = active        # bool (n1, n2) or None
        self.h1 = (rect.hi[0] - rect.lo[0]) / self.n1
        self.h2 = (rect.hi[1] - rect.lo[1]) / self.n2
        self._rule_cache = {}

    def cell(self, i, j):
        lo = (self.rect.lo[0] + i * self.h1, self.rect.lo[1] + j * self.h2)
        hi = (self.rect.lo[0] + (i + 1) * self.h1, self.rect.lo[1] + (j + 1) * self.h2)
        return Cell((i, j), lo, hi)

    def element_rule(self, eid):
        """Volume quadrature of an element (tensor rule built lazily)."""
        elem = self.elements[eid]
        if elem.quad is not None:
            return elem.quad
        if eid not in self._rule_cache:
            self._rule_cache[eid] = tensor_volume_rule(
                self.cell(*elem.primary), self.q)
        return self._rule_cache[eid]

    def refined_rule(self, eid):
        """Element rule with cut constituents at the elevated order q_cut.

        Masses and Galerkin transfer integrals are assembled with this rule;
        entire constituent cells keep the plain tensor rule (exact for the
        polynomial integrands involved).
        """
        elem = self.elements[eid]
        if elem.quad is None:
            return self.element_rule(eid)
        key = ("refined", eid)
        if key not in self._rule_cache:
            rules = []
            for c in elem.cells:
                geom = self.cell(*c)
                if elem.fractions[c] >= 1.0 - TOL_F:
                    rules.append(tensor_volume_rule(geom, self.q))
                else:
                    rules.append(cut_volume_rule(geom, self.ls, elem.phase,
                                                 self.q_cut))
            self._rule_cache[key] = QuadRule(
                nodes=np.vstack([r.nodes for r in rules]),
                weights=np.concatenate([r.weights for r in rules]))
        return self._rule_cache[key]

    def element_volume(self, eid):
        elem = self.elements[eid]
        if elem.quad is None:
            return self.h1 * self.h2
        return elem.quad.total

    def total_volume(self, phase):
        return sum(self.element_volume(e) for e, el in enumerate(self.elements)
                   if el.phase == phase)

    def elements_of(self, phase):
        return [e for e, el in enumerate(self.elements) if el.phase == phase]

    def dump_jsonl(self, path):
        """JSON-lines snapshot of elements and faces for inspection."""
        with open(path, "w") as fh:
            for e, el in enumerate(self.elements):
                fh.write(json.dumps({
                    "type": "element", "id": e, "phase": el.phase,
                    "primary": list(el.primary),
                    "cells": [list(c) for c in el.cells],
                    "fractions": {f"{c[0]},{c[1]}": el.fractions[c] for c in el.cells},
                    "volume": self.element_volume(e),
                }) + "\n")
            for face in self.faces:
                fh.write(json.dumps({
                    "type": "face", "kind": face.kind, "minus": face.minus,
                    "plus": face.plus, "btag": face.btag,
                    "length": face.length,
                }) + "\n")


def _cell_key(cell):
    """Deterministic cell ordering: row-major, x2 index outermost."""
    return (cell[1], cell[0])


def volume_fraction(cell, ls, phase, q):
    """Phase volume fraction of one cell in [0, 1]."""
    rule = cut_volume_rule(cell, ls, phase, q)
    f = rule.total / cell.volume
    return min(1.0, max(0.0, f))


def classify_fraction(f, fbar):
    if f >= 1.0 - TOL_F:
        return ENTIRE
    if f <= TOL_F:
        return EMPTY
    return LARGE if f > fbar else SMALL


def _sign_lattice(rect, dims, ls):
    """Level-set signs on the half-step lattice (corners, midpoints, centers)."""
    n1, n2 = dims
    x = np.linspace(rect.lo[0], rect.hi[0], 2 * n1 + 1)
    y = np.linspace(rect.lo[1], rect.hi[1], 2 * n2 + 1)
    X, Y = np.meshgrid(x, y, indexing="ij")
    vals = ls.value(X, Y)
    return np.sign(vals)


def _uniform_sign(signs, i, j, n1, n2):
    """Sign if the 5x5 lattice patch around cell (i, j) is single-signed, else 0.

    The patch spans the cell's own 3x3 samples plus the neighboring ring, so
    a resolved zero contour cannot hide inside a cell flagged as uniform.
    """
    i0, i1 = max(2 * i - 1, 0), min(2 * i + 3, 2 * n1) + 1
    j0, j1 = max(2 * j - 1, 0), min(2 * j + 3, 2 * n2) + 1
    patch = signs[i0:i1, j0:j1]
    if np.all(patch > 0):
        return 1
    if np.all(patch < 0):
        return -1
    return 0


def classify(rect, dims, ls, phase, fbar, q, active=None, signs=None):
    """Per-cell classification and volume fractions for one phase."""
    n1, n2 = dims
    if signs is None:
        signs = _sign_lattice(rect, dims, ls)
    h1 = (rect.hi[0] - rect.lo[0]) / n1
    h2 = (rect.hi[1] - rect.lo[1]) / n2
    classes = np.full((n1, n2), EMPTY, dtype=int)
    fractions = np.zeros((n1, n2))
    inside_sign = -1 if phase == NEG else 1
    for j in range(n2):
        for i in range(n1):
            if active is not None and not active[i, j]:
                continue
            uni = _uniform_sign(signs, i, j, n1, n2)
            if uni == inside_sign:
                classes[i, j] = ENTIRE
                fractions[i, j] = 1.0
                continue
            if uni == -inside_sign:
                continue
            lo = (rect.lo[0] + i * h1, rect.lo[1] + j * h2)
            hi = (lo[0] + h1, lo[1] + h2)
            f = volume_fraction(Cell((i, j), lo, hi), ls, phase, q)
            fractions[i, j] = f
            classes[i, j] = classify_fraction(f, fbar)
    return classes, fractions


def merge_target(small, classes, fractions, active=None):
    """Primary neighbor a small cell merges into.

    Edge-sharing neighbors are preferred over corner-sharing ones; within a
    group candidates are ordered by descending volume fraction with ties
    broken by cell order.
    """
    n1, n2 = classes.shape
    i, j = small
    for group in (_EDGE_GROUP, _CORNER_GROUP):
        candidates = []
        for di, dj in group:
            ii, jj = i + di, j + dj
            if not (0 <= ii < n1 and 0 <= jj < n2):
                continue
            if active is not None and not active[ii, jj]:
                continue
            if classes[ii, jj] in (LARGE, ENTIRE):
                candidates.append((-fractions[ii, jj], _cell_key((ii, jj)), (ii, jj)))
        if candidates:
            candidates.sort()
            return candidates[0][2]
    raise NoMergeTarget(f"small cell {small} has no primary neighbor")


def _phase_elements(mesh_q, rect, dims, ls, phase, fbar, active, signs,
                    q_cut):
    classes, fractions = classify(rect, dims, ls, phase, fbar, mesh_q,
                                  active=active, signs=signs)
    n1, n2 = dims
    h1 = (rect.hi[0] - rect.lo[0]) / n1
    h2 = (rect.hi[1] - rect.lo[1]) / n2

    cluster = {}
    smalls = [(i, j) for j in range(n2) for i in range(n1)
              if classes[i, j] == SMALL]
    for small in sorted(smalls, key=_cell_key):
        target = merge_target(small, classes, fractions, active=active)
        cluster.setdefault(target, []).append(small)

    def cell_box(c):
        lo = np.array([rect.lo[0] + c[0] * h1, rect.lo[1] + c[1] * h2])
        return lo, lo + np.array([h1, h2])

    def cell_rule(c):
        lo, hi = cell_box(c)
        geom = Cell(c, tuple(lo), tuple(hi))
        if classes[c] == ENTIRE:
            return tensor_volume_rule(geom, mesh_q)
        return cut_volume_rule(geom, ls, phase, mesh_q)

    elements = []
    primaries = [(i, j) for j in range(n2) for i in range(n1)
                 if classes[i, j] in (LARGE, ENTIRE)]
    for primary in sorted(primaries, key=_cell_key):
        merged = sorted(cluster.get(primary, []), key=_cell_key)
        cells = (primary, *merged)
        lo, hi = cell_box(primary)
        fracs = {c: float(fractions[c]) for c in cells}
        if classes[primary] == ENTIRE and not merged:
            quad = None
        else:
            rules = [cell_rule(c) for c in cells]
            quad = QuadRule(
                nodes=np.vstack([r.nodes for r in rules]),
                weights=np.concatenate([r.weights for r in rules]),
            )
        elements.append(Element(phase=phase, primary=primary, cells=cells,
                                box_lo=lo, box_hi=hi, fractions=fracs,
                                quad=quad))
    return elements, classes, fractions


def build_mesh(rect, dims, ls, phases=(NEG,), fbar=0.3, q=4,
               periodic=(False, False), active=None, q_cut=None):
    """Build the implicitly-defined mesh of one or both phases.

    ``q`` sets the face and regular-volume rule order; cut-cell volume rules
    and merged-cluster masses use the elevated order ``q_cut`` (default q+8)
    so that Galerkin transfer operators built on them are near-exact.
    """
    if isinstance(rect, (tuple, list)):
        rect = BackgroundRect(*rect)
    if q_cut is None:
        q_cut = q + 8
    signs = _sign_lattice(rect, dims, ls)
    elements = []
    owner = {}
    classes = {}
    fractions = {}
    for phase in phases:
        phase_elems, cls, frac = _phase_elements(
            q, rect, dims, ls, phase, fbar, active, signs, q_cut)
        base = len(elements)
        for k, elem in enumerate(phase_elems):
            for c in elem.cells:
                owner[(phase, c)] = base + k
        elements.extend(phase_elems)
        classes[phase] = cls
        fractions[phase] = frac

    mesh = ImplicitMesh(rect, dims, ls, phases, fbar, q, periodic,
                        elements, [], owner, classes, fractions, active)
    mesh.q_cut = q_cut
    mesh.faces = enumerate_faces(mesh)
    return mesh


def _edge_nodes_aligned(mesh, p0, p1):
    """True when the zero contour lies along the whole edge (p0, p1)."""
    rule = face_gauss_rule(p0, p1, mesh.q)
    vals = mesh.ls.value(rule.nodes[:, 0], rule.nodes[:, 1])
    mids = []
    axis = 0 if abs(p1[0] - p0[0]) < abs(p1[1] - p0[1]) else 1
    # characteristic phi magnitude half a cell away on both sides
    h = mesh.h1 if axis == 0 else mesh.h2
    shift = np.zeros(2)
    shift[axis] = 0.5 * h
    mid = 0.5 * (np.asarray(p0) + np.asarray(p1))
    for sgn in (-1.0, 1.0):
        probe = mid + sgn * shift
        mids.append(abs(float(mesh.ls.value(probe[0], probe[1]))))
    scale = max(max(mids), 1e-300)
    return np.max(np.abs(vals)) <= 1e-10 * scale, rule, mids


def _is_cut(mesh, i, j):
    return any(mesh.classes[phase][i, j] in (SMALL, LARGE)
               for phase in mesh.phases)


def _maybe_uniform(signs, i, j, n1, n2):
    return _uniform_sign(signs, i, j, n1, n2) != 0


def enumerate_faces(mesh):
    """All faces of the mesh in a deterministic order."""
    faces = []
    n1, n2 = mesh.n1, mesh.n2
    rect = mesh.rect
    ls = mesh.ls
    q = mesh.q
    signs = _sign_lattice(rect, (n1, n2), ls)
    active = mesh.active

    def is_active(c):
        return active is None or active[c]

    def centers_sign(c):
        cell = mesh.cell(*c)
        return float(ls.value(cell.center[0], cell.center[1]))

    def edge_endpoints(axis, i, j):
        """Edge on the +axis side of cell (i, j)."""
        x0 = rect.lo[0] + i * mesh.h1
        y0 = rect.lo[1] + j * mesh.h2
        if axis == 0:
            p0 = (x0 + mesh.h1, y0)
            p1 = (x0 + mesh.h1, y0 + mesh.h2)
        else:
            p0 = (x0, y0 + mesh.h2)
            p1 = (x0 + mesh.h1, y0 + mesh.h2)
        return p0, p1

    def low_edge_endpoints(axis, i, j):
        x0 = rect.lo[0] + i * mesh.h1
        y0 = rect.lo[1] + j * mesh.h2
        if axis == 0:
            return (x0, y0), (x0, y0 + mesh.h2)
        return (x0, y0), (x0 + mesh.h1, y0)

    def normal(axis, sign):
        n = np.zeros(2)
        n[axis] = sign
        return n

    def phase_rule(p0, p1, phase, cls_a, cls_b):
        if cls_a == ENTIRE and cls_b == ENTIRE:
            return face_gauss_rule(p0, p1, q)
        return cut_face_rule(p0, p1, ls, phase, q)

    def add_interior(axis, cell_lo, cell_hi, p0, p1, offset):
        """Faces on the shared edge of two active cells (offset for wraps)."""
        both_uniform = (_maybe_uniform(signs, *cell_lo, n1, n2)
                        and _maybe_uniform(signs, *cell_hi, n1, n2))
        if not both_uniform and len(mesh.phases) == 2 and not np.any(offset):
            sL = centers_sign(cell_lo)
            sR = centers_sign(cell_hi)
            if sL * sR < 0.0:
                aligned, rule, _ = _edge_nodes_aligned(mesh, p0, p1)
                if aligned:
                    neg_cell, pos_cell = (cell_lo, cell_hi) if sL < 0 else (cell_hi, cell_lo)
                    o_neg = mesh.owner.get((NEG, neg_cell))
                    o_pos = mesh.owner.get((POS, pos_cell))
                    if o_neg is not None and o_pos is not None:
                        sign = 1.0 if sL < 0 else -1.0
                        nrm = np.tile(normal(axis, sign), (len(rule), 1))
                        off = offset if sL < 0 else -offset
                        faces.append(Face(kind=INTERFACE, minus=o_neg, plus=o_pos,
                                          nodes=rule.nodes, weights=rule.weights,
                                          normals=nrm, offset=off.copy()))
                    return
        for phase in mesh.phases:
            cls = mesh.classes[phase]
            oL = mesh.owner.get((phase, cell_lo))
            oR = mesh.owner.get((phase, cell_hi))
            if oL is None or oR is None:
                continue
            if oL == oR and not np.any(offset):
                continue  # edge internal to one merged cluster
            rule = phase_rule(p0, p1, phase, cls[cell_lo], cls[cell_hi])
            if len(rule) == 0:
                continue
            nrm = np.tile(normal(axis, 1.0), (len(rule), 1))
            faces.append(Face(kind=INTRAPHASE, minus=oL, plus=oR,
                              nodes=rule.nodes, weights=rule.weights,
                              normals=nrm, offset=offset.copy()))

    def add_coarse_fine(axis, own_cell, ghost_cell, p0, p1, sign, ghost_offset):
        for phase in mesh.phases:
            o = mesh.owner.get((phase, own_cell))
            if o is None:
                continue
            cls = mesh.classes[phase][own_cell]
            rule = phase_rule(p0, p1, phase, cls, cls)
            if len(rule) == 0:
                continue
            nrm = np.tile(normal(axis, sign), (len(rule), 1))
            faces.append(Face(kind=COARSE_FINE, minus=o, btag="coarse_fine",
                              nodes=rule.nodes, weights=rule.weights,
                              normals=nrm, ghost_cell=ghost_cell,
                              ghost_offset=ghost_offset.copy()))

    def add_outer(axis, own_cell, p0, p1, sign, btag):
        for phase in mesh.phases:
            o = mesh.owner.get((phase, own_cell))
            if o is None:
                continue
            cls = mesh.classes[phase][own_cell]
            rule = phase_rule(p0, p1, phase, cls, cls)
            if len(rule) == 0:
                continue
            nrm = np.tile(normal(axis, sign), (len(rule), 1))
            faces.append(Face(kind=OUTER, minus=o, btag=btag,
                              nodes=rule.nodes, weights=rule.weights,
                              normals=nrm))

    extent = rect.hi - rect.lo
    for axis in (0, 1):
        count = (n1, n2)[axis]
        lo_tag, hi_tag = (("left", "right"), ("bottom", "top"))[axis]
        rows = n2 if axis == 0 else n1
        for row in range(rows):
            for k in range(count):
                cell = (k, row) if axis == 0 else (row, k)
                p0, p1 = edge_endpoints(axis, *cell)
                last = (k == count - 1)
                if not last:
                    nbr = (k + 1, row) if axis == 0 else (row, k + 1)
                    aL, aR = is_active(cell), is_active(nbr)
                    if aL and aR:
                        add_interior(axis, cell, nbr, p0, p1, np.zeros(2))
                    elif aL:
                        add_coarse_fine(axis, cell, nbr, p0, p1, 1.0, np.zeros(2))
                    elif aR:
                        add_coarse_fine(axis, nbr, cell, p0, p1, -1.0, np.zeros(2))
                    continue
                # high side of the last cell: outer boundary or periodic wrap
                if mesh.periodic[axis]:
                    nbr = (0, row) if axis == 0 else (row, 0)
                    off = np.zeros(2)
                    off[axis] = -extent[axis]
                    aL, aR = is_active(cell), is_active(nbr)
                    if aL and aR:
                        add_interior(axis, cell, nbr, p0, p1, off)
                    elif aL:
                        add_coarse_fine(axis, cell, nbr, p0, p1, 1.0, off)
                    elif aR:
                        q0, q1 = low_edge_endpoints(axis, *nbr)
                        add_coarse_fine(axis, nbr, cell, q0, q1, -1.0, -off)
                elif is_active(cell):
                    add_outer(axis, cell, p0, p1, 1.0, hi_tag)
            # low side of the first cell (non-periodic outer boundary)
            first = (0, row) if axis == 0 else (row, 0)
            if not mesh.periodic[axis] and is_active(first):
                p0, p1 = low_edge_endpoints(axis, *first)
                add_outer(axis, first, p0, p1, -1.0, lo_tag)

    # embedded boundaries / material interfaces on the zero contour
    for j in range(n2):
        for i in range(n1):
            if not is_active((i, j)):
                continue
            if _maybe_uniform(signs, i, j, n1, n2):
                continue
            if not _is_cut(mesh, i, j):
                continue
            # curved-face integrals must match the elevated volume accuracy:
            # thin cut elements have near-mass-null modes that amplify any
            # surface-quadrature imbalance into spurious energy growth
            rule = cut_surface_rule(mesh.cell(i, j), ls, mesh.q_cut)
            if len(rule) == 0:
                continue
            if len(mesh.phases) == 1:
                o = mesh.owner.get((mesh.phases[0], (i, j)))
                if o is None:
                    continue
                nrm = rule.normals if mesh.phases[0] == NEG else -rule.normals
                faces.append(Face(kind=EMBEDDED, minus=o, btag="embedded",
                                  nodes=rule.nodes, weights=rule.weights,
                                  normals=nrm))
            else:
                o_neg = mesh.owner.get((NEG, (i, j)))
                o_pos = mesh.owner.get((POS, (i, j)))
                if o_neg is None or o_pos is None:
                    continue  # sliver below the volume tolerance: dropped
                faces.append(Face(kind=INTERFACE, minus=o_neg, plus=o_pos,
                                  nodes=rule.nodes, weights=rule.weights,
                                  normals=rule.normals))
    return faces
