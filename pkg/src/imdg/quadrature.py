"""High-order quadrature for full rectangular cells and implicitly-defined regions.

Cut-cell rules use a 2D dimension-reduction construction: pick the height
direction where the level-set gradient is largest on the cell, split the base
interval at the points where the zero contour crosses the cell's height-facing
edges, and along each vertical line through a base Gauss node find the
sign-change roots of phi and lay scaled Gauss rules on the sub-intervals of
the requested sign.  Surface rules place nodes at the roots themselves with
the arc-length weight |grad phi| / |d phi / d height|.

All produced nodes are strictly inside the integration domain and all weights
are strictly positive.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import NEG

MAX_ROOTS = 4
_GL_CACHE = {}


class UnsupportedOrder(Exception):
    """Gauss-Legendre order outside the supported range 1..20."""


class UnresolvedGeometry(Exception):
    """Level-set geometry too coarse for this cell (too many roots or tangency)."""


@dataclass
class QuadRule:
    """Quadrature nodes, positive weights and (for surface rules) unit normals."""

    nodes: np.ndarray
    weights: np.ndarray
    normals: np.ndarray = None

    def __len__(self):
        return len(self.weights)

    @property
    def total(self):
        return float(np.sum(self.weights))


@dataclass(frozen=True)
class Cell:
    """Axis-aligned grid cell with its index pair."""

    index: tuple
    lo: tuple
    hi: tuple

    @property
    def sizes(self):
        return (self.hi[0] - self.lo[0], self.hi[1] - self.lo[1])

    @property
    def volume(self):
        h1, h2 = self.sizes
        return h1 * h2

    @property
    def center(self):
        return (0.5 * (self.lo[0] + self.hi[0]), 0.5 * (self.lo[1] + self.hi[1]))


def _empty_rule(with_normals=False):
    return QuadRule(
        nodes=np.zeros((0, 2)),
        weights=np.zeros(0),
        normals=np.zeros((0, 2)) if with_normals else None,
    )


def gauss_legendre_1d(n):
    """Gauss-Legendre rule on [-1, 1], exact for polynomials of degree 2n-1."""
    if not (1 <= int(n) <= 20) or int(n) != n:
        raise UnsupportedOrder(f"Gauss-Legendre order must be in 1..20, got {n}")
    n = int(n)
    if n not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = (x, w)
    x, w = _GL_CACHE[n]
    return QuadRule(nodes=x.copy(), weights=w.copy())


def _gauss_on(a, b, n):
    """Gauss nodes/weights mapped onto the interval [a, b]."""
    if n not in _GL_CACHE:
        gauss_legendre_1d(n)
    x, w = _GL_CACHE[n]
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    return mid + half * x, half * w


def tensor_volume_rule(cell, q):
    """Plain q x q tensor-product Gauss rule on an uncut cell."""
    x1, w1 = _gauss_on(cell.lo[0], cell.hi[0], q)
    x2, w2 = _gauss_on(cell.lo[1], cell.hi[1], q)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    W = np.outer(w1, w2)
    return QuadRule(nodes=np.column_stack([X1.ravel(), X2.ravel()]),
                    weights=W.ravel())


# ---------------------------------------------------------------------------
# 1D root isolation: dense sampling, bracketed bisection, Newton polish.
# ---------------------------------------------------------------------------

def find_roots_1d(f, a, b, max_roots=MAX_ROOTS, n_samples=24, fprime=None):
    """Isolated roots of a scalar function on [a, b].

    Sign changes between dense samples are bracketed and bisected to
    1e-14*(b-a), then polished with a couple of safeguarded Newton steps when
    a derivative is available.  Raises UnresolvedGeometry when more than
    ``max_roots`` sign changes occur.
    """
    span = b - a
    s = np.linspace(a, b, n_samples + 1)
    v = np.asarray(f(s), dtype=float)
    # Sign flips are detected between strictly nonzero samples only: a sample
    # evaluating to exactly 0.0 near a tangential touch is rounding noise and
    # must not fabricate a bracket (a double root is not a sign change).
    nz = np.nonzero(v != 0.0)[0]
    if len(nz) == 0:
        return []
    flip_pos = np.nonzero(np.sign(v[nz[:-1]]) * np.sign(v[nz[1:]]) < 0.0)[0]
    if len(flip_pos) > max_roots:
        raise UnresolvedGeometry(
            f"{len(flip_pos)} sign changes on a segment (max {max_roots})")
    roots = list(s[1:-1][v[1:-1] == 0.0])

    if len(flip_pos) > 0:
        lo = s[nz[flip_pos]].astype(float)
        hi = s[nz[flip_pos + 1]].astype(float)
        flo = v[nz[flip_pos]].astype(float)
        tol = 1e-14 * span
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            fmid = np.asarray(f(mid), dtype=float)
            pick = (flo * fmid) <= 0.0
            hi = np.where(pick, mid, hi)
            lo = np.where(pick, lo, mid)
            flo = np.where(pick, flo, fmid)
            if np.all(hi - lo < tol):
                break
        r = 0.5 * (lo + hi)
        if fprime is not None:
            for _ in range(2):
                fr = np.asarray(f(r), dtype=float)
                dr = np.asarray(fprime(r), dtype=float)
                step = np.where(np.abs(dr) > 0.0, fr / np.where(dr == 0.0, 1.0, dr), 0.0)
                r_new = r - step
                inside = (r_new > lo) & (r_new < hi)
                r = np.where(inside, r_new, r)
        roots.extend(r.tolist())

    roots.sort()
    out = []
    edge_tol = 1e-13 * span
    for r in roots:
        if r - a < edge_tol or b - r < edge_tol:
            continue
        if out and r - out[-1] < edge_tol:
            continue
        out.append(r)
    return out


_DIR_QUALITY = 0.45   # min |grad_k| / |grad| near the contour for direction k
_MAX_SUBDIV = 6


def _height_direction(cell, ls):
    """Height direction for the cell, or None when subdivision is required.

    The chosen direction must keep the zero contour a single-valued graph:
    among sample points near the contour, the gradient component along the
    height direction has to stay a sizable fraction of the full gradient.
    When the contour turns too much inside the cell (no direction qualifies)
    the caller splits the cell and recurses.
    """
    xs = np.linspace(cell.lo[0], cell.hi[0], 5)
    ys = np.linspace(cell.lo[1], cell.hi[1], 5)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    g1, g2 = ls.gradient(X, Y)
    gnorm = np.hypot(g1, g2)
    vals = ls.value(X, Y)
    diag = float(np.hypot(*cell.sizes))
    near = np.abs(vals) <= 0.8 * diag * np.maximum(gnorm, 1e-300)
    if not np.any(near):
        return 0 if np.mean(np.abs(g1)) >= np.mean(np.abs(g2)) else 1
    sign_var = bool(np.any(vals > 0.0) and np.any(vals < 0.0))
    safe = np.maximum(gnorm[near], 1e-300)
    q1 = float(np.min(np.abs(g1[near]) / safe))
    q2 = float(np.min(np.abs(g2[near]) / safe))
    k = 0 if q1 >= q2 else 1
    if max(q1, q2) >= _DIR_QUALITY or not sign_var:
        return k
    return None


def _subcells(cell):
    cx, cy = cell.center
    (x0, y0), (x1, y1) = cell.lo, cell.hi
    i, j = cell.index
    return [
        Cell((i, j), (x0, y0), (cx, cy)),
        Cell((i, j), (cx, y0), (x1, cy)),
        Cell((i, j), (x0, cy), (cx, y1)),
        Cell((i, j), (cx, cy), (x1, y1)),
    ]


def _merge_rules(rules, with_normals=False):
    rules = [r for r in rules if len(r) > 0]
    if not rules:
        return _empty_rule(with_normals=with_normals)
    return QuadRule(
        nodes=np.vstack([r.nodes for r in rules]),
        weights=np.concatenate([r.weights for r in rules]),
        normals=(np.vstack([r.normals for r in rules]) if with_normals else None),
    )


def _line_fn(ls, k, base_val):
    """phi and d phi/d height restricted to the line base-coordinate = base_val."""
    if k == 0:
        fn = lambda s: ls.value(s, np.full_like(np.asarray(s, dtype=float), base_val))
        fp = lambda s: ls.gradient(s, np.full_like(np.asarray(s, dtype=float), base_val))[0]
    else:
        fn = lambda s: ls.value(np.full_like(np.asarray(s, dtype=float), base_val), s)
        fp = lambda s: ls.gradient(np.full_like(np.asarray(s, dtype=float), base_val), s)[1]
    return fn, fp


def _base_breakpoints(cell, ls, k, max_roots):
    """Base-interval split points: contour crossings of the two height-facing edges."""
    b = 1 - k
    lo_b, hi_b = cell.lo[b], cell.hi[b]
    points = []
    for height_val in (cell.lo[k], cell.hi[k]):
        fn, fp = _line_fn(ls, b, height_val)  # runs along the base direction
        points.extend(find_roots_1d(fn, lo_b, hi_b, max_roots, fprime=fp))
    points = sorted(points)
    breaks = [lo_b]
    for point in points:
        if point - breaks[-1] > 1e-12 * (hi_b - lo_b):
            breaks.append(point)
    if hi_b - breaks[-1] > 1e-12 * (hi_b - lo_b):
        breaks.append(hi_b)
    else:
        breaks[-1] = hi_b
    return breaks


def _make_point(k, height, base):
    return (height, base) if k == 0 else (base, height)


def cut_volume_rule(cell, ls, phase, q, max_roots=MAX_ROOTS, _depth=0):
    """Quadrature over (cell intersect phase) for smooth integrands.

    On uncut cells this reduces to the q x q tensor Gauss-Legendre rule.
    Cells where the contour turns too sharply for a single height direction
    are split recursively.
    """
    k = _height_direction(cell, ls)
    if k is None:
        if _depth >= _MAX_SUBDIV:
            raise UnresolvedGeometry(
                f"no usable height direction in cell {cell.index} after "
                f"{_depth} subdivisions")
        return _merge_rules([
            cut_volume_rule(sub, ls, phase, q, max_roots, _depth + 1)
            for sub in _subcells(cell)])
    b = 1 - k
    lo_k, hi_k = cell.lo[k], cell.hi[k]
    want_neg = (phase == NEG)

    nodes, weights = [], []
    breaks = _base_breakpoints(cell, ls, k, max_roots)
    for seg_lo, seg_hi in zip(breaks[:-1], breaks[1:]):
        base_x, base_w = _gauss_on(seg_lo, seg_hi, q)
        for xb, wb in zip(base_x, base_w):
            fn, fp = _line_fn(ls, k, xb)
            roots = find_roots_1d(fn, lo_k, hi_k, max_roots, fprime=fp)
            cuts = [lo_k] + roots + [hi_k]
            for s_lo, s_hi in zip(cuts[:-1], cuts[1:]):
                mid = 0.5 * (s_lo + s_hi)
                neg = float(fn(np.asarray(mid))) < 0.0
                if neg != want_neg:
                    continue
                hx, hw = _gauss_on(s_lo, s_hi, q)
                for xh, wh in zip(hx, hw):
                    nodes.append(_make_point(k, xh, xb))
                    weights.append(wb * wh)

    if not nodes:
        return _empty_rule()
    return QuadRule(nodes=np.array(nodes), weights=np.array(weights))


def cut_surface_rule(cell, ls, q, max_roots=MAX_ROOTS, _depth=0):
    """Quadrature over the zero contour inside the cell, with unit normals.

    Cells not intersecting the contour yield an empty rule.
    """
    k = _height_direction(cell, ls)
    if k is None:
        if _depth >= _MAX_SUBDIV:
            raise UnresolvedGeometry(
                f"no usable height direction in cell {cell.index} after "
                f"{_depth} subdivisions")
        return _merge_rules([
            cut_surface_rule(sub, ls, q, max_roots, _depth + 1)
            for sub in _subcells(cell)], with_normals=True)
    lo_k, hi_k = cell.lo[k], cell.hi[k]

    nodes, weights = [], []
    breaks = _base_breakpoints(cell, ls, k, max_roots)
    for seg_lo, seg_hi in zip(breaks[:-1], breaks[1:]):
        base_x, base_w = _gauss_on(seg_lo, seg_hi, q)
        for xb, wb in zip(base_x, base_w):
            fn, fp = _line_fn(ls, k, xb)
            for root in find_roots_1d(fn, lo_k, hi_k, max_roots, fprime=fp):
                point = _make_point(k, root, xb)
                g1, g2 = ls.gradient(point[0], point[1])
                g = np.array([float(g1), float(g2)])
                gnorm = float(np.hypot(g[0], g[1]))
                if abs(g[k]) <= 1e-10 * max(gnorm, 1e-300):
                    raise UnresolvedGeometry(
                        f"contour tangential to height direction at {point}")
                nodes.append(point)
                weights.append(wb * gnorm / abs(g[k]))

    if not nodes:
        return _empty_rule(with_normals=True)
    nodes = np.array(nodes)
    g1, g2 = ls.gradient(nodes[:, 0], nodes[:, 1])
    grads = np.column_stack([g1, g2])
    normals = grads / np.linalg.norm(grads, axis=1)[:, None]
    return QuadRule(nodes=nodes, weights=np.array(weights), normals=normals)


def cut_face_rule(p0, p1, ls, phase, q, max_roots=MAX_ROOTS):
    """1D Gauss rule on the sub-segments of an axis-aligned face where phi has
    the requested sign.  ``p0`` and ``p1`` are the face endpoints."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    delta = p1 - p0
    axis = int(np.argmax(np.abs(delta)))
    if abs(delta[1 - axis]) > 1e-14 * abs(delta[axis]):
        raise ValueError("cut_face_rule expects an axis-aligned face")
    a, b = p0[axis], p1[axis]
    if a > b:
        a, b = b, a
    fixed = p0[1 - axis]
    fn, fp = _line_fn(ls, axis, fixed)
    want_neg = (phase == NEG)

    roots = find_roots_1d(fn, a, b, max_roots, fprime=fp)
    cuts = [a] + roots + [b]
    nodes, weights = [], []
    for s_lo, s_hi in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (s_lo + s_hi)
        neg = float(fn(np.asarray(mid))) < 0.0
        if neg != want_neg:
            continue
        x, w = _gauss_on(s_lo, s_hi, q)
        for xs, ws in zip(x, w):
            nodes.append(_make_point(axis, xs, fixed))
            weights.append(ws)

    if not nodes:
        return _empty_rule()
    return QuadRule(nodes=np.array(nodes), weights=np.array(weights))


def face_gauss_rule(p0, p1, q):
    """Full-face 1D Gauss rule (no level-set restriction)."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    delta = p1 - p0
    axis = int(np.argmax(np.abs(delta)))
    a, b = sorted((p0[axis], p1[axis]))
    fixed = p0[1 - axis]
    x, w = _gauss_on(a, b, q)
    nodes = np.array([_make_point(axis, xs, fixed) for xs in x])
    return QuadRule(nodes=nodes, weights=np.asarray(w).copy())
