"""Level-set geometry: implicit descriptions of single- and bi-phase solids.

A geometry lives inside an axis-aligned background rectangle and is described
by a scalar level-set function phi.  The zero contour of phi is the embedded
boundary (single phase) or the material interface (bi-phase); the two phases
are the sign regions of phi.
"""

import ast
import math

import numpy as np

NEG = -1  # phase alpha: {phi < 0}
POS = +1  # phase beta:  {phi > 0}

EPS_GRAD = 1e-12


class DegenerateGradient(Exception):
    """Raised when the level-set gradient vanishes where a normal is needed."""


class BackgroundRect:
    """Axis-aligned rectangle [lo1,hi1] x [lo2,hi2] containing the solid."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if self.lo.shape != (2,) or self.hi.shape != (2,):
            raise ValueError("BackgroundRect is 2D: lo/hi must have length 2")
        if not np.all(self.lo < self.hi):
            raise ValueError(f"degenerate rectangle: lo={lo}, hi={hi}")

    @property
    def extent(self):
        return self.hi - self.lo

    @property
    def diagonal(self):
        return float(np.hypot(*(self.hi - self.lo)))

    @property
    def area(self):
        return float(np.prod(self.hi - self.lo))

    def __repr__(self):
        return f"BackgroundRect(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


class LevelSet:
    """Scalar field phi(x1, x2) with a (possibly finite-difference) gradient.

    ``fn`` and ``grad`` must accept numpy arrays and broadcast; ``grad``
    returns a pair (dphi/dx1, dphi/dx2).  When no analytic gradient is
    supplied, central finite differences with step ``fd_step`` are used.
    Instances are immutable after construction and safe for concurrent reads.
    """

    def __init__(self, fn, grad=None, fd_step=1e-8):
        self._fn = fn
        self._grad = grad
        self.fd_step = float(fd_step)

    def value(self, x1, x2):
        return self._fn(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))

    def gradient(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if self._grad is not None:
            g1, g2 = self._grad(x1, x2)
            return np.broadcast_to(g1, x1.shape).astype(float), \
                np.broadcast_to(g2, x2.shape).astype(float)
        h = self.fd_step
        g1 = (self._fn(x1 + h, x2) - self._fn(x1 - h, x2)) / (2.0 * h)
        g2 = (self._fn(x1, x2 + h) - self._fn(x1, x2 - h)) / (2.0 * h)
        return g1, g2

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.value(x[..., 0], x[..., 1])


def eval_levelset(ls, x):
    """phi at a single point ``x = (x1, x2)``."""
    return float(ls.value(x[0], x[1]))


def boundary_normal(ls, x, phase):
    """Unit normal of the zero contour at ``x``, outward from ``phase``.

    For phase alpha ({phi < 0}) the outward direction is +grad(phi); for
    phase beta it is -grad(phi).
    """
    g1, g2 = ls.gradient(x[0], x[1])
    g = np.array([float(g1), float(g2)])
    norm = float(np.hypot(g[0], g[1]))
    if norm <= EPS_GRAD:
        raise DegenerateGradient(f"|grad phi| = {norm:.3e} at x = {tuple(x)}")
    n = g / norm
    return n if phase == NEG else -n


# ---------------------------------------------------------------------------
# Built-in level-set families (every planar family used by the solver's
# benchmark geometries, plus a generic expression-based one).
# ---------------------------------------------------------------------------

def circle(radius, center):
    """phi = R^2 - |x - o|^2  (positive inside the disc)."""
    ox, oy = float(center[0]), float(center[1])
    r2 = float(radius) ** 2

    def fn(x1, x2):
        return r2 - (x1 - ox) ** 2 - (x2 - oy) ** 2

    def grad(x1, x2):
        return -2.0 * (x1 - ox), -2.0 * (x2 - oy)

    return LevelSet(fn, grad)


def halfplane(a, b, c):
    """phi = a*x1 + b*x2 + c  (negative side is phase alpha)."""
    a, b, c = float(a), float(b), float(c)

    def fn(x1, x2):
        return a * x1 + b * x2 + c

    def grad(x1, x2):
        return np.full_like(np.asarray(x1, dtype=float), a), \
            np.full_like(np.asarray(x2, dtype=float), b)

    return LevelSet(fn, grad)


def trig_product(n1=1, n2=1, offset=0.125):
    """phi = cos(2 pi n1 x1) * cos(2 pi n2 x2) - offset."""
    w1 = 2.0 * math.pi * n1
    w2 = 2.0 * math.pi * n2
    offset = float(offset)

    def fn(x1, x2):
        return np.cos(w1 * x1) * np.cos(w2 * x2) - offset

    def grad(x1, x2):
        return -w1 * np.sin(w1 * x1) * np.cos(w2 * x2), \
            -w2 * np.cos(w1 * x1) * np.sin(w2 * x2)

    return LevelSet(fn, grad)


def constant(value=-1.0):
    """Uniform phi; phi < 0 makes the whole rectangle phase alpha."""
    value = float(value)

    def fn(x1, x2):
        return np.full_like(np.asarray(x1, dtype=float), value)

    def grad(x1, x2):
        z = np.zeros_like(np.asarray(x1, dtype=float))
        return z, z.copy()

    return LevelSet(fn, grad)


def blend_levelsets(components, delta1, delta2, fd_step=1e-8):
    """Blend several level sets into one:

        phi(x) = 1 - sum_k [max(0, 1 - phi_k(x)/delta1)]^delta2

    delta1 and delta2 control the sharpness of the transition between the
    blended components.  The gradient is obtained by finite differences
    (the max() kink makes an analytic gradient pointless).
    """
    if not components:
        raise ValueError("blend_levelsets needs at least one component")
    if delta1 <= 0 or delta2 <= 0:
        raise ValueError("blend parameters delta1, delta2 must be positive")
    d1, d2 = float(delta1), float(delta2)
    fns = [c._fn for c in components]

    def fn(x1, x2):
        acc = np.zeros(np.broadcast(np.asarray(x1), np.asarray(x2)).shape)
        for f in fns:
            acc = acc + np.maximum(0.0, 1.0 - f(x1, x2) / d1) ** d2
        return 1.0 - acc

    return LevelSet(fn, grad=None, fd_step=fd_step)


def lattice_strut(width, shift=0.5, sign=+1.0):
    """phi = |sin(pi (x1 + sign*x2 - shift))| - width, a diagonal strut array."""
    w = float(width)
    s = float(shift)
    sg = float(sign)

    def fn(x1, x2):
        return np.abs(np.sin(math.pi * (x1 + sg * x2 - s))) - w

    return LevelSet(fn)


def slab(lo, hi):
    """phi = (hi - x1)(x1 - lo): positive inside the vertical slab lo < x1 < hi."""
    lo, hi = float(lo), float(hi)

    def fn(x1, x2):
        return (hi - x1) * (x1 - lo)

    def grad(x1, x2):
        return hi + lo - 2.0 * np.asarray(x1, dtype=float), \
            np.zeros_like(np.asarray(x2, dtype=float))

    return LevelSet(fn, grad)


# ---------------------------------------------------------------------------
# Expression-string level sets.  Grammar: + - * / ^, sin, cos, tan, abs,
# atan, exp, sqrt, max, min, numeric constants, pi, and variables x1, x2.
# Parsed through the Python ast module with a strict node whitelist.
# ---------------------------------------------------------------------------

_ALLOWED_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "abs": np.abs,
    "atan": np.arctan, "exp": np.exp, "sqrt": np.sqrt,
    "max": np.maximum, "min": np.minimum,
}
_ALLOWED_NAMES = {"x1", "x2", "pi"}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
    ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow,
    ast.USub, ast.UAdd,
)


class ExpressionError(ValueError):
    """Malformed or disallowed level-set expression."""


def _validate_expr(tree, text):
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ExpressionError(
                f"disallowed syntax {type(node).__name__!r} in {text!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.keywords:
                raise ExpressionError(f"bad function call in {text!r}")
            if node.func.id not in _ALLOWED_FUNCS:
                raise ExpressionError(f"unknown function {node.func.id!r}")
        elif isinstance(node, ast.Name):
            if node.id not in _ALLOWED_NAMES and node.id not in _ALLOWED_FUNCS:
                raise ExpressionError(f"unknown name {node.id!r} in {text!r}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)):
                raise ExpressionError(f"non-numeric constant in {text!r}")


def parse_expression(text):
    """Compile an expression string into a vectorized (x1, x2) -> phi callable."""
    source = text.replace("^", "**")
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc}") from None
    _validate_expr(tree, text)
    code = compile(tree, "<levelset>", "eval")
    namespace = dict(_ALLOWED_FUNCS)
    namespace["pi"] = math.pi

    def fn(x1, x2):
        env = dict(namespace)
        env["x1"] = np.asarray(x1, dtype=float)
        env["x2"] = np.asarray(x2, dtype=float)
        return np.asarray(eval(code, {"__builtins__": {}}, env), dtype=float)

    return fn


def expression(text, fd_step=1e-8):
    """Level set from an expression string in x1, x2."""
    return LevelSet(parse_expression(text), grad=None, fd_step=fd_step)


def structured_solid(length=5.0, width=0.4, delta1=0.2, delta2=2.0):
    """Lattice specimen: two homogeneous ends and a central strut lattice.

    Blends two diagonal strut families with a slab selecting the central
    region x1 in (length, 2*length).
    """
    parts = [
        lattice_strut(width, sign=-1.0),
        lattice_strut(width, sign=+1.0),
        slab(length, 2.0 * length),
    ]
    return blend_levelsets(parts, delta1, delta2)
