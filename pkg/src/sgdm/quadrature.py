"""Fixed-order Gauss quadrature on intervals and triangles.

One global rule per simplex type (degree 9 on intervals, degree 6 on
triangles) is used everywhere: exact for all products of piecewise-linear
reconstructions, and tight enough for the smooth trigonometric test fields
of the verification suite.
"""

import numpy as np

# 5-point Gauss-Legendre on [0, 1]; weights sum to 1.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)
INTERVAL_NODES = 0.5 * (_GL_X + 1.0)
INTERVAL_WEIGHTS = 0.5 * _GL_W


def _perm3(a):
    b = 0.5 * (1.0 - a)
    return [[a, b, b], [b, a, b], [b, b, a]]


def _perm6(a, b):
    c = 1.0 - a - b
    return [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]]


# 12-point degree-6 rule on the reference triangle (Dunavant), barycentric
# coordinates; weights sum to 1.
TRIANGLE_BARY = np.array(
    _perm3(0.501426509658179)
    + _perm3(0.873821971016996)
    + _perm6(0.053145049844817, 0.310352451033784)
)
TRIANGLE_WEIGHTS = np.array(
    [0.116786275726379] * 3 + [0.050844906370207] * 3 + [0.082851075618374] * 6
)


def interval_rule(a, b):
    """Quadrature nodes/weights on the interval [a, b]."""
    return a + (b - a) * INTERVAL_NODES, (b - a) * INTERVAL_WEIGHTS


def triangle_rule(verts):
    """Quadrature nodes/weights on a triangle given as a (3, 2) array."""
    verts = np.asarray(verts, dtype=float)
    pts = TRIANGLE_BARY @ verts
    area = 0.5 * abs(
        (verts[1, 0] - verts[0, 0]) * (verts[2, 1] - verts[0, 1])
        - (verts[2, 0] - verts[0, 0]) * (verts[1, 1] - verts[0, 1])
    )
    return pts, area * TRIANGLE_WEIGHTS


def polygon_rule(poly):
    """Quadrature on a convex polygon by fanning triangles from vertex 0.

    Exact for polynomials up to degree 4; returns empty arrays for
    degenerate polygons (fewer than 3 vertices).
    """
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        return np.empty((0, 2)), np.empty(0)
    pts = []
    wts = []
    for i in range(1, len(poly) - 1):
        x, w = triangle_rule(poly[[0, i, i + 1]])
        pts.append(x)
        wts.append(w)
    return np.vstack(pts), np.concatenate(wts)
