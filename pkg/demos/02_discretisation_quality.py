"""Discretisation quality indicators under refinement.

Tracks the four functionals that drive the convergence theory:

* consistency error (best interpolation defect) -- must decay to 0;
* conformity defect (discrete Stokes formula)   -- zero for conforming P1,
  decays ~ h for Crouzeix-Raviart;
* translate bound (compactness modulus)         -- bounded by C |shift|;
* discrete Poincare constant                    -- approaches the continuum
  value 1/pi on (0, 1).
"""

import numpy as np

from sgdm import (
    build_gd,
    build_uniform_interval,
    build_uniform_triangulation,
    indicator_T,
    indicator_W,
    poincare_constant,
    refine,
)
from sgdm.indicators import consistency_error

phi = lambda x: np.sin(np.pi * x[:, 0])
dphi = lambda x: np.pi * np.cos(np.pi * x[:, 0])[:, None]

print("interval (0,1), conforming P1, p = 2")
print(f"{'h':>8} {'S(sin)':>12} {'W(sin)':>12} {'T(h0/2)':>12} {'C_p':>10}")
mesh = build_uniform_interval(8, 0.0, 1.0)
for _ in range(4):
    gd = build_gd(mesh, "p1")
    s = consistency_error(gd, phi, dphi, p=2.0)
    w = indicator_W(gd, lambda x: phi(x)[:, None], lambda x: dphi(x)[:, 0], p=2.0)
    t = indicator_T(gd, [1 / 16], p=2.0)
    c = poincare_constant(gd, p=2.0)
    print(f"{mesh.h:8.4f} {s:12.3e} {w:12.3e} {t:12.6f} {c:10.6f}")
    mesh = refine(mesh)
print(f"{'':8} {'-> 0':>12} {'== 0':>12} {'<= C|xi|':>12} {1/np.pi:10.6f}")

print("\nunit square, Crouzeix-Raviart: the conformity defect is genuinely")
print("nonzero and decays roughly like h")
swirl = lambda x: np.column_stack([np.sin(np.pi * x[:, 1]), np.sin(np.pi * x[:, 0])])
div0 = lambda x: np.zeros(len(x))
mesh = build_uniform_triangulation(2, 2)
prev = None
for _ in range(4):
    gd = build_gd(mesh, "cr")
    w = indicator_W(gd, swirl, div0, p=2.0)
    rate = "" if prev is None else f"   observed order {np.log2(prev / w):.2f}"
    print(f"  h = {mesh.h:8.4f}   W = {w:.5f}{rate}")
    prev = w
    mesh = refine(mesh)
