"""Meshes and discrete spaces.

Builds interval and criss-cross rectangle meshes, refines them, round-trips
one through the text format, and compares the three reconstruction flavours
on the same nodal data.
"""

import tempfile
from pathlib import Path

import numpy as np

from sgdm import (
    build_gd,
    build_uniform_interval,
    build_uniform_triangulation,
    load_mesh,
    refine,
    save_mesh,
)

# A 1D mesh of (0, 2) and two uniform refinements: h halves each time.
mesh = build_uniform_interval(4, 0.0, 2.0)
print(f"interval mesh: {mesh.n_cells} cells, h = {mesh.h}, |domain| = {mesh.cell_measures.sum()}")
for _ in range(2):
    mesh = refine(mesh)
    print(f"  refined: {mesh.n_cells} cells, h = {mesh.h}")

# A rectangle split into triangles (2 per grid quad).
square = build_uniform_triangulation(4, 4)
print(f"\nunit square: {square.n_cells} triangles, area = {square.cell_measures.sum():.15f}")

# The text format is line oriented; loading validates structure.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "square.txt"
    save_mesh(square, path)
    again = load_mesh(path)
    print(f"round-trip through {path.name}: {np.array_equal(again.cells, square.cells)}")

# Three discrete spaces on the same mesh. All encode zero boundary values:
# reconstructed fields of any coefficient vector vanish on the boundary.
for kind in ("p1", "p1_lumped", "cr"):
    gd = build_gd(square, kind)
    v = gd.interpolate(lambda x: np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]))
    print(
        f"{kind:10s} n_dofs = {gd.n_dofs:3d}   ||Pi v||_2 = {gd.lp_norm(v, 2):.6f}"
        f"   ||grad v||_2 = {gd.grad_lp_norm(v, 2):.6f}"
    )
print("\n(continuum values for sin sin:  ||.||_2 = 0.5, ||grad||_2 = pi/2 ~ 1.5708)")
