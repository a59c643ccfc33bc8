"""
Meshes and Crouzeix-Raviart spaces
==================================

Build a structured triangulation of (-1, 1)^2, tag boundary facets, and look at
the degrees of freedom of the Crouzeix-Raviart space for a few orders.
"""

from cr_forchheimer.mesh import build_facets, dirichlet_on, generate_structured_mesh, perturb_mesh
from cr_forchheimer.spaces import FluxSpace, build_cr_space, cr_interpolate, eval_cr

# a 4 x 4 grid of squares, each split along the SW-NE diagonal
mesh = generate_structured_mesh(4, 4, (-1.0, 1.0, -1.0, 1.0))
print(f"{mesh.n_cells} cells, {len(mesh.vertices)} vertices, h = {mesh.h:.4f}")

# the left side carries Dirichlet data, everything else is Neumann
topo = build_facets(mesh, dirichlet_on("left"))
print(f"{topo.interior.size} interior facets, {topo.dirichlet.size} Dirichlet, {topo.neumann.size} Neumann")

# odd orders use facet bubbles, even orders vertex functions plus bulk bubbles
# (one bulk bubble is dropped to remove the single global dependence)
for k in range(1, 6):
    space = build_cr_space(mesh, topo, k)
    flux = FluxSpace(mesh, k - 1)
    print(f"k={k}: CR dofs {space.n_dofs:4d}, constrained {space.constraints.fixed.size:3d}, "
          f"flux dofs {flux.n_dofs:4d}")

# the interpolant reproduces polynomials of degree k exactly
space = build_cr_space(mesh, topo, 3)
coeffs = cr_interpolate(space, lambda x, y: x**3 - 2 * x * y + y**2)
cell = 5
x, y = mesh.cell_coords()[cell].mean(axis=0)
print(f"cell {cell} centroid: interpolant {eval_cr(space, coeffs, cell, (x, y)):.12f}, "
      f"exact {x**3 - 2 * x * y + y**2:.12f}")

# jittered meshes are useful to break the symmetry of the structured ones
jittered = perturb_mesh(mesh, 0.2, seed=1)
print(f"jittered mesh: h = {jittered.h:.4f}")
