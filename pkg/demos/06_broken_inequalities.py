"""
Sobolev-Poincare and trace inequalities in Crouzeix-Raviart spaces
==================================================================

Sample discrete functions vanishing (in the facet-moment sense) on the
Dirichlet side and compare their L^{p*} norms in the domain and L^{p#} norms
on the boundary with the broken W^{1,p} seminorm that only sees averaged jumps.
The largest ratio over the samples should stay bounded as the mesh is refined
and the order is raised.
"""

import numpy as np

from cr_forchheimer.inequalities import BrokenNormEvaluator, BrokenNormSpec, estimate_constant, sample_functions
from cr_forchheimer.mesh import build_facets, dirichlet_on, generate_structured_mesh
from cr_forchheimer.spaces import build_cr_space

spec = BrokenNormSpec(1.5)
print(f"p = {spec.p}, p* = {spec.p_star}, p# = {spec.p_sharp}")

box = (-1.0, 1.0, -1.0, 1.0)
for nx in (4, 8, 16):
    mesh = generate_structured_mesh(nx, nx, box)
    topo = build_facets(mesh, dirichlet_on("left"))
    for k in (1, 2, 3):
        space = build_cr_space(mesh, topo, k)
        est = estimate_constant(space, spec, n_samples=100, seed=0)
        print(f"  h = {mesh.h:.3f} k = {k}: poincare {est.poincare:.4f}, trace {est.trace:.4f}")

# the seminorm with averaged jumps never exceeds the one with full jumps
V = sample_functions(space, 20, seed=1)
ev = BrokenNormEvaluator(space, spec)
print("averaged <= full on all samples:", bool(np.all(ev.tilde_norm(V) <= ev.full_norm(V) + 1e-12)))
