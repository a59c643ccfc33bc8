"""
Exact fluxes for k = 1
======================

For the lowest order the flux equation decouples: if the exact flux is a
divergence-free constant it is reproduced to round-off whatever the potential.
The second manufactured case (u = (1, -1), cubic potential) shows this.

For k = 2 the flux error should be small but nonzero. On the structured meshes it
is exact as well: their symmetry makes the discrete potential gradient hit the
projected gradient of x^3 + y^3. Jittering the interior vertices removes that
coincidence and the expected O(h^2) decay appears.
"""

from cr_forchheimer.cases import case2
from cr_forchheimer.errors import error_flux_l2
from cr_forchheimer.mesh import generate_structured_mesh, perturb_mesh
from cr_forchheimer.solver import DarcyForchheimerProblem, run

case = case2(alpha=3.0, beta=10.0)
box = (-1.0, 1.0, -1.0, 1.0)

for label, jitter in (("structured", 0.0), ("jittered", 0.2)):
    print(label)
    for k in (1, 2):
        errs = []
        for nx in (4, 8, 16):
            mesh = generate_structured_mesh(nx, nx, box)
            if jitter:
                mesh = perturb_mesh(mesh, jitter, seed=nx)
            problem = DarcyForchheimerProblem(case, mesh, k)
            result = run(problem)
            errs.append(float(error_flux_l2(case.u_exact, result.u_coeffs, problem.flux)))
        print(f"  k={k}: E_u = " + ", ".join(f"{e:.2e}" for e in errs))
