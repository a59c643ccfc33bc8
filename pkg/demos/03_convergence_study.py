"""
Convergence rates on a mesh sequence
====================================

Errors of the flux (L^2, relative) and of the broken potential gradient
(L^{alpha'}, relative) on four structured meshes, with least-squares rates.
Both should decay like h^k.
"""

from cr_forchheimer.cases import case1
from cr_forchheimer.errors import ErrorReport, error_flux_l2, error_potential_grad
from cr_forchheimer.mesh import refine_sequence
from cr_forchheimer.solver import DarcyForchheimerProblem, run

case = case1(alpha=3.0, beta=1.0)  # a smaller beta keeps the demo quick

for k in (1, 2):
    report = ErrorReport()
    print(f"k = {k}")
    for mesh in refine_sequence(3, 4):
        problem = DarcyForchheimerProblem(case, mesh, k)
        result = run(problem)
        e_u = float(error_flux_l2(case.u_exact, result.u_coeffs, problem.flux))
        e_p = float(error_potential_grad(case.grad_p_exact, result.p_coeffs, problem.cr, case.alpha))
        report.add(mesh.h, e_u, e_p)
        print(f"  h = {mesh.h:.4f}  iterations {result.iterations:3d}  E_u {e_u:.3e}  E_p {e_p:.3e}")
    print(f"  fitted rates: flux {report.rates['rate_u']:.2f}, potential {report.rates['rate_p']:.2f}")
