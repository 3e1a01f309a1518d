"""
Polarization tensors of a small ball
====================================

For a ball every tensor is a multiple of the identity, so the boundary
element values can be compared with the closed form.  We also watch the
error shrink as the mesh is refined.
"""

import numpy as np

from maganomaly.mesh import ShapeSpec
from maganomaly.polarization import (Anomaly, MediumParams, ball_P_closed_form,
                                     tensors_for)

med = MediumParams(mu0=1.0, eps0=1.0, eps_s=1.5, omega=1.0)
ball = Anomaly((0.0, 0.0, 0.0), 0.1, ShapeSpec("unit-ball", refinement=3),
               mu=2.0, eps=2.0, sigma=0.5)

# numeric tensors come from the adjoint Neumann-Poincare operator on the mesh
t = tensors_for(ball, med, "numeric")
print("P (numeric):")
print(np.round(t.P, 6))

P_exact = ball_P_closed_form(ball, med)
print("P (closed form) diagonal:", np.round(np.diag(P_exact), 6))

# refine and compare; relative error should drop by roughly 4x per level
for level in (2, 3, 4):
    a = Anomaly(ball.z, ball.delta, ShapeSpec("unit-ball", refinement=level),
                mu=ball.mu, eps=ball.eps, sigma=ball.sigma)
    P = tensors_for(a, med, "numeric").P
    err = np.linalg.norm(P - P_exact) / np.linalg.norm(P_exact)
    print(f"refinement {level}: relative error {err:.2e}")
