"""
Locating one anomaly from noisy boundary data
=============================================

A small conducting ball sits inside a measurement sphere of radius 2.  We
simulate the field perturbation it causes, add 1% noise, project onto
spherical harmonics and read off position and permeability.
"""

import warnings

import numpy as np

from maganomaly import forward as fw
from maganomaly import harmonics as hm
from maganomaly import inversion as iv
from maganomaly.background import BackgroundField
from maganomaly.mesh import ShapeSpec
from maganomaly.polarization import Anomaly, MediumParams

med = MediumParams(mu0=1.0, eps0=1.0, eps_s=1.5, omega=1.0)
true = Anomaly((0.2, -0.3, 0.4), 0.1, ShapeSpec("unit-ball"), mu=2.0, eps=2.0, sigma=1.0)
bg = BackgroundField.uniform((0.3, -0.2, 1.0))
sc = fw.Scenario(med, bg, [true], 2.0, hm.SphereGrid(50, 100))

clean = fw.sample_measurements(sc, sc.tensors())
noisy = fw.add_noise(clean, 0.01, seed=4)

# multipoles up to degree 8; scale by delta^3 so moments are order one
d = iv.extract_multipoles(noisy, 8, scale=true.delta**3)
with warnings.catch_warnings():
    warnings.simplefilter("ignore", iv.InversionWarning)
    rec = iv.recover_single(d)

print("true center     ", true.center)
print("recovered center", np.round(rec.z, 4))
print("position error / delta:",
      f"{np.linalg.norm(rec.z - true.center) / true.delta:.3f}")

# with shape, delta and the other constants known, mu follows from the moment
mu = iv.recover_permeability_ball(rec.c, rec.z, true, med, bg)
print(f"recovered mu = {mu.real:.4f} (true {true.mu})")
