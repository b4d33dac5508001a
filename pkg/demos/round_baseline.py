"""mu and the weighted spectrum at the round sphere, and at a P_2 bump.

    python demos/round_baseline.py
"""
import numpy as np

from ricci_s2 import entropy as ent
from ricci_s2 import geometry as geo
from ricci_s2 import lab

grid = geo.make_grid(128)
rnd = geo.round_metric(grid)
res = ent.minimize_w(rnd)
print(f"mu(round)        = {res.mu:.12f}")
print(f"1 + log(4 pi)    = {lab.MU_ROUND:.12f}")
print(f"spread of f      = {np.ptp(res.minimizer_f):.2e}")

sp = ent.weighted_laplacian_spectrum(rnd, res.minimizer_f, 6)
print("eigenvalues      =", np.array2string(sp.eigenvalues, precision=8))

bumped = lab.perturb_round(lab.Perturbation("conformal-mode", 2, 0.1), grid)
res = ent.minimize_w(bumped)
print(f"mu(P_2, eps=0.1) = {res.mu:.12f}  (gap {lab.MU_ROUND - res.mu:.3e})")
print(f"|grad mu|        = {ent.mu_gradient_norm(bumped, result=res):.3e}")
