"""Normalized flow from a P_2 perturbation: the gap, |grad mu| and the fits.

    python demos/p2_relaxation.py [n]
"""
import sys

from ricci_s2 import lab

n = int(sys.argv[1]) if len(sys.argv) > 1 else 128
p = lab.Perturbation("conformal-mode", 2, 0.1)
traj = lab.run_cell(p, lab.ExperimentConfig(n=n))

print(f"{'t':>6} {'mu gap':>11} {'|grad mu|':>11} {'sup|R-2|':>11}")
for s in traj.states[::10]:
    d = s.diagnostics
    print(f"{s.time:6.2f} {lab.MU_ROUND - d.mu:11.3e} {d.grad_mu_norm:11.3e} {d.sup_R_dev:11.3e}")
print(f"termination: {traj.termination} at t = {traj.states[-1].time:.2f}")

fit = lab.lojasiewicz_probe(traj)
print(f"\nLojasiewicz: alpha = {fit.alpha:.4f}, r^2 = {fit.r_squared:.6f}, C = {fit.C_bound:.3f}")
bound = lab.polynomial_decay_bound(traj, fit)
print(f"polynomial bound (alpha = {bound.alpha}): worst gap/bound = {bound.worst_ratio:.3f}")
for name, df in lab.decay_fit(traj).items():
    print(f"{name:>10}: exp rate {df.exponential.rate:.3f} (r^2 {df.exponential.r_squared:.6f}), "
          f"power {df.polynomial.rate:.2f} (r^2 {df.polynomial.r_squared:.6f}) -> {df.preferred}")
