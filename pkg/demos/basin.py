"""Empirical stability basin: largest distance to Einstein along the flow vs amplitude.

    python demos/basin.py
"""
from ricci_s2 import lab

config = lab.ExperimentConfig(n=64)
report = lab.basin_experiment([0.02, 0.05, 0.1, 0.2, 0.3], config, k=3)
print(f"{'eps':>6} {'initial':>10} {'max excursion':>14} {'t_final':>8}")
for cell in report.cells:
    print(f"{cell['amplitude']:6.2f} {cell['initial_distance']:10.3e} "
          f"{cell['max_excursion']:14.3e} {cell['t_final']:8.2f}")
for check in report.checks:
    print(("PASS " if check.passed else "FAIL ") + check.name)
