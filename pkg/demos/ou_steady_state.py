"""Stationary log price with the strategy split frozen at n = 0.

Compares the analytic Gaussian, a relaxed Fokker-Planck solve and a long
Euler-Maruyama chain, and shows the Gaussian centred at F/2 for contrast.
"""

from abcem.experiments import ExperimentConfig, run_ou_steadystate

report = run_ou_steadystate(ExperimentConfig("ou_steadystate",
                                             params={"samples": 200_000, "se_replicates": 4}))
print(report.report())
