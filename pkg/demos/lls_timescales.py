"""How often LLS investors sit at the 0.01 / 0.99 bounds as the step shrinks.

With memory measured in time units (scaled) the lookback grows as dt falls;
with memory measured in steps (fixed) it does not.  Twenty runs per cell
over a horizon of 200 time units keep this quick.
"""

from abcem.experiments import ExperimentConfig, run_lls_timescale_sweep

for mode in ("scaled", "fixed"):
    config = ExperimentConfig("lls_timescale_sweep", runs=20,
                              sweep={"dt": [1.0, 0.1], "memory_mode": [mode]})
    stats = run_lls_timescale_sweep(config)
    for key, metrics, counts in stats.cells:
        mean, lo, hi = metrics["boundary_frac"]
        print(f"{mode:>7} dt={key['dt']:<5} boundary share {mean:.3f} "
              f"(runs {lo:.2f}..{hi:.2f}, {counts['completed']} completed)")
