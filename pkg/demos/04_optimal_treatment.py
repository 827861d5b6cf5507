"""Optimal immune boosting and antiviral treatment over 20 days.

Each scenario is solved by forward-backward sweep on one shared bundle of
Wiener paths, so cost differences are paired.  The printout lists the cost
of each scenario, the average control effort, and the mean viral load at
a few times.  Lighter weights (second run) buy more treatment.
"""
import numpy as np

from viralsde import paired_difference, preset, scenario_compare

for name in ("fig66a", "figlkm_b"):
    cfg = preset(name)
    ctl = cfg.control
    print(f"\n{name}: A1={ctl.weights.a1}, A2={ctl.weights.a2}, start {tuple(cfg.initial)}")
    cmp_ = scenario_compare(cfg.initial, cfg.grid, cfg.params, cfg.noise, ctl.weights,
                            adjoint_n=ctl.adjoint_n, config=ctl.sweep)
    idx = [np.searchsorted(cfg.grid.times, t) for t in (2, 5, 10, 20)]
    for scen, r in cmp_.results.items():
        b = " ".join(f"{v:7.2f}" for v in r.state_mean[idx, 2])
        u = " ".join(f"{v:.3f}" for v in r.control.values.mean(axis=0))
        print(f"  {scen:15s} J={r.cost:8.1f} +- {r.cost_se:5.2f}  mean u=({u})  B(2,5,10,20)={b}")
    d, se = paired_difference(cmp_.results["combined"], cmp_.results["antiviral_only"])
    print(f"  combined - antiviral_only: {d:.1f} +- {se:.2f}")
