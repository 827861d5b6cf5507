"""Faster immune clearance lowers the viral load.

Three pairs of clearance rates (p for infected cells, q for virions) are
compared by the time-averaged ensemble-mean viral load over 100 days.
"""
from viralsde import equilibria, preset, run_ensemble

for case in ("i", "ii", "iii"):
    cfg = preset(f"example4_{case}")
    st = run_ensemble(cfg.initial, cfg.grid, cfg.params, cfg.noise, n_paths=200, record_every=100).stats
    e1 = equilibria(cfg.params).e1
    b_star = "none" if e1 is None else f"{e1.b:.2f}"
    print(
        f"case {case:>3}: p={cfg.params.p}, q={cfg.params.q}  "
        f"time-averaged B = {st.time_average[2]:7.3f}, B at day 100 = {st.mean[-1, 2]:6.3f}, B* = {b_star}"
    )
