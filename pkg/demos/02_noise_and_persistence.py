"""Persistence under weak noise and what strong noise does to it.

With beta = 0.05 and mu = mu1 = 0.1 the infection persists (R0 about 3.5)
and small noise leaves paths scattered around the endemic state.  We then
raise both noise intensities together and record the fraction of paths
that have cleared by day 100.
"""
import numpy as np

from viralsde import NoiseParams, equilibria, preset, run_ensemble

cfg = preset("example2")
e1 = np.array(equilibria(cfg.params).e1)
st = run_ensemble(cfg.initial, cfg.grid, cfg.params, cfg.noise, n_paths=300, record_every=100).stats
print(f"endemic state E1 = {np.round(e1, 3)}")
print(f"sigma=0.1: mean state at day 100 = {np.round(st.mean[-1], 3)}, extinct {st.extinction_probability:.3f}")

print("\nsigma1=sigma2   extinction probability")
for sigma in (0.0, 0.25, 0.5, 0.75, 1.0):
    st = run_ensemble(cfg.initial, cfg.grid, cfg.params, NoiseParams(sigma, sigma),
                      n_paths=200, record_every=100).stats
    print(f"{sigma:14.2f}   {st.extinction_probability:.3f}")

cfg3 = preset("example3")
st = run_ensemble(cfg3.initial, cfg3.grid, cfg3.params, cfg3.noise, n_paths=300, record_every=100).stats
print(f"\nsigma1=0.5, sigma2=0.8: extinct by day 100 in {st.extinction_probability:.3f} of paths")
