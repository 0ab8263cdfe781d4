"""Asymptotic variance under the doubling map, compared with closed forms.

Digits of x under doubling are independent fair bits, which gives exact
variances for a few observables:

* cos(2 pi x): correlations vanish, sigma^2 = 1/2
* x: Cov(x, T^n x) = 2^-n / 12, sigma^2 = 1/4
* 1[0, 1/4): one correlated lag, sigma^2 = 5/16
* cos(2 pi x) - cos(2 pi T x): a coboundary, sigma^2 = 0

Run with ``python3 demos/green_kubo_doubling.py``.
"""

from quenched_asip import covariance as cv
from quenched_asip import driving, maps, transfer as tr
from quenched_asip import observables as ob

K = 4096

fam = maps.MapFamily({"doubling": maps.doubling()})
sys = driving.constant("doubling")
coc = tr.cocycle(fam, sys, K)

cases = [
    ("cos(2 pi x)", ob.cosine(), 0.5),
    ("x", ob.identity(), 0.25),
    ("1[0, 1/4)", ob.indicator(0.0, 0.25), 5 / 16),
    ("coboundary of cos", ob.coboundary(ob.cosine(), fam, sys), 0.0),
]

print(f"grid k = {K}")
print(f"{'observable':<20} {'sigma^2':>14} {'exact':>10} {'Var(S_1024)/1024':>18}")
for name, g, exact in cases:
    gc = cv.center_observable(g, coc)
    s2, _ = cv.sigma_scalar(fam, sys, gc, 0, N_max=64, k=K)
    fin = cv.finite_n_covariance(fam, sys, gc, 0, [1024], K)
    print(f"{name:<20} {s2:>14.8f} {exact:>10.6f} {fin.matrices[0][0, 0] / 1024:>18.8f}")

# the coboundary's partial sums stay bounded, so Var(S_n) does not grow with n
gc = cv.center_observable(cases[-1][1], coc)
fin = cv.finite_n_covariance(fam, sys, gc, 0, [16, 64, 256, 1024], K)
print("\ncoboundary Var(S_n):", {n: round(float(M[0, 0]), 6) for n, M in zip(fin.n_list, fin.matrices)})
print(f"growth exponent {fin.growth_exponent:.3f} (about 1 for nondegenerate sums)")
