"""Escape radius, the cusp petal and the two decay properties the construction leans on."""
import math

from iterjulia import FAMILY_BOUNDS, P1, BoundedSequence
from iterjulia.dyn_sets import PetalModel, lemma21_decay, lemma22_shrink, measure, seed_disc, survival_set, verify_petal
from iterjulia.poly_core import escape_radius

print(f"family bounds {FAMILY_BOUNDS}; generic escape radius {escape_radius(FAMILY_BOUNDS):.1f}, family radius 13")

# The filled Julia set of P1 = z(1+z)/2: its area settles as the horizon grows.
seq = BoundedSequence(FAMILY_BOUNDS, [P1] * 60)
for n in (5, 20, 60):
    cloud = survival_set(seq, 0, n, seed_disc(0j, 13.0, 256))
    print(f"m(S^{n}) for P1 alone: {measure(cloud, cloud.alive).value:.4f}")

petal = PetalModel()
check = verify_petal(petal)
print(f"petal forward invariance: {check}")

fit = lemma21_decay(32, resolution=512)
print(f"survival leakage outside K(P1) decays like {fit.c_hat:.3g} * {fit.lambda_hat:.3f}^-N")

leak = lemma22_shrink(seed_disc(0j, 1 / 3, 512), petal, [10, 20, 40, 80])
print(f"cusp leakage after 10/20/40/80 steps of P1: {leak}  (pi/9 = {math.pi / 9:.4f})")
print(f"fraction of D(0,1/3) inside the petal after 80 steps: {1 - leak[-1] / (math.pi / 9):.6f}")
