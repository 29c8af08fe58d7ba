"""Build two stages of the sequence and read off the hypotheses and the area certificate."""
from iterjulia.construction import ConstructionConfig, certify_positive_area, construct

state = construct(ConstructionConfig(resolution=192, max_stages=2, seed=1))
for p in state.params:
    print(f"stage {p.n}: s={p.s} t={p.t} u={p.u} c={p.c:.3g} eps={p.eps:.3g} "
          f"tau={p.tau} kappa={p.kappa} end={p.end}")
for n, hyp in state.hypotheses.items():
    print(f"after stage {n}: " + " ".join(f"H{k}:{'ok' if h['pass'] else 'FAIL'}" for k, h in hyp.items()))
for w in state.witnesses:
    print(f"witness for dense point {w.k} from stage {w.stage}: distance {w.dist:.3g}")
for c in certify_positive_area(state):
    print(f"m(B^{c['n']}) grid {c['grid_measure']:.12f} >= {c['bound']:.12f}; "
          f"Monte-Carlo {c['mc_measure']:.5f} +- {3 * c['mc_sigma']:.5f}; m(K minus F) {c['K_minus_F']:.4g}")
for note in state.notes:
    print("note:", note)
