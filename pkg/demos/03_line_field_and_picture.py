"""Assemble the invariant line-field family, audit it, and draw the filled Julia set at time tau_1."""
import sys
from pathlib import Path

from iterjulia.construction import ConstructionConfig, construct
from iterjulia.line_fields import assemble_family, invariance_report, restrict_to_julia
from iterjulia.render import RenderSpec, render, to_ppm

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)
state = construct(ConstructionConfig(resolution=128, max_stages=2, seed=2))
fam = assemble_family(state, max_points_per_cloud=3000)
rep = invariance_report(fam, state.seq, pairs=5000)
print(f"{len(fam)} samples on times {fam.times()}; max residual {rep['max_residual']:.2e}, "
      f"max ||mu|-1| {rep['max_modulus_deviation']:.2e}, collisions {rep['collisions']}")
julia = restrict_to_julia(fam, state)
print(f"support after restriction to Julia-proximate samples: {len(julia.support())} of {len(fam)}")
(out / "family.csv").write_text(julia.to_csv())

tau = state.params[0].tau
image = render(state.seq, RenderSpec(time_index=tau, half_width=1.5, width=400, height=400, max_horizon=5000))
(out / "julia_tau1.ppm").write_bytes(to_ppm(image))
print(f"wrote {out / 'julia_tau1.ppm'}")
