"""Command-line driver: ``construct``, ``render``, ``verify`` and ``lemmas``.

Exit codes: 0 success, 1 a check failed, 2 usage or parse error, 3 a
resource cap was exhausted.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .construction import ConstructionConfig, ConstructionError, StageParams, StageState, certify_positive_area, replay, run_stage, stage_log
from .dyn_sets import FitFailure, PetalModel, classification_stability, lemma21_decay, lemma22_shrink, seed_disc
from .line_fields import LineFieldFamily, assemble_family, invariance_report, plan_hash
from .poly_core import FAMILY_ESCAPE_RADIUS, SequenceParseError, dumps_sequence, loads_sequence
from .render import Palette, RenderSpec, render, to_ppm

logger = logging.getLogger("iterjulia")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CAP = 0, 1, 2, 3
CAP_CODES = {"S_CAP_EXCEEDED", "T_CAP_EXCEEDED", "U_CAP_EXCEEDED", "RESOLUTION_EXHAUSTED", "DENSE_EXHAUSTED"}
INVARIANCE_TOL = 1e-9


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    resolution: int = 256
    mc_points: int = 50_000
    seed: int = 0
    max_stages: int = 2
    escape_radius_override: float | None = None
    petal_threshold: float = 5.0
    s_max: int = 4096
    t_max: int = 4096
    u_max: int = 16384
    output_dir: str = "out"
    family_points: int = 2000
    verify_pairs: int = 10_000
    stability_points: int = 10_000
    lemma_n_max: int = 32
    lemma_resolution: int = 512
    shrink_steps: list[int] = field(default_factory=lambda: [10, 20, 40, 80])

    def __post_init__(self):
        if self.resolution < 8:
            raise UsageError("resolution must be >= 8")
        if self.max_stages < 1:
            raise UsageError("max_stages must be >= 1")
        if min(self.s_max, self.t_max, self.u_max) < 1:
            raise UsageError("caps must be >= 1")

    @property
    def radius(self) -> float:
        return FAMILY_ESCAPE_RADIUS if self.escape_radius_override is None else self.escape_radius_override

    def construction(self) -> ConstructionConfig:
        return ConstructionConfig(
            resolution=self.resolution, mc_points=self.mc_points, seed=self.seed,
            max_stages=self.max_stages, petal=PetalModel(threshold=self.petal_threshold),
            s_max=self.s_max, t_max=self.t_max, u_max=self.u_max, radius=self.radius, strict=False,
        )

    @classmethod
    def from_text(cls, text: str, **overrides) -> "RunConfig":
        """Parse flat ``key = value`` lines; ``#`` starts a comment."""
        known = {f.name: f for f in fields(cls)}
        values: dict = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = (p.strip() for p in line.partition("="))
            if not sep or key not in known:
                raise UsageError(f"config line {lineno}: unknown or malformed entry {raw!r}")
            values[key] = _coerce(key, val, lineno)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def _coerce(key: str, val: str, lineno: int):
    try:
        if key == "escape_radius_override":
            return None if val.lower() in ("", "none") else float(val)
        if key == "shrink_steps":
            return [int(x) for x in val.replace(",", " ").split()]
        if key == "output_dir":
            return val
        if key == "petal_threshold":
            return float(val)
        return int(val)
    except ValueError as exc:
        raise UsageError(f"config line {lineno}: bad value for {key}: {val!r}") from exc


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default, allow_nan=True) + "\n"


def _load_config(args) -> RunConfig:
    text = Path(args.config).read_text() if args.config else ""
    overrides = {"seed": args.seed, "output_dir": args.out}
    for name in ("max_stages", "resolution"):
        overrides[name] = getattr(args, name, None)
    return RunConfig.from_text(text, **overrides)


# -- commands ----------------------------------------------------------------------


def cmd_construct(config: RunConfig) -> int:
    out = Path(config.output_dir)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    state = StageState(config.construction())
    error: ConstructionError | None = None
    for _ in range(config.max_stages):
        try:
            run_stage(state)
        except ConstructionError as exc:
            error = exc
            break
    (out / "sequence.txt").write_text(dumps_sequence(state.seq))
    log = stage_log(state) if state.params else {"stages": []}
    log["config"] = dataclasses.asdict(config) | {"output_dir": None}
    if error is not None:
        log["error"] = {"code": error.code, "detail": error.detail}
    for n, d in state.discs.items():
        (out / "clouds" / f"disc{n}.csv").write_text(d.to_csv())
    (out / "clouds" / "time0.csv").write_text(state.time0.to_csv())
    if state.params:
        fam = assemble_family(state, max_points_per_cloud=config.family_points)
        (out / "family.csv").write_text(fam.to_csv())
    failed = [f"stage {n} hypothesis {h}" for n, hyp in state.hypotheses.items()
              for h, rec in hyp.items() if not rec["pass"]]
    cert_failed = [f"certificate stage {c['n']}" for c in log.get("certificate", []) if not c["pass"]]
    log["verdict"] = {"hypothesis_failures": failed, "certificate_failures": cert_failed}
    (out / "stage_log.json").write_text(dump_json(log))
    if error is not None:
        print(f"construct: {error}", file=sys.stderr)
        return EXIT_CAP if error.code in CAP_CODES else EXIT_FAIL
    if failed or cert_failed:
        print("construct: " + "; ".join(failed + cert_failed), file=sys.stderr)
        return EXIT_FAIL
    print(f"construct: {len(state.params)} stage(s), sequence length {len(state.seq)}, all hypotheses pass")
    return EXIT_OK


def cmd_render(seq_file: Path, spec: RenderSpec, out: Path) -> int:
    seq = loads_sequence(Path(seq_file).read_text())
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(to_ppm(render(seq, spec)))
    print(f"render: wrote {out}")
    return EXIT_OK


def cmd_verify(seq_file: Path, family_file: Path, config: RunConfig, log_file: Path | None = None) -> int:
    seq = loads_sequence(Path(seq_file).read_text())
    fam = LineFieldFamily.from_csv(Path(family_file).read_text())
    if fam.plan_sha256 != plan_hash(seq):
        raise UsageError("family file was built on a different sequence (plan hash mismatch)")
    log_file = Path(log_file) if log_file else Path(seq_file).with_name("stage_log.json")
    log = json.loads(log_file.read_text())
    params = [StageParams.from_dict(s["params"]) for s in log["stages"]]
    checks: dict[str, dict] = {}
    inv = invariance_report(fam, seq, config.verify_pairs, config.seed)
    inv["pass"] = (inv["max_residual"] < INVARIANCE_TOL and inv["max_modulus_deviation"] < INVARIANCE_TOL
                   and inv["collisions"] == 0)
    checks["invariance"] = inv
    times = sorted({0} | {t for p in params for t in (p.tau, p.kappa, p.end)})
    stab = classification_stability(seq, times, config.stability_points, config.seed, config.radius)
    stab["pass"] = stab["flips"] == 0
    checks["classification"] = stab
    state = replay(seq, params, config.construction())
    cert = certify_positive_area(state)
    checks["certificate"] = {"stages": cert, "pass": all(c["pass"] for c in cert)}
    failed = [k for k, v in checks.items() if not v["pass"]]
    verdict = {"checks": checks, "failed": failed, "pass": not failed, "plan_sha256": fam.plan_sha256}
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "verify.json").write_text(dump_json(verdict))
    if failed:
        print("verify: failed " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    print("verify: all checks pass")
    return EXIT_OK


def cmd_lemmas(config: RunConfig) -> int:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report: dict = {"seed": config.seed}
    try:
        fit = lemma21_decay(config.lemma_n_max, resolution=config.lemma_resolution, seed=config.seed)
    except FitFailure as exc:
        report["lemma21"] = {"error": str(exc)}
        (out / "lemmas.json").write_text(dump_json(report))
        print(f"lemmas: fit failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report["lemma21"] = {"lambda_hat": fit.lambda_hat, "c_hat": fit.c_hat, "slope": fit.slope,
                         "N": fit.Ns, "measures": fit.measures, "continuation_max": fit.continuation_max}
    disc = seed_disc(0j, 1 / 3, config.resolution)
    petal = PetalModel(threshold=config.petal_threshold)
    shrink = lemma22_shrink(disc, petal, config.shrink_steps)
    report["lemma22"] = {"m": config.shrink_steps, "leakage": shrink}
    ok_decay = fit.lambda_hat > 1
    ok_shrink = all(b <= a for a, b in zip(shrink, shrink[1:]))
    report["pass"] = bool(ok_decay and ok_shrink)
    (out / "lemmas.json").write_text(dump_json(report))
    print(f"lemmas: lambda_hat={fit.lambda_hat:.4g} shrink={shrink}")
    return EXIT_OK if report["pass"] else EXIT_FAIL


# -- argument parsing -----------------------------------------------------------------


def _complex(text: str) -> complex:
    try:
        if "," in text:
            re_, im_ = text.split(",")
            return complex(float(re_), float(im_))
        return complex(text.replace(" ", ""))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a complex number: {text!r}") from exc


def _pixels(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("pixels must look like 256x256") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iterjulia", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("construct", help="run the staged construction")
    common(p)
    p.add_argument("--max-stages", dest="max_stages", type=int)
    p.add_argument("--resolution", type=int)

    p = sub.add_parser("render", help="escape-time picture of a sequence")
    common(p)
    p.add_argument("seq_file")
    p.add_argument("--time", type=int, default=0)
    p.add_argument("--center", type=_complex, default=0j)
    p.add_argument("--half-width", type=float, default=2.0)
    p.add_argument("--pixels", type=_pixels, default=(256, 256))
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--palette", choices=[x.value for x in Palette], default=Palette.ESCAPE_TIME.value)
    p.add_argument("--image", help="output file (default <out>/render.ppm)")

    p = sub.add_parser("verify", help="check a constructed sequence and line-field family")
    common(p)
    p.add_argument("seq_file")
    p.add_argument("family_file")
    p.add_argument("--log", help="stage log (default: stage_log.json beside the sequence)")

    p = sub.add_parser("lemmas", help="leakage-decay and cusp-shrink reports")
    common(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _load_config(args)
        if args.command == "construct":
            return cmd_construct(config)
        if args.command == "render":
            spec = RenderSpec(time_index=args.time, center=args.center, half_width=args.half_width,
                              width=args.pixels[0], height=args.pixels[1], max_horizon=args.horizon,
                              palette=Palette(args.palette), radius=config.radius)
            image = Path(args.image) if args.image else Path(config.output_dir) / "render.ppm"
            return cmd_render(Path(args.seq_file), spec, image)
        if args.command == "verify":
            return cmd_verify(Path(args.seq_file), Path(args.family_file), config,
                              Path(args.log) if args.log else None)
        return cmd_lemmas(config)
    except (UsageError, SequenceParseError, FileNotFoundError, ValueError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConstructionError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        if exc.code == "RESOLUTION_EXHAUSTED":
            print("raise the resolution and retry", file=sys.stderr)
        return EXIT_CAP if exc.code in CAP_CODES else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
