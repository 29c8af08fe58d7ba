import json
import math

import numpy as np
import pytest

from iterjulia.cli import RunConfig, UsageError, main
from iterjulia.line_fields import LineFieldFamily
from iterjulia.poly_core import loads_sequence
from iterjulia.render import Palette, RenderSpec, escape_times, render, to_ppm


def _read_ppm(path):
    data = path.read_bytes()
    head, w_h, maxval, rest = data.split(b"\n", 3)
    w, h = map(int, w_h.split())
    assert head == b"P6" and maxval == b"255"
    return np.frombuffer(rest, dtype=np.uint8).reshape(h, w, 3)


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "run.cfg"
    cfg.write_text("resolution = 64\nmc_points = 3000\nmax_stages = 2\nfamily_points = 400\n")
    assert main(["construct", "--config", str(cfg), "--seed", "5", "--out", str(out / "a")]) == 0
    return out, cfg


def test_config_parsing():
    cfg = RunConfig.from_text("# comment\nresolution = 64  # inline\nshrink_steps = 10, 20\n"
                              "escape_radius_override = 20\n", seed=3)
    assert (cfg.resolution, cfg.seed, cfg.shrink_steps, cfg.radius) == (64, 3, [10, 20], 20.0)
    with pytest.raises(UsageError):
        RunConfig.from_text("bogus = 1\n")
    with pytest.raises(UsageError):
        RunConfig.from_text("resolution = abc\n")
    with pytest.raises(UsageError):
        RunConfig(max_stages=0)


def test_construct_smoke(tmp_path):
    out = tmp_path / "one"
    assert main(["construct", "--max-stages", "1", "--resolution", "256", "--seed", "7", "--out", str(out)]) == 0
    log = json.loads((out / "stage_log.json").read_text())
    assert len(log["stages"]) == 1
    assert all(h["margin"] > 0 for h in log["stages"][0]["hypotheses"].values())
    assert (out / "clouds" / "disc1.csv").exists() and (out / "family.csv").exists()


def test_construct_usage_error(tmp_path):
    assert main(["construct", "--max-stages", "0", "--out", str(tmp_path)]) == 2
    assert main(["nonsense"]) == 2


def test_construct_cap_exit_code(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("resolution = 64\ns_max = 1\n")
    assert main(["construct", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    log = json.loads((tmp_path / "o" / "stage_log.json").read_text())
    assert log["error"]["code"] == "S_CAP_EXCEEDED"


def test_determinism(built):
    out, cfg = built
    assert main(["construct", "--config", str(cfg), "--seed", "5", "--out", str(out / "b")]) == 0
    for name in ("sequence.txt", "stage_log.json", "family.csv", "clouds/disc1.csv"):
        assert (out / "a" / name).read_bytes() == (out / "b" / name).read_bytes()


def test_verify_pass_and_faults(built, tmp_path):
    out, cfg = built
    run = out / "a"
    seq, fam = run / "sequence.txt", run / "family.csv"
    assert main(["verify", str(seq), str(fam), "--config", str(cfg), "--out", str(tmp_path / "v")]) == 0
    verdict = json.loads((tmp_path / "v" / "verify.json").read_text())
    assert verdict["pass"] and verdict["checks"]["classification"]["flips"] == 0

    family = LineFieldFamily.from_csv(fam.read_text())
    family.mu[len(family) // 2] *= 0.9
    bad = tmp_path / "bad.csv"
    bad.write_text(family.to_csv())
    assert main(["verify", str(seq), str(bad), "--log", str(run / "stage_log.json"), "--config", str(cfg),
                 "--out", str(tmp_path / "v2")]) == 1
    verdict = json.loads((tmp_path / "v2" / "verify.json").read_text())
    assert "invariance" in verdict["failed"]
    assert verdict["checks"]["invariance"]["max_modulus_deviation"] == pytest.approx(0.1)

    other = tmp_path / "other.txt"
    other.write_text(seq.read_text() + "P1\n")
    assert main(["verify", str(other), str(fam), "--log", str(run / "stage_log.json"),
                 "--out", str(tmp_path / "v3")]) == 2


def test_render_z_squared(tmp_path):
    seq = tmp_path / "sq.txt"
    seq.write_text("BOUNDS 2 2 0\n" + "GEN 0 0 0 0 1 0\n" * 60)
    img = tmp_path / "sq.ppm"
    assert main(["render", str(seq), "--half-width", "2", "--pixels", "128x128", "--palette", "BINARY",
                 "--horizon", "60", "--image", str(img)]) == 0
    rgb = _read_ppm(img)
    alive_area = np.count_nonzero(rgb[:, :, 0] == 0) * (4 / 128) ** 2
    assert alive_area == pytest.approx(math.pi, rel=0.03)


def test_render_minimal_is_deterministic(built, tmp_path):
    out, _ = built
    seq = out / "a" / "sequence.txt"
    a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
    for p in (a, b):
        assert main(["render", str(seq), "--pixels", "16x16", "--image", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes() and _read_ppm(a).shape == (16, 16, 3)
    assert main(["render", str(seq), "--pixels", "8x8", "--image", str(a)]) == 2


def test_render_constructed_disc(built):
    out, _ = built
    seq = loads_sequence((out / "a" / "sequence.txt").read_text())
    log = json.loads((out / "a" / "stage_log.json").read_text())
    tau = log["stages"][0]["params"]["tau"]
    spec = RenderSpec(time_index=tau, half_width=0.5, width=200, height=200, max_horizon=10**6)
    steps = escape_times(seq, spec)
    alive = np.count_nonzero(steps < 0) * (1.0 / 200) ** 2
    assert alive > math.pi / 9 - 0.25
    ramp = render(seq, spec)
    assert ramp.dtype == np.uint8 and to_ppm(ramp).startswith(b"P6\n200 200\n255\n")
    assert render(seq, RenderSpec(time_index=tau, width=16, height=16, palette=Palette.BINARY)).max() <= 255


def test_render_parse_error(tmp_path, capsys):
    seq = tmp_path / "broken.txt"
    seq.write_text("BOUNDS 2 12 1\nP1\nP7\n")
    assert main(["render", str(seq), "--image", str(tmp_path / "x.ppm")]) == 2
    assert "line 3" in capsys.readouterr().err


def test_lemmas(tmp_path):
    cfg = tmp_path / "l.cfg"
    cfg.write_text("resolution = 256\nlemma_resolution = 256\n")
    assert main(["lemmas", "--config", str(cfg), "--out", str(tmp_path / "ok")]) == 0
    rep = json.loads((tmp_path / "ok" / "lemmas.json").read_text())
    assert rep["lemma21"]["lambda_hat"] > 1 and rep["pass"]
    shrink = rep["lemma22"]["leakage"]
    assert all(b <= a for a, b in zip(shrink, shrink[1:]))


def test_lemmas_short_prefix_fails_cleanly(tmp_path):
    cfg = tmp_path / "l.cfg"
    cfg.write_text("lemma_n_max = 1\nlemma_resolution = 64\n")
    assert main(["lemmas", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "error" in json.loads((tmp_path / "lemmas.json").read_text())["lemma21"]
