import numpy as np
import pytest

from tristereo.cli import BENCH_CONFIGS, main
from tristereo.config import build_configs, load_configs, read_flat
from tristereo.dataset import read_manifest, write_triplet
from tristereo.fileio import load_disparity, save_disparity
from tristereo.geometry import DisparityMap, SceneSpec, generate_triplet
from tristereo.metrics import CSV_HEADER, evaluate

SMALL = ["--set", "scene.height=32", "--set", "scene.width=64", "--set", "scene.d_max=10",
         "--set", "scene.layers=2"]


def test_generate_empty(tmp_path):
    assert main(["generate", "--count", "0", "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "manifest.csv").read_text() == ""


def test_generate_rows_and_files(tmp_path):
    assert main(["generate", "--count", "3", "--seed", "5", "--out", str(tmp_path / "d"), *SMALL]) == 0
    rows = read_manifest(tmp_path / "d")
    assert [r[0] for r in rows] == [0, 1, 2]
    for i in range(3):
        for suffix in ("left.pgm", "middle.pgm", "right.pgm", "gt.pfm", "occ_lm.pgm", "occ_lr.pgm"):
            assert (tmp_path / "d" / f"{i:04d}_{suffix}").is_file()


def test_generate_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["generate", "--count", "2", "--seed", "9", "--out", str(tmp_path / name), *SMALL]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


@pytest.fixture(scope="module")
def flat_scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("flat")
    spec = SceneSpec(layers=1, d_min=0, d_max=0.5, disparity_step=1, texture_density=1, dot_size=2)
    t = generate_triplet(0, spec)
    assert not t.gt.values.any()
    write_triplet(t, root, 0)
    return root


def _estimate(root, out, *extra):
    views = [str(root / f"0000_{v}.pgm") for v in ("left", "middle", "right")]
    return main(["estimate", *views, "--out", str(out), *extra])


def test_zero_disparity_smoke(flat_scene, tmp_path):
    epe = {}
    for mode in ("trinocular", "binocular", "lm_only", "lr_only"):
        assert _estimate(flat_scene, tmp_path / mode, "--mode", mode,
                         "--gt", str(flat_scene / "0000_gt.pfm")) == 0
        d = load_disparity(tmp_path / mode / "disparity.pfm")
        epe[mode] = float(np.abs(d.values).mean())
        assert (tmp_path / mode / "error.pgm").is_file()
    assert epe["trinocular"] < 0.5 and epe["binocular"] < 0.5
    assert abs(epe["lm_only"] - epe["lr_only"]) < 1e-4


@pytest.mark.parametrize("level", ["cost", "pre_hg", "hg"])
def test_estimate_fusion_levels(flat_scene, tmp_path, level):
    assert _estimate(flat_scene, tmp_path / level, "--fusion-level", level, "--fusion-method", "avg") == 0
    assert load_disparity(tmp_path / level / "disparity.pfm").shape == (64, 128)


def test_missing_input_leaves_no_output(flat_scene, tmp_path, capsys):
    views = [str(flat_scene / "0000_left.pgm"), str(tmp_path / "nope.pgm"), str(flat_scene / "0000_right.pgm")]
    assert main(["estimate", *views, "--out", str(tmp_path / "out")]) == 1
    assert not (tmp_path / "out").exists()
    assert "error" in capsys.readouterr().err


def test_eval_zero_row(tmp_path, capsys):
    gt = DisparityMap(np.arange(1, 13, dtype=np.float32).reshape(3, 4), np.ones((3, 4), bool))
    save_disparity(gt, tmp_path / "gt.pfm")
    assert main(["eval", str(tmp_path / "gt.pfm"), str(tmp_path / "gt.pfm"), "--header"]) == 0
    assert capsys.readouterr().out == CSV_HEADER + "\n0,0,0,0,0,12\n"


def test_eval_matches_library(tmp_path, capsys):
    rng = np.random.default_rng(0)
    gt = DisparityMap(rng.uniform(1, 30, (6, 7)).astype(np.float32), rng.random((6, 7)) > 0.2)
    est = DisparityMap((gt.values + rng.normal(0, 2, (6, 7))).astype(np.float32), np.ones((6, 7), bool))
    save_disparity(gt, tmp_path / "gt.pfm")
    save_disparity(est, tmp_path / "est.pfm")
    assert main(["eval", str(tmp_path / "gt.pfm"), str(tmp_path / "est.pfm"), "--out", str(tmp_path / "m.csv")]) == 0
    expected = evaluate(load_disparity(tmp_path / "gt.pfm"), load_disparity(tmp_path / "est.pfm")).csv_row()
    assert capsys.readouterr().out.strip() == expected
    assert (tmp_path / "m.csv").read_text().strip() == expected


def test_eval_shape_mismatch(tmp_path):
    save_disparity(DisparityMap(np.ones((3, 4), np.float32), np.ones((3, 4), bool)), tmp_path / "a.pfm")
    save_disparity(DisparityMap(np.ones((4, 3), np.float32), np.ones((4, 3), bool)), tmp_path / "b.pfm")
    assert main(["eval", str(tmp_path / "a.pfm"), str(tmp_path / "b.pfm")]) == 1


def test_help_and_usage_errors(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    with pytest.raises(SystemExit) as info:
        main(["estimate", "--bogus"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["train", "--fusion-method", "median", "--sup", "a", "--selfsup", "b"])
    assert info.value.code == 2


def test_unknown_bench_configuration(tmp_path):
    assert main(["bench", "--sup", str(tmp_path), "--heldout", str(tmp_path), "--configs", "cost_median",
                 "--out", str(tmp_path / "b")]) == 1
    assert not (tmp_path / "b").exists()


def test_bench_enumerates_table_rows():
    assert len(BENCH_CONFIGS) == 10
    assert {"lm_only", "lr_only"} <= set(BENCH_CONFIGS)
    assert sum(n not in ("lm_only", "lr_only") for n in BENCH_CONFIGS) == 8


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "x.cfg"
    path.write_text("# demo\nscene.height = 48\nscene.noise_sigma = 0.01 0.02 0.03\n"
                    "fusion.method = avg  # inline\ntrain.milestones = 2, 4\nmetrics.d1_conjunctive = yes\n")
    assert read_flat(path)["scene.height"] == "48"
    scene, pcfg, tcfg = load_configs(path, {"train.lr": "0.01"})
    assert scene.height == 48 and scene.noise_sigma == (0.01, 0.02, 0.03)
    assert pcfg.fusion.method == "avg" and pcfg.d1_conjunctive
    assert tcfg.milestones == (2, 4) and tcfg.lr == 0.01
    with pytest.raises(KeyError):
        build_configs({"train.nope": "1"})
    with pytest.raises(KeyError):
        build_configs({"height": "1"})
    with pytest.raises(ValueError):
        build_configs({"pipeline.mode": "quad"})


def test_shipped_config_parses():
    scene, pcfg, tcfg = load_configs("configs/desk.cfg")
    assert scene.height == 64 and scene.width == 128 and pcfg.d_max == 32 and tcfg.iterations == 4


def test_train_command_writes_outputs(tmp_path):
    small = SMALL + ["--set", "pipeline.d_max=16", "--set", "train.iterations=1",
                     "--set", "train.epochs_selfsup=1", "--set", "train.epochs_sup=1"]
    for name, seed in (("sup", "1"), ("self", "2"), ("held", "3")):
        assert main(["generate", "--count", "2", "--seed", seed, "--out", str(tmp_path / name), *small]) == 0
    out = tmp_path / "run"
    assert main(["train", "--sup", str(tmp_path / "sup"), "--selfsup", str(tmp_path / "self"),
                 "--heldout", str(tmp_path / "held"), "--out", str(out), *small]) == 0
    lines = (out / "train_log.csv").read_text().splitlines()
    assert lines[0] == "iter,phase,epoch,loss_total,loss_d,loss_p,loss_s,epe,d1"
    assert [ln.split(",")[1] for ln in lines[1:]] == ["eval", "selfsup", "supervised", "eval"]
    assert (out / "checkpoint.bin").stat().st_size > 0
    est = tmp_path / "est"
    views = [str(tmp_path / "held" / f"0000_{v}.pgm") for v in ("left", "middle", "right")]
    assert main(["estimate", *views, "--checkpoint", str(out / "checkpoint.bin"), "--out", str(est), *small]) == 0
