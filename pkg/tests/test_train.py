import numpy as np
import pytest
from dataclasses import replace

from tristereo.config import PipelineConfig, TrainConfig
from tristereo.costvol import CostVolume, align_lm_cost
from tristereo.fusion import FusionConfig, GABranch, guided_branch
from tristereo.geometry import SceneSpec, generate_triplet
from tristereo.layers import EPS
from tristereo.losses import LossWeights
from tristereo.model import bind, forward_disparity, init_params
from tristereo.pipeline import binocular_mode, estimate, prepare_sample, stack
from tristereo.metrics import evaluate
from tristereo import autograd as ag
from tristereo.train import (AdamState, NonFiniteGradientError, adam_step, compute_gradient,
                             load_checkpoint, run_sequential, save_checkpoint, train_phase)

SCENE = SceneSpec(32, 64, layers=2, d_max=10.0, d_min=2.0, disparity_step=2.0, dot_size=2.0)
CFG = PipelineConfig(d_max=16)
TCFG = TrainConfig(iterations=1, epochs_selfsup=1, epochs_sup=1, batch_size=2, seed=3)


def _triplets(n, seed=0):
    return [generate_triplet(seed * 1000 + i, SCENE) for i in range(n)]


@pytest.fixture(scope="module")
def samples():
    return [prepare_sample(t, CFG) for t in _triplets(4)]


def test_zero_error_gives_zero_gradient(samples):
    cfg = replace(CFG, loss=LossWeights(lambda_s=0.0))
    params = init_params(cfg, 1)
    _, d = forward_disparity(params, stack(samples[:2], "lm"), stack(samples[:2], "lr"), samples[0].shape, cfg)
    exact = [replace(s, gt=d.value[i].copy(), gt_valid=np.ones(s.shape, bool)) for i, s in enumerate(samples[:2])]
    loss, _, g = compute_gradient(params, exact, cfg, "supervised", training=False)
    assert loss == 0.0 and not g.any()


def test_ga_kernel_gradient_is_window_sum():
    x = np.random.default_rng(0).normal(size=(1, 1, 3, 3, 3))
    kernel = ag.Var(np.zeros((1, 3, 3, 3)), requires_grad=True)
    br = GABranch(kernel, np.ones(1), np.zeros(1), np.zeros(1), np.full(1, 1 - EPS))
    (g,) = ag.grad(ag.total(guided_branch(x, br)), [kernel])
    v = x[0, 0]
    # tap (a, p, q) reads input offset (a-1, p-1, q-1); zero padding trims the window
    assert g[0, 1, 1, 1] == pytest.approx(v.sum())
    assert g[0, 0, 0, 0] == pytest.approx(v[:2, :2, :2].sum())
    assert g[0, 2, 1, 0] == pytest.approx(v[1:, :, :2].sum())


def test_adam_zero_gradient_keeps_parameters():
    p = np.array([1.0, -2.0, 3.5])
    new, state = adam_step(p, np.zeros(3), AdamState.zeros(3), 1e-3)
    assert np.array_equal(new, p) and state.t == 1


def test_adam_first_step_by_hand():
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    m, v = (1 - b1) * 1.0, (1 - b2) * 1.0
    expected = -lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
    new, _ = adam_step(np.array([0.0]), np.array([1.0]), AdamState.zeros(1), lr)
    assert new[0] == pytest.approx(expected, rel=1e-12) and new[0] == pytest.approx(-0.001, rel=1e-7)


def test_adam_non_finite_reports_index():
    g = np.zeros(8)
    g[5] = np.nan
    with pytest.raises(NonFiniteGradientError) as info:
        adam_step(np.zeros(8), g, AdamState.zeros(8), 1e-3)
    assert info.value.index == 5


def test_training_aborts_with_parameter_name(samples):
    params = init_params(CFG, 0)
    params.stacks["hg"].layers[-1].bias[:] = np.nan
    with pytest.raises(FloatingPointError):
        train_phase(params, samples[:2], CFG, TCFG, "supervised", 1, np.random.default_rng(0))


def test_flat_view_round_trip():
    for fusion in (FusionConfig("cost", "cat"), FusionConfig("pre_hg", "ga"), FusionConfig("hg", "ga")):
        cfg = replace(CFG, fusion=fusion)
        a, b = init_params(cfg, 5), init_params(cfg, 5)
        assert np.array_equal(a.flat(), b.flat())
        assert [e[0] for e in a.entries()] == [e[0] for e in b.entries()]
        vec = np.random.default_rng(0).normal(size=a.size)
        a.load_flat(vec)
        assert np.array_equal(a.flat(), vec)
        with pytest.raises(ValueError):
            a.load_flat(vec[:-1])


def test_hg_level_has_branch_stacks():
    params = init_params(replace(CFG, fusion=FusionConfig("hg", "ga")))
    assert set(params.stacks) == {"pre", "hg_lm", "hg_lr"} and params.ga.groups == 1


def test_bound_gradient_covers_every_trainable(samples):
    params = init_params(CFG, 2)
    bound, leaves = bind(params)
    assert len(leaves) == len(params.arrays(trainable=True))
    _, _, g = compute_gradient(params, samples[:2], CFG, "selfsup")
    assert g.shape == (params.size,) and np.isfinite(g).all() and np.abs(g).sum() > 0


def test_loss_decreases_over_fifty_steps(samples):
    params = init_params(CFG, 0)
    batch = samples[:2]
    state = AdamState.zeros(params.size)
    first = None
    for step in range(51):
        loss, _, g = compute_gradient(params, batch, CFG, "supervised")
        if step == 0:
            first = loss
        if step == 50:
            break
        vec, state = adam_step(params.flat(), g, state, 1e-3)
        params.load_flat(vec)
    assert loss < first


def _run(seed=3, iterations=1):
    trip = _triplets(4, seed=7)
    data = {"sup": trip[:2], "selfsup": trip[2:], "heldout": _triplets(2, seed=9)}
    return run_sequential(data, replace(TCFG, iterations=iterations, seed=seed), CFG)


def test_single_iteration_phase_order():
    _, log, _ = _run()
    phases = [r["phase"] for r in log.rows]
    assert phases == ["eval", "selfsup", "supervised", "eval"]
    assert [r["iter"] for r in log.rows] == [0, 1, 1, 1]


def test_phase_coefficients_logged():
    _, log, _ = _run()
    self_rows = [r for r in log.rows if r["phase"] == "selfsup"]
    sup_rows = [r for r in log.rows if r["phase"] == "supervised"]
    assert all(r["lambda_d"] == 0.0 and r["lambda_p"] == 1.0 for r in self_rows)
    assert all(r["lambda_p"] == 0.0 and r["lambda_d"] == 1.0 for r in sup_rows)
    assert all(r["loss_d"] is None for r in self_rows) and all(r["loss_p"] is None for r in sup_rows)


def test_training_is_deterministic(tmp_path):
    pa, la, sa = _run()
    pb, lb, sb = _run()
    assert la.to_csv() == lb.to_csv()
    assert np.array_equal(pa.flat(), pb.flat())
    save_checkpoint(tmp_path / "a.bin", pa, sa)
    save_checkpoint(tmp_path / "b.bin", pb, sb)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert la.to_csv().splitlines()[0] == "iter,phase,epoch,loss_total,loss_d,loss_p,loss_s,epe,d1"


def test_run_requires_both_sets():
    with pytest.raises(ValueError):
        run_sequential({"sup": _triplets(1), "selfsup": []}, TCFG, CFG)


def test_checkpoint_round_trip(tmp_path):
    cfg = replace(CFG, fusion=FusionConfig("hg", "ga"))
    params = init_params(cfg, 4)
    params.load_flat(np.random.default_rng(1).normal(size=params.size))
    params.stacks["pre"].layers[0].running_var[:] = 2.5
    state = AdamState(np.arange(params.size, dtype=float), np.ones(params.size), 17)
    save_checkpoint(tmp_path / "c.bin", params, state)
    back, st = load_checkpoint(tmp_path / "c.bin", cfg)
    for (name, a), b in zip(params.arrays().items(), back.arrays().values()):
        assert np.array_equal(a, b), name
    assert st.t == 17 and np.array_equal(st.m, state.m) and np.array_equal(st.v, state.v)


def test_binocular_mode_reuses_right_view():
    t = _triplets(1)[0]
    b = binocular_mode(t)
    assert np.array_equal(b.middle.data, t.right.data) and b.calib.r == 1.0
    vol = CostVolume(np.random.default_rng(0).normal(size=(2, 4, 3, 5)).astype(np.float32), "LM")
    assert np.array_equal(align_lm_cost(vol, b.calib.r).data, vol.data)


def test_binocular_pipeline_end_to_end():
    t = _triplets(1, seed=4)[0]
    cfg = replace(CFG, mode="binocular")
    report = evaluate(t.gt, estimate(t, cfg))
    assert report.n_valid > 0 and np.isfinite(report.epe)
    assert len(report.csv_row().split(",")) == 6
