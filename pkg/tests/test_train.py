import math

import numpy as np
import pytest

from diffnet_lab import autodiff as ad
from diffnet_lab import checkpoint, pnm
from diffnet_lab.data import Dataset, SamplePair, disk_dataset
from diffnet_lab.model import DiffNet, DiffNetConfig, EstimatorConfig
from diffnet_lab.train import (
    CSV_HEADER, PSNR_CAP, AdamState, TrainConfig, TrainingDiverged, adam_step, evaluate, export_filters,
    lr_at, psnr, rel_l2, smoothing_alpha, smoothing_vs_noise, sweep_training_size, train,
)

# scalar p0 = 1, lr = 0.1, gradients 0.5, -0.2, 0.1, worked through the recurrences by hand
ADAM_TABLE = [
    (0.04999999999999999, 0.0002500000000000002, 0.900000002),
    (0.024999999999999994, 0.0002897500000000003, 0.8654394181165108),
    (0.032499999999999994, 0.00029946025000000034, 0.8275002408356956),
]


def tiny_net(seed=0):
    return DiffNet(DiffNetConfig(1, EstimatorConfig(2)), seed=seed, dtype=np.float32)


def tiny_data(n_train=16, n_test=4):
    return disk_dataset(n_train, n_test, size=16)


def test_adam_matches_hand_table():
    p = [np.array([1.0])]
    state = AdamState.zeros_like(p)
    for g, (m, v, expect) in zip((0.5, -0.2, 0.1), ADAM_TABLE):
        adam_step(p, [np.array([g])], state, 0.1)
        assert state.m[0][0] == pytest.approx(m, abs=1e-15)
        assert state.v[0][0] == pytest.approx(v, abs=1e-18)
        assert p[0][0] == pytest.approx(expect, abs=1e-12)
    assert state.t == 3


def test_adam_zero_gradient():
    p = [np.array([2.0, -1.0])]
    state = AdamState.zeros_like(p)
    adam_step(p, [np.array([1.0, 1.0])], state, 0.01)
    before, m_before = p[0].copy(), state.m[0].copy()
    adam_step(p, [np.zeros(2)], state, 0.01)
    np.testing.assert_allclose(state.m[0], 0.9 * m_before)
    # a decayed first moment still moves the parameter; a fresh state does not
    fresh = [before.copy()]
    adam_step(fresh, [np.zeros(2)], AdamState.zeros_like(fresh), 0.01)
    np.testing.assert_array_equal(fresh[0], before)


def test_adam_constant_gradient_step_tends_to_lr():
    p = [np.array([0.0])]
    state = AdamState.zeros_like(p)
    for _ in range(2000):
        prev = p[0][0]
        adam_step(p, [np.array([3.0])], state, 1e-3)
    assert abs(prev - p[0][0]) == pytest.approx(1e-3, rel=1e-6)


def test_adam_is_invariant_to_loss_scale():
    rng = np.random.default_rng(0)
    target = rng.normal(size=5)

    def run(c):
        p = [np.zeros(5)]
        state = AdamState.zeros_like(p)
        for _ in range(50):
            adam_step(p, [c * 2 * (p[0] - target)], state, 0.05, eps=1e-12)
        return p[0]

    assert np.max(np.abs(run(1.0) - run(10.0))) < 1e-6


def test_adam_state_mismatch():
    with pytest.raises(ValueError):
        adam_step([np.zeros(2)], [np.zeros(2)], AdamState.zeros_like([np.zeros(3)]), 0.1)
    with pytest.raises(ValueError):
        adam_step([np.zeros(2), np.zeros(2)], [np.zeros(2)] * 2, AdamState.zeros_like([np.zeros(2)]), 0.1)


def test_lr_schedule():
    cfg = TrainConfig(lr_initial=1e-2, lr_final=1e-4)
    assert lr_at(cfg, 0, 101) == pytest.approx(1e-2)
    assert lr_at(cfg, 50, 101) == pytest.approx(1e-3)
    assert lr_at(cfg, 100, 101) == pytest.approx(1e-4)
    rates = [lr_at(cfg, s, 101) for s in range(101)]
    assert all(a > b for a, b in zip(rates, rates[1:]))
    assert lr_at(TrainConfig(lr_initial=0.0, lr_final=0.0), 5, 10) == 0.0


def test_train_config_validation_and_cadence():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr_initial=1e-3, lr_final=1e-2)
    with pytest.raises(ValueError):
        TrainConfig(timing="cpu")
    cfg = TrainConfig(epochs=18, batch_size=16)
    assert cfg.steps_per_epoch(2000) == 125 and cfg.total_steps(2000) == 2250
    assert cfg.eval_every(2000) == 112
    assert TrainConfig(epochs=40).eval_every(256) == 16
    assert TrainConfig(max_steps=7).total_steps(1000) == 7


def test_psnr_values():
    a = np.zeros((10, 10))
    b = np.full((10, 10), 0.1)
    assert psnr(a, b) == pytest.approx(20.0)
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a, b, peak=2.0) == pytest.approx(20.0 + 20 * np.log10(2))
    with pytest.raises(ValueError):
        psnr(a, b, peak=0)
    with pytest.raises(ValueError):
        psnr(a, np.zeros(3))


def test_metrics_match_two_pass_computation():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=(2, 9, 9))
    se = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        se += (x - y) ** 2
    assert psnr(a, b) == pytest.approx(10 * math.log10(1 / (se / a.size)), rel=1e-13)
    assert rel_l2(a, b) == pytest.approx(math.sqrt(se) / math.sqrt(sum(y * y for y in b.ravel())), rel=1e-13)
    assert rel_l2(b, b) == 0.0
    assert rel_l2(np.zeros(3), np.zeros(3)) == 0.0 and rel_l2(np.ones(3), np.zeros(3)) == math.inf


def test_psnr_rel_l2_identity():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=(2, 12, 12))
    n = a.size
    assert psnr(a, b) == pytest.approx(-20 * math.log10(rel_l2(a, b) * np.linalg.norm(b) / math.sqrt(n)), rel=1e-12)


def test_zero_learning_rate_leaves_parameters(tmp_path):
    net = tiny_net()
    before = net.state_dict()
    result = train(net, tiny_data(), TrainConfig(epochs=1, lr_initial=0.0, lr_final=0.0), tmp_path)
    for name, value in net.state_dict().items():
        np.testing.assert_array_equal(value, before[name])
    assert all(math.isfinite(r.train_loss) for r in result.history)
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == CSV_HEADER and len(lines) == 1 + len(result.history)
    assert {"best.ckpt", "final.ckpt", "metrics.csv"} <= {p.name for p in tmp_path.iterdir()}


def test_seeded_training_is_reproducible(tmp_path):
    cfg = TrainConfig(epochs=2, batch_size=4, lr_initial=1e-3, lr_final=1e-4, timing="off")
    for sub in ("a", "b"):
        train(tiny_net(3), tiny_data(), cfg, tmp_path / sub)
    for name in ("metrics.csv", "final.ckpt", "best.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_training_lowers_the_loss():
    cfg = TrainConfig(epochs=6, batch_size=4, lr_initial=3e-3, lr_final=1e-3)
    result = train(tiny_net(1), tiny_data(), cfg)
    assert result.history[-1].test_loss < result.history[0].test_loss
    assert [r.step for r in result.history] == sorted(r.step for r in result.history)
    assert result.best_psnr == max(r.test_psnr for r in result.history)
    best = DiffNet(DiffNetConfig(1, EstimatorConfig(2)), dtype=np.float32)
    best.load_state_dict(result.best_state)
    assert evaluate(best, tiny_data().test).psnr == pytest.approx(result.best_psnr)


def test_best_checkpoint_file_matches_state(tmp_path):
    result = train(tiny_net(1), tiny_data(), TrainConfig(epochs=2, batch_size=8), tmp_path)
    best = checkpoint.load(tmp_path / "best.ckpt")
    for name, value in result.best_state.items():
        np.testing.assert_array_equal(best[name], value)


def test_nan_loss_aborts_with_dump(tmp_path):
    data = tiny_data(4, 1)
    bad = [SamplePair(p.clean, np.full_like(p.degraded, np.nan), 0.0, p.seed) for p in data.train]
    with pytest.raises(TrainingDiverged, match="shuffle seed"):
        train(tiny_net(), Dataset(bad, data.test), TrainConfig(epochs=1, batch_size=2), tmp_path)
    assert "sample indices" in (tmp_path / "nan_dump.txt").read_text()


def test_evaluate_reports_input_psnr():
    data = tiny_data(2, 3)
    zero = DiffNet.zeros(DiffNetConfig(1, EstimatorConfig(2)))
    ev = evaluate(zero, data.test)
    # the zero model is the identity on nonnegative inputs
    assert ev.psnr == pytest.approx(ev.input_psnr, rel=1e-12)


def test_single_point_size_sweep(tmp_path):
    rows = sweep_training_size(tiny_net, tiny_data(), [10], TrainConfig(max_steps=3, batch_size=4), tmp_path)
    assert len(rows) == 1 and rows[0][0] == 10
    lines = (tmp_path / "size_sweep.csv").read_text().splitlines()
    assert lines[0] == "size_or_noise,psnr" and lines[1].startswith("10,")
    with pytest.raises(ValueError):
        sweep_training_size(tiny_net, tiny_data(), [10, 5], TrainConfig(max_steps=1))
    with pytest.raises(ValueError):
        sweep_training_size(tiny_net, tiny_data(), [100], TrainConfig(max_steps=1))


def test_sweep_uses_a_fixed_step_budget(tmp_path):
    cfg = TrainConfig(epochs=1, batch_size=4)
    sweep_training_size(tiny_net, tiny_data(), [4, 16], cfg, tmp_path)
    for size in (4, 16):
        last = (tmp_path / f"size_{size}" / "metrics.csv").read_text().splitlines()[-1]
        assert last.startswith("4,")


def test_zero_model_has_no_smoothing(tmp_path):
    zero = DiffNet.zeros(DiffNetConfig(2, EstimatorConfig(2)))
    data = tiny_data(2, 4)
    rows = smoothing_vs_noise({1.0: (zero, data.test), 0.1: (zero, data.test)}, out_csv=tmp_path / "a.csv")
    assert rows == [(0.1, 0.0), (1.0, 0.0)]
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "size_or_noise,alpha"
    with pytest.raises(FileNotFoundError):
        smoothing_vs_noise({1.0: (None, data.test)})


def test_smoothing_alpha_matches_direct_sum():
    net = DiffNet(DiffNetConfig(2, EstimatorConfig(2)), seed=4)
    x = np.random.default_rng(5).uniform(size=(3, 8, 8))
    _, filters = net(x, return_filters=True)
    direct = np.mean([np.mean(np.abs(f.value.sum(axis=-1))) for f in filters])
    assert smoothing_alpha(net, x) == pytest.approx(direct, rel=1e-12)


def test_smoothing_alpha_is_stable_across_draws():
    net = DiffNet(DiffNetConfig(2, EstimatorConfig(3)), seed=6)
    x = np.stack([p.degraded for p in disk_dataset(1, 64, size=24).test])
    a, b = smoothing_alpha(net, x[:32]), smoothing_alpha(net, x[32:])
    assert abs(a - b) / max(a, b) < 0.2


def test_zero_model_filter_export(tmp_path):
    zero = DiffNet.zeros(DiffNetConfig(5, EstimatorConfig(2)))
    img = tiny_data(1, 1).test[0].degraded
    names = export_filters(zero, img, tmp_path / "a")
    assert len(names) == 10
    assert sorted(names) == sorted(f"layer{k}_{q}.pgm" for k in range(5) for q in ("sum", "zeta5"))
    for name in names:
        np.testing.assert_allclose(pnm.load_image(tmp_path / "a" / name), 0.5, atol=1 / 65535)
    sidecar = (tmp_path / "a" / "filters.txt").read_text().splitlines()
    assert sidecar[0] == "file,min,max"
    assert all(line.endswith(",0.0,0.0") for line in sidecar[1:])


def test_filter_export_is_deterministic(tmp_path):
    net = DiffNet(DiffNetConfig(2, EstimatorConfig(3)), seed=2)
    img = tiny_data(1, 1).test[0].degraded
    export_filters(net, img, tmp_path / "a")
    export_filters(net, img, tmp_path / "b")
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
