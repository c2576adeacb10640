import numpy as np
import pytest

from pwkd.checkpoint import load_checkpoint
from pwkd.decompose import DecomposeConfig, decompose_gradients, decompose_step, decompose_train, evaluate, width_loss
from pwkd.errors import ConfigError, NumericError
from pwkd.functional import cross_entropy, kl_temperature
from pwkd.optim import SGD
from pwkd.slimmable import WIDTHS_G4, ArchSpec, build, extract_standalone
from pwkd.tensor import backward

from .conftest import make_blobs

SPEC = ArchSpec("plain-convnet", n=1, k=1, in_channels=1, image_size=8, num_classes=4)


def batch(seed=0, n=6):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, 1, 8, 8)), rng.integers(0, 4, n)


def isolated_gradients(net, x, y, cfg):
    """Each width's loss built and differentiated on its own, then summed."""
    full = net.forward(x, 1.0, "train").logits
    target = full.data.copy()
    total = {p.name: np.zeros_like(p.data) for p in net.parameters()}
    for rho in net.width_list:
        logits = full if rho == 1.0 else net.forward(x, rho, "train").logits
        if rho == 1.0:
            loss = cross_entropy(logits, y)
        else:
            loss = cross_entropy(logits, y) * cfg.alpha + kl_temperature(logits, target, cfg.teacher_temperature) * (1 - cfg.alpha)
        for k, g in backward(loss).items():
            total[k] += g
    return total


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_joint_gradient_equals_sum_of_isolated(seed):
    net = build(SPEC, WIDTHS_G4, seed=seed, dtype=np.float64)
    x, y = batch(seed)
    cfg = DecomposeConfig(alpha=0.3, teacher_temperature=2.0)
    _, _, joint = decompose_gradients(net, x, y, cfg)
    iso = isolated_gradients(net, x, y, cfg)
    assert set(joint) == set(iso)
    for k in iso:
        assert np.max(np.abs(joint[k] - iso[k])) < 1e-6, k


def test_kl_terms_leave_full_width_private_params_untouched():
    net = build(SPEC, WIDTHS_G4, seed=0, dtype=np.float64)
    x, y = batch(4)
    cfg = DecomposeConfig(alpha=0.0)
    target = net.forward(x, 1.0, "train").logits.data.copy()
    exclusive = {p.name for p in net.private_parameters(1.0)}
    for rho in (0.25, 0.5, 0.75):
        loss, _ = width_loss(net, x, y, rho, target, cfg)
        g = backward(loss, net.parameters())
        assert max(np.max(np.abs(g[n])) for n in exclusive) < 1e-9


def _constant_net(dtype=np.float64, bias=None):
    net = build(SPEC, WIDTHS_G4, dtype=dtype)
    for p in net.shared.values():
        p.data[...] = 0
    for rho in net.width_list:
        w, b = net.fc[rho]
        w.data[...] = 0
        b.data[...] = 0 if bias is None else bias
    return net


def test_identical_logits_reduce_to_weighted_ce():
    net = _constant_net(bias=np.array([0.3, -0.2, 0.1, 0.0]))
    x, y = batch(1)
    cfg = DecomposeConfig(alpha=0.4)
    losses, _, _ = decompose_gradients(net, x, y, cfg)
    ce = losses[1.0]
    for rho in (0.25, 0.5, 0.75):
        assert losses[rho] == pytest.approx(0.4 * ce, abs=1e-12)


def test_alpha_one_is_plain_ce():
    net = build(SPEC, WIDTHS_G4, seed=5, dtype=np.float64)
    x, y = batch(2)
    losses, logits, _ = decompose_gradients(net, x, y, DecomposeConfig(alpha=1.0))
    for rho in net.width_list:
        expected = cross_entropy(net.forward(x, rho, "train").logits, y).item()
        assert losses[rho] == pytest.approx(expected, rel=1e-12)


def test_step_is_a_single_optimizer_update():
    net = build(SPEC, WIDTHS_G4, seed=0)
    opt = SGD(net.parameters())
    x, y = batch(3)
    decompose_step(net, (x.astype(np.float32), y), DecomposeConfig(), opt, 0.05)
    assert opt.steps == 1
    assert len(opt.velocity) == len(net.parameters())


def test_non_finite_width_is_named():
    net = build(SPEC, WIDTHS_G4, seed=0, dtype=np.float64)
    net.fc[0.5][0].data[0, 0] = np.inf
    x, y = batch(0)
    with np.errstate(invalid="ignore"), pytest.raises(NumericError, match="width 0.5"):
        decompose_gradients(net, x, y, DecomposeConfig())


def test_needs_two_widths():
    net = build(SPEC, (1.0,))
    x, y = batch(0)
    with pytest.raises(ConfigError):
        decompose_gradients(net, x, y, DecomposeConfig())


def test_zero_epochs_keeps_initialization(tmp_path):
    ds = make_blobs(side=8)
    net = build(SPEC, WIDTHS_G4, seed=1)
    before = {k: v.copy() for k, v in net.state_dict().items()}
    rows = decompose_train(net, ds, DecomposeConfig(epochs=0), tmp_path / "t.ckpt")
    assert rows == []
    loaded = load_checkpoint(tmp_path / "t.ckpt")
    for k, v in loaded.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_rows_per_epoch_and_width(tmp_path):
    ds = make_blobs(side=8)
    net = build(SPEC, WIDTHS_G4, seed=1)
    rows = decompose_train(net, ds, DecomposeConfig(epochs=3, batch_size=16), tmp_path / "t.ckpt")
    assert len(rows) == 3 * 4
    assert [r.epoch for r in rows] == [e for e in range(3) for _ in range(4)]
    assert {r.rho for r in rows} == set(WIDTHS_G4)
    meta = load_checkpoint(tmp_path / "t.ckpt").meta
    assert meta["epoch"] == 3 and len(meta["norm_mean"]) == 1


def test_training_learns_separable_blobs():
    ds = make_blobs(side=8)
    net = build(SPEC, WIDTHS_G4, seed=0)
    rows = decompose_train(net, ds, DecomposeConfig(epochs=6, batch_size=16))
    assert rows[-1].test_acc > 0.9


def test_constant_predictor_ties_break_to_lowest_index():
    spec10 = ArchSpec("plain-convnet", n=1, k=1, in_channels=1, image_size=8, num_classes=10)
    net = build(spec10, WIDTHS_G4)
    for p in net.parameters():
        p.data[...] = 0
    x = np.random.default_rng(0).standard_normal((100, 1, 8, 8)).astype(np.float32)
    y = np.arange(100) % 10
    assert evaluate(net, x, y, 1.0) == pytest.approx(0.1)


def test_evaluate_full_width_matches_extraction():
    ds = make_blobs(side=8)
    net = build(SPEC, WIDTHS_G4, seed=0)
    decompose_train(net, ds, DecomposeConfig(epochs=1, batch_size=16))
    assert evaluate(net, ds.x_test, ds.y_test, 1.0) == evaluate(extract_standalone(net, 1.0), ds.x_test, ds.y_test, 1.0)


def test_untrained_accuracy_is_reproducible():
    ds = make_blobs(side=8)
    a = evaluate(build(SPEC, WIDTHS_G4, seed=9), ds.x_test, ds.y_test, 0.5)
    b = evaluate(build(SPEC, WIDTHS_G4, seed=9), ds.x_test, ds.y_test, 0.5)
    assert a == b


def test_empty_split_rejected():
    net = build(SPEC, WIDTHS_G4)
    with pytest.raises(ConfigError):
        evaluate(net, np.zeros((0, 1, 8, 8), np.float32), np.zeros(0, int))


@pytest.mark.parametrize("kw", [{"alpha": 1.5}, {"teacher_temperature": 0}, {"epochs": -1}, {"batch_size": 0}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        DecomposeConfig(**kw)
