import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwkd import losses
from pwkd.errors import ConfigError, ShapeError
from pwkd.functional import cross_entropy
from pwkd.gradcheck import check_gradients
from pwkd.losses import (
    DistillConfig,
    Regressor,
    at_term,
    fitnet_term,
    kd_term,
    method_term,
    sp_term,
    student_loss,
)
from pwkd.slimmable import KnowledgeFragment
from pwkd.tensor import Parameter, Tensor

from . import oracles


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def frag(logits, **features):
    return KnowledgeFragment(1.0, T(logits), {k: T(v) for k, v in features.items()})


# -- KD ----------------------------------------------------------------------
def test_kd_examples():
    z = np.random.default_rng(0).standard_normal((3, 4))
    assert abs(kd_term(T(z), z, 4.0).item()) < 1e-12
    assert kd_term(T([[0.0, 1.0]]), [[1.0, 0.0]], 1.0).item() == pytest.approx(0.46211715726000974, rel=1e-10)
    zs, zt = np.random.default_rng(1).standard_normal((2, 2, 5))
    assert kd_term(T(zs), zt, 2.0).item() == pytest.approx(4 * kd_term(T(zs / 2), zt / 2, 1.0).item(), rel=1e-12)


# -- FitNet ------------------------------------------------------------------
def test_fitnet_examples():
    f = np.random.default_rng(0).standard_normal((2, 3, 4, 4))
    ident = Regressor.identity(3, dtype=np.float64)
    assert fitnet_term(T(f), f, ident).item() == 0.0
    assert fitnet_term(T(f), f + 1.0, ident).item() == pytest.approx(1.0)


def test_fitnet_hand_case():
    s = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    t = np.array([[[[0.0, 2.0], [5.0, 1.0]]]])
    reg = Regressor(Parameter(np.array([[[[2.0]]]]), "r.w"))
    # regressed student = [[2,4],[6,8]]; squared diffs 4,4,1,49 -> 58/4
    assert fitnet_term(T(s), t, reg).item() == pytest.approx(14.5)


def test_fitnet_channel_mismatch():
    with pytest.raises(ShapeError):
        fitnet_term(T(np.zeros((1, 2, 2, 2))), np.zeros((1, 5, 2, 2)), Regressor.identity(2))


# -- AT ----------------------------------------------------------------------
def test_at_examples():
    rng = np.random.default_rng(2)
    f = np.abs(rng.standard_normal((2, 3, 4, 4)))
    assert at_term(T(f), f).item() == 0.0
    assert at_term(T(2 * f), f).item() < 1e-12


def test_at_hand_case():
    s = np.array([[[[1.0, 0.0], [0.0, 0.0]]]])
    t = np.array([[[[1.0, 1.0], [1.0, 1.0]]]])
    # normalized maps: (1,0,0,0) and (.5,.5,.5,.5); diffs .5,-.5,-.5,-.5 -> mean 0.25
    assert at_term(T(s), t).item() == pytest.approx(0.25, rel=1e-9)


# -- SP ----------------------------------------------------------------------
def test_sp_examples():
    f = np.random.default_rng(3).standard_normal((4, 2, 3, 3))
    assert sp_term(T(f), f).item() < 1e-15
    assert sp_term(T(3.5 * f), f).item() < 1e-12


def test_sp_n2_hand_case():
    s = np.array([1.0, 0.0, 0.0, 1.0]).reshape(2, 1, 1, 2)  # orthogonal rows
    t = np.array([1.0, 0.0, 1.0, 0.0]).reshape(2, 1, 1, 2)  # parallel rows
    # G_s = I, G_t rows normalized = all 1/sqrt(2); ||diff||_F^2 = 2(1-1/sqrt2)^2 + 2(1/2)
    expected = (2 * (1 - 2 ** -0.5) ** 2 + 2 * 0.5) / 4
    assert sp_term(T(s), t).item() == pytest.approx(expected, rel=1e-12)


def test_sp_batch_mismatch():
    with pytest.raises(ShapeError):
        sp_term(T(np.zeros((2, 1, 2, 2))), np.zeros((3, 1, 2, 2)))


# -- random brute-force agreement -------------------------------------------
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 4), cs=st.integers(1, 3), ct=st.integers(1, 4),
       hs=st.sampled_from([2, 4]), ht=st.sampled_from([2, 4]))
def test_terms_match_brute_force(seed, n, cs, ct, hs, ht):
    rng = np.random.default_rng(seed)
    fs, ft = rng.standard_normal((n, cs, hs, hs)), rng.standard_normal((n, ct, ht, ht))
    zs, zt = rng.standard_normal((n, 5)), rng.standard_normal((n, 5))
    wr = rng.standard_normal((ct, cs))
    reg = Regressor(Parameter(wr[:, :, None, None], "r.w"))
    assert kd_term(T(zs), zt, 3.0).item() == pytest.approx(oracles.kd(zs, zt, 3.0), abs=1e-6)
    assert fitnet_term(T(fs), ft, reg).item() == pytest.approx(oracles.fitnet(fs, ft, wr), abs=1e-6)
    assert at_term(T(fs), ft).item() == pytest.approx(oracles.at(fs, ft), abs=1e-6)
    fs2 = rng.standard_normal((n, cs, hs, hs))
    assert sp_term(T(fs), fs2).item() == pytest.approx(oracles.sp(fs, fs2), abs=1e-6)


@pytest.mark.parametrize("term", ["fitnet", "at", "sp"])
def test_feature_term_gradients(term):
    rng = np.random.default_rng(0)
    s = T(rng.standard_normal((3, 2, 4, 4)), grad=True)
    t = rng.standard_normal((3, 3, 2, 2))
    if term == "fitnet":
        reg = Regressor(Parameter(rng.standard_normal((3, 2, 1, 1)), "r.w"))
        leaves, f = [s, reg.weight], lambda: fitnet_term(s, t, reg)
    elif term == "at":
        leaves, f = [s], lambda: at_term(s, t)
    else:
        leaves, f = [s], lambda: sp_term(s, t)
    assert check_gradients(f, leaves) < 1e-4


# -- student objective -------------------------------------------------------
def test_beta_one_ignores_teacher():
    z, y = np.random.default_rng(0).standard_normal((3, 4)), [0, 1, 2]
    cfg = DistillConfig(beta=1.0)
    assert student_loss(frag(z), None, y, cfg).item() == cross_entropy(T(z), y).item()


def test_beta_blend_arithmetic(monkeypatch):
    monkeypatch.setattr(losses, "cross_entropy", lambda z, y: T(2.0))
    monkeypatch.setattr(losses, "kd_term", lambda zs, zt, temp: T(1.0))
    out = student_loss(frag([[0.0, 0.0]]), frag([[0.0, 0.0]]), [0], DistillConfig(beta=0.1))
    assert out.item() == pytest.approx(1.1)


def test_half_beta_identical_logits_is_half_ce():
    z, y = np.random.default_rng(1).standard_normal((4, 3)), [0, 1, 2, 0]
    out = student_loss(frag(z), frag(z), y, DistillConfig(beta=0.5, temperature=4.0)).item()
    assert out == pytest.approx(0.5 * cross_entropy(T(z), y).item(), rel=1e-12)


def test_feature_methods_sum_hint_points_and_optional_kd():
    rng = np.random.default_rng(4)
    feats = {k: rng.standard_normal((2, 2, 2, 2)) for k in ("stage2", "stage3")}
    tfeats = {k: rng.standard_normal((2, 2, 2, 2)) for k in ("stage2", "stage3")}
    zs, zt = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    s, t = frag(zs, **feats), frag(zt, **tfeats)
    cfg = DistillConfig("at", hint_points=("stage2", "stage3"), add_kd=True)
    expected = sum(oracles.at(feats[k], tfeats[k]) for k in feats) + oracles.kd(zs, zt, 4.0)
    assert method_term(s, t, cfg).item() == pytest.approx(expected, rel=1e-9)


def test_missing_teacher_or_regressor():
    s = frag([[0.0, 1.0]], stage3=np.zeros((1, 2, 2, 2)))
    with pytest.raises(ConfigError):
        student_loss(s, None, [0], DistillConfig(beta=0.5))
    with pytest.raises(ConfigError):
        method_term(s, s, DistillConfig("fitnet"))


@pytest.mark.parametrize("kw", [{"method": "crd"}, {"beta": 1.2}, {"temperature": 0}, {"method": "at", "hint_points": ()}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        DistillConfig(**kw)
